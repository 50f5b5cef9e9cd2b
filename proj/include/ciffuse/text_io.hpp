// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
//
// Round-trip exact number formatting for the text file formats.
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ciffuse::text {

// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);
std::optional<double> parse_double(std::string_view s);
std::optional<std::int64_t> parse_int(std::string_view s);
std::optional<std::uint64_t> parse_uint(std::string_view s);

std::vector<std::string_view> split_ws(std::string_view line);
std::string_view trim(std::string_view s);

// Reads `key = value` lines; '#' starts a comment. Errors from `apply` and
// malformed lines are rethrown as ConfigError prefixed with the line number.
void read_key_values(std::istream& is,
                     const std::function<void(const std::string&, const std::string&)>& apply);

}  // namespace ciffuse::text
