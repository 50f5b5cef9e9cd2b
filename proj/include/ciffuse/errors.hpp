// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#pragma once

#include <stdexcept>
#include <string>

namespace ciffuse {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised instead of letting NaN/Inf propagate (log of non-positive, exp overflow, ...).
struct NumericDomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyTargetError : std::runtime_error {
  EmptyTargetError() : std::runtime_error("empty target") {}
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ciffuse
