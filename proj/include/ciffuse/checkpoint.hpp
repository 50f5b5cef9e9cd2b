// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
//
// Self-describing, versioned text checkpoints:
//
//   cif-fuse-ckpt v1
//   config <n>                       followed by n `key = value` lines
//   state step <s> phase <name> adam_step <k>
//   params <n>                       then per parameter:
//   param <name> <rank> <dims...>
//   <row-major values>
//   adam <n>                         then per parameter (n is 0 or #params):
//   moments <name>
//   <first moments>
//   <second moments>
//   end
//
// Values use the shortest decimal form that round-trips, so a checkpoint
// restores parameters and optimizer state bit for bit.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ciffuse/nn.hpp"
#include "ciffuse/optim.hpp"

namespace ciffuse::checkpoint {

struct Record {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> config;
  std::uint64_t step = 0;
  std::string phase = "init";
  std::uint64_t adam_step = 0;
  std::vector<Record> params;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> moments;  // (m, v)
};

Checkpoint capture(const std::vector<std::pair<std::string, std::string>>& config,
                   std::uint64_t step, std::string phase, const nn::ParamStore& store,
                   const optim::AdamState* adam);

void write(std::ostream& os, const Checkpoint& ck);
Checkpoint read(std::istream& is);  // throws ParseError
void save(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load(const std::filesystem::path& path);

// Copies every record into the store. Names and shapes must match exactly and
// cover the whole store unless `partial` is set. Throws ConfigError.
void restore_params(const Checkpoint& ck, nn::ParamStore& store, bool partial = false);
// Rebuilds optimizer moments in store order.
optim::AdamState restore_adam(const Checkpoint& ck, const nn::ParamStore& store);

// Builds a parameter store holding exactly the records (used to read a
// pretrained linguistic encoder without knowing its configuration).
void fill_store(const Checkpoint& ck, nn::ParamStore& store);

}  // namespace ciffuse::checkpoint
