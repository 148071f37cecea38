#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mixacm/model.hpp"
#include "mixacm/tensor.hpp"

namespace mixacm {

/// Binary checkpoint: magic, format version, model spec, named f64 parameter
/// table, optional optimizer velocities (parameter order), RNG stream states,
/// epoch counter. All integers and doubles little-endian; layout documented
/// in docs/checkpoint_format.md.
struct Checkpoint {
  static constexpr char kMagic[9] = "MXACMCK1";
  static constexpr std::uint32_t kVersion = 1;

  ModelSpec spec;
  std::vector<std::pair<std::string, Tensor>> parameters;
  std::optional<std::vector<Tensor>> velocities;
  std::vector<std::string> rng_states;  // train stream, eval stream
  std::uint64_t epoch = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint checkpoint_from_model(const BlockCnn& model);
BlockCnn model_from_checkpoint(const Checkpoint& ck);

}  // namespace mixacm
