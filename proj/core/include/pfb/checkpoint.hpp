#pragma once

#include <cstdint>
#include <string>

#include "pfb/data.hpp"
#include "pfb/nn.hpp"

namespace pfb::ckpt {

// Versioned binary container: magic "PFBCKPT\0", u32 version, u64 seed,
// length-prefixed config text, normalization stats, then the two parameter
// stores as (name, rows, cols, row-major f64) records. Integers and doubles
// are written in the host's little-endian layout; round-trips are bitwise.
struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t seed = 0;
  std::string config_text;  // echo of the training configuration
  data::NormStats norm;
  nn::ParamStore theta;
  nn::ParamStore phi;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
};

}  // namespace pfb::ckpt
