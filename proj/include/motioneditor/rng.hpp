// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string_view>

#include "motioneditor/tensor.hpp"

namespace motioneditor {

uint64_t fnv1a64(std::string_view text);

/// The one pseudorandom source. Named sub-streams are derived from the seed
/// and the name only, so they do not depend on how much the parent has drawn.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t seed() const { return seed_; }
  Rng fork(std::string_view stream) const;

  uint64_t next_u64() { return engine_(); }
  double uniform();                           // [0, 1)
  int64_t uniform_int(int64_t lo, int64_t hi);  // [lo, hi)
  double normal();

  Tensor normal_tensor(const Shape& shape, double stddev = 1.0);
  Tensor uniform_tensor(const Shape& shape, double lo, double hi);

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

}  // namespace motioneditor
