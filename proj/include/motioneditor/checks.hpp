// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "motioneditor/gradcheck.hpp"

namespace motioneditor {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Backward-rule names accepted by the corruption harness.
const std::vector<std::string>& differentiable_ops();

/// Finite-difference checks of every primitive, each attention kernel, the
/// adapter block and the conditioned toy U-Net. `corrupt` scales the named
/// backward rules (negative control).
std::vector<CheckResult> gradient_suite(uint64_t seed, const std::map<std::string, float>& corrupt = {});

CheckResult check_partition_identity(uint64_t seed);
CheckResult check_duplication_reduction(uint64_t seed);
CheckResult check_injection_layout(uint64_t seed);
CheckResult check_decoder_gating(uint64_t seed);
CheckResult check_ddim_identities(uint64_t seed);
CheckResult check_training_descent(uint64_t seed);
CheckResult check_alignment_geometry();
CheckResult check_branch_equivalence(uint64_t seed);
CheckResult check_adapter_identity(uint64_t seed);

/// Everything except training, as run by the selftest command.
std::vector<CheckResult> run_selftest(uint64_t seed, const std::map<std::string, float>& corrupt = {});

}  // namespace motioneditor
