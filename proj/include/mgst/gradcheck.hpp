#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mgst/autodiff.hpp"

namespace mgst {
inline namespace MGST_ABI {

struct GradcheckResult {
  std::string module;
  FdReport report;
  double tolerance = 0;
  double seconds = 0;
  bool passed = false;
};

/// conv2d, conv3d, maxpool, upsample, batchnorm, batchnorm-train, fuse,
/// attend_input, cell_step, recurrence, classify_head, end2end.
const std::vector<std::string>& gradcheck_modules();

struct GradcheckOptions {
  std::uint64_t seed = 11;
  double step = 0;             // 0 picks the precision default
  double floor_fraction = -1;  // < 0 picks the precision default
  int extrapolations = -1;     // < 0 picks the precision default
};

/// Finite differences against the tape for one module on a small random
/// fixture; every input and parameter coordinate is perturbed. Throws
/// kInvalidArgument for an unknown module name. Passing requires the
/// tolerance and at most 10% of coordinates skipped as kinks.
GradcheckResult run_gradcheck(std::string_view module, const GradcheckOptions& opt = {});

}  // namespace MGST_ABI
}  // namespace mgst
