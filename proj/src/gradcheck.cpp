// SPDX-License-Identifier: Apache-2.0
#include "motioneditor/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "motioneditor/autodiff.hpp"
#include "motioneditor/rng.hpp"

namespace motioneditor {

namespace {

double ulp(float v) {
  const float a = std::fabs(v);
  return static_cast<double>(std::nextafter(a, std::numeric_limits<float>::infinity())) - a;
}

}  // namespace

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.rel_error);
  return m;
}

double GradCheckReport::max_excess() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.excess);
  return m;
}

std::vector<std::string> GradCheckReport::failing_params() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (!e.passed && std::find(out.begin(), out.end(), e.param) == out.end()) out.push_back(e.param);
  }
  return out;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << entries.size() << " entries, max rel error " << max_excess() << " beyond rounding noise (" << max_rel_error()
     << " raw)";
  const auto failing = failing_params();
  if (!failing.empty()) {
    os << ", failing:";
    for (const auto& f : failing) os << ' ' << f;
  }
  return os.str();
}

Tensor weighted_sum(const Tensor& x, const Tensor& weights) { return sum(mul(x, weights)); }

GradCheckReport grad_check(const NamedTensors& params, const ObjectiveFn& objective,
                           const GradCheckOptions& options) {
  std::vector<Tensor> values;
  for (const auto& [name, t] : params) values.push_back(t.detached());

  Tape tape;
  for (const auto& [op, factor] : options.corrupt_backward) tape.corrupt_backward(op, factor);
  std::vector<Tensor> watched;
  for (const auto& v : values) watched.push_back(tape.watch(v));
  const Tensor out = objective(watched);
  // Non-scalar outputs are projected onto fixed random weights. The numeric
  // side differences each output element before summing, so cancellation in a
  // large float32 total does not swamp the derivative.
  const Tensor proj = out.rank() == 0 ? Tensor::scalar(1.0f) : Rng(options.seed ^ 0x9e3779b9ULL).normal_tensor(out.shape());
  const Gradients grads = tape.backward(out.rank() == 0 ? out : weighted_sum(out, proj));
  auto w = proj.data();

  Rng rng(options.seed);
  GradCheckReport report;
  for (size_t p = 0; p < params.size(); ++p) {
    const Tensor analytic = grads.of_or_zeros(watched[p]);
    auto a = analytic.data();
    std::set<int64_t> picks;
    picks.insert(std::distance(a.begin(), std::max_element(a.begin(), a.end(), [](float x, float y) {
                                 return std::fabs(x) < std::fabs(y);
                               })));
    const int64_t n = values[p].numel();
    for (int s = 0; s < options.samples_per_param && static_cast<int64_t>(picks.size()) < n; ++s) {
      picks.insert(rng.uniform_int(0, n));
    }
    for (int64_t idx : picks) {
      std::vector<float> plus = values[p].to_vector();
      std::vector<float> minus = plus;
      plus[static_cast<size_t>(idx)] += static_cast<float>(options.step);
      minus[static_cast<size_t>(idx)] -= static_cast<float>(options.step);
      const double span = static_cast<double>(plus[static_cast<size_t>(idx)]) - minus[static_cast<size_t>(idx)];
      std::vector<Tensor> vp = values, vm = values;
      vp[p] = Tensor(values[p].shape(), std::move(plus));
      vm[p] = Tensor(values[p].shape(), std::move(minus));
      const Tensor yp = objective(vp), ym = objective(vm);
      double diff = 0.0, rounding = 0.0;
      for (int64_t j = 0; j < yp.numel(); ++j) {
        if (yp[j] == ym[j]) continue;
        const double wj = w[static_cast<size_t>(j)];
        diff += wj * (static_cast<double>(yp[j]) - ym[j]);
        rounding += std::fabs(wj) * 0.5 * (ulp(yp[j]) + ulp(ym[j]));
      }

      GradCheckEntry e;
      e.param = params[p].first;
      e.index = idx;
      e.analytic = a[static_cast<size_t>(idx)];
      e.numeric = diff / span;
      e.noise = rounding / span;
      const double scale = std::max({std::fabs(e.analytic), std::fabs(e.numeric), options.abs_floor});
      e.rel_error = std::fabs(e.analytic - e.numeric) / scale;
      e.excess = std::max(0.0, std::fabs(e.analytic - e.numeric) - e.noise) / scale;
      e.passed = std::isfinite(e.analytic) && std::isfinite(e.numeric) &&
                 std::fabs(e.analytic - e.numeric) <= options.rel_tol * scale + e.noise;
      report.entries.push_back(e);
    }
  }
  return report;
}

}  // namespace motioneditor
