// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "motioneditor/autodiff.hpp"
#include "motioneditor/gradcheck.hpp"
#include "motioneditor/melt.hpp"
#include "motioneditor/optim.hpp"
#include "motioneditor/rng.hpp"
#include "motioneditor/tensor.hpp"

using namespace motioneditor;

namespace {

void check_close(const Tensor& got, const std::vector<float>& want, double tol) {
  REQUIRE(got.numel() == static_cast<int64_t>(want.size()));
  for (size_t i = 0; i < want.size(); ++i) CHECK(std::fabs(got[static_cast<int64_t>(i)] - want[i]) <= tol);
}

std::vector<Tensor> params_values(const NamedTensors& params) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

GradCheckOptions sixteen_samples() {
  GradCheckOptions o;
  o.samples_per_param = 16;
  return o;
}

}  // namespace

TEST_CASE("matmul examples") {
  const Tensor a = Tensor::from2d({{1, 2}, {3, 4}});
  CHECK(matmul(Tensor::from2d({{1, 0}, {0, 1}}), a).bit_equal(a));
  const Tensor p = matmul(a, Tensor::from2d({{0}, {1}}));
  CHECK(p.shape() == Shape{2, 1});
  check_close(p, {2, 4}, 0.0);

  try {
    matmul(Tensor::zeros({3, 5}), Tensor::zeros({4, 2}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[3x5]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  check_close(softmax(Tensor::from({0, 0, 0}), 0), {1.0f / 3, 1.0f / 3, 1.0f / 3}, 1e-7);
  const Tensor big = softmax(Tensor::from({1000, 0}), 0);
  CHECK(big.all_finite());
  check_close(big, {1, 0}, 1e-6);
  check_close(softmax(Tensor::from({static_cast<float>(std::log(2.0)), 0}), 0), {2.0f / 3, 1.0f / 3}, 1e-7);
  CHECK_THROWS_AS(softmax(Tensor::from({1, 2}), 1), DimensionError);
}

TEST_CASE("softmax rows sum to one and ignore constant shifts") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t rows = rng.uniform_int(1, 6), cols = rng.uniform_int(1, 9);
    const Tensor x = rng.normal_tensor({rows, cols}, 3.0);
    const Tensor y = softmax(x, 1);
    const float shift = static_cast<float>(rng.normal() * 10.0);
    const Tensor ys = softmax(add(x, Tensor::full(x.shape(), shift)), 1);
    for (int64_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (int64_t c = 0; c < cols; ++c) {
        s += y.at({r, c});
        CHECK(std::fabs(y.at({r, c}) - ys.at({r, c})) <= 1e-6);
        CHECK(y.at({r, c}) >= 0.0f);
      }
      CHECK(std::fabs(s - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("concat examples and round trip") {
  const Tensor a = Tensor::from2d({{1, 2, 3}, {4, 5, 6}});
  CHECK(concat({a}, 0).bit_equal(a));
  CHECK(concat({a, a}, 0).shape() == Shape{4, 3});
  CHECK_THROWS_AS(concat({}, 0), DimensionError);
  CHECK_THROWS_AS(concat({a, Tensor::zeros({2, 2})}, 0), DimensionError);

  Rng rng(3);
  for (int trial = 0; trial < 25; ++trial) {
    const int axis = static_cast<int>(rng.uniform_int(0, 3));
    std::vector<Tensor> parts;
    Shape base{rng.uniform_int(1, 4), rng.uniform_int(1, 4), rng.uniform_int(1, 4)};
    const int count = static_cast<int>(rng.uniform_int(1, 5));
    for (int i = 0; i < count; ++i) {
      Shape s = base;
      s[axis] = rng.uniform_int(1, 4);
      parts.push_back(rng.normal_tensor(s));
    }
    const Tensor joined = concat(parts, axis);
    int64_t offset = 0;
    for (const auto& p : parts) {
      CHECK(slice(joined, axis, offset, p.dim(axis)).bit_equal(p));
      offset += p.dim(axis);
    }
    CHECK(offset == joined.dim(axis));
  }
}

TEST_CASE("conv_temporal examples") {
  Rng rng(5);
  const Tensor x = rng.normal_tensor({4, 2, 3, 3});
  CHECK(conv_temporal(x, Tensor::from({0, 1, 0})).bit_equal(x));

  const Tensor constant = Tensor::full({5, 1, 2, 2}, 2.0f);
  const Tensor y = conv_temporal(constant, Tensor::from({1, 1, 1}));
  for (int64_t f = 0; f < 5; ++f) {
    const float expect = (f == 0 || f == 4) ? 4.0f : 6.0f;
    CHECK(y.at({f, 0, 1, 1}) == expect);
  }

  const Tensor single = rng.normal_tensor({1, 3, 2, 2});
  CHECK(conv_temporal(single, Tensor::from({7, 1, 9})).bit_equal(single));
  CHECK_THROWS_AS(conv_temporal(x, Tensor::from({1, 1})), DimensionError);
}

TEST_CASE("conv_temporal full kernel matches per-channel loop") {
  Rng rng(8);
  const Tensor x = rng.normal_tensor({5, 3, 4});
  const Tensor k = rng.normal_tensor({2, 3, 3});
  const Tensor y = conv_temporal(x, k);
  REQUIRE(y.shape() == Shape{5, 2, 4});
  for (int64_t f = 0; f < 5; ++f)
    for (int64_t o = 0; o < 2; ++o)
      for (int64_t s = 0; s < 4; ++s) {
        double ref = 0.0;
        for (int64_t j = 0; j < 3; ++j) {
          const int64_t src = f + j - 1;
          if (src < 0 || src >= 5) continue;
          for (int64_t c = 0; c < 3; ++c) ref += static_cast<double>(k.at({o, c, j})) * x.at({src, c, s});
        }
        CHECK(std::fabs(y.at({f, o, s}) - ref) <= 1e-5);
      }
}

TEST_CASE("backward examples") {
  Rng rng(2);
  const Tensor x0 = rng.normal_tensor({3, 4});
  {
    Tape tape;
    const Tensor x = tape.watch(x0);
    const Gradients g = tape.backward(sum(x));
    CHECK(g.of(x)->bit_equal(Tensor::ones({3, 4})));
  }
  {
    Tape tape;
    const Tensor x = tape.watch(x0);
    const Gradients g = backward(tape, sum(mul(x, x)));
    check_close(*g.of(x), scale(x0, 2.0f).to_vector(), 0.0);
  }
  {
    Tape tape;
    const Tensor x = tape.watch(x0);
    const Tensor frozen = rng.normal_tensor({4, 2});
    const Gradients g = tape.backward(sum(matmul(x, frozen)));
    CHECK(g.of(frozen) == std::nullopt);
    CHECK(g.of(x).has_value());
  }
  {
    Tape tape;
    const Tensor x = tape.watch(x0);
    CHECK_THROWS_AS(tape.backward(x), DimensionError);
    Tape other;
    const Tensor y = other.watch(x0);
    CHECK_THROWS(tape.backward(sum(y)));
  }
}

TEST_CASE("matmul + softmax composite matches finite differences") {
  Rng rng(42);
  const Tensor a = rng.normal_tensor({4, 4});
  const Tensor b = rng.normal_tensor({4, 4});
  const Tensor w = rng.normal_tensor({4, 4});
  const auto report = grad_check({{"a", a}, {"b", b}},
                                 [&](const std::vector<Tensor>& p) {
                                   return weighted_sum(softmax(matmul(p[0], p[1]), 1), w);
                                 },
                                 sixteen_samples());
  INFO(report.summary());
  CHECK(report.passed());
}

TEST_CASE("every primitive passes a finite-difference check") {
  Rng rng(7);
  for (int trial = 0; trial < 3; ++trial) {
    const int64_t m = rng.uniform_int(2, 5), n = rng.uniform_int(2, 5), k = rng.uniform_int(2, 5);
    auto check = [&](const char* name, const NamedTensors& params, const Shape& out_shape, auto fn) {
      GradCheckOptions opts;
      opts.seed = static_cast<uint64_t>(trial);
      const auto report = grad_check(params, [&](const std::vector<Tensor>& p) { return fn(p); }, opts);
      CHECK(fn(params_values(params)).shape() == out_shape);
      const std::string label = std::string(name) + ": " + report.summary();
      INFO(label);
      CHECK(report.passed());

      // A 10% error in any backward rule used here must be detected.
      for (const char* op : {"add", "sub", "mul", "scale", "add_bias", "add_channel", "matmul", "bmm", "permute",
                             "reshape", "slice", "concat", "select_rows", "sum", "mean", "softmax", "layer_norm",
                             "silu", "conv2d", "conv_temporal", "avg_pool2d", "upsample_nearest"}) {
        opts.corrupt_backward[op] = 1.1f;
      }
      const auto corrupted = grad_check(params, [&](const std::vector<Tensor>& p) { return fn(p); }, opts);
      CHECK_FALSE(corrupted.passed());
    };
    const Tensor a = rng.normal_tensor({m, n}), b = rng.normal_tensor({m, n});
    check("add", {{"a", a}, {"b", b}}, {m, n}, [](const auto& p) { return add(p[0], p[1]); });
    check("sub", {{"a", a}, {"b", b}}, {m, n}, [](const auto& p) { return sub(p[0], p[1]); });
    check("mul", {{"a", a}, {"b", b}}, {m, n}, [](const auto& p) { return mul(p[0], p[1]); });
    check("scale", {{"a", a}}, {m, n}, [](const auto& p) { return scale(p[0], -1.7f); });
    check("add_bias", {{"a", a}, {"b", rng.normal_tensor({n})}}, {m, n}, [](const auto& p) { return add_bias(p[0], p[1]); });
    check("matmul", {{"a", a}, {"b", rng.normal_tensor({n, k})}}, {m, k}, [](const auto& p) { return matmul(p[0], p[1]); });
    check("bmm", {{"a", rng.normal_tensor({2, m, n})}, {"b", rng.normal_tensor({2, n, k})}}, {2, m, k},
          [](const auto& p) { return bmm(p[0], p[1]); });
    check("linear", {{"x", rng.normal_tensor({2, m, n})}, {"w", rng.normal_tensor({n, k})}}, {2, m, k},
          [](const auto& p) { return linear(p[0], p[1]); });
    check("transpose", {{"a", a}}, {n, m}, [](const auto& p) { return transpose(p[0]); });
    check("permute", {{"x", rng.normal_tensor({m, n, k})}}, {k, m, n}, [](const auto& p) { return permute(p[0], {2, 0, 1}); });
    check("reshape", {{"a", a}}, {m * n}, [&](const auto& p) { return reshape(p[0], {m * n}); });
    check("slice", {{"a", a}}, {m, 1}, [&](const auto& p) { return slice(p[0], 1, n - 1, 1); });
    check("concat", {{"a", a}, {"b", b}}, {m, 2 * n}, [](const auto& p) { return concat({p[0], p[1]}, 1); });
    check("select_rows", {{"a", a}}, {3, n}, [&](const auto& p) { return select_rows(p[0], {m - 1, 0, m - 1}); });
    check("sum", {{"a", a}}, {}, [](const auto& p) { return sum(p[0]); });
    check("mean", {{"a", a}}, {}, [](const auto& p) { return mean(p[0]); });
    check("softmax0", {{"a", a}}, {m, n}, [](const auto& p) { return softmax(p[0], 0); });
    check("softmax1", {{"a", a}}, {m, n}, [](const auto& p) { return softmax(p[0], 1); });
    check("layer_norm", {{"x", a}, {"g", rng.normal_tensor({n})}, {"b", rng.normal_tensor({n})}}, {m, n},
          [](const auto& p) { return layer_norm(p[0], p[1], p[2]); });
    check("silu", {{"a", a}}, {m, n}, [](const auto& p) { return silu(p[0]); });
    check("mse", {{"a", a}, {"b", b}}, {}, [](const auto& p) { return mse(p[0], p[1]); });
    const Tensor img = rng.normal_tensor({2, 2, 4, 4});
    check("add_channel", {{"x", img}, {"b", rng.normal_tensor({2})}}, {2, 2, 4, 4},
          [](const auto& p) { return add_channel(p[0], p[1]); });
    check("conv2d", {{"x", img}, {"w", rng.normal_tensor({3, 2, 3, 3})}, {"b", rng.normal_tensor({3})}},
          {2, 3, 2, 2}, [](const auto& p) { return conv2d(p[0], p[1], p[2], 2, 1); });
    check("conv_temporal", {{"x", rng.normal_tensor({4, 2, 3})}, {"k", rng.normal_tensor({3, 2, 3})}}, {4, 3, 3},
          [](const auto& p) { return conv_temporal(p[0], p[1]); });
    check("conv_temporal_dw", {{"x", rng.normal_tensor({4, 2, 3})}, {"k", rng.normal_tensor({3})}}, {4, 2, 3},
          [](const auto& p) { return conv_temporal(p[0], p[1]); });
    check("avg_pool2d", {{"x", img}}, {2, 2, 2, 2}, [](const auto& p) { return avg_pool2d(p[0], 2); });
    check("upsample", {{"x", img}}, {2, 2, 8, 8}, [](const auto& p) { return upsample_nearest(p[0], 2); });
  }
}

TEST_CASE("corrupted backward rule is caught") {
  Rng rng(1);
  const Tensor a = rng.normal_tensor({3, 3}), b = rng.normal_tensor({3, 3});
  GradCheckOptions opts;
  opts.corrupt_backward["matmul"] = 1.5f;
  const auto report = grad_check({{"a", a}, {"b", b}},
                                 [](const std::vector<Tensor>& p) { return sum(matmul(p[0], p[1])); }, opts);
  CHECK_FALSE(report.passed());
  CHECK(report.failing_params().size() == 2);
}

TEST_CASE("operations are deterministic") {
  Rng r1(99), r2(99);
  const Tensor x1 = r1.normal_tensor({3, 5}), x2 = r2.normal_tensor({3, 5});
  CHECK(x1.bit_equal(x2));
  const Tensor w = Rng(4).normal_tensor({5, 5});
  CHECK(softmax(matmul(x1, w), 1).bit_equal(softmax(matmul(x2, w), 1)));
  CHECK(Rng(5).fork("noise").normal_tensor({4}).bit_equal(Rng(5).fork("noise").normal_tensor({4})));
  CHECK_FALSE(Rng(5).fork("noise").normal_tensor({4}).bit_equal(Rng(5).fork("weights").normal_tensor({4})));
}

TEST_CASE("adam examples") {
  OptimizerState state;
  const std::vector<Tensor> p{Rng(1).normal_tensor({3})};
  const std::vector<Tensor> zero{Tensor::zeros({3})};
  CHECK(adam_step(p, zero, state)[0].bit_equal(p[0]));
  CHECK(state.step_count() == 1);

  OptimizerState s2(OptimizerConfig{.lr = 1e-2});
  std::vector<Tensor> q{Tensor::from({1.0f, -1.0f})};
  const std::vector<Tensor> g{Tensor::from({0.5f, -2.0f})};
  for (int i = 0; i < 50; ++i) q = adam_step(q, g, s2);
  CHECK(q[0][0] < 1.0f);
  CHECK(q[0][1] > -1.0f);

  CHECK_THROWS_AS(adam_step(p, std::vector<Tensor>{Tensor::zeros({2})}, state), DimensionError);
}

TEST_CASE("adam on a quadratic bowl matches a double-precision reference") {
  // Reference Adam written independently in double precision.
  const std::vector<double> w0{3.0, -2.5, 4.0, 1.5};
  std::vector<double> w = w0, m(4, 0.0), v(4, 0.0);
  std::vector<double> ref_norms;
  for (int t = 1; t <= 200; ++t) {
    for (size_t i = 0; i < 4; ++i) {
      const double g = 2.0 * w[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1.0 - std::pow(0.9, t)), vh = v[i] / (1.0 - std::pow(0.999, t));
      w[i] -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
    }
    ref_norms.push_back(std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0)));
  }

  OptimizerState state(OptimizerConfig{.lr = 1e-2});
  std::vector<Tensor> params{Tensor({4}, {3.0f, -2.5f, 4.0f, 1.5f})};
  double prev = 1e9;
  for (int t = 1; t <= 200; ++t) {
    Tape tape;
    const Tensor x = tape.watch(params[0]);
    const Gradients g = tape.backward(sum(mul(x, x)));
    params = adam_step(params, std::vector<Tensor>{*g.of(x)}, state);
    double norm = 0.0;
    for (float e : params[0].data()) norm += static_cast<double>(e) * e;
    norm = std::sqrt(norm);
    CHECK(norm < prev);
    CHECK(std::fabs(norm - ref_norms[static_cast<size_t>(t - 1)]) <= 1e-4);
    prev = norm;
  }
}

TEST_CASE("MELT container round trip is bit exact") {
  Rng rng(12);
  const auto dir = std::filesystem::temp_directory_path() / "motioneditor_melt_test";
  std::filesystem::create_directories(dir);
  for (const Shape& s : {Shape{}, Shape{7}, Shape{2, 3, 4}, Shape{1, 4, 8, 8}}) {
    const Tensor t = rng.normal_tensor(s);
    write_melt(dir / "t.melt", t);
    CHECK(read_melt(dir / "t.melt").bit_equal(t));
  }
  const std::string bytes = encode_melt(Tensor::from({1.0f}));
  CHECK(bytes.substr(0, 4) == "MELT");
  CHECK(bytes.size() == 4 + 1 + 1 + 4 + 4 + 4);
  CHECK(static_cast<unsigned char>(bytes[14]) == 0x00);
  CHECK(static_cast<unsigned char>(bytes[17]) == 0x3f);  // 1.0f little-endian: 00 00 80 3f
  CHECK_THROWS_AS(decode_melt("MELX" + bytes.substr(4)), FormatError);
  CHECK_THROWS_AS(decode_melt(bytes.substr(0, bytes.size() - 1)), FormatError);
  std::filesystem::remove_all(dir);
}
