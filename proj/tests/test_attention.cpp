// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "motioneditor/attention.hpp"
#include "motioneditor/gradcheck.hpp"

using namespace motioneditor;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(static_cast<size_t>(t.dim(0)), std::vector<double>(static_cast<size_t>(t.dim(1))));
  for (int64_t i = 0; i < t.dim(0); ++i)
    for (int64_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at({i, j});
  return m;
}

Mat mm(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t k = 0; k < b.size(); ++k)
      for (size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// Straight textbook attention in double precision.
Mat oracle_attend(const Mat& q, const Mat& k, const Mat& v) {
  const double d = static_cast<double>(q[0].size());
  Mat out(q.size(), std::vector<double>(v[0].size(), 0.0));
  for (size_t i = 0; i < q.size(); ++i) {
    std::vector<double> logits(k.size());
    for (size_t j = 0; j < k.size(); ++j) {
      logits[j] = std::inner_product(q[i].begin(), q[i].end(), k[j].begin(), 0.0) / std::sqrt(d);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (auto& l : logits) z += (l = std::exp(l - mx));
    for (size_t j = 0; j < k.size(); ++j)
      for (size_t c = 0; c < v[0].size(); ++c) out[i][c] += logits[j] / z * v[j][c];
  }
  return out;
}

Mat oracle_projected(const Mat& xq, const Mat& xkv, const ProjectionSet& p) {
  return mm(oracle_attend(mm(xq, to_mat(p.wq)), mm(xkv, to_mat(p.wk)), mm(xkv, to_mat(p.wv))), to_mat(p.wo));
}

double max_diff(const Tensor& t, const Mat& m) {
  double worst = 0.0;
  for (int64_t i = 0; i < t.dim(0); ++i)
    for (int64_t j = 0; j < t.dim(1); ++j) worst = std::max(worst, std::fabs(t.at({i, j}) - m[i][j]));
  return worst;
}

double max_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::fabs(static_cast<double>(a[i]) - b[i]));
  return worst;
}

Tensor frame(const Tensor& video, int64_t f) {
  return reshape(slice(video, 0, f, 1), {video.dim(1), video.dim(2)});
}

}  // namespace

TEST_CASE("attend degenerate cases") {
  Rng rng(1);
  const Tensor q = rng.normal_tensor({3, 4});
  const Tensor v1 = rng.normal_tensor({1, 4});
  const Tensor single = attend(q, rng.normal_tensor({1, 4}), v1);
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t c = 0; c < 4; ++c) CHECK(single.at({i, c}) == v1.at({0, c}));

  const Tensor krow = rng.normal_tensor({1, 4});
  const Tensor k = concat({krow, krow, krow, krow, krow}, 0);
  const Tensor v = rng.normal_tensor({5, 4});
  const Tensor out = attend(q, k, v);
  for (int64_t c = 0; c < 4; ++c) {
    double m = 0.0;
    for (int64_t j = 0; j < 5; ++j) m += v.at({j, c}) / 5.0;
    for (int64_t i = 0; i < 3; ++i) CHECK(std::fabs(out.at({i, c}) - m) <= 1e-6);
  }
  CHECK_THROWS_AS(attend(q, rng.normal_tensor({2, 3}), rng.normal_tensor({2, 3})), DimensionError);
  CHECK_THROWS_AS(attend(q, rng.normal_tensor({2, 4}), rng.normal_tensor({3, 4})), DimensionError);
}

TEST_CASE("attend is invariant to duplicating keys and values") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t nq = rng.uniform_int(1, 8), nk = rng.uniform_int(1, 8), d = rng.uniform_int(1, 16);
    const Tensor q = rng.normal_tensor({nq, d}), k = rng.normal_tensor({nk, d}), v = rng.normal_tensor({nk, d});
    CHECK(max_diff(attend(q, concat({k, k}, 0), concat({v, v}, 0)), attend(q, k, v)) <= 1e-5);
  }
}

TEST_CASE("attention rows are stochastic and equivariant under key permutation") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int64_t nq = rng.uniform_int(1, 6), nk = rng.uniform_int(1, 9), d = rng.uniform_int(1, 12);
    const Tensor q = rng.normal_tensor({nq, d}), k = rng.normal_tensor({nk, d}), v = rng.normal_tensor({nk, d});
    const Tensor w = attention_weights(q, k);
    for (int64_t i = 0; i < nq; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < nk; ++j) s += w.at({i, j});
      CHECK(std::fabs(s - 1.0) <= 1e-6);
    }
    std::vector<int64_t> perm(static_cast<size_t>(nk));
    std::iota(perm.begin(), perm.end(), 0);
    for (int64_t j = nk - 1; j > 0; --j) std::swap(perm[j], perm[rng.uniform_int(0, j + 1)]);
    CHECK(max_diff(attend(q, select_rows(k, perm), select_rows(v, perm)), attend(q, k, v)) <= 1e-6);
  }
}

TEST_CASE("attend matches the double-precision oracle") {
  Rng rng(4);
  const Tensor q = rng.normal_tensor({5, 6}), k = rng.normal_tensor({7, 6}), v = rng.normal_tensor({7, 3});
  CHECK(max_diff(attend(q, k, v), oracle_attend(to_mat(q), to_mat(k), to_mat(v))) <= 1e-5);
}

TEST_CASE("cs attention at frame 0 reduces to self-attention") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t n = rng.uniform_int(1, 10), d = rng.uniform_int(2, 12);
    const ProjectionSet p = ProjectionSet::random(rng, d, 0.5);
    const Tensor z = rng.normal_tensor({n, d});
    CHECK(max_diff(cs_attention(z, z, p), self_attention(z, p)) <= 1e-5);
    const Tensor video = rng.normal_tensor({3, n, d});
    CHECK(max_diff(frame(cs_attention_video(video, p), 0), self_attention(frame(video, 0), p)) <= 1e-5);
  }
}

TEST_CASE("cs attention matches the explicit 2N concatenation oracle") {
  Rng rng(6);
  const ProjectionSet p = ProjectionSet::random(rng, 8, 0.4);
  const Tensor video = rng.normal_tensor({4, 4, 8});
  const Tensor batched = cs_attention_video(video, p);
  for (int64_t f = 0; f < 4; ++f) {
    const Mat cur = to_mat(frame(video, f));
    Mat ctx = to_mat(frame(video, std::max<int64_t>(f - 1, 0)));
    ctx.insert(ctx.end(), cur.begin(), cur.end());
    const Mat want = oracle_projected(cur, ctx, p);
    CHECK(max_diff(frame(batched, f), want) <= 1e-5);
    if (f > 0) CHECK(max_diff(cs_attention(frame(video, f - 1), frame(video, f), p), want) <= 1e-5);
  }
  CHECK_THROWS_AS(cs_attention(rng.normal_tensor({3, 8}), rng.normal_tensor({4, 8}), p), DimensionError);
}

TEST_CASE("temporal attention") {
  Rng rng(7);
  const ProjectionSet p = ProjectionSet::random(rng, 6, 0.5);
  const Tensor one = rng.normal_tensor({1, 6});
  const Mat expect_one = mm(mm(to_mat(one), to_mat(p.wv)), to_mat(p.wo));
  CHECK(max_diff(temporal_attention(one, p), expect_one) <= 1e-5);

  const Tensor loc = rng.normal_tensor({1, 6});
  const Tensor same = temporal_attention(concat({loc, loc, loc, loc}, 0), p);
  for (int64_t f = 1; f < 4; ++f)
    for (int64_t c = 0; c < 6; ++c) CHECK(same.at({f, c}) == same.at({0, c}));

  const Tensor x = rng.normal_tensor({3, 5, 6});
  const Tensor y = temporal_attention(x, p);
  for (int64_t n = 0; n < 5; ++n) {
    const Tensor stack = reshape(slice(x, 1, n, 1), {3, 6});
    const Mat want = oracle_projected(to_mat(stack), to_mat(stack), p);
    CHECK(max_diff(reshape(slice(y, 1, n, 1), {3, 6}), want) <= 1e-5);
  }
}

TEST_CASE("content cross-attention") {
  Rng rng(8);
  const ProjectionSet p = ProjectionSet::random(rng, 8, 0.4);
  const Tensor m = rng.normal_tensor({6, 8});
  const Tensor z1 = rng.normal_tensor({1, 8});
  const Tensor out1 = content_cross_attention(m, z1, p);
  CHECK(out1.shape() == Shape{6, 8});
  for (int64_t i = 1; i < 6; ++i)
    for (int64_t c = 0; c < 8; ++c) CHECK(out1.at({i, c}) == out1.at({0, c}));

  ProjectionSet sym = p;
  sym.wk = p.wq;
  const Tensor z = rng.normal_tensor({4, 8});
  ProjectionSet self = sym;
  CHECK(max_diff(content_cross_attention(z, z, sym), self_attention(z, self)) <= 1e-6);

  const Tensor z4 = rng.normal_tensor({4, 8});
  CHECK(max_diff(content_cross_attention(m, z4, p), oracle_projected(to_mat(m), to_mat(z4), p)) <= 1e-5);
  CHECK_THROWS_AS(content_cross_attention(m, rng.normal_tensor({4, 7}), p), DimensionError);
}

TEST_CASE("every attention kernel passes a finite-difference check") {
  Rng rng(9);
  const int64_t d = 6;
  const ProjectionSet p = ProjectionSet::random(rng, d, 0.5);
  const NamedTensors weights{{"wq", p.wq}, {"wk", p.wk}, {"wv", p.wv}, {"wo", p.wo}};
  auto with_input = [&](const char* name, const Tensor& x) {
    NamedTensors all = weights;
    all.emplace_back(name, x);
    return all;
  };
  auto proj = [](const std::vector<Tensor>& v) { return ProjectionSet{v[0], v[1], v[2], v[3]}; };

  const Tensor a = rng.normal_tensor({4, d}), b = rng.normal_tensor({4, d}), c = rng.normal_tensor({5, d});
  const auto r1 = grad_check(with_input("q", a), [&](const std::vector<Tensor>& v) {
    return attend(linear(v[4], v[0]), linear(c, v[1]), linear(c, v[2]));
  });
  CHECK_MESSAGE(r1.passed(), r1.summary());
  NamedTensors cs = with_input("prev", a);
  cs.emplace_back("cur", b);
  const auto r2 = grad_check(cs, [&](const std::vector<Tensor>& v) { return cs_attention(v[4], v[5], proj(v)); });
  CHECK_MESSAGE(r2.passed(), r2.summary());
  const auto r3 = grad_check(with_input("video", rng.normal_tensor({3, 4, d})),
                             [&](const std::vector<Tensor>& v) { return cs_attention_video(v[4], proj(v)); });
  CHECK_MESSAGE(r3.passed(), r3.summary());
  const auto r4 = grad_check(with_input("x", rng.normal_tensor({3, 4, d})),
                             [&](const std::vector<Tensor>& v) { return temporal_attention(v[4], proj(v)); });
  CHECK_MESSAGE(r4.passed(), r4.summary());
  NamedTensors cca = with_input("m", c);
  cca.emplace_back("z", a);
  const auto r5 =
      grad_check(cca, [&](const std::vector<Tensor>& v) { return content_cross_attention(v[4], v[5], proj(v)); });
  CHECK_MESSAGE(r5.passed(), r5.summary());
}
