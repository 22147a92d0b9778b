#include <doctest.h>

#include <cmath>
#include <sstream>

#include "voxelweave/common.hpp"
#include "voxelweave/optim.hpp"
#include "voxelweave/tensor.hpp"
#include "voxelweave/tensor_io.hpp"

using namespace vw;
using ad::shape_t;
using tensor = ad::tensor<double>;

namespace {

tensor random_tensor(const shape_t& s, rng& g, bool grad = false) {
  std::vector<double> v(size_t(ad::numel(s)));
  for (auto& x : v) x = g.uniform(-1, 1);
  return tensor(s, std::move(v), grad);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// direct nested-loop cross-correlation
std::vector<double> conv2d_oracle(const tensor& x, const tensor& k, int stride, int pad) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const auto oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(size_t(n * co * oh * ow), 0.0);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t o = 0; o < co; ++o)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xx = 0; xx < ow; ++xx) {
          double s = 0;
          for (int64_t ci = 0; ci < c; ++ci)
            for (int64_t dy = 0; dy < kh; ++dy)
              for (int64_t dx = 0; dx < kw; ++dx) {
                int64_t iy = y * stride - pad + dy, ix = xx * stride - pad + dx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                s += x[((b * c + ci) * h + iy) * w + ix] * k[((o * c + ci) * kh + dy) * kw + dx];
              }
          out[size_t(((b * co + o) * oh + y) * ow + xx)] = s;
        }
  return out;
}

std::vector<double> conv3d_oracle(const tensor& x, const tensor& k, int stride, int pad) {
  const auto c = x.dim(1), d = x.dim(2), h = x.dim(3), w = x.dim(4);
  const auto co = k.dim(0), kk = k.dim(2);
  const auto od = (d + 2 * pad - kk) / stride + 1, oh = (h + 2 * pad - kk) / stride + 1,
             ow = (w + 2 * pad - kk) / stride + 1;
  std::vector<double> out(size_t(co * od * oh * ow), 0.0);
  for (int64_t o = 0; o < co; ++o)
    for (int64_t z = 0; z < od; ++z)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xx = 0; xx < ow; ++xx) {
          double s = 0;
          for (int64_t ci = 0; ci < c; ++ci)
            for (int64_t dz = 0; dz < kk; ++dz)
              for (int64_t dy = 0; dy < kk; ++dy)
                for (int64_t dx = 0; dx < kk; ++dx) {
                  int64_t iz = z * stride - pad + dz, iy = y * stride - pad + dy,
                          ix = xx * stride - pad + dx;
                  if (iz < 0 || iz >= d || iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                  s += x[((ci * d + iz) * h + iy) * w + ix] *
                       k[(((o * c + ci) * kk + dz) * kk + dy) * kk + dx];
                }
          out[size_t(((o * od + z) * oh + y) * ow + xx)] = s;
        }
  return out;
}

// scatter form: every input voxel adds kernel * value into the output
std::vector<double> conv3d_transposed_oracle(const tensor& x, const tensor& k, int stride,
                                             int pad) {
  const auto ci = x.dim(1), d = x.dim(2), h = x.dim(3), w = x.dim(4);
  const auto co = k.dim(1), kk = k.dim(2);
  const auto od = (d - 1) * stride - 2 * pad + kk, oh = (h - 1) * stride - 2 * pad + kk,
             ow = (w - 1) * stride - 2 * pad + kk;
  std::vector<double> out(size_t(co * od * oh * ow), 0.0);
  for (int64_t i = 0; i < ci; ++i)
    for (int64_t z = 0; z < d; ++z)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t xx = 0; xx < w; ++xx)
          for (int64_t o = 0; o < co; ++o)
            for (int64_t dz = 0; dz < kk; ++dz)
              for (int64_t dy = 0; dy < kk; ++dy)
                for (int64_t dx = 0; dx < kk; ++dx) {
                  int64_t oz = z * stride - pad + dz, oy = y * stride - pad + dy,
                          ox = xx * stride - pad + dx;
                  if (oz < 0 || oz >= od || oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                  out[size_t(((o * od + oz) * oh + oy) * ow + ox)] +=
                      x[((i * d + z) * h + y) * w + xx] *
                      k[(((i * co + o) * kk + dz) * kk + dy) * kk + dx];
                }
  return out;
}

void check_close(std::span<const double> got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(tol));
}

}  // namespace

TEST_CASE("conv2d matches the nested-loop oracle") {
  rng g(1);
  for (int trial = 0; trial < 20; ++trial) {
    int k = trial % 2 ? 3 : 1, stride = 1 + trial % 3 / 2, pad = k == 3 ? trial % 2 : 0;
    auto x = random_tensor({1 + trial % 2, 1 + trial % 3, 5 + trial % 3, 4 + trial % 4}, g);
    auto w = random_tensor({2, x.dim(1), k, k}, g);
    check_close(ad::conv2d(x, w, stride, pad).values(), conv2d_oracle(x, w, stride, pad), 1e-12);
  }
}

TEST_CASE("conv3d and its transpose match oracles and are adjoint") {
  rng g(2);
  for (int trial = 0; trial < 12; ++trial) {
    const int k = 1 + trial % 3, stride = 1 + trial % 2, pad = k == 3 ? trial % 2 : 0;
    auto x = random_tensor({1, 2, 4, 5, 4}, g);
    auto w = random_tensor({3, 2, k, k, k}, g);
    auto y = ad::conv3d(x, w, stride, pad);
    check_close(y.values(), conv3d_oracle(x, w, stride, pad), 1e-12);

    auto u = random_tensor({1, 2, 2 + trial % 2, 3, 2}, g);
    auto wt = random_tensor({2, 3, k, k, k}, g);
    auto t = ad::conv3d_transposed(u, wt, stride, pad);
    check_close(t.values(), conv3d_transposed_oracle(u, wt, stride, pad), 1e-12);

    // <conv3d(a, K), u> = <a, conv3d_transposed(u, K)>
    auto a = random_tensor({1, 3, t.dim(2), t.dim(3), t.dim(4)}, g);
    auto fwd = ad::conv3d(a, wt, stride, pad);
    REQUIRE(fwd.shape() == u.shape());
    CHECK(dot(fwd.values(), u.values()) == doctest::Approx(dot(a.values(), t.values())).epsilon(1e-12));
  }
}

TEST_CASE("softmax columns sum to one and are shift invariant") {
  rng g(3);
  auto x = random_tensor({4, 7}, g);
  auto p = ad::softmax(x, 0);
  for (int j = 0; j < 7; ++j) {
    double s = 0;
    for (int c = 0; c < 4; ++c) s += p[c * 7 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
  }
  auto q = ad::softmax(ad::add_scalar(x, 100.0), 0);
  for (int64_t i = 0; i < p.numel(); ++i) CHECK(q[i] == doctest::Approx(p[i]).epsilon(1e-12));
}

TEST_CASE("bilinear sampling: texel centres, interpolation, zero rows off the map") {
  tensor f({1, 2, 3}, {0, 1, 2, 10, 11, 12});
  std::vector<ad::sample_coord> c = {
      {0, 0, true}, {2, 1, true}, {0.5, 0.5, true}, {1.25, 0, true}, {0, 0, false}, {-3, 0, true}};
  auto s = ad::bilinear_sample2d(f, std::span<const ad::sample_coord>(c));
  REQUIRE(s.shape() == shape_t{6, 1});
  CHECK(s[0] == 0);
  CHECK(s[1] == 12);
  CHECK(s[2] == doctest::Approx(5.5));
  CHECK(s[3] == doctest::Approx(1.25));
  CHECK(s[4] == 0);
  CHECK(s[5] == 0);
}

TEST_CASE("backward accumulates through shared subgraphs") {
  tensor x({3}, {1.0, -2.0, 0.5}, true);
  auto y = ad::sum(ad::add(ad::mul(x, x), x));  // d/dx = 2x + 1
  ad::backward(y);
  CHECK(x.grad()[0] == doctest::Approx(3.0));
  CHECK(x.grad()[1] == doctest::Approx(-3.0));
  CHECK(x.grad()[2] == doctest::Approx(2.0));
}

TEST_CASE("min/max tie rules route the gradient to one side") {
  tensor a({1}, {0.5}, true), b({1}, {0.5}, true);
  ad::backward(ad::sum(ad::min_elem(a, b)));
  CHECK(a.grad()[0] == 0);
  CHECK(b.grad()[0] == 1);
  tensor c({1}, {0.5}, true), d({1}, {0.5}, true);
  ad::backward(ad::sum(ad::max_elem(c, d)));
  CHECK(c.grad()[0] == 1);
  CHECK(d.grad()[0] == 0);
}

TEST_CASE("non-finite values are rejected") {
  tensor x({2}, {0.0, 1.0});
  CHECK_THROWS_AS(ad::log(x), domain_error);
  CHECK_THROWS_AS(ad::reshape(x, {3}), dimension_error);
}

TEST_CASE("adam: lr 0 is a no-op; one step moves against the gradient by lr") {
  std::vector<double> p = {1.0, -2.0}, g = {0.5, -0.25};
  ad::adam_state<double> s;
  ad::adam_config cfg;
  cfg.lr = 0;
  auto before = p;
  ad::adam_step(std::span<double>(p), std::span<const double>(g), s, cfg);
  CHECK(p == before);
  ad::adam_state<double> s2;
  cfg.lr = 0.01;
  ad::adam_step(std::span<double>(p), std::span<const double>(g), s2, cfg);
  // the first bias-corrected step has magnitude lr * |g| / (|g| + eps)
  CHECK(p[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
}

TEST_CASE("VWT1 round trip in both precisions") {
  std::stringstream buf;
  std::vector<double> v = {1.0 / 3.0, -2.5, 7.0, 1e-30, 0, 4};
  write_tensor(buf, {2, 3}, std::span<const double>(v), dtype::f64);
  write_tensor(buf, {3, 2}, std::span<const double>(v), dtype::f32);
  auto a = read_tensor(buf);
  auto b = read_tensor(buf);
  CHECK(a.shape == shape_t{2, 3});
  CHECK(a.values == v);
  CHECK(b.type == dtype::f32);
  CHECK(b.values[0] == double(float(1.0 / 3.0)));
  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(read_tensor(bad), io_error);
}
