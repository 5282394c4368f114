// Copyright 2026 The WaveVerify Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <memory>
#include <vector>

#include "doctest.h"
#include "gradcheck.hh"
#include "waveverify/dsp.hh"
#include "waveverify/rng.hh"
#include "waveverify/tape.hh"

using namespace waveverify;
using testutil::gradcheck;
using testutil::MatD;
using testutil::random_mat;
using testutil::TapeD;
using testutil::VarD;

namespace {

MatD naive_conv1d(const MatD& x, const MatD& w, const MatD& b, int K, int stride, int pad) {
  const Eigen::Index cin = x.rows(), cout = w.rows();
  const Eigen::Index tout = (x.cols() + 2 * pad - K) / stride + 1;
  MatD y = MatD::Zero(cout, tout);
  for (Eigen::Index j = 0; j < tout; ++j) {
    for (int k = 0; k < K; ++k) {
      const Eigen::Index i = j * stride + k - pad;
      if (i < 0 || i >= x.cols()) continue;
      y.col(j) += w.middleCols(k * cin, cin) * x.col(i);
    }
  }
  if (b.size() > 0) y.colwise() += Eigen::VectorXd(b.col(0));
  return y;
}

MatD naive_conv_transpose1d(const MatD& x, const MatD& w, const MatD& b, int K, int stride,
                            int pad) {
  const Eigen::Index cin = x.rows(), cout = w.rows();
  const Eigen::Index tout = (x.cols() - 1) * stride + K - 2 * pad;
  MatD y = MatD::Zero(cout, tout);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (int k = 0; k < K; ++k) {
      const Eigen::Index o = j * stride + k - pad;
      if (o < 0 || o >= tout) continue;
      y.col(o) += w.middleCols(k * cin, cin) * x.col(j);
    }
  }
  if (b.size() > 0) y.colwise() += Eigen::VectorXd(b.col(0));
  return y;
}

MatD naive_conv1d_dw(const MatD& x, const MatD& w, const MatD& b, int K, int stride, int pad) {
  const Eigen::Index c = x.rows();
  const Eigen::Index tout = (x.cols() + 2 * pad - K) / stride + 1;
  MatD y = MatD::Zero(c, tout);
  for (Eigen::Index j = 0; j < tout; ++j) {
    for (int k = 0; k < K; ++k) {
      const Eigen::Index i = j * stride + k - pad;
      if (i < 0 || i >= x.cols()) continue;
      y.col(j).array() += w.col(k).array() * x.col(i).array();
    }
  }
  if (b.size() > 0) y.colwise() += Eigen::VectorXd(b.col(0));
  return y;
}

}  // namespace

TEST_CASE("forward values for small closed form ops") {
  TapeD t;
  MatD x(2, 2);
  x << 1, 2, 3, 4;
  MatD gm(2, 1), bt(2, 1);
  gm << 2, 3;
  bt << 0.5, -1;
  VarD vx = t.constant(x);
  VarD film = t.film(vx, t.constant(gm), t.constant(bt));
  CHECK(t.val(film)(0, 0) == doctest::Approx(2.5));
  CHECK(t.val(film)(0, 1) == doctest::Approx(4.5));
  CHECK(t.val(film)(1, 0) == doctest::Approx(8.0));
  CHECK(t.val(film)(1, 1) == doctest::Approx(11.0));

  MatD z = MatD::Zero(1, 1);
  CHECK(t.val(t.sigmoid(t.constant(z)))(0, 0) == doctest::Approx(0.5));
  CHECK(t.val(t.mish(t.constant(z)))(0, 0) == doctest::Approx(0.0));
  MatD one = MatD::Ones(1, 1);
  CHECK(t.val(t.mish(t.constant(one)))(0, 0) == doctest::Approx(0.8650983882));

  MatD up_in(1, 2);
  up_in << 1, 2;
  VarD up = t.upsample_nearest(t.constant(up_in), 2);
  CHECK(t.val(up)(0, 0) == 1.0);
  CHECK(t.val(up)(0, 1) == 1.0);
  CHECK(t.val(up)(0, 2) == 2.0);
  CHECK(t.val(up)(0, 3) == 2.0);
  VarD down = t.avgpool2(up);
  CHECK(t.val(down)(0, 0) == doctest::Approx(1.0));
  CHECK(t.val(down)(0, 1) == doctest::Approx(2.0));

  MatD p = MatD::Constant(3, 4, 0.5);
  VarD bce = t.bce_masked(t.constant(p), MatD::Ones(3, 4), MatD::Ones(3, 4), 12.0);
  CHECK(t.val(bce)(0, 0) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("moe_combine with zero logits averages at half weight") {
  TapeD t;
  MatD f1 = MatD::Constant(2, 3, 1.0);
  MatD f2 = MatD::Constant(2, 3, 3.0);
  MatD gates = MatD::Zero(2, 1);
  VarD out = t.moe_combine({t.constant(f1), t.constant(f2)}, t.constant(gates));
  CHECK(t.val(out)(0, 0) == doctest::Approx(2.0));
  CHECK(t.val(out)(1, 2) == doctest::Approx(2.0));
}

TEST_CASE("conv1d matches the naive oracle") {
  RandomSource rng(17);
  struct Case {
    int cin, cout, tin, K, S, P;
  };
  for (Case c : {Case{3, 4, 20, 7, 2, 3}, Case{2, 5, 13, 3, 1, 1}, Case{4, 4, 9, 1, 1, 0},
                 Case{1, 2, 10, 4, 2, 1}}) {
    MatD x = random_mat(c.cin, c.tin, rng);
    MatD w = random_mat(c.cout, c.cin * c.K, rng);
    MatD b = random_mat(c.cout, 1, rng);
    TapeD t;
    VarD y = t.conv1d(t.constant(x), t.constant(w), t.constant(b), c.K, c.S, c.P);
    MatD expect = naive_conv1d(x, w, b, c.K, c.S, c.P);
    REQUIRE(t.val(y).rows() == expect.rows());
    REQUIRE(t.val(y).cols() == expect.cols());
    CHECK((t.val(y) - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("conv1d output length follows the strided formula") {
  // T_out = floor((T_in + 2P - K) / S) + 1, the K=7 S=2 P=3 encoder step
  // halves lengths rounding up
  RandomSource rng(18);
  for (int tin : {8, 9, 100, 101, 1000, 1001}) {
    MatD x = random_mat(2, tin, rng);
    MatD w = random_mat(2, 2 * 7, rng);
    TapeD t;
    VarD y = t.conv1d(t.constant(x), t.constant(w), VarD{}, 7, 2, 3);
    CHECK(t.val(y).cols() == (tin + 1) / 2);
  }
  MatD shorty = random_mat(2, 3, rng);
  MatD w = random_mat(2, 2 * 7, rng);
  TapeD t;
  CHECK_THROWS(t.conv1d(t.constant(shorty), t.constant(w), VarD{}, 7, 1, 0));
}

TEST_CASE("conv_transpose1d matches the naive oracle and doubles length") {
  RandomSource rng(19);
  MatD x = random_mat(4, 10, rng);
  MatD w = random_mat(3, 4 * 4, rng);
  MatD b = random_mat(3, 1, rng);
  TapeD t;
  VarD y = t.conv_transpose1d(t.constant(x), t.constant(w), t.constant(b), 4, 2, 1);
  MatD expect = naive_conv_transpose1d(x, w, b, 4, 2, 1);
  REQUIRE(t.val(y).cols() == 20);
  CHECK((t.val(y) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("conv1d_dw matches the naive oracle") {
  RandomSource rng(20);
  MatD x = random_mat(5, 15, rng);
  MatD w = random_mat(5, 3, rng);
  MatD b = random_mat(5, 1, rng);
  TapeD t;
  VarD y = t.conv1d_dw(t.constant(x), t.constant(w), t.constant(b), 3, 1, 1);
  MatD expect = naive_conv1d_dw(x, w, b, 3, 1, 1);
  CHECK((t.val(y) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gradients: arithmetic and activations") {
  RandomSource rng(31);
  MatD a = random_mat(3, 4, rng);
  MatD b = random_mat(3, 4, rng);
  double err = gradcheck({&a, &b}, [](TapeD& t, const std::vector<VarD>& v) {
    VarD mixed = t.mul(t.add(v[0], t.scale(v[1], 0.5)), t.sub(v[0], v[1]));
    VarD acts = t.add(t.mish(mixed), t.tanh_(t.sigmoid(v[0])));
    return t.mean_all(t.add(acts, t.leaky_relu(v[1], 0.2)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: abs, log, sqrt-free chain, clamp interior") {
  MatD a(2, 3);
  a << 0.5, -1.5, 0.7, -0.3, 1.7, -0.8;
  double err = gradcheck({&a}, [](TapeD& t, const std::vector<VarD>& v) {
    VarD safe_log = t.log_(t.add_scalar(t.square(v[0]), 0.1));
    VarD clamped = t.clamp_(v[0], -1.0, 1.0);
    return t.mean_all(t.add(t.abs_(v[0]), t.add(safe_log, t.square(clamped))));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: matmul") {
  RandomSource rng(32);
  MatD a = random_mat(3, 5, rng);
  MatD b = random_mat(5, 4, rng);
  double err = gradcheck({&a, &b}, [](TapeD& t, const std::vector<VarD>& v) {
    return t.mean_all(t.square(t.matmul(v[0], v[1])));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: conv1d strided with bias") {
  RandomSource rng(33);
  MatD x = random_mat(3, 20, rng);
  MatD w = random_mat(4, 3 * 7, rng, 0.3);
  MatD b = random_mat(4, 1, rng);
  double err = gradcheck({&x, &w, &b}, [](TapeD& t, const std::vector<VarD>& v) {
    return t.mean_all(t.square(t.conv1d(v[0], v[1], v[2], 7, 2, 3)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: conv_transpose1d") {
  RandomSource rng(34);
  MatD x = random_mat(4, 10, rng);
  MatD w = random_mat(3, 4 * 4, rng, 0.3);
  MatD b = random_mat(3, 1, rng);
  double err = gradcheck({&x, &w, &b}, [](TapeD& t, const std::vector<VarD>& v) {
    return t.mean_all(t.square(t.conv_transpose1d(v[0], v[1], v[2], 4, 2, 1)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: depthwise conv") {
  RandomSource rng(35);
  MatD x = random_mat(5, 15, rng);
  MatD w = random_mat(5, 3, rng, 0.5);
  MatD b = random_mat(5, 1, rng);
  double err = gradcheck({&x, &w, &b}, [](TapeD& t, const std::vector<VarD>& v) {
    return t.mean_all(t.square(t.conv1d_dw(v[0], v[1], v[2], 3, 1, 1)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: group_norm") {
  RandomSource rng(36);
  MatD x = random_mat(6, 7, rng);
  MatD gm = random_mat(6, 1, rng, 0.5);
  MatD bt = random_mat(6, 1, rng, 0.5);
  double err = gradcheck(
      {&x, &gm, &bt},
      [](TapeD& t, const std::vector<VarD>& v) {
        return t.mean_all(t.square(t.group_norm(v[0], v[1], v[2], 3)));
      },
      1e-4);
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: film and colwise_scale") {
  RandomSource rng(37);
  MatD x = random_mat(4, 6, rng);
  MatD gm = random_mat(4, 1, rng);
  MatD bt = random_mat(4, 1, rng);
  MatD s = random_mat(1, 6, rng);
  double err = gradcheck({&x, &gm, &bt, &s}, [](TapeD& t, const std::vector<VarD>& v) {
    return t.mean_all(t.square(t.colwise_scale(t.film(v[0], v[1], v[2]), v[3])));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: moe_combine") {
  RandomSource rng(38);
  MatD f1 = random_mat(2, 4, rng);
  MatD f2 = random_mat(2, 4, rng);
  MatD f3 = random_mat(2, 4, rng);
  MatD gates = random_mat(3, 1, rng);
  double err = gradcheck({&f1, &f2, &f3, &gates}, [](TapeD& t, const std::vector<VarD>& v) {
    return t.mean_all(t.square(t.moe_combine({v[0], v[1], v[2]}, v[3])));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: shape ops") {
  RandomSource rng(39);
  MatD x = random_mat(4, 8, rng);
  double err = gradcheck({&x}, [](TapeD& t, const std::vector<VarD>& v) {
    VarD padded = t.pad_cols(v[0], 2, 3);
    VarD top = t.slice_rows(padded, 0, 2);
    VarD bottom = t.slice_rows(padded, 2, 2);
    VarD joined = t.concat_rows(top, t.scale(bottom, 2.0));
    VarD up = t.upsample_nearest(t.slice_cols(joined, 1, 6), 2);
    VarD pooled = t.avgpool2(up);
    return t.add(t.sum_all(t.square(t.mean_rows(pooled))), t.mean_all(t.square(pooled)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: stft magnitude") {
  RandomSource rng(40);
  MatD x = random_mat(1, 96, rng);
  double err = gradcheck({&x}, [](TapeD& t, const std::vector<VarD>& v) {
    return t.mean_all(t.stft_mag(v[0], 32, 8));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: masked bce") {
  RandomSource rng(41);
  MatD x = random_mat(3, 6, rng);
  MatD target(3, 6), mask(3, 6);
  for (Eigen::Index j = 0; j < 6; ++j)
    for (Eigen::Index i = 0; i < 3; ++i) {
      target(i, j) = static_cast<double>(rng.uniform_int(2));
      mask(i, j) = static_cast<double>(rng.uniform_int(2));
    }
  double err = gradcheck({&x}, [&](TapeD& t, const std::vector<VarD>& v) {
    return t.bce_masked(t.sigmoid(v[0]), target, mask, 18.0);
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: iir filter") {
  RandomSource rng(42);
  MatD x = random_mat(1, 40, rng);
  auto sos = butterworth_lowpass(4, 2000.0, 16000.0);
  double err = gradcheck({&x}, [&](TapeD& t, const std::vector<VarD>& v) {
    return t.mean_all(t.square(t.iir(v[0], sos)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: resample") {
  RandomSource rng(43);
  MatD x = random_mat(1, 50, rng);
  for (double step : {2.0, 0.5}) {
    auto map = std::make_shared<const ResampleMap>(make_resample_map(50, step));
    double err = gradcheck({&x}, [&](TapeD& t, const std::vector<VarD>& v) {
      return t.mean_all(t.square(t.resample(v[0], map)));
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("gradients: gather_mix routes only taken columns") {
  RandomSource rng(44);
  MatD x = random_mat(2, 6, rng);
  std::vector<int32_t> idx{5, 4, 3, 2, 1, 0};
  std::vector<uint8_t> take{1, 1, 0, 0, 1, 1};
  MatD fill = MatD::Constant(2, 6, 0.25);
  double err = gradcheck({&x}, [&](TapeD& t, const std::vector<VarD>& v) {
    return t.mean_all(t.square(t.gather_mix(v[0], idx, take, fill)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("input gradients are readable and exact") {
  TapeD t;
  MatD x(2, 2);
  x << 1, -2, 3, 0.5;
  VarD vx = t.input(x);
  VarD loss = t.sum_all(t.square(vx));
  t.backward(loss);
  MatD g = t.grad(vx);
  CHECK((g - 2.0 * x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("registering one parameter twice accumulates both uses") {
  MatD w = MatD::Constant(2, 2, 1.5);
  MatD sink;
  TapeD t;
  VarD v1 = t.param(&w, &sink);
  VarD v2 = t.param(&w, &sink);
  t.backward(t.add(t.sum_all(v1), t.sum_all(v2)));
  REQUIRE(sink.size() == 4);
  CHECK((sink.array() - 2.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("frozen values pass gradients through without sinking any") {
  RandomSource rng(45);
  MatD w = random_mat(3, 3, rng);
  MatD x = random_mat(3, 4, rng);
  double err = gradcheck({&x}, [&](TapeD& t, const std::vector<VarD>& v) {
    return t.mean_all(t.square(t.matmul(t.frozen(&w), v[0])));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("unused branches do not disturb backward") {
  TapeD t;
  MatD x = MatD::Ones(2, 2);
  VarD vx = t.input(x);
  t.mish(t.scale(vx, 3.0));  // dead branch
  VarD loss = t.mean_all(vx);
  t.backward(loss);
  CHECK(t.grad(vx)(0, 0) == doctest::Approx(0.25));
}
