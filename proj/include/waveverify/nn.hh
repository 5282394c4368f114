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

#ifndef WAVEVERIFY_NN_HH
#define WAVEVERIFY_NN_HH

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "waveverify/rng.hh"
#include "waveverify/tape.hh"

namespace waveverify::nn {

template <typename S>
using Mat = ad::Mat<S>;
template <typename S>
using VarT = typename ad::Tape<S>::Var;

// Named view over every trainable array of a model family.  Gradient
// buffers live next to the values; the tape accumulates into them during
// backward(), so they must be zeroed (shaped) before each step.
template <typename S>
struct ParamRegistry {
  struct Entry {
    std::string name;
    Mat<S>* value;
    Mat<S>* grad;
  };
  std::vector<Entry> entries;

  void add(const std::string& name, Mat<S>* value, Mat<S>* grad) {
    for (const auto& e : entries)
      if (e.name == name) throw std::logic_error("duplicate parameter name: " + name);
    entries.push_back({name, value, grad});
  }

  size_t count() const {
    size_t n = 0;
    for (const auto& e : entries) n += static_cast<size_t>(e.value->size());
    return n;
  }

  void zero_grads() {
    for (auto& e : entries) e.grad->setZero(e.value->rows(), e.value->cols());
  }
};

template <typename S>
void fill_uniform(Mat<S>& m, double bound, RandomSource& rng) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<S>(rng.uniform(-bound, bound));
}

inline double init_bound(int fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); }

template <typename S>
struct Conv1dLayer {
  int in_ch = 0, out_ch = 0, kernel = 1, stride = 1, pad = 0;
  Mat<S> w;  // [out_ch x in_ch*kernel], tap-major
  Mat<S> b;  // [out_ch x 1]
  mutable Mat<S> gw, gb;

  void init(int cin, int cout, int K, int stride_, int pad_, RandomSource& rng) {
    in_ch = cin;
    out_ch = cout;
    kernel = K;
    stride = stride_;
    pad = pad_;
    w.resize(cout, static_cast<Eigen::Index>(cin) * K);
    b.resize(cout, 1);
    const double bd = init_bound(cin * K);
    fill_uniform(w, bd, rng);
    fill_uniform(b, bd, rng);
  }

  void zero_weights() {
    w.setZero();
    b.setZero();
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    reg.add(prefix + ".w", &w, &gw);
    reg.add(prefix + ".b", &b, &gb);
  }

  VarT<S> apply(ad::Tape<S>& t, VarT<S> x, bool trainable = true) const {
    VarT<S> vw = trainable ? t.param(&w, &gw) : t.frozen(&w);
    VarT<S> vb = trainable ? t.param(&b, &gb) : t.frozen(&b);
    return t.conv1d(x, vw, vb, kernel, stride, pad);
  }
};

template <typename S>
struct ConvT1dLayer {
  int in_ch = 0, out_ch = 0, kernel = 1, stride = 1, pad = 0;
  Mat<S> w;  // [out_ch x in_ch*kernel]
  Mat<S> b;
  mutable Mat<S> gw, gb;

  void init(int cin, int cout, int K, int stride_, int pad_, RandomSource& rng) {
    in_ch = cin;
    out_ch = cout;
    kernel = K;
    stride = stride_;
    pad = pad_;
    w.resize(cout, static_cast<Eigen::Index>(cin) * K);
    b.resize(cout, 1);
    const double bd = init_bound(cin * K);
    fill_uniform(w, bd, rng);
    fill_uniform(b, bd, rng);
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    reg.add(prefix + ".w", &w, &gw);
    reg.add(prefix + ".b", &b, &gb);
  }

  VarT<S> apply(ad::Tape<S>& t, VarT<S> x, bool trainable = true) const {
    VarT<S> vw = trainable ? t.param(&w, &gw) : t.frozen(&w);
    VarT<S> vb = trainable ? t.param(&b, &gb) : t.frozen(&b);
    return t.conv_transpose1d(x, vw, vb, kernel, stride, pad);
  }
};

// Depthwise spatial pass followed by a pointwise 1x1 mix; the stride lives
// in the depthwise stage.
template <typename S>
struct DwSepConv1d {
  int in_ch = 0, out_ch = 0, kernel = 1, stride = 1, pad = 0;
  Mat<S> dw;  // [in_ch x kernel]
  Mat<S> pw;  // [out_ch x in_ch]
  Mat<S> b;   // [out_ch x 1]
  mutable Mat<S> gdw, gpw, gb;

  void init(int cin, int cout, int K, int stride_, int pad_, RandomSource& rng) {
    in_ch = cin;
    out_ch = cout;
    kernel = K;
    stride = stride_;
    pad = pad_;
    dw.resize(cin, K);
    pw.resize(cout, cin);
    b.resize(cout, 1);
    fill_uniform(dw, init_bound(K), rng);
    const double bd = init_bound(cin);
    fill_uniform(pw, bd, rng);
    fill_uniform(b, bd, rng);
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    reg.add(prefix + ".dw", &dw, &gdw);
    reg.add(prefix + ".pw", &pw, &gpw);
    reg.add(prefix + ".b", &b, &gb);
  }

  VarT<S> apply(ad::Tape<S>& t, VarT<S> x, bool trainable = true) const {
    VarT<S> vdw = trainable ? t.param(&dw, &gdw) : t.frozen(&dw);
    VarT<S> vpw = trainable ? t.param(&pw, &gpw) : t.frozen(&pw);
    VarT<S> vb = trainable ? t.param(&b, &gb) : t.frozen(&b);
    VarT<S> spatial = t.conv1d_dw(x, vdw, typename ad::Tape<S>::Var{}, kernel, stride, pad);
    return t.conv1d(spatial, vpw, vb, 1, 1, 0);
  }
};

template <typename S>
struct LinearLayer {
  int in_dim = 0, out_dim = 0;
  Mat<S> w;  // [out x in]
  Mat<S> b;  // [out x 1]
  mutable Mat<S> gw, gb;

  void init(int in, int out, RandomSource& rng) {
    in_dim = in;
    out_dim = out;
    w.resize(out, in);
    b.resize(out, 1);
    const double bd = init_bound(in);
    fill_uniform(w, bd, rng);
    fill_uniform(b, bd, rng);
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    reg.add(prefix + ".w", &w, &gw);
    reg.add(prefix + ".b", &b, &gb);
  }

  VarT<S> apply(ad::Tape<S>& t, VarT<S> x, bool trainable = true) const {
    VarT<S> vw = trainable ? t.param(&w, &gw) : t.frozen(&w);
    VarT<S> vb = trainable ? t.param(&b, &gb) : t.frozen(&b);
    return t.add_colvec(t.matmul(vw, x), vb);
  }
};

template <typename S>
struct GroupNormLayer {
  int channels = 0, groups = 8;
  Mat<S> gamma, beta;  // [channels x 1]
  mutable Mat<S> ggamma, gbeta;

  void init(int ch, int groups_) {
    channels = ch;
    groups = groups_;
    gamma = Mat<S>::Ones(ch, 1);
    beta = Mat<S>::Zero(ch, 1);
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    reg.add(prefix + ".gamma", &gamma, &ggamma);
    reg.add(prefix + ".beta", &beta, &gbeta);
  }

  VarT<S> apply(ad::Tape<S>& t, VarT<S> x, bool trainable = true) const {
    VarT<S> vg = trainable ? t.param(&gamma, &ggamma) : t.frozen(&gamma);
    VarT<S> vb = trainable ? t.param(&beta, &gbeta) : t.frozen(&beta);
    return t.group_norm(x, vg, vb, groups);
  }
};

}  // namespace waveverify::nn

#endif  // WAVEVERIFY_NN_HH
