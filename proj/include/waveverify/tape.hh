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

#ifndef WAVEVERIFY_TAPE_HH
#define WAVEVERIFY_TAPE_HH

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "waveverify/dsp.hh"

namespace waveverify {
namespace ad {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// Reverse-mode autodiff over 2D arrays.  Feature maps are [channels x time]
// in column-major storage, so a column is one timestep and pointwise
// (1x1) convolutions are plain GEMMs.
//
// The tape owns all intermediate values; parameters live outside and are
// registered per use with param(), which accumulates into the caller's
// gradient sink during backward().  All computation is strictly sequential,
// which keeps training traces bit-reproducible.
template <typename S>
class Tape {
 public:
  struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- leaves ----

  // Value the graph treats as a constant (no gradient).
  Var constant(Mat<S> v) { return make(std::move(v), false, {}); }

  // Tracked input; its gradient is readable via grad() after backward().
  Var input(Mat<S> v) { return make(std::move(v), true, {}); }

  // External parameter; backward() accumulates d(loss)/d(param) into *sink.
  // Registering the same parameter twice (weight sharing) accumulates both
  // contributions.
  Var param(const Mat<S>* value, Mat<S>* sink) {
    Var v = make_external(value, true);
    const int32_t id = v.id;
    nodes_[id].backward = [id, sink](Tape& t) {
      if (t.has_grad_[id]) {
        if (sink->size() == 0) sink->setZero(t.val_ref(id).rows(), t.val_ref(id).cols());
        *sink += t.grads_[id];
      }
    };
    return v;
  }

  // Parameter treated as a constant: used when a network is part of the
  // graph only to carry gradients through to its inputs (a frozen
  // discriminator).  Skipping the weight gradients saves the extra GEMMs.
  Var frozen(const Mat<S>* value) { return make_external(value, false); }

  const Mat<S>& val(Var v) const { return val_ref(v.id); }

  const Mat<S>& grad(Var v) {
    ensure_grad(v.id);
    return grads_[v.id];
  }

  size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    grads_.clear();
    has_grad_.clear();
  }

  // ---- reverse sweep ----

  void backward(Var out) {
    const Mat<S>& o = val_ref(out.id);
    if (o.rows() != 1 || o.cols() != 1) throw std::logic_error("backward: output must be 1x1");
    ensure_grad(out.id);
    grads_[out.id](0, 0) = S(1);
    for (int32_t id = static_cast<int32_t>(nodes_.size()) - 1; id >= 0; --id) {
      if (nodes_[id].backward && has_grad_[id]) nodes_[id].backward(*this);
    }
  }

  // ---- arithmetic ----

  Var add(Var a, Var b) {
    check_same_shape(a, b);
    Mat<S> v = val_ref(a.id) + val_ref(b.id);
    return binary(std::move(v), a, b, [](Tape& t, int32_t ga, int32_t gb, const Mat<S>& g) {
      if (ga >= 0) t.acc(ga) += g;
      if (gb >= 0) t.acc(gb) += g;
    });
  }

  Var sub(Var a, Var b) {
    check_same_shape(a, b);
    Mat<S> v = val_ref(a.id) - val_ref(b.id);
    return binary(std::move(v), a, b, [](Tape& t, int32_t ga, int32_t gb, const Mat<S>& g) {
      if (ga >= 0) t.acc(ga) += g;
      if (gb >= 0) t.acc(gb) -= g;
    });
  }

  Var mul(Var a, Var b) {
    check_same_shape(a, b);
    Mat<S> v = val_ref(a.id).cwiseProduct(val_ref(b.id));
    const int32_t ia = a.id, ib = b.id;
    return binary(std::move(v), a, b,
                  [ia, ib](Tape& t, int32_t ga, int32_t gb, const Mat<S>& g) {
                    if (ga >= 0) t.acc(ga) += g.cwiseProduct(t.val_ref(ib));
                    if (gb >= 0) t.acc(gb) += g.cwiseProduct(t.val_ref(ia));
                  });
  }

  Var scale(Var a, double c) {
    Mat<S> v = val_ref(a.id) * static_cast<S>(c);
    return unary(std::move(v), a, [c](Tape& t, int32_t ga, const Mat<S>& g) {
      t.acc(ga) += g * static_cast<S>(c);
    });
  }

  Var add_scalar(Var a, double c) {
    Mat<S> v = val_ref(a.id).array() + static_cast<S>(c);
    return unary(std::move(v), a, [](Tape& t, int32_t ga, const Mat<S>& g) { t.acc(ga) += g; });
  }

  Var matmul(Var a, Var b) {
    Mat<S> v = val_ref(a.id) * val_ref(b.id);
    const int32_t ia = a.id, ib = b.id;
    return binary(std::move(v), a, b,
                  [ia, ib](Tape& t, int32_t ga, int32_t gb, const Mat<S>& g) {
                    if (ga >= 0) t.acc(ga).noalias() += g * t.val_ref(ib).transpose();
                    if (gb >= 0) t.acc(gb).noalias() += t.val_ref(ia).transpose() * g;
                  });
  }

  // y[:,t] = x[:,t] + b  with b a column vector.
  Var add_colvec(Var x, Var b) {
    Mat<S> v = val_ref(x.id);
    v.colwise() += Eigen::Vector<S, Eigen::Dynamic>(val_ref(b.id).col(0));
    return binary(std::move(v), x, b, [](Tape& t, int32_t gx, int32_t gb, const Mat<S>& g) {
      if (gx >= 0) t.acc(gx) += g;
      if (gb >= 0) t.acc(gb) += g.rowwise().sum();
    });
  }

  // ---- activations ----

  Var tanh_(Var a) {
    Mat<S> v = val_ref(a.id).array().tanh();
    const int32_t out_id = next_id();
    return unary(std::move(v), a, [out_id](Tape& t, int32_t ga, const Mat<S>& g) {
      const auto& y = t.val_ref(out_id).array();
      t.acc(ga).array() += g.array() * (S(1) - y * y);
    });
  }

  Var sigmoid(Var a) {
    Mat<S> v = val_ref(a.id).unaryExpr([](S x) { return stable_sigmoid(x); });
    const int32_t out_id = next_id();
    return unary(std::move(v), a, [out_id](Tape& t, int32_t ga, const Mat<S>& g) {
      const auto& y = t.val_ref(out_id).array();
      t.acc(ga).array() += g.array() * y * (S(1) - y);
    });
  }

  // mish(x) = x * tanh(softplus(x))
  Var mish(Var a) {
    const Mat<S>& x = val_ref(a.id);
    Mat<S> t_sp = x.unaryExpr([](S v) { return static_cast<S>(std::tanh(softplus(v))); });
    Mat<S> v = x.cwiseProduct(t_sp);
    const int32_t ia = a.id;
    auto tv = std::make_shared<Mat<S>>(std::move(t_sp));
    return unary(std::move(v), a, [ia, tv](Tape& t, int32_t ga, const Mat<S>& g) {
      const auto& x = t.val_ref(ia).array();
      const auto& th = tv->array();
      auto sig = x.unaryExpr([](S v) { return stable_sigmoid(v); });
      t.acc(ga).array() += g.array() * (th + x * (S(1) - th * th) * sig);
    });
  }

  Var leaky_relu(Var a, double slope) {
    const S sl = static_cast<S>(slope);
    Mat<S> v = val_ref(a.id).unaryExpr([sl](S x) { return x >= S(0) ? x : sl * x; });
    const int32_t ia = a.id;
    return unary(std::move(v), a, [ia, sl](Tape& t, int32_t ga, const Mat<S>& g) {
      const auto& x = t.val_ref(ia).array();
      t.acc(ga).array() += g.array() * (x >= S(0)).template cast<S>() +
                           g.array() * (x < S(0)).template cast<S>() * sl;
    });
  }

  Var abs_(Var a) {
    Mat<S> v = val_ref(a.id).array().abs();
    const int32_t ia = a.id;
    return unary(std::move(v), a, [ia](Tape& t, int32_t ga, const Mat<S>& g) {
      const auto& x = t.val_ref(ia).array();
      t.acc(ga).array() += g.array() * x.sign();
    });
  }

  Var square(Var a) {
    Mat<S> v = val_ref(a.id).array().square();
    const int32_t ia = a.id;
    return unary(std::move(v), a, [ia](Tape& t, int32_t ga, const Mat<S>& g) {
      t.acc(ga).array() += S(2) * g.array() * t.val_ref(ia).array();
    });
  }

  Var log_(Var a) {
    Mat<S> v = val_ref(a.id).array().log();
    const int32_t ia = a.id;
    return unary(std::move(v), a, [ia](Tape& t, int32_t ga, const Mat<S>& g) {
      t.acc(ga).array() += g.array() / t.val_ref(ia).array();
    });
  }

  Var clamp_(Var a, double lo, double hi) {
    const S l = static_cast<S>(lo), h = static_cast<S>(hi);
    Mat<S> v = val_ref(a.id).unaryExpr([l, h](S x) { return x < l ? l : (x > h ? h : x); });
    const int32_t ia = a.id;
    return unary(std::move(v), a, [ia, l, h](Tape& t, int32_t ga, const Mat<S>& g) {
      const auto& x = t.val_ref(ia).array();
      t.acc(ga).array() += g.array() * ((x >= l) && (x <= h)).template cast<S>();
    });
  }

  // ---- shape ----

  Var slice_cols(Var a, Eigen::Index j0, Eigen::Index n) {
    Mat<S> v = val_ref(a.id).middleCols(j0, n);
    return unary(std::move(v), a, [j0, n](Tape& t, int32_t ga, const Mat<S>& g) {
      t.acc(ga).middleCols(j0, n) += g;
    });
  }

  Var slice_rows(Var a, Eigen::Index i0, Eigen::Index n) {
    Mat<S> v = val_ref(a.id).middleRows(i0, n);
    return unary(std::move(v), a, [i0, n](Tape& t, int32_t ga, const Mat<S>& g) {
      t.acc(ga).middleRows(i0, n) += g;
    });
  }

  Var concat_rows(Var a, Var b) {
    const Mat<S>& A = val_ref(a.id);
    const Mat<S>& B = val_ref(b.id);
    if (A.cols() != B.cols()) throw std::logic_error("concat_rows: column mismatch");
    Mat<S> v(A.rows() + B.rows(), A.cols());
    v.topRows(A.rows()) = A;
    v.bottomRows(B.rows()) = B;
    const Eigen::Index ra = A.rows(), rb = B.rows();
    return binary(std::move(v), a, b, [ra, rb](Tape& t, int32_t ga, int32_t gb, const Mat<S>& g) {
      if (ga >= 0) t.acc(ga) += g.topRows(ra);
      if (gb >= 0) t.acc(gb) += g.bottomRows(rb);
    });
  }

  Var pad_cols(Var a, Eigen::Index left, Eigen::Index right) {
    const Mat<S>& A = val_ref(a.id);
    Mat<S> v = Mat<S>::Zero(A.rows(), A.cols() + left + right);
    v.middleCols(left, A.cols()) = A;
    const Eigen::Index n = A.cols();
    return unary(std::move(v), a, [left, n](Tape& t, int32_t ga, const Mat<S>& g) {
      t.acc(ga) += g.middleCols(left, n);
    });
  }

  Var upsample_nearest(Var a, int factor) {
    const Mat<S>& A = val_ref(a.id);
    Mat<S> v(A.rows(), A.cols() * factor);
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      for (int k = 0; k < factor; ++k) v.col(j * factor + k) = A.col(j);
    return unary(std::move(v), a, [factor](Tape& t, int32_t ga, const Mat<S>& g) {
      Mat<S>& d = t.acc(ga);
      for (Eigen::Index j = 0; j < d.cols(); ++j)
        for (int k = 0; k < factor; ++k) d.col(j) += g.col(j * factor + k);
    });
  }

  Var avgpool2(Var a) {
    const Mat<S>& A = val_ref(a.id);
    const Eigen::Index n = A.cols() / 2;
    if (n < 1) throw std::logic_error("avgpool2: input too short");
    Mat<S> v(A.rows(), n);
    for (Eigen::Index j = 0; j < n; ++j) v.col(j) = (A.col(2 * j) + A.col(2 * j + 1)) * S(0.5);
    return unary(std::move(v), a, [n](Tape& t, int32_t ga, const Mat<S>& g) {
      Mat<S>& d = t.acc(ga);
      for (Eigen::Index j = 0; j < n; ++j) {
        d.col(2 * j) += g.col(j) * S(0.5);
        d.col(2 * j + 1) += g.col(j) * S(0.5);
      }
    });
  }

  // ---- reductions ----

  Var sum_all(Var a) {
    Mat<S> v(1, 1);
    v(0, 0) = val_ref(a.id).sum();
    return unary(std::move(v), a, [](Tape& t, int32_t ga, const Mat<S>& g) {
      t.acc(ga).array() += g(0, 0);
    });
  }

  Var mean_all(Var a) {
    const double n = static_cast<double>(val_ref(a.id).size());
    Mat<S> v(1, 1);
    v(0, 0) = static_cast<S>(val_ref(a.id).sum() / static_cast<S>(n));
    return unary(std::move(v), a, [n](Tape& t, int32_t ga, const Mat<S>& g) {
      t.acc(ga).array() += g(0, 0) / static_cast<S>(n);
    });
  }

  // Column vector of per-row means (time pooling).
  Var mean_rows(Var a) {
    const Mat<S>& A = val_ref(a.id);
    const double n = static_cast<double>(A.cols());
    Mat<S> v = A.rowwise().sum() / static_cast<S>(n);
    return unary(std::move(v), a, [n](Tape& t, int32_t ga, const Mat<S>& g) {
      t.acc(ga).colwise() += Eigen::Vector<S, Eigen::Dynamic>(g.col(0) / static_cast<S>(n));
    });
  }

  // ---- conditioning / mixing ----

  // y = gamma (x) + beta, gamma/beta column vectors broadcast over time.
  Var film(Var x, Var gamma, Var beta) {
    const Mat<S>& X = val_ref(x.id);
    const Mat<S>& G = val_ref(gamma.id);
    const Mat<S>& B = val_ref(beta.id);
    if (G.rows() != X.rows() || B.rows() != X.rows() || G.cols() != 1 || B.cols() != 1)
      throw std::logic_error("film: parameter shape mismatch");
    Mat<S> v = (X.array().colwise() * G.col(0).array()).colwise() + B.col(0).array();
    const int32_t ix = x.id, ig = gamma.id;
    return ternary(std::move(v), x, gamma, beta,
                   [ix, ig](Tape& t, int32_t gx, int32_t gg, int32_t gb, const Mat<S>& g) {
                     if (gx >= 0)
                       t.acc(gx).array() += g.array().colwise() * t.val_ref(ig).col(0).array();
                     if (gg >= 0)
                       t.acc(gg).col(0) += g.cwiseProduct(t.val_ref(ix)).rowwise().sum();
                     if (gb >= 0) t.acc(gb).col(0) += g.rowwise().sum();
                   });
  }

  // y[:,t] = s(0,t) * x[:,t], s a [1 x T] row of per-timestep scales.
  Var colwise_scale(Var x, Var s) {
    const Mat<S>& X = val_ref(x.id);
    const Mat<S>& Sc = val_ref(s.id);
    if (Sc.rows() != 1 || Sc.cols() != X.cols()) throw std::logic_error("colwise_scale: shape");
    Mat<S> v = X.array().rowwise() * Sc.row(0).array();
    const int32_t ix = x.id, is = s.id;
    return binary(std::move(v), x, s,
                  [ix, is](Tape& t, int32_t gx, int32_t gs, const Mat<S>& g) {
                    if (gx >= 0)
                      t.acc(gx).array() += g.array().rowwise() * t.val_ref(is).row(0).array();
                    if (gs >= 0)
                      t.acc(gs).row(0) += g.cwiseProduct(t.val_ref(ix)).colwise().sum();
                  });
  }

  // out = sum_i sigmoid(gates[i]) * experts[i]; gates is [E x 1] of logits.
  Var moe_combine(const std::vector<Var>& experts, Var gates) {
    const Mat<S>& G = val_ref(gates.id);
    if (static_cast<size_t>(G.rows()) != experts.size() || G.cols() != 1)
      throw std::logic_error("moe_combine: gate count mismatch");
    const Eigen::Index E = G.rows();
    Mat<S> sig = G.unaryExpr([](S x) { return stable_sigmoid(x); });
    Mat<S> v = Mat<S>::Zero(val_ref(experts[0].id).rows(), val_ref(experts[0].id).cols());
    for (Eigen::Index i = 0; i < E; ++i) {
      check_same_shape(experts[0], experts[i]);
      v += sig(i, 0) * val_ref(experts[i].id);
    }
    std::vector<int32_t> ids(experts.size());
    bool req = requires_grad(gates.id);
    for (size_t i = 0; i < experts.size(); ++i) {
      ids[i] = experts[i].id;
      req = req || requires_grad(ids[i]);
    }
    const int32_t gid = gates.id;
    auto sigp = std::make_shared<Mat<S>>(std::move(sig));
    const int32_t out = next_id();
    return make(std::move(v), req, [ids, gid, sigp, out](Tape& t) {
      const Mat<S>& g = t.grads_[out];
      for (size_t i = 0; i < ids.size(); ++i) {
        const S si = (*sigp)(static_cast<Eigen::Index>(i), 0);
        if (t.requires_grad(ids[i])) t.acc(ids[i]) += si * g;
        if (t.requires_grad(gid)) {
          const S dsig = si * (S(1) - si);
          t.acc(gid)(static_cast<Eigen::Index>(i), 0) +=
              dsig * g.cwiseProduct(t.val_ref(ids[i])).sum();
        }
      }
    });
  }

  // y[:,i] = take[i] ? x[:, idx[i]] : fill[:, i].  idx/take describe a
  // sample rearrangement; fill supplies replacement content (constant).
  Var gather_mix(Var x, const std::vector<int32_t>& idx, const std::vector<uint8_t>& take,
                 const Mat<S>& fill) {
    const Mat<S>& X = val_ref(x.id);
    const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
    if (fill.cols() != n || fill.rows() != X.rows())
      throw std::logic_error("gather_mix: fill shape mismatch");
    Mat<S> v(X.rows(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (take[i])
        v.col(i) = X.col(idx[i]);
      else
        v.col(i) = fill.col(i);
    }
    auto idxp = std::make_shared<std::vector<int32_t>>(idx);
    auto takep = std::make_shared<std::vector<uint8_t>>(take);
    return unary(std::move(v), x, [idxp, takep](Tape& t, int32_t ga, const Mat<S>& g) {
      Mat<S>& d = t.acc(ga);
      for (Eigen::Index i = 0; i < g.cols(); ++i)
        if ((*takep)[i]) d.col((*idxp)[i]) += g.col(i);
    });
  }

  // ---- signal ops ----

  // Causal IIR cascade along the time axis of a [1 x T] signal.
  Var iir(Var x, std::vector<Biquad> sos) {
    const Mat<S>& X = val_ref(x.id);
    if (X.rows() != 1) throw std::logic_error("iir: expects [1 x T]");
    std::vector<S> sig(X.data(), X.data() + X.cols());
    std::vector<S> out = sos_filter(sos, sig);
    Mat<S> v(1, X.cols());
    for (Eigen::Index i = 0; i < X.cols(); ++i) v(0, i) = out[i];
    auto sosp = std::make_shared<std::vector<Biquad>>(std::move(sos));
    return unary(std::move(v), x, [sosp](Tape& t, int32_t ga, const Mat<S>& g) {
      std::vector<S> gv(g.data(), g.data() + g.cols());
      std::vector<S> back = sos_filter_adjoint(*sosp, gv);
      Mat<S>& d = t.acc(ga);
      for (Eigen::Index i = 0; i < d.cols(); ++i) d(0, i) += back[i];
    });
  }

  // Windowed-sinc resampling of a [1 x T] signal via a precomputed map.
  Var resample(Var x, std::shared_ptr<const ResampleMap> map) {
    const Mat<S>& X = val_ref(x.id);
    if (X.rows() != 1 || static_cast<size_t>(X.cols()) != map->in_len)
      throw std::logic_error("resample: shape mismatch");
    std::vector<S> sig(X.data(), X.data() + X.cols());
    std::vector<S> out = resample_apply(*map, sig);
    Mat<S> v(1, static_cast<Eigen::Index>(out.size()));
    for (size_t i = 0; i < out.size(); ++i) v(0, static_cast<Eigen::Index>(i)) = out[i];
    return unary(std::move(v), x, [map](Tape& t, int32_t ga, const Mat<S>& g) {
      std::vector<S> gv(g.data(), g.data() + g.cols());
      std::vector<S> back = resample_adjoint(*map, gv);
      Mat<S>& d = t.acc(ga);
      for (Eigen::Index i = 0; i < d.cols(); ++i) d(0, i) += back[i];
    });
  }

  // STFT magnitudes [bins x frames] of a [1 x T] signal (Hann window, no
  // padding).  The tiny floor inside the sqrt keeps the op differentiable
  // at silent bins.
  Var stft_mag(Var x, int win, int hop) {
    const Mat<S>& X = val_ref(x.id);
    if (X.rows() != 1) throw std::logic_error("stft_mag: expects [1 x T]");
    const size_t frames = stft_frames(static_cast<size_t>(X.cols()), win, hop);
    if (frames == 0) throw std::logic_error("stft_mag: signal shorter than window");
    const StftBasis& basis = stft_basis(win, hop);

    Mat<S> framed(win, static_cast<Eigen::Index>(frames));
    for (size_t f = 0; f < frames; ++f)
      framed.col(static_cast<Eigen::Index>(f)) =
          X.row(0).segment(static_cast<Eigen::Index>(f) * hop, win).transpose();

    const Mat<S> cb = basis.cos_basis.template cast<S>();
    const Mat<S> sb = basis.sin_basis.template cast<S>();
    Mat<S> re = cb * framed;
    Mat<S> im = sb * framed;
    Mat<S> mag = (re.array().square() + im.array().square() + S(1e-14)).sqrt();

    struct Saved {
      Mat<S> re, im, mag;
    };
    auto saved = std::make_shared<Saved>(Saved{std::move(re), std::move(im), mag});
    return unary(std::move(mag), x, [saved, win, hop, frames](Tape& t, int32_t ga, const Mat<S>& g) {
      const StftBasis& basis = stft_basis(win, hop);
      Mat<S> dre = g.cwiseProduct(saved->re).cwiseQuotient(saved->mag);
      Mat<S> dim = g.cwiseProduct(saved->im).cwiseQuotient(saved->mag);
      Mat<S> dframed = basis.cos_basis.template cast<S>().transpose() * dre +
                       basis.sin_basis.template cast<S>().transpose() * dim;
      Mat<S>& d = t.acc(ga);
      for (size_t f = 0; f < frames; ++f)
        d.row(0).segment(static_cast<Eigen::Index>(f) * hop, win) +=
            dframed.col(static_cast<Eigen::Index>(f)).transpose();
    });
  }

  // Masked binary cross entropy on probabilities, normalized by `norm`
  // (total position count, not the mask sum).  Probabilities are clamped
  // to [eps, 1-eps] before the logs.
  Var bce_masked(Var p, const Mat<S>& target, const Mat<S>& mask, double norm,
                 double eps = 1e-7) {
    const Mat<S>& P = val_ref(p.id);
    if (P.rows() != target.rows() || P.cols() != target.cols() || P.rows() != mask.rows() ||
        P.cols() != mask.cols())
      throw std::logic_error("bce_masked: shape mismatch");
    const S lo = static_cast<S>(eps), hi = S(1) - static_cast<S>(eps);
    Mat<S> pc = P.unaryExpr([lo, hi](S v) { return v < lo ? lo : (v > hi ? hi : v); });
    double acc = 0.0;
    for (Eigen::Index j = 0; j < P.cols(); ++j)
      for (Eigen::Index i = 0; i < P.rows(); ++i) {
        const double q = static_cast<double>(pc(i, j));
        const double y = static_cast<double>(target(i, j));
        acc -= static_cast<double>(mask(i, j)) * (y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
      }
    Mat<S> v(1, 1);
    v(0, 0) = static_cast<S>(acc / norm);
    auto tgt = std::make_shared<Mat<S>>(target);
    auto msk = std::make_shared<Mat<S>>(mask);
    auto pcp = std::make_shared<Mat<S>>(std::move(pc));
    return unary(std::move(v), p, [tgt, msk, pcp, norm](Tape& t, int32_t ga, const Mat<S>& g) {
      const S scale = g(0, 0) / static_cast<S>(norm);
      const auto& q = pcp->array();
      t.acc(ga).array() +=
          scale * msk->array() * (q - tgt->array()) / (q * (S(1) - q));
    });
  }

  // ---- convolutions ----
  // Weight layout for conv1d/conv_transpose1d: [C_out x C_in*K], tap k in
  // columns [k*C_in, (k+1)*C_in).  Depthwise weight: [C x K].

  Var conv1d(Var x, Var w, Var b, int K, int stride, int pad) {
    const Mat<S>& X = val_ref(x.id);
    const Mat<S>& W = val_ref(w.id);
    const Eigen::Index cin = X.rows();
    const Eigen::Index cout = W.rows();
    if (W.cols() != cin * K) throw std::logic_error("conv1d: weight shape mismatch");
    const Eigen::Index tin = X.cols();
    const Eigen::Index tout = conv_out_len_checked(tin, K, stride, pad);
    Mat<S> v = Mat<S>::Zero(cout, tout);
    for (int k = 0; k < K; ++k) {
      auto [j0, cnt, i0] = tap_range(tin, tout, k, stride, pad);
      if (cnt <= 0) continue;
      ConstView xv(X.data() + i0 * cin, cin, cnt, Eigen::OuterStride<>(stride * cin));
      v.middleCols(j0, cnt).noalias() += W.middleCols(k * cin, cin) * xv;
    }
    if (b.valid())
      v.colwise() += Eigen::Vector<S, Eigen::Dynamic>(val_ref(b.id).col(0));
    const int32_t ix = x.id, iw = w.id;
    return ternary(std::move(v), x, w, b,
                   [ix, iw, K, stride, pad, cin, tin](Tape& t, int32_t gx, int32_t gw,
                                                      int32_t gb, const Mat<S>& g) {
                     const Eigen::Index tout = g.cols();
                     for (int k = 0; k < K; ++k) {
                       auto [j0, cnt, i0] = tap_range(tin, tout, k, stride, pad);
                       if (cnt <= 0) continue;
                       if (gx >= 0) {
                         Mat<S>& dx = t.acc(gx);
                         View dxv(dx.data() + i0 * cin, cin, cnt,
                                  Eigen::OuterStride<>(stride * cin));
                         dxv.noalias() +=
                             t.val_ref(iw).middleCols(k * cin, cin).transpose() *
                             g.middleCols(j0, cnt);
                       }
                       if (gw >= 0) {
                         ConstView xv(t.val_ref(ix).data() + i0 * cin, cin, cnt,
                                      Eigen::OuterStride<>(stride * cin));
                         t.acc(gw).middleCols(k * cin, cin).noalias() +=
                             g.middleCols(j0, cnt) * xv.transpose();
                       }
                     }
                     if (gb >= 0) t.acc(gb).col(0) += g.rowwise().sum();
                   });
  }

  Var conv1d_dw(Var x, Var w, Var b, int K, int stride, int pad) {
    const Mat<S>& X = val_ref(x.id);
    const Mat<S>& W = val_ref(w.id);
    const Eigen::Index c = X.rows();
    if (W.rows() != c || W.cols() != K) throw std::logic_error("conv1d_dw: weight shape mismatch");
    const Eigen::Index tin = X.cols();
    const Eigen::Index tout = conv_out_len_checked(tin, K, stride, pad);
    Mat<S> v = Mat<S>::Zero(c, tout);
    for (int k = 0; k < K; ++k) {
      auto [j0, cnt, i0] = tap_range(tin, tout, k, stride, pad);
      if (cnt <= 0) continue;
      ConstView xv(X.data() + i0 * c, c, cnt, Eigen::OuterStride<>(stride * c));
      v.middleCols(j0, cnt).array() += xv.array().colwise() * W.col(k).array();
    }
    if (b.valid())
      v.colwise() += Eigen::Vector<S, Eigen::Dynamic>(val_ref(b.id).col(0));
    const int32_t ix = x.id, iw = w.id;
    return ternary(std::move(v), x, w, b,
                   [ix, iw, K, stride, pad, c, tin](Tape& t, int32_t gx, int32_t gw, int32_t gb,
                                                    const Mat<S>& g) {
                     const Eigen::Index tout = g.cols();
                     for (int k = 0; k < K; ++k) {
                       auto [j0, cnt, i0] = tap_range(tin, tout, k, stride, pad);
                       if (cnt <= 0) continue;
                       if (gx >= 0) {
                         Mat<S>& dx = t.acc(gx);
                         View dxv(dx.data() + i0 * c, c, cnt, Eigen::OuterStride<>(stride * c));
                         dxv.array() +=
                             g.middleCols(j0, cnt).array().colwise() * t.val_ref(iw).col(k).array();
                       }
                       if (gw >= 0) {
                         ConstView xv(t.val_ref(ix).data() + i0 * c, c, cnt,
                                      Eigen::OuterStride<>(stride * c));
                         t.acc(gw).col(k) +=
                             g.middleCols(j0, cnt).cwiseProduct(xv).rowwise().sum();
                       }
                     }
                     if (gb >= 0) t.acc(gb).col(0) += g.rowwise().sum();
                   });
  }

  Var conv_transpose1d(Var x, Var w, Var b, int K, int stride, int pad) {
    const Mat<S>& X = val_ref(x.id);
    const Mat<S>& W = val_ref(w.id);
    const Eigen::Index cin = X.rows();
    const Eigen::Index cout = W.rows();
    if (W.cols() != cin * K) throw std::logic_error("conv_transpose1d: weight shape mismatch");
    const Eigen::Index tin = X.cols();
    const Eigen::Index tout = (tin - 1) * stride + K - 2 * pad;
    if (tout < 1) throw std::logic_error("conv_transpose1d: output would be empty");
    Mat<S> v = Mat<S>::Zero(cout, tout);
    for (int k = 0; k < K; ++k) {
      auto [j0, cnt, o0] = tap_range(tout, tin, k, stride, pad);
      // here roles flip: input column j writes output column j*stride + k - pad
      if (cnt <= 0) continue;
      View yv(v.data() + o0 * cout, cout, cnt, Eigen::OuterStride<>(stride * cout));
      yv.noalias() += W.middleCols(k * cin, cin) * X.middleCols(j0, cnt);
    }
    if (b.valid())
      v.colwise() += Eigen::Vector<S, Eigen::Dynamic>(val_ref(b.id).col(0));
    const int32_t ix = x.id, iw = w.id;
    return ternary(std::move(v), x, w, b,
                   [ix, iw, K, stride, pad, cin, cout, tin](Tape& t, int32_t gx, int32_t gw,
                                                            int32_t gb, const Mat<S>& g) {
                     const Eigen::Index tout = g.cols();
                     for (int k = 0; k < K; ++k) {
                       auto [j0, cnt, o0] = tap_range(tout, tin, k, stride, pad);
                       if (cnt <= 0) continue;
                       ConstView gv(g.data() + o0 * cout, cout, cnt,
                                    Eigen::OuterStride<>(stride * cout));
                       if (gx >= 0)
                         t.acc(gx).middleCols(j0, cnt).noalias() +=
                             t.val_ref(iw).middleCols(k * cin, cin).transpose() * gv;
                       if (gw >= 0)
                         t.acc(gw).middleCols(k * cin, cin).noalias() +=
                             gv * t.val_ref(ix).middleCols(j0, cnt).transpose();
                     }
                     if (gb >= 0) t.acc(gb).col(0) += g.rowwise().sum();
                   });
  }

  Var group_norm(Var x, Var gamma, Var beta, int groups, double eps = 1e-5) {
    const Mat<S>& X = val_ref(x.id);
    const Eigen::Index c = X.rows();
    if (c % groups != 0) throw std::logic_error("group_norm: channels % groups != 0");
    const Eigen::Index cg = c / groups;
    Mat<S> xhat(c, X.cols());
    std::vector<S> istds(groups);
    for (int g = 0; g < groups; ++g) {
      auto blk = X.middleRows(g * cg, cg);
      const double n = static_cast<double>(blk.size());
      const double mu = static_cast<double>(blk.sum()) / n;
      const double var = static_cast<double>((blk.array() - static_cast<S>(mu)).square().sum()) / n;
      const S istd = static_cast<S>(1.0 / std::sqrt(var + eps));
      istds[g] = istd;
      xhat.middleRows(g * cg, cg) = (blk.array() - static_cast<S>(mu)) * istd;
    }
    Mat<S> v = (xhat.array().colwise() * val_ref(gamma.id).col(0).array()).colwise() +
               val_ref(beta.id).col(0).array();
    auto xh = std::make_shared<Mat<S>>(std::move(xhat));
    auto istd_p = std::make_shared<std::vector<S>>(std::move(istds));
    const int32_t igm = gamma.id;
    return ternary(std::move(v), x, gamma, beta,
                   [xh, istd_p, igm, groups, cg](Tape& t, int32_t gx, int32_t gg, int32_t gb,
                                                 const Mat<S>& g) {
                     if (gg >= 0) t.acc(gg).col(0) += g.cwiseProduct(*xh).rowwise().sum();
                     if (gb >= 0) t.acc(gb).col(0) += g.rowwise().sum();
                     if (gx >= 0) {
                       const auto& gamma_v = t.val_ref(igm).col(0);
                       Mat<S>& dx = t.acc(gx);
                       for (int grp = 0; grp < groups; ++grp) {
                         auto gblk = g.middleRows(grp * cg, cg);
                         auto hblk = xh->middleRows(grp * cg, cg);
                         Mat<S> dxhat =
                             gblk.array().colwise() * gamma_v.segment(grp * cg, cg).array();
                         const double n = static_cast<double>(dxhat.size());
                         const S m1 = static_cast<S>(static_cast<double>(dxhat.sum()) / n);
                         const S m2 = static_cast<S>(
                             static_cast<double>(dxhat.cwiseProduct(hblk).sum()) / n);
                         dx.middleRows(grp * cg, cg).array() +=
                             (*istd_p)[grp] *
                             (dxhat.array() - m1 - hblk.array() * m2);
                       }
                     }
                   });
  }

  static Eigen::Index conv_out_len_checked(Eigen::Index tin, int K, int stride, int pad) {
    if (tin + 2 * pad < K) throw std::invalid_argument("conv: input too short for kernel");
    return (tin + 2 * pad - K) / stride + 1;
  }

 private:
  using View = Eigen::Map<Mat<S>, 0, Eigen::OuterStride<>>;
  using ConstView = Eigen::Map<const Mat<S>, 0, Eigen::OuterStride<>>;

  struct Node {
    Mat<S> storage;
    const Mat<S>* view = nullptr;  // external value when set
    bool tracked = false;
    std::function<void(Tape&)> backward;
  };

  static S stable_sigmoid(S x) {
    if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
    const S e = std::exp(x);
    return e / (S(1) + e);
  }

  static double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

  // For output column j of a strided conv, tap k reads input column
  // i = j*stride + k - pad.  Returns (first j, count, first i) with i valid.
  static std::tuple<Eigen::Index, Eigen::Index, Eigen::Index> tap_range(Eigen::Index tin,
                                                                        Eigen::Index tout, int k,
                                                                        int stride, int pad) {
    const Eigen::Index num = pad - k;
    Eigen::Index j_lo = num <= 0 ? 0 : (num + stride - 1) / stride;
    Eigen::Index j_hi = (tin - 1 + pad - k);
    if (j_hi < 0) return {0, 0, 0};
    j_hi /= stride;
    if (j_hi > tout - 1) j_hi = tout - 1;
    if (j_lo > j_hi) return {0, 0, 0};
    return {j_lo, j_hi - j_lo + 1, j_lo * stride + k - pad};
  }

  int32_t next_id() const { return static_cast<int32_t>(nodes_.size()); }

  const Mat<S>& val_ref(int32_t id) const {
    const Node& n = nodes_[id];
    return n.view ? *n.view : n.storage;
  }

  bool requires_grad(int32_t id) const { return nodes_[id].tracked; }

  void ensure_grad(int32_t id) {
    if (!has_grad_[id]) {
      grads_[id].setZero(val_ref(id).rows(), val_ref(id).cols());
      has_grad_[id] = true;
    }
  }

  Mat<S>& acc(int32_t id) {
    ensure_grad(id);
    return grads_[id];
  }

  Var make(Mat<S> v, bool tracked, std::function<void(Tape&)> back) {
    Node n;
    n.storage = std::move(v);
    n.tracked = tracked;
    n.backward = std::move(back);
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    has_grad_.push_back(0);
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
  }

  Var make_external(const Mat<S>* value, bool tracked) {
    Node n;
    n.view = value;
    n.tracked = tracked;
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    has_grad_.push_back(0);
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
  }

  template <typename F>
  Var unary(Mat<S> v, Var a, F&& f) {
    const bool req = requires_grad(a.id);
    const int32_t ga = req ? a.id : -1;
    const int32_t out = next_id();
    std::function<void(Tape&)> back;
    if (req)
      back = [ga, out, f = std::forward<F>(f)](Tape& t) { f(t, ga, t.grads_[out]); };
    return make(std::move(v), req, std::move(back));
  }

  template <typename F>
  Var binary(Mat<S> v, Var a, Var b, F&& f) {
    const int32_t ga = requires_grad(a.id) ? a.id : -1;
    const int32_t gb = requires_grad(b.id) ? b.id : -1;
    const bool req = ga >= 0 || gb >= 0;
    const int32_t out = next_id();
    std::function<void(Tape&)> back;
    if (req)
      back = [ga, gb, out, f = std::forward<F>(f)](Tape& t) { f(t, ga, gb, t.grads_[out]); };
    return make(std::move(v), req, std::move(back));
  }

  // b may be an invalid Var (bias-free conv).
  template <typename F>
  Var ternary(Mat<S> v, Var a, Var b, Var c, F&& f) {
    const int32_t ga = requires_grad(a.id) ? a.id : -1;
    const int32_t gb = b.valid() && requires_grad(b.id) ? b.id : -1;
    const int32_t gc = c.valid() && requires_grad(c.id) ? c.id : -1;
    const bool req = ga >= 0 || gb >= 0 || gc >= 0;
    const int32_t out = next_id();
    std::function<void(Tape&)> back;
    if (req)
      back = [ga, gb, gc, out, f = std::forward<F>(f)](Tape& t) {
        f(t, ga, gb, gc, t.grads_[out]);
      };
    return make(std::move(v), req, std::move(back));
  }

  void check_same_shape(Var a, Var b) const {
    const Mat<S>& A = val_ref(a.id);
    const Mat<S>& B = val_ref(b.id);
    if (A.rows() != B.rows() || A.cols() != B.cols())
      throw std::logic_error("shape mismatch: " + std::to_string(A.rows()) + "x" +
                             std::to_string(A.cols()) + " vs " + std::to_string(B.rows()) + "x" +
                             std::to_string(B.cols()));
  }

  std::vector<Node> nodes_;
  std::vector<Mat<S>> grads_;
  std::vector<uint8_t> has_grad_;
};

}  // namespace ad
}  // namespace waveverify

#endif  // WAVEVERIFY_TAPE_HH
