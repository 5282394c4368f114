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

#ifndef WAVEVERIFY_DSP_HH
#define WAVEVERIFY_DSP_HH

#include <complex>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace waveverify {

class RandomSource;

// ---------------------------------------------------------------------------
// IIR filters
// ---------------------------------------------------------------------------

// One second-order section, normalized so a0 == 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

// Butterworth designs via bilinear transform (RBJ sections with Butterworth
// Q values).  Order must be even; order 4 gives two cascaded sections.
std::vector<Biquad> butterworth_lowpass(int order, double cutoff_hz, double sample_rate);
std::vector<Biquad> butterworth_highpass(int order, double cutoff_hz, double sample_rate);

// Causal filtering with zero initial state (direct form II transposed).
template <typename S>
std::vector<S> sos_filter(const std::vector<Biquad>& sos, const std::vector<S>& x) {
  std::vector<S> y(x.begin(), x.end());
  for (const Biquad& q : sos) {
    double z1 = 0.0, z2 = 0.0;
    for (size_t n = 0; n < y.size(); ++n) {
      const double in = static_cast<double>(y[n]);
      const double out = q.b0 * in + z1;
      z1 = q.b1 * in - q.a1 * out + z2;
      z2 = q.b2 * in - q.a2 * out;
      y[n] = static_cast<S>(out);
    }
  }
  return y;
}

// Adjoint of sos_filter as a linear operator (anticausal pass): used for
// gradient propagation through filter effects.
template <typename S>
std::vector<S> sos_filter_adjoint(const std::vector<Biquad>& sos, const std::vector<S>& g) {
  std::vector<S> r(g.rbegin(), g.rend());
  r = sos_filter(sos, r);
  std::reverse(r.begin(), r.end());
  return r;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

// Precomputed windowed-sinc interpolation taps mapping an input signal of
// in_len samples onto out_len outputs, where output n reads input around
// position n * step.  The map is a sparse linear operator; forward applies
// it, adjoint transposes it.
struct ResampleMap {
  size_t in_len = 0;
  size_t out_len = 0;
  std::vector<int32_t> first;    // first input index per output
  std::vector<int32_t> count;    // tap count per output
  std::vector<int32_t> offset;   // offset into weights per output
  std::vector<double> weights;
};

// step = input samples advanced per output sample.  out_len = ceil(in_len/step).
ResampleMap make_resample_map(size_t in_len, double step);

template <typename S>
std::vector<S> resample_apply(const ResampleMap& m, const std::vector<S>& x) {
  std::vector<S> y(m.out_len);
  for (size_t n = 0; n < m.out_len; ++n) {
    double acc = 0.0;
    const int32_t base = m.first[n];
    const double* w = m.weights.data() + m.offset[n];
    for (int32_t k = 0; k < m.count[n]; ++k) acc += w[k] * static_cast<double>(x[base + k]);
    y[n] = static_cast<S>(acc);
  }
  return y;
}

template <typename S>
std::vector<S> resample_adjoint(const ResampleMap& m, const std::vector<S>& g) {
  std::vector<double> acc(m.in_len, 0.0);
  for (size_t n = 0; n < m.out_len; ++n) {
    const int32_t base = m.first[n];
    const double* w = m.weights.data() + m.offset[n];
    for (int32_t k = 0; k < m.count[n]; ++k) acc[base + k] += w[k] * static_cast<double>(g[n]);
  }
  std::vector<S> out(m.in_len);
  for (size_t i = 0; i < m.in_len; ++i) out[i] = static_cast<S>(acc[i]);
  return out;
}

// Convenience: high-quality rate conversion (used by the WAV loader).
std::vector<double> resample_to_rate(const std::vector<double>& x, int from_rate, int to_rate);

// Nearest-neighbor index mapping for presence masks under length changes.
std::vector<double> mask_resample_nearest(const std::vector<double>& mask, size_t out_len);

// ---------------------------------------------------------------------------
// Spectra
// ---------------------------------------------------------------------------

// In-place radix-2 complex FFT; n must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a, bool inverse);

// Unit-RMS pink noise (1/sqrt(f) magnitude shaping of white noise in the
// frequency domain).
std::vector<double> pink_noise(size_t n, RandomSource& rng);

// Windowed DFT bases for STFT-as-GEMM.  Rows are bins (0..win/2), columns
// window taps; the Hann window is folded into the basis.
struct StftBasis {
  int win = 0;
  int hop = 0;
  int bins = 0;
  Eigen::MatrixXd cos_basis;
  Eigen::MatrixXd sin_basis;
};

const StftBasis& stft_basis(int win, int hop);

// Number of full analysis frames (no padding); zero when the signal is
// shorter than one window.
inline size_t stft_frames(size_t n, int win, int hop) {
  return n < static_cast<size_t>(win) ? 0 : (n - win) / hop + 1;
}

// Triangular mel filterbank [n_mel x bins] on the HTK mel scale, spanning
// 0..sample_rate/2.
Eigen::MatrixXd mel_filterbank(int n_mel, int bins, int win, double sample_rate);

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

double rms(const std::vector<double>& x);

}  // namespace waveverify

#endif  // WAVEVERIFY_DSP_HH
