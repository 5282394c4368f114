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

#include "waveverify/dsp.hh"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "waveverify/rng.hh"

namespace waveverify {

namespace {
constexpr double kPi = 3.14159265358979323846264338327950288;

// RBJ cookbook sections; Butterworth Q ladder for even order.
std::vector<Biquad> design(int order, double cutoff_hz, double sample_rate, bool highpass) {
  if (order < 2 || order % 2 != 0) throw std::invalid_argument("filter order must be even and >= 2");
  if (sample_rate <= 0) throw std::invalid_argument("bad sample rate");
  // Clamp just below Nyquist; the bilinear transform blows up at fs/2.
  const double fc = std::clamp(cutoff_hz, 1.0, 0.499 * sample_rate);
  const double w0 = 2.0 * kPi * fc / sample_rate;
  const double cw = std::cos(w0);
  const double sw = std::sin(w0);

  std::vector<Biquad> sos;
  const int sections = order / 2;
  for (int k = 1; k <= sections; ++k) {
    const double q = 1.0 / (2.0 * std::cos(kPi * (2 * k - 1) / (2.0 * order)));
    const double alpha = sw / (2.0 * q);
    const double a0 = 1.0 + alpha;
    Biquad b;
    if (highpass) {
      b.b0 = (1.0 + cw) / 2.0 / a0;
      b.b1 = -(1.0 + cw) / a0;
      b.b2 = b.b0;
    } else {
      b.b0 = (1.0 - cw) / 2.0 / a0;
      b.b1 = (1.0 - cw) / a0;
      b.b2 = b.b0;
    }
    b.a1 = (-2.0 * cw) / a0;
    b.a2 = (1.0 - alpha) / a0;
    sos.push_back(b);
  }
  return sos;
}

}  // namespace

std::vector<Biquad> butterworth_lowpass(int order, double cutoff_hz, double sample_rate) {
  return design(order, cutoff_hz, sample_rate, false);
}

std::vector<Biquad> butterworth_highpass(int order, double cutoff_hz, double sample_rate) {
  return design(order, cutoff_hz, sample_rate, true);
}

ResampleMap make_resample_map(size_t in_len, double step) {
  if (in_len == 0) throw std::invalid_argument("resample: empty input");
  if (!(step > 0.0)) throw std::invalid_argument("resample: step must be positive");

  ResampleMap m;
  m.in_len = in_len;
  m.out_len = static_cast<size_t>(std::ceil(static_cast<double>(in_len) / step));

  // Anti-alias cutoff in input-rate units: unity when interpolating,
  // 1/step when decimating.  Slight backoff leaves a transition band.
  const double cutoff = 0.92 * std::min(1.0, 1.0 / step);
  const double half_width = 10.0 / cutoff;  // zero crossings of the kernel

  m.first.resize(m.out_len);
  m.count.resize(m.out_len);
  m.offset.resize(m.out_len);

  for (size_t n = 0; n < m.out_len; ++n) {
    const double t = static_cast<double>(n) * step;
    const int lo = std::max<int>(0, static_cast<int>(std::ceil(t - half_width)));
    const int hi = std::min<int>(static_cast<int>(in_len) - 1,
                                 static_cast<int>(std::floor(t + half_width)));
    m.first[n] = lo;
    m.count[n] = hi >= lo ? hi - lo + 1 : 0;
    m.offset[n] = static_cast<int32_t>(m.weights.size());
    double sum = 0.0;
    for (int k = lo; k <= hi; ++k) {
      const double tau = (static_cast<double>(k) - t);
      const double x = cutoff * tau;
      const double s = x == 0.0 ? 1.0 : std::sin(kPi * x) / (kPi * x);
      const double u = tau / half_width;  // in [-1,1]
      const double w = 0.42 + 0.5 * std::cos(kPi * u) + 0.08 * std::cos(2.0 * kPi * u);
      const double tap = cutoff * s * w;
      m.weights.push_back(tap);
      sum += tap;
    }
    // Normalize for exact DC gain.
    if (sum != 0.0) {
      for (int32_t k = 0; k < m.count[n]; ++k) m.weights[m.offset[n] + k] /= sum;
    }
  }
  return m;
}

std::vector<double> resample_to_rate(const std::vector<double>& x, int from_rate, int to_rate) {
  if (from_rate == to_rate) return x;
  const double step = static_cast<double>(from_rate) / to_rate;
  return resample_apply(make_resample_map(x.size(), step), x);
}

std::vector<double> mask_resample_nearest(const std::vector<double>& mask, size_t out_len) {
  std::vector<double> out(out_len);
  const double ratio = static_cast<double>(mask.size()) / static_cast<double>(out_len);
  for (size_t i = 0; i < out_len; ++i) {
    size_t src = static_cast<size_t>((static_cast<double>(i) + 0.5) * ratio);
    if (src >= mask.size()) src = mask.size() - 1;
    out[i] = mask[src];
  }
  return out;
}

void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft: size must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse) {
    for (auto& v : a) v /= static_cast<double>(n);
  }
}

std::vector<double> pink_noise(size_t n, RandomSource& rng) {
  if (n == 0) return {};
  size_t m = 1;
  while (m < n) m <<= 1;
  std::vector<std::complex<double>> buf(m);
  for (size_t i = 0; i < m; ++i) buf[i] = {rng.normal(), 0.0};
  fft_radix2(buf, false);
  buf[0] = 0.0;  // remove DC
  for (size_t k = 1; k < m; ++k) {
    const double f = static_cast<double>(std::min(k, m - k));
    buf[k] /= std::sqrt(f);
  }
  fft_radix2(buf, true);
  std::vector<double> out(n);
  double e = 0.0;
  for (size_t i = 0; i < n; ++i) {
    out[i] = buf[i].real();
    e += out[i] * out[i];
  }
  const double r = std::sqrt(e / static_cast<double>(n));
  if (r > 0) {
    for (auto& v : out) v /= r;
  }
  return out;
}

const StftBasis& stft_basis(int win, int hop) {
  static std::map<std::pair<int, int>, StftBasis> cache;
  auto key = std::make_pair(win, hop);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  if (win < 4 || hop < 1) throw std::invalid_argument("stft: bad window/hop");
  StftBasis b;
  b.win = win;
  b.hop = hop;
  b.bins = win / 2 + 1;
  b.cos_basis.resize(b.bins, win);
  b.sin_basis.resize(b.bins, win);
  for (int t = 0; t < win; ++t) {
    const double w = 0.5 * (1.0 - std::cos(2.0 * kPi * t / win));  // periodic Hann
    for (int k = 0; k < b.bins; ++k) {
      const double ang = 2.0 * kPi * k * t / win;
      b.cos_basis(k, t) = w * std::cos(ang);
      b.sin_basis(k, t) = -w * std::sin(ang);
    }
  }
  return cache.emplace(key, std::move(b)).first->second;
}

Eigen::MatrixXd mel_filterbank(int n_mel, int bins, int win, double sample_rate) {
  auto hz_to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto mel_to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };

  const double f_max = sample_rate / 2.0;
  const double m_max = hz_to_mel(f_max);
  std::vector<double> centers(n_mel + 2);
  for (int i = 0; i < n_mel + 2; ++i) centers[i] = mel_to_hz(m_max * i / (n_mel + 1));

  Eigen::MatrixXd bank = Eigen::MatrixXd::Zero(n_mel, bins);
  for (int m = 0; m < n_mel; ++m) {
    const double lo = centers[m], mid = centers[m + 1], hi = centers[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / win;
      double v = 0.0;
      if (f > lo && f < mid)
        v = (f - lo) / std::max(mid - lo, 1e-9);
      else if (f >= mid && f < hi)
        v = (hi - f) / std::max(hi - mid, 1e-9);
      bank(m, k) = v;
    }
  }
  return bank;
}

double rms(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double e = 0.0;
  for (double v : x) e += v * v;
  return std::sqrt(e / static_cast<double>(x.size()));
}

}  // namespace waveverify
