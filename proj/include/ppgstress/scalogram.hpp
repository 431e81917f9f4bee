#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppgstress/fft.hpp"
#include "ppgstress/rng.hpp"
#include "ppgstress/signal.hpp"

namespace ppgstress {

inline constexpr int kImageSize = 64;

enum class CwtBackend { direct, fft };

/// Analytic Morlet CWT over log-spaced scales. Scales are chosen so the
/// per-scale center frequencies f = omega0 * rate / (2*pi*s) span the band,
/// row 0 at the top of the band.
struct CwtConfig {
  double omega0 = 6.0;
  int scale_count = 64;
  double band_lo_hz = 0.5;
  double band_hi_hz = 8.0;
  double sample_rate_hz = 64.0;
  CwtBackend backend = CwtBackend::fft;
};

struct ScalogramMatrix {
  int scales = 0;
  int samples = 0;
  std::vector<std::complex<double>> coeffs;  // row-major, scales x samples
  std::vector<double> scale_axis;            // s, in samples
  std::vector<double> center_freq_hz;

  std::complex<double>& at(int s, int t) { return coeffs[static_cast<std::size_t>(s) * samples + t]; }
  const std::complex<double>& at(int s, int t) const {
    return coeffs[static_cast<std::size_t>(s) * samples + t];
  }
};

/// 64x64 image, pixels in [0,1]. Label byte: 0/1, unset when the source
/// window carried no label.
struct ScalogramImage {
  std::vector<float> pixels;  // row-major, kImageSize x kImageSize
  std::optional<int> label;
  uint32_t source_id = 0;
  uint32_t window_start = 0;

  ScalogramImage() : pixels(static_cast<std::size_t>(kImageSize) * kImageSize, 0.0f) {}

  float& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * kImageSize + c]; }
  float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * kImageSize + c]; }
};

struct AugmentParams {
  double max_rotation_deg = 10.0;
  double max_shift_fraction = 0.10;
  double flip_probability = 0.5;
  uint64_t seed = 0;
};

inline void validate(const AugmentParams& p) {
  if (p.max_rotation_deg < 0.0 || p.max_rotation_deg > 45.0)
    throw std::runtime_error("augment: max rotation must be in [0,45] degrees");
  if (p.max_shift_fraction < 0.0 || p.max_shift_fraction >= 1.0)
    throw std::runtime_error("augment: max shift fraction must be in [0,1)");
  if (p.flip_probability < 0.0 || p.flip_probability > 1.0)
    throw std::runtime_error("augment: flip probability must be in [0,1]");
}

inline void validate(const CwtConfig& cfg) {
  if (cfg.scale_count < 2) throw std::runtime_error("cwt: scale count must be at least 2");
  if (!(cfg.band_lo_hz > 0.0 && cfg.band_lo_hz < cfg.band_hi_hz))
    throw std::runtime_error("cwt: frequency band must satisfy 0 < lo < hi");
  if (cfg.band_hi_hz >= cfg.sample_rate_hz / 2.0)
    throw std::runtime_error("cwt: band upper edge at or above Nyquist");
  if (cfg.omega0 <= 0.0) throw std::runtime_error("cwt: omega0 must be positive");
}

namespace detail {

inline constexpr double kPi = 3.14159265358979323846264338327950288;

// conj(psi(u/s)) / sqrt(s) for the analytic Morlet psi(t) = pi^-1/4 e^{i w0 t} e^{-t^2/2}
inline std::complex<double> morlet_kernel(double u, double s, double omega0) {
  const double x = u / s;
  const double env = 0.7511255444649425 * std::exp(-0.5 * x * x);  // pi^-1/4
  return std::complex<double>(env * std::cos(omega0 * x), -env * std::sin(omega0 * x)) /
         std::sqrt(s);
}

inline std::vector<double> scale_grid(const CwtConfig& cfg) {
  std::vector<double> scales(static_cast<std::size_t>(cfg.scale_count));
  const double ratio = cfg.band_lo_hz / cfg.band_hi_hz;
  for (int k = 0; k < cfg.scale_count; ++k) {
    const double f = cfg.band_hi_hz * std::pow(ratio, static_cast<double>(k) / (cfg.scale_count - 1));
    scales[static_cast<std::size_t>(k)] = cfg.omega0 * cfg.sample_rate_hz / (2.0 * kPi * f);
  }
  return scales;
}

}  // namespace detail

/// W[s, tau] = (1/sqrt(s)) * sum_t x[t] * conj(psi((t - tau)/s)).
/// The direct backend evaluates the full Riemann sum over the window; the
/// fft backend computes the same correlation with the kernel truncated at
/// 8 sigma (relative error ~1e-14), zero-padded to avoid circular wrap.
inline ScalogramMatrix cwt(const Window& window, const CwtConfig& cfg) {
  validate(cfg);
  const int n = static_cast<int>(window.samples.size());
  if (n < 2) throw std::runtime_error("cwt: window must hold at least 2 samples");

  ScalogramMatrix m;
  m.scales = cfg.scale_count;
  m.samples = n;
  m.coeffs.assign(static_cast<std::size_t>(m.scales) * n, {0.0, 0.0});
  m.scale_axis = detail::scale_grid(cfg);
  m.center_freq_hz.resize(m.scale_axis.size());
  for (std::size_t k = 0; k < m.scale_axis.size(); ++k)
    m.center_freq_hz[k] = cfg.omega0 * cfg.sample_rate_hz / (2.0 * detail::kPi * m.scale_axis[k]);

  if (cfg.backend == CwtBackend::direct) {
    std::vector<std::complex<double>> kernel(static_cast<std::size_t>(2 * n - 1));
    for (int si = 0; si < m.scales; ++si) {
      const double s = m.scale_axis[static_cast<std::size_t>(si)];
      for (int u = -(n - 1); u <= n - 1; ++u)
        kernel[static_cast<std::size_t>(u + n - 1)] = detail::morlet_kernel(u, s, cfg.omega0);
      for (int tau = 0; tau < n; ++tau) {
        std::complex<double> acc(0.0, 0.0);
        for (int t = 0; t < n; ++t)
          acc += window.samples[static_cast<std::size_t>(t)] * kernel[static_cast<std::size_t>(t - tau + n - 1)];
        m.at(si, tau) = acc;
      }
    }
    return m;
  }

  const double s_max = m.scale_axis.back();
  const std::size_t support = static_cast<std::size_t>(std::ceil(8.0 * s_max));
  const std::size_t len = detail::next_pow2(static_cast<std::size_t>(n) + support + 1);

  std::vector<std::complex<double>> sig(len, {0.0, 0.0});
  for (int t = 0; t < n; ++t) sig[static_cast<std::size_t>(t)] = window.samples[static_cast<std::size_t>(t)];
  detail::fft_inplace(sig, false);

  std::vector<std::complex<double>> ker(len);
  for (int si = 0; si < m.scales; ++si) {
    const double s = m.scale_axis[static_cast<std::size_t>(si)];
    const long half = std::lround(std::ceil(8.0 * s));
    std::fill(ker.begin(), ker.end(), std::complex<double>(0.0, 0.0));
    for (long u = -half; u <= half; ++u) {
      const std::size_t idx = static_cast<std::size_t>((u + static_cast<long>(len)) % static_cast<long>(len));
      // correlation theorem applies one conjugation: storing conj here makes
      // ifft(sig_fft * conj(ker_fft)) reproduce sum_t x[t] * kernel[t - tau]
      ker[idx] = std::conj(detail::morlet_kernel(static_cast<double>(u), s, cfg.omega0));
    }
    detail::fft_inplace(ker, false);
    for (std::size_t i = 0; i < len; ++i) ker[i] = sig[i] * std::conj(ker[i]);
    detail::fft_inplace(ker, true);
    for (int tau = 0; tau < n; ++tau) m.at(si, tau) = ker[static_cast<std::size_t>(tau)];
  }
  return m;
}

/// magnitude -> log1p -> per-image min-max to [0,1] -> time axis reduced to
/// 64 columns by block averaging. A constant matrix maps to all zeros.
inline ScalogramImage render_image(const ScalogramMatrix& m) {
  if (m.scales != kImageSize)
    throw std::runtime_error("render_image: expected " + std::to_string(kImageSize) + " scales, got " +
                             std::to_string(m.scales));
  if (m.samples < kImageSize)
    throw std::runtime_error("render_image: window too short to reduce to 64 columns");

  std::vector<double> v(m.coeffs.size());
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m.coeffs.size(); ++i) {
    const double x = std::log1p(std::abs(m.coeffs[i]));
    if (!std::isfinite(x)) throw std::runtime_error("render_image: non-finite coefficient");
    v[i] = x;
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const double span = hi - lo;

  ScalogramImage img;
  for (int r = 0; r < kImageSize; ++r) {
    for (int c = 0; c < kImageSize; ++c) {
      const int t0 = static_cast<int>(static_cast<long long>(c) * m.samples / kImageSize);
      const int t1 = static_cast<int>(static_cast<long long>(c + 1) * m.samples / kImageSize);
      double acc = 0.0;
      for (int t = t0; t < t1; ++t)
        acc += span > 0.0 ? (v[static_cast<std::size_t>(r) * m.samples + t] - lo) / span : 0.0;
      img.at(r, c) = static_cast<float>(acc / (t1 - t0));
    }
  }
  return img;
}

/// Horizontal flip (Bernoulli), then one combined rotate+shift resample
/// (bilinear, zero-filled borders). Deterministic given (seed, draw_index).
inline ScalogramImage augment(const ScalogramImage& img, const AugmentParams& p, uint64_t draw_index) {
  if (p.max_shift_fraction < 0.0 || p.max_shift_fraction >= 0.5)
    throw std::runtime_error("augment: shift fraction must lie in [0, 0.5)");
  if (p.max_rotation_deg < 0.0 || p.max_rotation_deg > 45.0)
    throw std::runtime_error("augment: rotation must lie in [0, 45] degrees");

  Rng rng = fork_rng(p.seed, 0x617567 ^ draw_index);
  const bool flip = rng.uniform() < p.flip_probability;
  const double angle = rng.uniform(-p.max_rotation_deg, p.max_rotation_deg) * detail::kPi / 180.0;
  const double dx = rng.uniform(-p.max_shift_fraction, p.max_shift_fraction) * kImageSize;
  const double dy = rng.uniform(-p.max_shift_fraction, p.max_shift_fraction) * kImageSize;

  ScalogramImage src = img;
  if (flip) {
    for (int r = 0; r < kImageSize; ++r)
      for (int c = 0; c < kImageSize; ++c) src.at(r, c) = img.at(r, kImageSize - 1 - c);
  }

  ScalogramImage out;
  out.label = img.label;
  out.source_id = img.source_id;
  out.window_start = img.window_start;

  const double cx = (kImageSize - 1) / 2.0;
  const double cy = (kImageSize - 1) / 2.0;
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  for (int r = 0; r < kImageSize; ++r) {
    for (int c = 0; c < kImageSize; ++c) {
      const double xr = c - cx - dx;
      const double yr = r - cy - dy;
      const double sx = ca * xr + sa * yr + cx;
      const double sy = -sa * xr + ca * yr + cy;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0;
      const double fy = sy - y0;
      double acc = 0.0;
      for (int j = 0; j <= 1; ++j) {
        for (int i = 0; i <= 1; ++i) {
          const int xx = x0 + i;
          const int yy = y0 + j;
          if (xx < 0 || xx >= kImageSize || yy < 0 || yy >= kImageSize) continue;
          const double w = (i ? fx : 1.0 - fx) * (j ? fy : 1.0 - fy);
          acc += w * src.at(yy, xx);
        }
      }
      out.at(r, c) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
    }
  }
  return out;
}

}  // namespace ppgstress
