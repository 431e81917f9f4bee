#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppgstress/rng.hpp"

namespace ppgstress {

/// Uniformly sampled PPG series. Label: 0 = non-stress, 1 = stress.
struct PpgRecord {
  std::vector<double> samples;
  double sample_rate_hz = 64.0;
  std::optional<int> label;
};

/// Fixed-length slice of a PpgRecord, label inherited from the source.
struct Window {
  std::vector<double> samples;
  std::size_t start_index = 0;
  std::optional<int> label;
};

/// Two-harmonic beat model with per-beat HR jitter, baseline wander and
/// additive Gaussian noise. Class contrast comes from disjoint HR bands.
struct SynthParams {
  int class_label = 0;                 // 0 = non-stress, 1 = stress
  double hr_band_lo_hz = 0.9;
  double hr_band_hi_hz = 1.3;
  double harmonic_ratio = 0.4;
  double wander_amplitude = 0.3;
  double noise_std = 0.15;
  double duration_s = 60.0;
  uint64_t seed = 0;

  static SynthParams non_stress(uint64_t seed) {
    SynthParams p;
    p.class_label = 0;
    p.hr_band_lo_hz = 0.9;
    p.hr_band_hi_hz = 1.3;
    p.seed = seed;
    return p;
  }

  static SynthParams stress(uint64_t seed) {
    SynthParams p;
    p.class_label = 1;
    p.hr_band_lo_hz = 2.0;
    p.hr_band_hi_hz = 3.0;
    p.seed = seed;
    return p;
  }
};

inline void validate(const SynthParams& p) {
  if (!(p.hr_band_lo_hz > 0.5 && p.hr_band_hi_hz < 3.5 && p.hr_band_lo_hz < p.hr_band_hi_hz))
    throw std::runtime_error("synth_ppg: hr band must lie within (0.5, 3.5) Hz");
  if (p.class_label != 0 && p.class_label != 1)
    throw std::runtime_error("synth_ppg: class label must be 0 or 1");
  if (p.duration_s < 10.0)
    throw std::runtime_error("synth_ppg: duration shorter than one 10 s window");
}

/// Reads one amplitude per line, optional ",label" second column.
/// The record label is set only when a label column is present on every
/// row and constant.
inline PpgRecord load_ppg_csv(const std::string& path, double sample_rate_hz) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_ppg_csv: cannot open file: " + path);

  PpgRecord rec;
  rec.sample_rate_hz = sample_rate_hz;

  bool labels_present = true;
  bool labels_constant = true;
  int first_label = -1;

  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    const auto comma = line.find(',');
    const std::string amp_str = line.substr(0, comma);
    std::size_t used = 0;
    double amp = 0.0;
    try {
      amp = std::stod(amp_str, &used);
    } catch (const std::exception&) {
      throw std::runtime_error("load_ppg_csv: non-numeric value at row " + std::to_string(row));
    }
    if (used != amp_str.size())
      throw std::runtime_error("load_ppg_csv: non-numeric value at row " + std::to_string(row));
    if (!std::isfinite(amp))
      throw std::runtime_error("load_ppg_csv: non-finite value at row " + std::to_string(row));
    rec.samples.push_back(amp);

    if (comma == std::string::npos) {
      labels_present = false;
    } else {
      const std::string lab_str = line.substr(comma + 1);
      int lab = 0;
      try {
        lab = std::stoi(lab_str, &used);
      } catch (const std::exception&) {
        throw std::runtime_error("load_ppg_csv: non-numeric label at row " + std::to_string(row));
      }
      if (first_label < 0)
        first_label = lab;
      else if (lab != first_label)
        labels_constant = false;
    }
  }
  if (rec.samples.empty()) throw std::runtime_error("load_ppg_csv: empty file: " + path);
  if (labels_present && labels_constant && first_label >= 0) rec.label = first_label;
  return rec;
}

inline void write_ppg_csv(const PpgRecord& rec, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppg_csv: cannot open file for write: " + path);
  char buf[64];
  for (double s : rec.samples) {
    std::snprintf(buf, sizeof(buf), "%.9g", s);
    out << buf;
    if (rec.label) out << ',' << *rec.label;
    out << '\n';
  }
}

/// Deterministic given params.seed. Beat frequencies are drawn uniformly
/// from the class band, one draw per beat; the phase accumulates so the
/// waveform is continuous across beat boundaries.
inline PpgRecord synth_ppg(const SynthParams& p, double sample_rate_hz = 64.0) {
  validate(p);
  const std::size_t n = static_cast<std::size_t>(std::llround(p.duration_s * sample_rate_hz));

  Rng beats = fork_rng(p.seed, 1);
  Rng wander = fork_rng(p.seed, 2);
  Rng noise = fork_rng(p.seed, 3);

  const double wander_freq = wander.uniform(0.05, 0.30);
  const double wander_phase = wander.uniform(0.0, 6.283185307179586);
  const double harmonic_phase = 0.7853981633974483;  // pi/4

  PpgRecord rec;
  rec.sample_rate_hz = sample_rate_hz;
  rec.label = p.class_label;
  rec.samples.resize(n);

  const double dt = 1.0 / sample_rate_hz;
  double phase = 0.0;  // beat phase in cycles
  double f_beat = beats.uniform(p.hr_band_lo_hz, p.hr_band_hi_hz);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    const double theta = 6.283185307179586 * phase;
    double v = std::sin(theta) + p.harmonic_ratio * std::sin(2.0 * theta + harmonic_phase);
    v += p.wander_amplitude * std::sin(6.283185307179586 * wander_freq * t + wander_phase);
    if (p.noise_std > 0.0) v += p.noise_std * noise.normal();
    rec.samples[i] = v;

    phase += f_beat * dt;
    if (phase >= 1.0) {
      phase -= 1.0;
      f_beat = beats.uniform(p.hr_band_lo_hz, p.hr_band_hi_hz);
    }
  }
  return rec;
}

/// Fixed windows: count = floor((N - W) / S) + 1. Trailing samples that do
/// not fill a window are dropped.
inline std::vector<Window> segment_windows(const PpgRecord& rec, double window_s = 10.0,
                                           double stride_s = 1.0) {
  if (rec.sample_rate_hz <= 0) throw std::runtime_error("segment_windows: sample rate must be positive");
  const std::size_t w = static_cast<std::size_t>(std::llround(window_s * rec.sample_rate_hz));
  const std::size_t s = static_cast<std::size_t>(std::llround(stride_s * rec.sample_rate_hz));
  if (w == 0 || s == 0) throw std::runtime_error("segment_windows: window and stride must be at least one sample");
  if (rec.samples.size() < w) throw std::runtime_error("segment_windows: record shorter than one window");

  const std::size_t count = (rec.samples.size() - w) / s + 1;
  std::vector<Window> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    Window win;
    win.start_index = k * s;
    win.label = rec.label;
    win.samples.assign(rec.samples.begin() + static_cast<std::ptrdiff_t>(win.start_index),
                       rec.samples.begin() + static_cast<std::ptrdiff_t>(win.start_index + w));
    out.push_back(std::move(win));
  }
  return out;
}

}  // namespace ppgstress
