#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pianolab/audio.hpp"
#include "pianolab/matrix.hpp"

namespace pianolab::dsp {

enum class SpecType { S, LS, LM, CQT };

std::string to_string(SpecType t);
SpecType spec_type_from_string(const std::string& s);

/// fmin/fmax defaults are calibrated so that the LS/LM filterbank at
/// sr=44100, 48 bands/octave, frame 4096, no zero padding has exactly
/// 229 bands. See docs in README ("Filterbank calibration").
inline constexpr double kCalibratedFmin = 30.0;
inline constexpr double kCalibratedFmax = 8000.0;

struct SpecConfig {
  SpecType spec_type = SpecType::LM;
  double sample_rate = 44100.0;
  std::size_t frame_size = 0;  // 0 = default: 4096 at 44.1 kHz, 2048 at 22.05 kHz
  std::size_t hop_size = 0;    // 0 = default: 10 ms
  int zero_pad = 0;            // extra zeros: x0 / x1 / x2 of the frame size
  bool circular_shift = false;
  int bands_per_octave = 48;
  bool area_normed_filters = true;
  double fmin = kCalibratedFmin;
  double fmax = kCalibratedFmax;

  std::size_t resolved_frame_size() const;
  std::size_t resolved_hop_size() const;
  std::size_t padded_size() const;  // frame_size * (1 + zero_pad)

  void validate() const;
  bool operator==(const SpecConfig&) const = default;
};

std::string to_json_string(const SpecConfig& cfg);
SpecConfig spec_config_from_json_string(const std::string& text);
SpecConfig load_spec_config(const std::filesystem::path& path);

/// FNV-1a over the canonical JSON form, as a 16-char hex string.
std::string config_hash(const SpecConfig& cfg);

struct Filterbank {
  Matrix matrix;                     // bands x fft_bins, non-negative
  std::vector<double> center_freqs;  // Hz, strictly increasing
  std::size_t bands() const { return matrix.rows; }
};

struct Spectrogram {
  Matrix frames;  // T x B, values in [0, 1] after compute_representation
  SpecConfig config;
  std::vector<double> frame_times;  // seconds, window centers
};

/// Hann-windowed STFT magnitude. Frames are [i*hop, i*hop + frame), zero
/// padded to frame*(1+zp), optionally rotated by frame/2 before the DFT.
/// Returns T x K with K = padded/2 + 1.
Matrix stft_magnitude(const AudioClip& clip, const SpecConfig& cfg);

/// Triangular filters on log-spaced center frequencies; centers that
/// collapse onto the same DFT bin are merged, which produces the
/// quasi-linear low-frequency region.
Filterbank build_log_filterbank(const SpecConfig& cfg, std::size_t n_fft_bins);

/// out = mag * fb^T
Matrix apply_filterbank(const Matrix& mag, const Filterbank& fb);

/// Elementwise log(1 + x); rejects negative input.
Matrix log_magnitude(const Matrix& x);

/// Constant-Q transform by direct per-band windowed complex correlation.
/// Q = 1 / (2^(1/nb) - 1), per-band window ceil(Q*sr/f_k) capped at the
/// frame length. Output normalized to [0, 1].
Spectrogram cqt(const AudioClip& clip, const SpecConfig& cfg);

/// Dispatches S / LS / LM / CQT and rescales so the recording maximum
/// maps to 1.
Spectrogram compute_representation(const AudioClip& clip, const SpecConfig& cfg);

/// All Table-1 style grid configurations under the recorded applicability
/// rule (204 in total; see README "Representation grid").
std::vector<SpecConfig> representation_grid();

void save_spectrogram(const std::filesystem::path& path, const Spectrogram& spec);
Spectrogram load_spectrogram(const std::filesystem::path& path);
void save_spectrogram_csv(const std::filesystem::path& path, const Spectrogram& spec);

}  // namespace pianolab::dsp
