#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <random>

#include "pianolab/audio.hpp"
#include "pianolab/dsp.hpp"
#include "pianolab/fft.hpp"

using namespace pianolab;
using namespace pianolab::dsp;

namespace {

constexpr double kPi = std::numbers::pi;

// Independent O(N^2) DFT oracle.
std::vector<cplx> naive_dft(const std::vector<cplx>& x) {
  const std::size_t n = x.size();
  std::vector<cplx> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    cplx acc(0, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const double ang = -2.0 * kPi * static_cast<double>(k) * static_cast<double>(i) /
                         static_cast<double>(n);
      acc += x[i] * cplx(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

AudioClip sine(double freq, double sr, double seconds, double amp = 0.8) {
  AudioClip clip;
  clip.sample_rate = sr;
  const std::size_t n = static_cast<std::size_t>(seconds * sr);
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    clip.samples[i] = amp * std::sin(2.0 * kPi * freq * static_cast<double>(i) / sr);
  return clip;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("pianolab_dsp_" + name);
}

}  // namespace

TEST_CASE("fft matches the naive DFT oracle on power-of-two and odd sizes") {
  std::mt19937_64 rng(7);
  for (std::size_t n : {8u, 64u, 96u, 101u, 256u, 768u}) {
    std::vector<cplx> x(n);
    for (auto& v : x)
      v = cplx(static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5,
               static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5);
    const auto fast = fft(x);
    const auto slow = naive_dft(x);
    double max_err = 0.0;
    for (std::size_t k = 0; k < n; ++k) max_err = std::max(max_err, std::abs(fast[k] - slow[k]));
    CAPTURE(n);
    CHECK(max_err < 1e-9);
  }
}

TEST_CASE("ifft inverts fft") {
  std::mt19937_64 rng(9);
  for (std::size_t n : {16u, 48u}) {
    std::vector<cplx> x(n);
    for (auto& v : x) v = cplx(static_cast<double>(rng() % 1000) / 500.0 - 1.0, 0.0);
    const auto back = ifft(fft(x));
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(back[i] - x[i]) < 1e-10);
  }
}

TEST_CASE("Parseval holds on the unpadded unwindowed DFT path") {
  std::mt19937_64 rng(21);
  std::vector<cplx> x(512);
  double e_time = 0.0;
  for (auto& v : x) {
    const double s = static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5;
    v = cplx(s, 0.0);
    e_time += s * s;
  }
  const auto spec = fft(x);
  double e_freq = 0.0;
  for (const auto& v : spec) e_freq += std::norm(v);
  e_freq /= static_cast<double>(x.size());
  CHECK(e_time / e_freq == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("stft peak bin matches round(f*N/sr) for a pure tone") {
  const AudioClip clip = sine(440.0, 22050.0, 0.5);
  SpecConfig cfg;
  cfg.spec_type = SpecType::S;
  cfg.sample_rate = 22050.0;
  cfg.frame_size = 2048;
  cfg.hop_size = 512;
  cfg.zero_pad = 0;
  const Matrix mag = stft_magnitude(clip, cfg);
  CHECK(mag.cols == 1025);
  CHECK(mag.rows == 1 + (clip.samples.size() - 2048) / 512);
  const long expected_bin = std::lround(440.0 * 2048.0 / 22050.0);
  CHECK(expected_bin == 41);
  for (std::size_t t = 0; t < mag.rows; ++t) {
    std::size_t argmax = 0;
    for (std::size_t k = 1; k < mag.cols; ++k)
      if (mag(t, k) > mag(t, argmax)) argmax = k;
    CHECK(argmax == static_cast<std::size_t>(expected_bin));
  }
}

TEST_CASE("stft frame values match a naive windowed DFT") {
  const AudioClip clip = sine(993.7, 22050.0, 0.2);
  SpecConfig cfg;
  cfg.sample_rate = 22050.0;
  cfg.frame_size = 256;
  cfg.hop_size = 128;
  cfg.zero_pad = 1;  // padded to 512
  const Matrix mag = stft_magnitude(clip, cfg);

  std::vector<cplx> frame(512, cplx(0, 0));
  for (std::size_t i = 0; i < 256; ++i) {
    const double w = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / 256.0);
    frame[i] = cplx(clip.samples[i] * w, 0.0);
  }
  const auto slow = naive_dft(frame);
  for (std::size_t k = 0; k < mag.cols; ++k)
    CHECK(mag(0, k) == doctest::Approx(std::abs(slow[k])).epsilon(1e-9));
}

TEST_CASE("all-zero clip gives an all-zero magnitude matrix") {
  AudioClip clip;
  clip.sample_rate = 22050.0;
  clip.samples.assign(4096, 0.0);
  SpecConfig cfg;
  cfg.sample_rate = 22050.0;
  for (double v : stft_magnitude(clip, cfg).v) CHECK(v == 0.0);
}

TEST_CASE("circular shift never changes magnitudes") {
  const AudioClip clip = sine(777.0, 22050.0, 0.3);
  for (int zp : {0, 1, 2}) {
    SpecConfig cfg;
    cfg.sample_rate = 22050.0;
    cfg.frame_size = 1024;
    cfg.hop_size = 256;
    cfg.zero_pad = zp;
    cfg.circular_shift = false;
    const Matrix plain = stft_magnitude(clip, cfg);
    cfg.circular_shift = true;
    const Matrix shifted = stft_magnitude(clip, cfg);
    REQUIRE(plain.same_shape(shifted));
    for (std::size_t i = 0; i < plain.v.size(); ++i) {
      const double denom = std::max(std::abs(plain.v[i]), 1e-30);
      CHECK(std::abs(plain.v[i] - shifted.v[i]) / denom <= 1e-12);
    }
  }
}

TEST_CASE("zero padding multiplies the bin count and does not hurt peak estimates") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const double freq = 300.0 + static_cast<double>(rng() % 4000);
    const AudioClip clip = sine(freq, 22050.0, 0.15);
    double err0 = 0.0;
    std::size_t bins0 = 0;
    for (int zp : {0, 1, 2}) {
      SpecConfig cfg;
      cfg.sample_rate = 22050.0;
      cfg.frame_size = 1024;
      cfg.hop_size = 1024;
      cfg.zero_pad = zp;
      const Matrix mag = stft_magnitude(clip, cfg);
      if (zp == 0)
        bins0 = mag.cols;
      else
        CHECK(mag.cols - 1 == (bins0 - 1) * static_cast<std::size_t>(1 + zp));
      std::size_t argmax = 0;
      for (std::size_t k = 1; k < mag.cols; ++k)
        if (mag(0, k) > mag(0, argmax)) argmax = k;
      const double df = 22050.0 / static_cast<double>(1024 * (1 + zp));
      const double err = std::abs(static_cast<double>(argmax) * df - freq);
      if (zp == 0)
        err0 = err;
      else
        CHECK(err <= err0 + 1e-9);
    }
  }
}

TEST_CASE("log filterbank: one octave at 12 bands and no merging has 13 centers") {
  SpecConfig cfg;
  cfg.sample_rate = 22050.0;
  cfg.bands_per_octave = 12;
  cfg.fmin = 440.0;
  cfg.fmax = 880.0;
  cfg.area_normed_filters = false;
  // 8192-point DFT: df = 2.69 Hz, far finer than the 440*2^(1/12) spacing
  const Filterbank fb = build_log_filterbank(cfg, 4097);
  CHECK(fb.bands() == 13);
  for (std::size_t b = 0; b < fb.bands(); ++b) {
    const double expected = 440.0 * std::pow(2.0, static_cast<double>(b) / 12.0);
    CHECK(fb.center_freqs[b] == doctest::Approx(expected).epsilon(0.01));
  }
  for (std::size_t b = 1; b < fb.bands(); ++b)
    CHECK(fb.center_freqs[b] > fb.center_freqs[b - 1]);
}

TEST_CASE("area-normed rows sum to 1, non-normed rows peak at 1") {
  SpecConfig cfg;
  cfg.sample_rate = 44100.0;
  cfg.bands_per_octave = 24;
  cfg.fmin = 50.0;
  cfg.fmax = 10000.0;

  cfg.area_normed_filters = true;
  Filterbank fb = build_log_filterbank(cfg, 2049);
  for (std::size_t b = 0; b < fb.bands(); ++b) {
    double sum = 0.0;
    for (std::size_t k = 0; k < fb.matrix.cols; ++k) sum += fb.matrix(b, k);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }

  cfg.area_normed_filters = false;
  fb = build_log_filterbank(cfg, 2049);
  for (std::size_t b = 0; b < fb.bands(); ++b) {
    double peak = 0.0;
    for (std::size_t k = 0; k < fb.matrix.cols; ++k) peak = std::max(peak, fb.matrix(b, k));
    CHECK(peak == doctest::Approx(1.0));
  }
}

TEST_CASE("every filter row has a nonzero weight and fmax above Nyquist is rejected") {
  SpecConfig cfg;
  cfg.sample_rate = 22050.0;
  cfg.bands_per_octave = 48;
  cfg.fmin = 30.0;
  cfg.fmax = 10000.0;
  const Filterbank fb = build_log_filterbank(cfg, 1025);
  for (std::size_t b = 0; b < fb.bands(); ++b) {
    double mx = 0.0;
    for (std::size_t k = 0; k < fb.matrix.cols; ++k) mx = std::max(mx, fb.matrix(b, k));
    CHECK(mx > 0.0);
  }
  cfg.fmax = 12000.0;  // Nyquist is 11025
  CHECK_THROWS_AS(build_log_filterbank(cfg, 1025), ConfigError);
}

TEST_CASE("the calibrated LS/LM bank at 44.1 kHz and 48 bands/octave has 229 bands") {
  SpecConfig cfg;
  cfg.sample_rate = 44100.0;
  cfg.bands_per_octave = 48;
  // defaults carry the calibrated fmin/fmax
  const Filterbank fb = build_log_filterbank(cfg, cfg.padded_size() / 2 + 1);
  CHECK(fb.bands() == 229);
}

TEST_CASE("apply_filterbank: identity, averaging row, zero input, shape mismatch") {
  Matrix mag(1, 4);
  mag(0, 0) = 1.0;
  mag(0, 1) = 2.0;
  mag(0, 2) = 3.0;
  mag(0, 3) = 6.0;

  Filterbank ident;
  ident.matrix = Matrix(4, 4);
  for (std::size_t i = 0; i < 4; ++i) ident.matrix(i, i) = 1.0;
  ident.center_freqs = {1, 2, 3, 4};
  const Matrix same = apply_filterbank(mag, ident);
  for (std::size_t i = 0; i < 4; ++i) CHECK(same(0, i) == mag(0, i));

  Filterbank avg;  // single all-ones row, area-normed to 1/K each
  avg.matrix = Matrix(1, 4, 0.25);
  avg.center_freqs = {100.0};
  const Matrix mean = apply_filterbank(mag, avg);
  CHECK(mean(0, 0) == doctest::Approx(3.0));  // (1+2+3+6)/4

  Matrix zero(2, 4);
  const Matrix out = apply_filterbank(zero, ident);
  for (double v : out.v) CHECK(v == 0.0);

  Matrix wrong(1, 5);
  CHECK_THROWS_AS(apply_filterbank(wrong, ident), ShapeError);
}

TEST_CASE("log_magnitude: log(1+x), rejects negatives, preserves argmax") {
  Matrix m(1, 3);
  m(0, 0) = 0.0;
  m(0, 1) = std::exp(1.0) - 1.0;
  m(0, 2) = 0.5;
  const Matrix lm = log_magnitude(m);
  CHECK(lm(0, 0) == 0.0);
  CHECK(lm(0, 1) == doctest::Approx(1.0));

  Matrix neg(1, 1);
  neg(0, 0) = -0.1;
  CHECK_THROWS_AS(log_magnitude(neg), ValueError);

  std::mt19937_64 rng(5);
  Matrix r(6, 40);
  for (double& v : r.v) v = static_cast<double>(rng() % 10000) / 1000.0;
  const Matrix lr = log_magnitude(r);
  for (std::size_t t = 0; t < r.rows; ++t) {
    std::size_t a = 0, b = 0;
    for (std::size_t k = 1; k < r.cols; ++k) {
      if (r(t, k) > r(t, a)) a = k;
      if (lr(t, k) > lr(t, b)) b = k;
    }
    CHECK(a == b);
  }
}

namespace {

// Direct-convolution oracle for one CQT band: Hann-windowed complex
// correlation at the band's center frequency, window centered on the frame.
double cqt_band_oracle(const AudioClip& clip, double freq, double q, std::size_t frame,
                       std::size_t center) {
  const std::size_t nk = std::min<std::size_t>(
      {static_cast<std::size_t>(std::ceil(q * clip.sample_rate / freq)), frame,
       clip.samples.size()});
  double wsum = 0.0;
  cplx acc(0, 0);
  for (std::size_t n = 0; n < nk; ++n) {
    const double w = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(n) /
                                          static_cast<double>(nk));
    wsum += w;
    const long idx = static_cast<long>(center) - static_cast<long>(nk) / 2 + static_cast<long>(n);
    if (idx < 0 || idx >= static_cast<long>(clip.samples.size())) continue;
    const double ph = -2.0 * kPi * freq *
                      (static_cast<double>(n) - static_cast<double>(nk) / 2.0) /
                      clip.sample_rate;
    acc += clip.samples[static_cast<std::size_t>(idx)] * w * cplx(std::cos(ph), std::sin(ph));
  }
  return std::abs(acc) / wsum;
}

}  // namespace

TEST_CASE("cqt: Q formula, band peak at a pure tone, zero input, fmin feasibility") {
  CHECK(1.0 / (std::pow(2.0, 1.0 / 12.0) - 1.0) == doctest::Approx(16.817).epsilon(1e-3));

  SpecConfig cfg;
  cfg.spec_type = SpecType::CQT;
  cfg.sample_rate = 22050.0;
  cfg.frame_size = 2048;
  cfg.hop_size = 512;
  cfg.bands_per_octave = 12;
  cfg.fmin = 220.0;
  cfg.fmax = 3520.0;

  // band 12 sits exactly at 440 Hz
  const AudioClip clip = sine(440.0, 22050.0, 0.4);
  const Spectrogram out = cqt(clip, cfg);
  CHECK(out.frames.cols == 49);  // 4 octaves at 12 bands + top edge
  for (std::size_t t = 0; t < out.frames.rows; ++t) {
    std::size_t argmax = 0;
    for (std::size_t b = 1; b < out.frames.cols; ++b)
      if (out.frames(t, b) > out.frames(t, argmax)) argmax = b;
    CHECK(argmax == 12);
  }

  AudioClip zero;
  zero.sample_rate = 22050.0;
  zero.samples.assign(4096, 0.0);
  const Spectrogram zs = cqt(zero, cfg);
  for (double v : zs.frames.v) CHECK(v == 0.0);

  SpecConfig bad = cfg;
  bad.fmin = 30.0;  // Q*sr/30 far exceeds 2048 samples
  CHECK_THROWS_WITH_AS(cqt(clip, bad), doctest::Contains("minimum feasible fmin"), ConfigError);
}

TEST_CASE("cqt magnitudes match the direct-convolution oracle") {
  SpecConfig cfg;
  cfg.spec_type = SpecType::CQT;
  cfg.sample_rate = 22050.0;
  cfg.frame_size = 1024;
  cfg.hop_size = 512;
  cfg.bands_per_octave = 12;
  cfg.fmin = 440.0;
  cfg.fmax = 1760.0;
  const double q = 1.0 / (std::pow(2.0, 1.0 / 12.0) - 1.0);

  AudioClip clip = sine(523.25, 22050.0, 0.2);
  // mix in a second tone for a non-trivial spectrum
  const AudioClip second = sine(1244.5, 22050.0, 0.2, 0.4);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) clip.samples[i] += second.samples[i];

  const Spectrogram out = cqt(clip, cfg);
  // un-normalize by recomputing the global max from the oracle
  std::vector<std::vector<double>> oracle(out.frames.rows,
                                          std::vector<double>(out.frames.cols));
  double mx = 0.0;
  for (std::size_t t = 0; t < out.frames.rows; ++t)
    for (std::size_t b = 0; b < out.frames.cols; ++b) {
      const double freq = 440.0 * std::pow(2.0, static_cast<double>(b) / 12.0);
      oracle[t][b] = cqt_band_oracle(clip, freq, q, 1024, t * 512 + 512);
      mx = std::max(mx, oracle[t][b]);
    }
  for (std::size_t t = 0; t < out.frames.rows; ++t)
    for (std::size_t b = 0; b < out.frames.cols; ++b)
      CHECK(out.frames(t, b) == doctest::Approx(oracle[t][b] / mx).epsilon(1e-9));
}

TEST_CASE("compute_representation rescales to [0,1] and records the config") {
  const AudioClip clip = sine(440.0, 22050.0, 0.4);
  for (SpecType type : {SpecType::S, SpecType::LS, SpecType::LM}) {
    SpecConfig cfg;
    cfg.spec_type = type;
    cfg.sample_rate = 22050.0;
    cfg.fmin = 100.0;
    cfg.fmax = 8000.0;
    const Spectrogram spec = compute_representation(clip, cfg);
    double mx = 0.0, mn = 1e300;
    for (double v : spec.frames.v) {
      mx = std::max(mx, v);
      mn = std::min(mn, v);
    }
    CHECK(mx == doctest::Approx(1.0));
    CHECK(mn >= 0.0);
    CHECK(spec.config.spec_type == type);
    CHECK(spec.frame_times.size() == spec.frames.rows);
  }
}

TEST_CASE("LM equals log_magnitude(apply_filterbank(stft)) up to the final rescale") {
  const AudioClip clip = sine(660.0, 22050.0, 0.3);
  SpecConfig cfg;
  cfg.spec_type = SpecType::LM;
  cfg.sample_rate = 22050.0;
  cfg.fmin = 100.0;
  cfg.fmax = 8000.0;
  const Spectrogram spec = compute_representation(clip, cfg);

  const Matrix mag = stft_magnitude(clip, cfg);
  const Filterbank fb = build_log_filterbank(cfg, mag.cols);
  const Matrix manual = log_magnitude(apply_filterbank(mag, fb));
  const double mx = *std::max_element(manual.v.begin(), manual.v.end());
  REQUIRE(spec.frames.same_shape(manual));
  for (std::size_t i = 0; i < manual.v.size(); ++i)
    CHECK(spec.frames.v[i] == doctest::Approx(manual.v[i] / mx).epsilon(1e-12));
}

TEST_CASE("rescaling preserves the per-frame argmax") {
  const AudioClip clip = sine(880.0, 22050.0, 0.3);
  SpecConfig cfg;
  cfg.spec_type = SpecType::S;
  cfg.sample_rate = 22050.0;
  const Spectrogram spec = compute_representation(clip, cfg);
  const Matrix raw = stft_magnitude(clip, cfg);
  for (std::size_t t = 0; t < raw.rows; ++t) {
    std::size_t a = 0, b = 0;
    for (std::size_t k = 1; k < raw.cols; ++k) {
      if (raw(t, k) > raw(t, a)) a = k;
      if (spec.frames(t, k) > spec.frames(t, b)) b = k;
    }
    CHECK(a == b);
  }
}

TEST_CASE("representation grid enumerates exactly 204 distinct configurations") {
  const auto grid = representation_grid();
  CHECK(grid.size() == 204);
  // distinct as values
  std::set<std::string> seen;
  for (const SpecConfig& cfg : grid) seen.insert(to_json_string(cfg));
  CHECK(seen.size() == 204);
  std::size_t n_cqt = 0, n_s = 0, n_ls = 0, n_lm = 0;
  for (const SpecConfig& cfg : grid) {
    switch (cfg.spec_type) {
      case SpecType::CQT: ++n_cqt; break;
      case SpecType::S: ++n_s; break;
      case SpecType::LS: ++n_ls; break;
      case SpecType::LM: ++n_lm; break;
    }
  }
  CHECK(n_cqt == 8);
  CHECK(n_s == 4);
  CHECK(n_ls == 96);
  CHECK(n_lm == 96);
}

TEST_CASE("short clip raises the empty-input error") {
  AudioClip clip;
  clip.sample_rate = 22050.0;
  clip.samples.assign(100, 0.1);
  SpecConfig cfg;
  cfg.sample_rate = 22050.0;
  CHECK_THROWS_AS(stft_magnitude(clip, cfg), ConfigError);
  cfg.spec_type = SpecType::CQT;
  cfg.fmin = 500.0;
  CHECK_THROWS_AS(cqt(clip, cfg), ConfigError);
}

TEST_CASE("spectrogram container round-trips bit-exactly") {
  const AudioClip clip = sine(440.0, 22050.0, 0.3);
  SpecConfig cfg;
  cfg.spec_type = SpecType::LM;
  cfg.sample_rate = 22050.0;
  cfg.fmin = 100.0;
  cfg.fmax = 9000.0;
  const Spectrogram spec = compute_representation(clip, cfg);
  const auto path = temp_path("container.bin");
  save_spectrogram(path, spec);
  const Spectrogram back = load_spectrogram(path);
  CHECK(back.frames.rows == spec.frames.rows);
  CHECK(back.frames.cols == spec.frames.cols);
  CHECK(back.frames.v == spec.frames.v);
  CHECK(back.frame_times == spec.frame_times);
  CHECK(config_hash(back.config) == config_hash(spec.config));
  save_spectrogram_csv(temp_path("container.csv"), spec);
  std::filesystem::remove(path);
  std::filesystem::remove(temp_path("container.csv"));
}

TEST_CASE("wav io round-trips 16-bit audio and resample shifts the rate") {
  const AudioClip clip = sine(440.0, 22050.0, 0.1);
  const auto path = temp_path("tone.wav");
  write_wav(path, clip);
  const AudioClip back = read_wav(path);
  CHECK(back.sample_rate == 22050.0);
  CHECK(back.samples.size() == clip.samples.size());
  for (std::size_t i = 0; i < clip.samples.size(); ++i)
    CHECK(back.samples[i] == doctest::Approx(clip.samples[i]).epsilon(1e-3));
  std::filesystem::remove(path);

  const AudioClip up = resample(clip, 44100.0);
  CHECK(up.sample_rate == 44100.0);
  CHECK(up.samples.size() == clip.samples.size() * 2);
  // the tone survives resampling: spectral peak still at 440 Hz
  SpecConfig cfg;
  cfg.spec_type = SpecType::S;
  cfg.sample_rate = 44100.0;
  cfg.frame_size = 2048;
  cfg.hop_size = 2048;
  const Matrix mag = stft_magnitude(up, cfg);
  std::size_t argmax = 0;
  for (std::size_t k = 1; k < mag.cols; ++k)
    if (mag(0, k) > mag(0, argmax)) argmax = k;
  CHECK(argmax == static_cast<std::size_t>(std::lround(440.0 * 2048.0 / 44100.0)));
}

TEST_CASE("config json round-trip and hash stability") {
  SpecConfig cfg;
  cfg.spec_type = SpecType::CQT;
  cfg.sample_rate = 44100.0;
  cfg.bands_per_octave = 36;
  const SpecConfig back = spec_config_from_json_string(to_json_string(cfg));
  CHECK(back == cfg);
  CHECK(config_hash(back) == config_hash(cfg));
  SpecConfig other = cfg;
  other.bands_per_octave = 24;
  CHECK(config_hash(other) != config_hash(cfg));
}
