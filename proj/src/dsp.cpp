#include "pianolab/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "pianolab/fft.hpp"
#include "pianolab/io.hpp"

namespace pianolab::dsp {

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

}  // namespace

std::string to_string(SpecType t) {
  switch (t) {
    case SpecType::S: return "S";
    case SpecType::LS: return "LS";
    case SpecType::LM: return "LM";
    case SpecType::CQT: return "CQT";
  }
  return "?";
}

SpecType spec_type_from_string(const std::string& s) {
  if (s == "S") return SpecType::S;
  if (s == "LS") return SpecType::LS;
  if (s == "LM") return SpecType::LM;
  if (s == "CQT") return SpecType::CQT;
  throw ConfigError("unknown spectrogram type: " + s);
}

std::size_t SpecConfig::resolved_frame_size() const {
  if (frame_size != 0) return frame_size;
  return sample_rate > 30000.0 ? 4096u : 2048u;
}

std::size_t SpecConfig::resolved_hop_size() const {
  if (hop_size != 0) return hop_size;
  return static_cast<std::size_t>(std::lround(0.010 * sample_rate));
}

std::size_t SpecConfig::padded_size() const {
  return resolved_frame_size() * static_cast<std::size_t>(1 + zero_pad);
}

void SpecConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  if (zero_pad < 0 || zero_pad > 2) throw ConfigError("zero_pad must be 0, 1 or 2");
  if (resolved_hop_size() == 0) throw ConfigError("hop_size must be positive");
  if (resolved_hop_size() > resolved_frame_size())
    throw ConfigError("hop_size must not exceed frame_size");
  if (bands_per_octave < 1) throw ConfigError("bands_per_octave must be >= 1");
  if (!(fmin > 0) || !(fmin < fmax))
    throw ConfigError("need 0 < fmin < fmax");
  if (fmax > sample_rate / 2.0 + 1e-9)
    throw ConfigError("fmax above Nyquist (" + std::to_string(sample_rate / 2.0) + " Hz)");
}

std::string to_json_string(const SpecConfig& cfg) {
  nlohmann::json j;
  j["spec_type"] = to_string(cfg.spec_type);
  j["sample_rate"] = cfg.sample_rate;
  j["frame_size"] = cfg.frame_size;
  j["hop_size"] = cfg.hop_size;
  j["zero_pad"] = cfg.zero_pad;
  j["circular_shift"] = cfg.circular_shift;
  j["bands_per_octave"] = cfg.bands_per_octave;
  j["area_normed_filters"] = cfg.area_normed_filters;
  j["fmin"] = cfg.fmin;
  j["fmax"] = cfg.fmax;
  return j.dump();
}

SpecConfig spec_config_from_json_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid config JSON: ") + e.what());
  }
  SpecConfig cfg;
  try {
    if (j.contains("spec_type")) cfg.spec_type = spec_type_from_string(j["spec_type"]);
    if (j.contains("sample_rate")) cfg.sample_rate = j["sample_rate"];
    if (j.contains("frame_size")) cfg.frame_size = j["frame_size"];
    if (j.contains("hop_size")) cfg.hop_size = j["hop_size"];
    if (j.contains("zero_pad")) cfg.zero_pad = j["zero_pad"];
    if (j.contains("circular_shift")) cfg.circular_shift = j["circular_shift"];
    if (j.contains("bands_per_octave")) cfg.bands_per_octave = j["bands_per_octave"];
    if (j.contains("area_normed_filters")) cfg.area_normed_filters = j["area_normed_filters"];
    if (j.contains("fmin")) cfg.fmin = j["fmin"];
    if (j.contains("fmax")) cfg.fmax = j["fmax"];
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad config field: ") + e.what());
  }
  return cfg;
}

SpecConfig load_spec_config(const std::filesystem::path& path) {
  return spec_config_from_json_string(io::read_file(path));
}

std::string config_hash(const SpecConfig& cfg) { return io::hash_hex(to_json_string(cfg)); }

Matrix stft_magnitude(const AudioClip& clip, const SpecConfig& cfg) {
  cfg.validate();
  const std::size_t frame = cfg.resolved_frame_size();
  const std::size_t hop = cfg.resolved_hop_size();
  if (clip.samples.size() < frame)
    throw ConfigError("audio shorter than one frame (" + std::to_string(clip.samples.size()) +
                      " < " + std::to_string(frame) + " samples)");

  const std::size_t padded = cfg.padded_size();
  const std::size_t n_bins = padded / 2 + 1;
  const std::size_t n_frames = 1 + (clip.samples.size() - frame) / hop;
  const std::vector<double> window = hann_window(frame);

  Matrix mag(n_frames, n_bins);
  std::vector<double> buf(padded);
  for (std::size_t t = 0; t < n_frames; ++t) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const double* x = clip.samples.data() + t * hop;
    for (std::size_t i = 0; i < frame; ++i) buf[i] = x[i] * window[i];
    if (cfg.circular_shift)
      std::rotate(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(frame / 2), buf.end());
    const std::vector<double> bins = real_fft_magnitude(buf);
    std::copy(bins.begin(), bins.end(), mag.row(t));
  }
  return mag;
}

Filterbank build_log_filterbank(const SpecConfig& cfg, std::size_t n_fft_bins) {
  cfg.validate();
  if (n_fft_bins < 3) throw ConfigError("filterbank needs at least 3 DFT bins");
  const std::size_t n_fft = 2 * (n_fft_bins - 1);
  const double df = cfg.sample_rate / static_cast<double>(n_fft);
  const double nb = static_cast<double>(cfg.bands_per_octave);

  // Log-spaced candidates covering [fmin, fmax], plus one extra candidate
  // on each side to serve as the base point of the edge triangles.
  std::vector<long> bins;
  const double step = std::pow(2.0, 1.0 / nb);
  double f = cfg.fmin / step;
  while (true) {
    const long bin = std::clamp<long>(std::lround(f / df), 0, static_cast<long>(n_fft_bins) - 1);
    if (bins.empty() || bin != bins.back()) bins.push_back(bin);
    if (f > cfg.fmax * (1.0 + 1e-12)) break;
    f *= step;
  }
  if (bins.size() < 3)
    throw ConfigError("filterbank degenerate: fewer than one band between fmin and fmax");

  const std::size_t n_bands = bins.size() - 2;
  Filterbank fb;
  fb.matrix = Matrix(n_bands, n_fft_bins);
  fb.center_freqs.resize(n_bands);
  for (std::size_t b = 0; b < n_bands; ++b) {
    const long left = bins[b], center = bins[b + 1], right = bins[b + 2];
    double* row = fb.matrix.row(b);
    for (long k = left + 1; k <= center; ++k)
      row[k] = static_cast<double>(k - left) / static_cast<double>(center - left);
    for (long k = center + 1; k < right; ++k)
      row[k] = static_cast<double>(right - k) / static_cast<double>(right - center);
    if (cfg.area_normed_filters) {
      double sum = 0.0;
      for (std::size_t k = 0; k < n_fft_bins; ++k) sum += row[k];
      for (std::size_t k = 0; k < n_fft_bins; ++k) row[k] /= sum;
    }
    fb.center_freqs[b] = static_cast<double>(center) * df;
  }
  return fb;
}

Matrix apply_filterbank(const Matrix& mag, const Filterbank& fb) {
  if (mag.cols != fb.matrix.cols)
    throw ShapeError("apply_filterbank: " + std::to_string(mag.cols) + " DFT bins vs filterbank " +
                     std::to_string(fb.matrix.cols));
  Matrix out(mag.rows, fb.matrix.rows);
  for (std::size_t t = 0; t < mag.rows; ++t) {
    const double* m = mag.row(t);
    for (std::size_t b = 0; b < fb.matrix.rows; ++b) {
      const double* w = fb.matrix.row(b);
      double acc = 0.0;
      for (std::size_t k = 0; k < mag.cols; ++k) acc += m[k] * w[k];
      out(t, b) = acc;
    }
  }
  return out;
}

Matrix log_magnitude(const Matrix& x) {
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    if (x.v[i] < 0) throw ValueError("log_magnitude: negative input");
    out.v[i] = std::log1p(x.v[i]);
  }
  return out;
}

Spectrogram cqt(const AudioClip& clip, const SpecConfig& cfg) {
  cfg.validate();
  const std::size_t frame = cfg.resolved_frame_size();
  const std::size_t hop = cfg.resolved_hop_size();
  if (clip.samples.size() < frame)
    throw ConfigError("audio shorter than one frame (" + std::to_string(clip.samples.size()) +
                      " < " + std::to_string(frame) + " samples)");

  const double nb = static_cast<double>(cfg.bands_per_octave);
  const double q = 1.0 / (std::pow(2.0, 1.0 / nb) - 1.0);
  const double min_feasible_fmin =
      q * cfg.sample_rate / static_cast<double>(frame);
  if (std::ceil(q * cfg.sample_rate / cfg.fmin) > static_cast<double>(frame))
    throw ConfigError("cqt: fmin " + std::to_string(cfg.fmin) +
                      " Hz needs a window longer than the frame; minimum feasible fmin is " +
                      std::to_string(min_feasible_fmin) + " Hz");

  std::vector<double> freqs;
  for (double fk = cfg.fmin; fk <= cfg.fmax * (1.0 + 1e-12); fk *= std::pow(2.0, 1.0 / nb))
    freqs.push_back(fk);

  // Per-band kernels are frame-independent; build them once.
  std::vector<std::vector<cplx>> kernels(freqs.size());
  for (std::size_t b = 0; b < freqs.size(); ++b) {
    const std::size_t nk = std::min<std::size_t>(
        {static_cast<std::size_t>(std::ceil(q * cfg.sample_rate / freqs[b])), frame,
         clip.samples.size()});
    const std::vector<double> w = hann_window(nk);
    double wsum = 0.0;
    for (double v : w) wsum += v;
    std::vector<cplx> kern(nk);
    for (std::size_t n = 0; n < nk; ++n) {
      const double ph = -2.0 * kPi * freqs[b] *
                        (static_cast<double>(n) - static_cast<double>(nk) / 2.0) /
                        cfg.sample_rate;
      kern[n] = w[n] / wsum * cplx(std::cos(ph), std::sin(ph));
    }
    kernels[b] = std::move(kern);
  }

  const std::size_t n_frames = 1 + (clip.samples.size() - frame) / hop;
  Spectrogram out;
  out.config = cfg;
  out.frames = Matrix(n_frames, freqs.size());
  out.frame_times.resize(n_frames);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const long center = static_cast<long>(t * hop + frame / 2);
    out.frame_times[t] = static_cast<double>(center) / cfg.sample_rate;
    for (std::size_t b = 0; b < freqs.size(); ++b) {
      const auto& kern = kernels[b];
      const long start = center - static_cast<long>(kern.size()) / 2;
      cplx acc(0.0, 0.0);
      for (std::size_t n = 0; n < kern.size(); ++n) {
        const long idx = start + static_cast<long>(n);
        if (idx < 0 || idx >= static_cast<long>(clip.samples.size())) continue;
        acc += clip.samples[static_cast<std::size_t>(idx)] * kern[n];
      }
      out.frames(t, b) = std::abs(acc);
    }
  }

  const double mx = *std::max_element(out.frames.v.begin(), out.frames.v.end());
  if (mx > 0)
    for (double& v : out.frames.v) v /= mx;
  return out;
}

Spectrogram compute_representation(const AudioClip& clip, const SpecConfig& cfg) {
  cfg.validate();
  if (cfg.spec_type == SpecType::CQT) {
    Spectrogram s = cqt(clip, cfg);
    return s;  // already scaled to [0, 1]
  }

  Spectrogram out;
  out.config = cfg;
  Matrix m = stft_magnitude(clip, cfg);
  if (cfg.spec_type == SpecType::LS || cfg.spec_type == SpecType::LM) {
    const Filterbank fb = build_log_filterbank(cfg, m.cols);
    m = apply_filterbank(m, fb);
    if (cfg.spec_type == SpecType::LM) m = log_magnitude(m);
  }
  const double mx = m.empty() ? 0.0 : *std::max_element(m.v.begin(), m.v.end());
  if (mx > 0)
    for (double& v : m.v) v /= mx;
  out.frames = std::move(m);

  const std::size_t frame = cfg.resolved_frame_size();
  const std::size_t hop = cfg.resolved_hop_size();
  out.frame_times.resize(out.frames.rows);
  for (std::size_t t = 0; t < out.frames.rows; ++t)
    out.frame_times[t] = static_cast<double>(t * hop + frame / 2) / cfg.sample_rate;
  return out;
}

std::vector<SpecConfig> representation_grid() {
  // Applicability per type: CQT varies {sr, nb}; S varies {sr, cs};
  // LS/LM vary {sr, zp, cs, nb, norm}. Everything else sits at its
  // canonical default so configurations compare equal by value.
  const double srs[] = {22050.0, 44100.0};
  const int zps[] = {0, 1, 2};
  const bool flags[] = {false, true};
  const int nbs[] = {12, 24, 36, 48};

  std::vector<SpecConfig> grid;
  for (double sr : srs)
    for (int nb : nbs) {
      SpecConfig c;
      c.spec_type = SpecType::CQT;
      c.sample_rate = sr;
      c.bands_per_octave = nb;
      c.fmax = std::min(kCalibratedFmax, sr / 2.0);
      grid.push_back(c);
    }
  for (double sr : srs)
    for (bool cs : flags) {
      SpecConfig c;
      c.spec_type = SpecType::S;
      c.sample_rate = sr;
      c.circular_shift = cs;
      c.fmax = std::min(kCalibratedFmax, sr / 2.0);
      grid.push_back(c);
    }
  for (SpecType type : {SpecType::LS, SpecType::LM})
    for (double sr : srs)
      for (int zp : zps)
        for (bool cs : flags)
          for (int nb : nbs)
            for (bool norm : flags) {
              SpecConfig c;
              c.spec_type = type;
              c.sample_rate = sr;
              c.zero_pad = zp;
              c.circular_shift = cs;
              c.bands_per_octave = nb;
              c.area_normed_filters = norm;
              c.fmax = std::min(kCalibratedFmax, sr / 2.0);
              grid.push_back(c);
            }
  return grid;
}

namespace {

void append_doubles(std::string& s, const double* p, std::size_t n) {
  const std::size_t off = s.size();
  s.resize(off + n * sizeof(double));
  std::memcpy(s.data() + off, p, n * sizeof(double));
}

}  // namespace

void save_spectrogram(const std::filesystem::path& path, const Spectrogram& spec) {
  nlohmann::json header;
  header["rows"] = spec.frames.rows;
  header["cols"] = spec.frames.cols;
  header["config"] = nlohmann::json::parse(to_json_string(spec.config));
  header["config_hash"] = config_hash(spec.config);
  const std::string h = header.dump();

  std::string blob;
  blob.reserve(16 + h.size() + (spec.frames.size() + spec.frame_times.size()) * sizeof(double));
  blob += "PLSPEC01";
  const std::uint32_t hlen = static_cast<std::uint32_t>(h.size());
  blob.append(reinterpret_cast<const char*>(&hlen), 4);
  blob += h;
  append_doubles(blob, spec.frames.v.data(), spec.frames.size());
  append_doubles(blob, spec.frame_times.data(), spec.frame_times.size());
  io::atomic_write_file(path, blob);
}

Spectrogram load_spectrogram(const std::filesystem::path& path) {
  const std::string blob = io::read_file(path);
  if (blob.size() < 12 || blob.compare(0, 8, "PLSPEC01") != 0)
    throw ParseError("not a spectrogram container: " + path.string());
  std::uint32_t hlen = 0;
  std::memcpy(&hlen, blob.data() + 8, 4);
  if (blob.size() < 12 + hlen) throw ParseError("truncated header: " + path.string());
  nlohmann::json header = nlohmann::json::parse(blob.substr(12, hlen));

  Spectrogram spec;
  spec.frames = Matrix(header["rows"], header["cols"]);
  spec.config = spec_config_from_json_string(header["config"].dump());
  const std::size_t need = 12 + hlen + (spec.frames.size() + spec.frames.rows) * sizeof(double);
  if (blob.size() < need) throw ParseError("truncated payload: " + path.string());
  std::memcpy(spec.frames.v.data(), blob.data() + 12 + hlen, spec.frames.size() * sizeof(double));
  spec.frame_times.resize(spec.frames.rows);
  std::memcpy(spec.frame_times.data(), blob.data() + 12 + hlen + spec.frames.size() * sizeof(double),
              spec.frames.rows * sizeof(double));
  return spec;
}

void save_spectrogram_csv(const std::filesystem::path& path, const Spectrogram& spec) {
  std::ostringstream out;
  out << "# config_hash=" << config_hash(spec.config) << "\n";
  out << "time";
  for (std::size_t b = 0; b < spec.frames.cols; ++b) out << ",band_" << b;
  out << "\n";
  out.precision(10);
  for (std::size_t t = 0; t < spec.frames.rows; ++t) {
    out << spec.frame_times[t];
    for (std::size_t b = 0; b < spec.frames.cols; ++b) out << ',' << spec.frames(t, b);
    out << "\n";
  }
  io::atomic_write_file(path, out.str());
}

}  // namespace pianolab::dsp
