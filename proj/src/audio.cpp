#include "pianolab/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>

namespace pianolab::dsp {

namespace {

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<char*>(b), 4);
}

void write_u16(std::ostream& out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  out.write(reinterpret_cast<char*>(b), 2);
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open audio file: " + path.string());

  char tag[4];
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "RIFF", 4) != 0) throw ParseError("not a RIFF file: " + path.string());
  read_u32(in);  // riff size
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "WAVE", 4) != 0) throw ParseError("not a WAVE file: " + path.string());

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::vector<char> data;
  bool got_fmt = false, got_data = false;

  while (in && !(got_fmt && got_data)) {
    in.read(tag, 4);
    if (!in) break;
    const std::uint32_t chunk_size = read_u32(in);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      format = read_u16(in);
      channels = read_u16(in);
      rate = read_u32(in);
      read_u32(in);  // byte rate
      read_u16(in);  // block align
      bits = read_u16(in);
      if (chunk_size > 16) in.ignore(chunk_size - 16);
      got_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data.resize(chunk_size);
      in.read(data.data(), chunk_size);
      got_data = true;
    } else {
      in.ignore(chunk_size + (chunk_size & 1));
    }
  }
  if (!got_fmt || !got_data) throw ParseError("missing fmt/data chunk: " + path.string());
  if (channels != 1) throw ConfigError("expected mono audio, got " + std::to_string(channels) +
                                       " channels: " + path.string());
  if (rate == 0) throw ParseError("zero sample rate: " + path.string());

  AudioClip clip;
  clip.sample_rate = static_cast<double>(rate);

  if (format == 1 && bits == 16) {
    const std::size_t n = data.size() / 2;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::int16_t s = static_cast<std::int16_t>(
          static_cast<unsigned char>(data[2 * i]) |
          (static_cast<unsigned char>(data[2 * i + 1]) << 8));
      clip.samples[i] = static_cast<double>(s) / 32768.0;
    }
  } else if (format == 1 && bits == 24) {
    const std::size_t n = data.size() / 3;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::int32_t s = static_cast<unsigned char>(data[3 * i]) |
                       (static_cast<unsigned char>(data[3 * i + 1]) << 8) |
                       (static_cast<unsigned char>(data[3 * i + 2]) << 16);
      if (s & 0x800000) s |= ~0xffffff;  // sign extend
      clip.samples[i] = static_cast<double>(s) / 8388608.0;
    }
  } else if (format == 3 && bits == 32) {
    const std::size_t n = data.size() / 4;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, data.data() + 4 * i, 4);
      if (!std::isfinite(f)) throw ValueError("non-finite sample in " + path.string());
      clip.samples[i] = static_cast<double>(f);
    }
  } else {
    throw ConfigError("unsupported WAV encoding (format=" + std::to_string(format) +
                      ", bits=" + std::to_string(bits) + "): " + path.string());
  }
  return clip;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write audio file: " + path.string());

  const std::uint32_t n = static_cast<std::uint32_t>(clip.samples.size());
  const std::uint32_t rate = static_cast<std::uint32_t>(std::lround(clip.sample_rate));
  const std::uint32_t data_bytes = n * 2;

  out.write("RIFF", 4);
  write_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, 1);  // PCM
  write_u16(out, 1);  // mono
  write_u32(out, rate);
  write_u32(out, rate * 2);
  write_u16(out, 2);
  write_u16(out, 16);
  out.write("data", 4);
  write_u32(out, data_bytes);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::clamp(clip.samples[i], -1.0, 1.0);
    const std::int16_t s = static_cast<std::int16_t>(std::lround(x * 32767.0));
    write_u16(out, static_cast<std::uint16_t>(s));
  }
  if (!out) throw IoError("short write: " + path.string());
}

AudioClip resample(const AudioClip& clip, double target_rate) {
  if (target_rate <= 0) throw ConfigError("resample: target rate must be positive");
  if (clip.sample_rate <= 0) throw ConfigError("resample: source rate must be positive");
  if (target_rate == clip.sample_rate) return clip;

  const double ratio = target_rate / clip.sample_rate;
  const std::size_t n_out =
      static_cast<std::size_t>(std::floor(static_cast<double>(clip.samples.size()) * ratio));
  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);

  // Windowed sinc, cutoff at the lower of the two Nyquists.
  const int half_taps = 16;
  const double cutoff = std::min(1.0, ratio);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double t = static_cast<double>(i) / ratio;  // position in source samples
    const long center = std::lround(std::floor(t));
    double acc = 0.0;
    for (long k = center - half_taps + 1; k <= center + half_taps; ++k) {
      if (k < 0 || k >= static_cast<long>(clip.samples.size())) continue;
      const double d = t - static_cast<double>(k);
      double w;
      if (std::abs(d) < 1e-12) {
        w = cutoff;
      } else {
        const double x = std::numbers::pi * d;
        w = std::sin(cutoff * x) / x;
      }
      // Hann window over the tap span
      const double u = d / static_cast<double>(half_taps);
      if (std::abs(u) >= 1.0) continue;
      w *= 0.5 * (1.0 + std::cos(std::numbers::pi * u));
      acc += clip.samples[static_cast<std::size_t>(k)] * w;
    }
    out.samples[i] = acc;
  }
  return out;
}

}  // namespace pianolab::dsp
