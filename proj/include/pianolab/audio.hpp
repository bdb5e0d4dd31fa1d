#pragma once

#include <filesystem>
#include <vector>

#include "pianolab/errors.hpp"

namespace pianolab::dsp {

/// Mono audio, amplitudes in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  double sample_rate = 44100.0;
};

/// Reads a mono WAV file. Accepts 16/24-bit integer PCM and 32-bit float.
AudioClip read_wav(const std::filesystem::path& path);

/// Writes 16-bit integer PCM. Samples are clamped to [-1, 1].
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

/// Sample-rate conversion with a windowed-sinc kernel. Never applied
/// implicitly anywhere in the pipeline.
AudioClip resample(const AudioClip& clip, double target_rate);

}  // namespace pianolab::dsp
