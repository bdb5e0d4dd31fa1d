#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pianolab/audio.hpp"
#include "pianolab/dsp.hpp"
#include "pianolab/matrix.hpp"
#include "pianolab/tensor.hpp"

namespace pianolab::data {

struct NoteEvent {
  int pitch = 60;       // MIDI number, 21..108
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds, > onset
};

struct PianoRoll {
  Matrix frames;  // T x 88, {0,1}; column j is MIDI pitch j+21
  double frame_rate = 100.0;
};

/// Cell (t, j) is 1 iff the frame-center time t/frame_rate falls inside
/// [onset, offset) of a note with pitch j+21.
PianoRoll notes_to_pianoroll(const std::vector<NoteEvent>& notes, double frame_rate,
                             std::size_t n_frames);

/// Same activation rule at explicit frame times (spectrogram alignment).
Matrix notes_to_roll_at_times(const std::vector<NoteEvent>& notes,
                              const std::vector<double>& frame_times);

/// TSV note list: onset_sec <tab> offset_sec <tab> midi_pitch, optional
/// header line.
std::vector<NoteEvent> read_notes_tsv(const std::filesystem::path& path);
void write_notes_tsv(const std::filesystem::path& path, const std::vector<NoteEvent>& notes);

/// Standard MIDI file (format 0/1), note on/off pairs with tempo-map
/// tick-to-seconds conversion.
std::vector<NoteEvent> read_notes_midi(const std::filesystem::path& path);

// ---------------------------------------------------------------- splits

enum class SplitKind { configuration_I, configuration_II, custom };

std::string to_string(SplitKind k);
SplitKind split_kind_from_string(const std::string& s);

struct TrackInfo {
  std::string id;
  std::string instrument;
  bool real_piano = false;
};

struct Fold {
  std::vector<std::string> train, valid, test;
};

struct SplitConfig {
  SplitKind name = SplitKind::custom;
  std::vector<TrackInfo> tracks;
  std::vector<Fold> folds;
};

/// Expected per-fold sizes: configuration I = 173-43-54,
/// configuration II = 180-30-60 with a real-piano-only test set.
Fold load_split(const SplitConfig& cfg, std::size_t fold);

SplitConfig read_split_file(const std::filesystem::path& path);
void write_split_file(const std::filesystem::path& path, const SplitConfig& cfg);

/// Deterministic seeded folds over a MAPS-shaped catalog (270 tracks, 9
/// instrument groups, 2 of them real pianos). The published fold members
/// are not redistributable; these satisfy the same size/instrument
/// constraints.
SplitConfig make_maps_style_split(SplitKind kind, std::uint64_t seed, std::size_t n_folds = 4);

// ------------------------------------------------------------- synthesis

struct SynthSpec {
  int n_tracks = 10;
  double duration = 3.0;  // seconds per track
  int min_polyphony = 1, max_polyphony = 3;
  int min_pitch = 40, max_pitch = 80;
  double min_tempo = 60.0, max_tempo = 120.0;  // beats per minute
  int partials = 8;
  double decay = 3.0;        // base amplitude decay (1/s); partials decay faster
  double noise_floor = 0.0;  // additive white-noise amplitude
  double sample_rate = 22050.0;
  std::uint64_t seed = 1;
};

struct SynthTrack {
  AudioClip clip;
  std::vector<NoteEvent> notes;
  std::string id;
};

/// Additive piano-like tones (exponentially decaying harmonics, random
/// velocities) with exact annotations. Deterministic per seed.
std::vector<SynthTrack> synthesize(const SynthSpec& spec);

// --------------------------------------------------------------- batches

/// A track ingested for training: spectrogram frames aligned 1:1 with the
/// piano-roll rows.
struct AlignedTrack {
  Matrix x;  // T x B spectrogram frames
  Matrix y;  // T x 88 roll
  std::string id;
};

AlignedTrack ingest(const AudioClip& clip, const std::vector<NoteEvent>& notes,
                    const dsp::SpecConfig& cfg, const std::string& id = "");

struct Batch {
  nn::Tensor x;  // (M, B) for context 1, (M, 1, context, B) otherwise
  nn::Tensor y;  // (M, 88)
};

/// One epoch over every frame of every track exactly once, shuffled.
/// Context windows replicate edge frames within each track.
class BatchIterator {
 public:
  BatchIterator(const std::vector<AlignedTrack>& tracks, std::size_t context_frames,
                std::size_t batch_size, std::uint64_t seed);
  BatchIterator(const AlignedTrack& track, std::size_t context_frames, std::size_t batch_size,
                std::uint64_t seed);

  bool next(Batch& out);
  std::size_t n_frames() const { return order_.size(); }

 private:
  void init(std::uint64_t seed);

  std::vector<const AlignedTrack*> tracks_;
  std::size_t context_;
  std::size_t batch_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> order_;  // (track, frame)
  std::size_t pos_ = 0;
};

/// Single-track convenience wrapper.
BatchIterator make_batches(const AlignedTrack& track, std::size_t context_frames,
                           std::size_t batch_size, std::uint64_t seed);

/// All frames of all tracks as (inputs, targets) without shuffling; used
/// for whole-set evaluation and batch-norm finalization.
std::vector<Batch> full_set_chunks(const std::vector<AlignedTrack>& tracks,
                                   std::size_t context_frames, std::size_t chunk_size);

}  // namespace pianolab::data
