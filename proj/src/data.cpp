#include "pianolab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pianolab/io.hpp"

namespace pianolab::data {

namespace {

constexpr int kMinPitch = 21;
constexpr int kMaxPitch = 108;

void check_pitch(int pitch) {
  if (pitch < kMinPitch || pitch > kMaxPitch)
    throw ValueError("pitch " + std::to_string(pitch) + " outside the piano range 21..108");
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

}  // namespace

Matrix notes_to_roll_at_times(const std::vector<NoteEvent>& notes,
                              const std::vector<double>& frame_times) {
  Matrix roll(frame_times.size(), 88);
  for (const NoteEvent& n : notes) {
    check_pitch(n.pitch);
    if (!(n.onset < n.offset))
      throw ValueError("note onset must precede offset (pitch " + std::to_string(n.pitch) + ")");
    const std::size_t col = static_cast<std::size_t>(n.pitch - kMinPitch);
    // frame_times are non-decreasing; binary search the active span
    const auto lo = std::lower_bound(frame_times.begin(), frame_times.end(), n.onset);
    for (auto it = lo; it != frame_times.end() && *it < n.offset; ++it)
      roll(static_cast<std::size_t>(it - frame_times.begin()), col) = 1.0;
  }
  return roll;
}

PianoRoll notes_to_pianoroll(const std::vector<NoteEvent>& notes, double frame_rate,
                             std::size_t n_frames) {
  if (!(frame_rate > 0)) throw ConfigError("frame_rate must be positive");
  std::vector<double> times(n_frames);
  for (std::size_t t = 0; t < n_frames; ++t) times[t] = static_cast<double>(t) / frame_rate;
  PianoRoll roll;
  roll.frame_rate = frame_rate;
  roll.frames = notes_to_roll_at_times(notes, times);
  return roll;
}

std::vector<NoteEvent> read_notes_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open note list: " + path.string());
  std::vector<NoteEvent> notes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    NoteEvent n;
    if (!(ss >> n.onset >> n.offset >> n.pitch)) {
      if (lineno == 1) continue;  // header line
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad note line");
    }
    notes.push_back(n);
  }
  return notes;
}

void write_notes_tsv(const std::filesystem::path& path, const std::vector<NoteEvent>& notes) {
  std::ostringstream out;
  out << "onset_sec\toffset_sec\tmidi_pitch\n";
  out.precision(9);
  for (const NoteEvent& n : notes) out << n.onset << '\t' << n.offset << '\t' << n.pitch << "\n";
  io::atomic_write_file(path, out.str());
}

namespace {

struct MidiReader {
  const unsigned char* p;
  const unsigned char* end;
  std::uint32_t u32() {
    if (end - p < 4) throw ParseError("midi: truncated");
    std::uint32_t v = (p[0] << 24) | (p[1] << 16) | (p[2] << 8) | p[3];
    p += 4;
    return v;
  }
  std::uint16_t u16() {
    if (end - p < 2) throw ParseError("midi: truncated");
    std::uint16_t v = static_cast<std::uint16_t>((p[0] << 8) | p[1]);
    p += 2;
    return v;
  }
  std::uint8_t u8() {
    if (p >= end) throw ParseError("midi: truncated");
    return *p++;
  }
  std::uint32_t varlen() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7f);
      if (!(b & 0x80)) return v;
    }
    throw ParseError("midi: bad variable-length quantity");
  }
};

}  // namespace

std::vector<NoteEvent> read_notes_midi(const std::filesystem::path& path) {
  const std::string blob = io::read_file(path);
  const unsigned char* base = reinterpret_cast<const unsigned char*>(blob.data());
  MidiReader r{base, base + blob.size()};

  if (blob.size() < 14 || std::memcmp(blob.data(), "MThd", 4) != 0)
    throw ParseError("not a MIDI file: " + path.string());
  r.p += 4;
  const std::uint32_t hlen = r.u32();
  const std::uint16_t format = r.u16();
  const std::uint16_t n_tracks = r.u16();
  const std::uint16_t division = r.u16();
  if (format > 1) throw ParseError("midi: only formats 0 and 1 are supported");
  if (division & 0x8000) throw ParseError("midi: SMPTE time division not supported");
  r.p = base + 8 + hlen;

  // First pass collects (tick, event) across tracks; tempo map applies
  // globally in format 0/1.
  struct RawEvent {
    std::uint64_t tick;
    bool on;
    int pitch;
  };
  std::vector<RawEvent> events;
  std::vector<std::pair<std::uint64_t, double>> tempo;  // tick -> usec per quarter
  tempo.emplace_back(0, 500000.0);

  for (std::uint16_t tr = 0; tr < n_tracks; ++tr) {
    if (r.end - r.p < 8 || std::memcmp(r.p, "MTrk", 4) != 0) throw ParseError("midi: bad track");
    r.p += 4;
    const std::uint32_t tlen = r.u32();
    const unsigned char* track_end = r.p + tlen;
    std::uint64_t tick = 0;
    std::uint8_t running = 0;
    while (r.p < track_end) {
      tick += r.varlen();
      std::uint8_t status = *r.p;
      if (status & 0x80) {
        ++r.p;
        if (status < 0xf0) running = status;
      } else {
        status = running;
        if (!(status & 0x80)) throw ParseError("midi: dangling running status");
      }
      if (status == 0xff) {
        const std::uint8_t type = r.u8();
        const std::uint32_t len = r.varlen();
        if (type == 0x51 && len == 3) {
          const double usec = (r.p[0] << 16) | (r.p[1] << 8) | r.p[2];
          tempo.emplace_back(tick, usec);
        }
        r.p += len;
      } else if (status == 0xf0 || status == 0xf7) {
        const std::uint32_t len = r.varlen();
        r.p += len;
      } else {
        const std::uint8_t hi = status & 0xf0;
        const std::uint8_t d1 = r.u8();
        std::uint8_t d2 = 0;
        if (hi != 0xc0 && hi != 0xd0) d2 = r.u8();
        if (hi == 0x90)
          events.push_back({tick, d2 > 0, d1});
        else if (hi == 0x80)
          events.push_back({tick, false, d1});
      }
    }
    r.p = track_end;
  }

  std::sort(tempo.begin(), tempo.end());
  std::stable_sort(events.begin(), events.end(),
                   [](const RawEvent& a, const RawEvent& b) { return a.tick < b.tick; });

  // Piecewise-linear tick -> seconds under the tempo map.
  const double ppqn = static_cast<double>(division);
  auto tick_to_sec = [&](std::uint64_t tick) {
    double sec = 0.0;
    for (std::size_t i = 0; i < tempo.size(); ++i) {
      const std::uint64_t seg_start = tempo[i].first;
      const std::uint64_t seg_end = i + 1 < tempo.size() ? tempo[i + 1].first : tick;
      if (tick <= seg_start) break;
      const std::uint64_t until = std::min(tick, seg_end);
      sec += static_cast<double>(until - seg_start) * tempo[i].second / (ppqn * 1e6);
      if (until == tick) break;
    }
    return sec;
  };

  std::vector<NoteEvent> notes;
  std::vector<std::uint64_t> pending(128, 0);
  std::vector<bool> active(128, false);
  for (const RawEvent& e : events) {
    if (e.pitch < 0 || e.pitch > 127) continue;
    if (e.on) {
      if (active[static_cast<std::size_t>(e.pitch)]) {
        // retrigger closes the previous instance
        notes.push_back({e.pitch, tick_to_sec(pending[static_cast<std::size_t>(e.pitch)]),
                         tick_to_sec(e.tick)});
      }
      pending[static_cast<std::size_t>(e.pitch)] = e.tick;
      active[static_cast<std::size_t>(e.pitch)] = true;
    } else if (active[static_cast<std::size_t>(e.pitch)]) {
      const double on = tick_to_sec(pending[static_cast<std::size_t>(e.pitch)]);
      const double off = tick_to_sec(e.tick);
      if (off > on) notes.push_back({e.pitch, on, off});
      active[static_cast<std::size_t>(e.pitch)] = false;
    }
  }
  std::stable_sort(notes.begin(), notes.end(),
                   [](const NoteEvent& a, const NoteEvent& b) { return a.onset < b.onset; });
  return notes;
}

// ------------------------------------------------------------------ splits

std::string to_string(SplitKind k) {
  switch (k) {
    case SplitKind::configuration_I: return "configuration_I";
    case SplitKind::configuration_II: return "configuration_II";
    case SplitKind::custom: return "custom";
  }
  return "?";
}

SplitKind split_kind_from_string(const std::string& s) {
  if (s == "configuration_I") return SplitKind::configuration_I;
  if (s == "configuration_II") return SplitKind::configuration_II;
  if (s == "custom") return SplitKind::custom;
  throw ConfigError("unknown split kind: " + s);
}

namespace {

void validate_fold(const SplitConfig& cfg, const Fold& fold) {
  std::set<std::string> seen;
  for (const auto* list : {&fold.train, &fold.valid, &fold.test})
    for (const std::string& id : *list)
      if (!seen.insert(id).second)
        throw ValueError("split: track '" + id + "' appears in more than one set");

  if (cfg.name == SplitKind::configuration_I) {
    if (fold.train.size() != 173 || fold.valid.size() != 43 || fold.test.size() != 54)
      throw ValueError("configuration_I fold must be sized 173-43-54, got " +
                       std::to_string(fold.train.size()) + "-" + std::to_string(fold.valid.size()) +
                       "-" + std::to_string(fold.test.size()));
  } else if (cfg.name == SplitKind::configuration_II) {
    if (fold.train.size() != 180 || fold.valid.size() != 30 || fold.test.size() != 60)
      throw ValueError("configuration_II fold must be sized 180-30-60, got " +
                       std::to_string(fold.train.size()) + "-" + std::to_string(fold.valid.size()) +
                       "-" + std::to_string(fold.test.size()));
    for (const std::string& id : fold.test) {
      const auto it = std::find_if(cfg.tracks.begin(), cfg.tracks.end(),
                                   [&](const TrackInfo& t) { return t.id == id; });
      if (it == cfg.tracks.end()) throw ValueError("split: unknown track '" + id + "'");
      if (!it->real_piano)
        throw ValueError("configuration_II test set must contain only real-piano recordings ('" +
                         id + "' is not)");
    }
  }
}

}  // namespace

Fold load_split(const SplitConfig& cfg, std::size_t fold) {
  if (fold >= cfg.folds.size())
    throw ConfigError("fold index " + std::to_string(fold) + " out of range (" +
                      std::to_string(cfg.folds.size()) + " folds)");
  validate_fold(cfg, cfg.folds[fold]);
  return cfg.folds[fold];
}

SplitConfig read_split_file(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("split file " + path.string() + ": " + e.what());
  }
  SplitConfig cfg;
  cfg.name = split_kind_from_string(j.at("name"));
  for (const auto& [id, info] : j.at("tracks").items()) {
    TrackInfo t;
    t.id = id;
    t.instrument = info.value("instrument", "");
    t.real_piano = info.value("real_piano", false);
    cfg.tracks.push_back(t);
  }
  std::sort(cfg.tracks.begin(), cfg.tracks.end(),
            [](const TrackInfo& a, const TrackInfo& b) { return a.id < b.id; });
  for (const auto& fj : j.at("folds")) {
    Fold f;
    f.train = fj.at("train").get<std::vector<std::string>>();
    f.valid = fj.at("valid").get<std::vector<std::string>>();
    f.test = fj.at("test").get<std::vector<std::string>>();
    cfg.folds.push_back(std::move(f));
  }
  return cfg;
}

void write_split_file(const std::filesystem::path& path, const SplitConfig& cfg) {
  nlohmann::json j;
  j["name"] = to_string(cfg.name);
  j["tracks"] = nlohmann::json::object();
  for (const TrackInfo& t : cfg.tracks)
    j["tracks"][t.id] = {{"instrument", t.instrument}, {"real_piano", t.real_piano}};
  j["folds"] = nlohmann::json::array();
  for (const Fold& f : cfg.folds)
    j["folds"].push_back({{"train", f.train}, {"valid", f.valid}, {"test", f.test}});
  io::atomic_write_file(path, j.dump(2));
}

SplitConfig make_maps_style_split(SplitKind kind, std::uint64_t seed, std::size_t n_folds) {
  if (kind == SplitKind::custom) throw ConfigError("custom splits are authored, not generated");
  SplitConfig cfg;
  cfg.name = kind;

  // 9 instrument groups of 30 recordings; the last two model the real
  // Disklavier pianos.
  const char* instruments[] = {"SynthA", "SynthB", "SynthC", "SynthD", "SynthE",
                               "SynthF", "SynthG", "RealA",  "RealB"};
  for (int g = 0; g < 9; ++g)
    for (int i = 0; i < 30; ++i) {
      TrackInfo t;
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%s_%02d", instruments[g], i);
      t.id = buf;
      t.instrument = instruments[g];
      t.real_piano = g >= 7;
      cfg.tracks.push_back(t);
    }

  std::mt19937_64 rng(seed);
  for (std::size_t fold = 0; fold < n_folds; ++fold) {
    std::vector<std::string> synth, real;
    for (const TrackInfo& t : cfg.tracks) (t.real_piano ? real : synth).push_back(t.id);
    std::shuffle(synth.begin(), synth.end(), rng);
    std::shuffle(real.begin(), real.end(), rng);

    Fold f;
    if (kind == SplitKind::configuration_I) {
      // 54 test tracks from the full pool, then 43 validation, rest train.
      std::vector<std::string> all = synth;
      all.insert(all.end(), real.begin(), real.end());
      std::shuffle(all.begin(), all.end(), rng);
      f.test.assign(all.begin(), all.begin() + 54);
      f.valid.assign(all.begin() + 54, all.begin() + 54 + 43);
      f.train.assign(all.begin() + 54 + 43, all.end());
    } else {
      // Test only on real-piano recordings: all 60 of them.
      f.test = real;
      f.valid.assign(synth.begin(), synth.begin() + 30);
      f.train.assign(synth.begin() + 30, synth.end());
    }
    cfg.folds.push_back(std::move(f));
  }
  return cfg;
}

// --------------------------------------------------------------- synthesis

std::vector<SynthTrack> synthesize(const SynthSpec& spec) {
  if (spec.n_tracks < 0) throw ConfigError("synth: n_tracks must be >= 0");
  if (spec.min_polyphony < 1 || spec.max_polyphony < spec.min_polyphony)
    throw ConfigError("synth: bad polyphony range");
  if (spec.min_pitch < kMinPitch || spec.max_pitch > kMaxPitch ||
      spec.min_pitch > spec.max_pitch)
    throw ConfigError("synth: pitch range must sit inside 21..108");
  if (!(spec.duration > 0) || !(spec.sample_rate > 0))
    throw ConfigError("synth: duration and sample_rate must be positive");

  std::mt19937_64 rng(spec.seed);
  std::vector<SynthTrack> tracks;
  const std::size_t n_samples = static_cast<std::size_t>(spec.duration * spec.sample_rate);
  const double nyquist = spec.sample_rate / 2.0;

  for (int tr = 0; tr < spec.n_tracks; ++tr) {
    SynthTrack track;
    track.id = "synth_" + std::to_string(tr);
    track.clip.sample_rate = spec.sample_rate;
    track.clip.samples.assign(n_samples, 0.0);

    const double tempo = uniform(rng, spec.min_tempo, spec.max_tempo);
    const double beat = 60.0 / tempo;
    double when = uniform(rng, 0.02, 0.2);
    while (when < spec.duration - 0.1) {
      const int poly = uniform_int(rng, spec.min_polyphony, spec.max_polyphony);
      std::set<int> pitches;
      for (int k = 0; k < poly; ++k)
        pitches.insert(uniform_int(rng, spec.min_pitch, spec.max_pitch));
      const double ioi = beat * uniform(rng, 0.5, 1.5);
      for (int pitch : pitches) {
        NoteEvent note;
        note.pitch = pitch;
        note.onset = when;
        note.offset = std::min(spec.duration, when + ioi * uniform(rng, 0.55, 0.95));
        if (note.offset - note.onset < 0.03) continue;
        const double velocity = uniform(rng, 0.4, 1.0);
        const double f0 = 440.0 * std::pow(2.0, (pitch - 69) / 12.0);
        track.notes.push_back(note);

        const std::size_t s0 = static_cast<std::size_t>(note.onset * spec.sample_rate);
        const std::size_t s1 =
            std::min(n_samples, static_cast<std::size_t>(note.offset * spec.sample_rate));
        for (int h = 1; h <= spec.partials; ++h) {
          const double fh = f0 * h;
          if (fh >= nyquist * 0.95) break;
          const double amp = velocity * std::pow(0.7, h - 1);
          const double decay_h = spec.decay * (1.0 + 0.3 * (h - 1));
          const double w = 2.0 * std::numbers::pi * fh / spec.sample_rate;
          const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
          for (std::size_t s = s0; s < s1; ++s) {
            const double t = static_cast<double>(s - s0) / spec.sample_rate;
            track.clip.samples[s] +=
                amp * std::exp(-decay_h * t) * std::sin(w * static_cast<double>(s - s0) + phase);
          }
        }
      }
      when += ioi;
    }

    if (spec.noise_floor > 0)
      for (double& s : track.clip.samples) s += spec.noise_floor * (2.0 * uniform01(rng) - 1.0);

    double peak = 0.0;
    for (double s : track.clip.samples) peak = std::max(peak, std::abs(s));
    if (peak > 0)
      for (double& s : track.clip.samples) s *= 0.9 / peak;

    std::stable_sort(track.notes.begin(), track.notes.end(),
                     [](const NoteEvent& a, const NoteEvent& b) { return a.onset < b.onset; });
    tracks.push_back(std::move(track));
  }
  return tracks;
}

// ----------------------------------------------------------------- batches

AlignedTrack ingest(const AudioClip& clip, const std::vector<NoteEvent>& notes,
                    const dsp::SpecConfig& cfg, const std::string& id) {
  const dsp::Spectrogram spec = dsp::compute_representation(clip, cfg);
  AlignedTrack track;
  track.id = id;
  track.x = spec.frames;
  track.y = notes_to_roll_at_times(notes, spec.frame_times);
  if (track.x.rows != track.y.rows)
    throw ShapeError("ingest: spectrogram/roll frame mismatch");
  return track;
}

void BatchIterator::init(std::uint64_t seed) {
  if (context_ % 2 == 0) throw ConfigError("context_frames must be odd");
  if (batch_ == 0) throw ConfigError("batch_size must be >= 1");
  for (std::size_t tr = 0; tr < tracks_.size(); ++tr) {
    if (tracks_[tr]->x.rows != tracks_[tr]->y.rows)
      throw ShapeError("batches: track '" + tracks_[tr]->id +
                       "' spectrogram/roll frame counts differ");
    for (std::size_t t = 0; t < tracks_[tr]->x.rows; ++t)
      order_.emplace_back(static_cast<std::uint32_t>(tr), static_cast<std::uint32_t>(t));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(order_.begin(), order_.end(), rng);
}

BatchIterator::BatchIterator(const std::vector<AlignedTrack>& tracks, std::size_t context_frames,
                             std::size_t batch_size, std::uint64_t seed)
    : context_(context_frames), batch_(batch_size) {
  for (const AlignedTrack& t : tracks) tracks_.push_back(&t);
  init(seed);
}

BatchIterator::BatchIterator(const AlignedTrack& track, std::size_t context_frames,
                             std::size_t batch_size, std::uint64_t seed)
    : context_(context_frames), batch_(batch_size) {
  tracks_.push_back(&track);
  init(seed);
}

namespace {

void fill_example(const AlignedTrack& track, std::size_t t, std::size_t context, nn::Tensor& x,
                  std::size_t row) {
  const std::size_t bins = track.x.cols;
  if (context == 1) {
    std::memcpy(x.v.data() + row * bins, track.x.row(t), bins * sizeof(double));
    return;
  }
  const long half = static_cast<long>(context / 2);
  for (long dt = -half; dt <= half; ++dt) {
    long src = static_cast<long>(t) + dt;
    src = std::clamp<long>(src, 0, static_cast<long>(track.x.rows) - 1);  // edge replication
    std::memcpy(x.v.data() + (row * context + static_cast<std::size_t>(dt + half)) * bins,
                track.x.row(static_cast<std::size_t>(src)), bins * sizeof(double));
  }
}

}  // namespace

bool BatchIterator::next(Batch& out) {
  if (pos_ >= order_.size()) return false;
  const std::size_t m = std::min(batch_, order_.size() - pos_);
  const std::size_t bins = tracks_.front()->x.cols;
  out.x = context_ == 1 ? nn::Tensor({m, bins}) : nn::Tensor({m, 1, context_, bins});
  out.y = nn::Tensor({m, 88});
  for (std::size_t r = 0; r < m; ++r) {
    const auto [tr, t] = order_[pos_ + r];
    fill_example(*tracks_[tr], t, context_, out.x, r);
    std::memcpy(out.y.v.data() + r * 88, tracks_[tr]->y.row(t), 88 * sizeof(double));
  }
  pos_ += m;
  return true;
}

BatchIterator make_batches(const AlignedTrack& track, std::size_t context_frames,
                           std::size_t batch_size, std::uint64_t seed) {
  return BatchIterator(track, context_frames, batch_size, seed);
}

std::vector<Batch> full_set_chunks(const std::vector<AlignedTrack>& tracks,
                                   std::size_t context_frames, std::size_t chunk_size) {
  std::vector<Batch> chunks;
  if (chunk_size == 0) throw ConfigError("chunk_size must be >= 1");
  for (const AlignedTrack& track : tracks) {
    const std::size_t bins = track.x.cols;
    for (std::size_t start = 0; start < track.x.rows; start += chunk_size) {
      const std::size_t m = std::min(chunk_size, track.x.rows - start);
      Batch b;
      b.x = context_frames == 1 ? nn::Tensor({m, bins}) : nn::Tensor({m, 1, context_frames, bins});
      b.y = nn::Tensor({m, 88});
      for (std::size_t r = 0; r < m; ++r) {
        fill_example(track, start + r, context_frames, b.x, r);
        std::memcpy(b.y.v.data() + r * 88, track.y.row(start + r), 88 * sizeof(double));
      }
      chunks.push_back(std::move(b));
    }
  }
  return chunks;
}

}  // namespace pianolab::data
