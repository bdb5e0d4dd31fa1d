// pianolab: framewise piano-transcription workbench CLI.
//
// Subcommands: spectrogram, synth, train, eval, study-run, study-analyze.
// Exit codes: 0 success, 1 runtime failure under --strict, 2 usage or
// config errors.

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "pianolab/data.hpp"
#include "pianolab/dsp.hpp"
#include "pianolab/eval.hpp"
#include "pianolab/hpstudy.hpp"
#include "pianolab/io.hpp"
#include "pianolab/train.hpp"

namespace pl = pianolab;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string default_data_dir() {
  const char* env = std::getenv("PIANOLAB_DATA_DIR");
  return env ? env : "";
}

// ------------------------------------------------------------ data loading

struct CatalogEntry {
  std::string id;
  std::string instrument;
  bool real_piano = false;
};

std::vector<CatalogEntry> read_catalog(const std::filesystem::path& dir) {
  const auto path = dir / "catalog.json";
  std::vector<CatalogEntry> entries;
  if (std::filesystem::exists(path)) {
    const json j = json::parse(pl::io::read_file(path));
    for (const auto& tj : j.at("tracks")) {
      CatalogEntry e;
      e.id = tj.at("id");
      e.instrument = tj.value("instrument", "");
      e.real_piano = tj.value("real_piano", false);
      entries.push_back(e);
    }
  } else {
    // fall back to directory listing
    const auto tracks_dir = dir / "tracks";
    if (!std::filesystem::is_directory(tracks_dir))
      throw pl::IoError("no catalog.json and no tracks/ under " + dir.string());
    for (const auto& f : std::filesystem::directory_iterator(tracks_dir))
      if (f.path().extension() == ".wav") entries.push_back({f.path().stem().string(), "", false});
    std::sort(entries.begin(), entries.end(),
              [](const CatalogEntry& a, const CatalogEntry& b) { return a.id < b.id; });
  }
  return entries;
}

pl::data::AlignedTrack load_track(const std::filesystem::path& dir, const std::string& id,
                                  const pl::dsp::SpecConfig& rep) {
  const auto wav = dir / "tracks" / (id + ".wav");
  const auto tsv = dir / "tracks" / (id + ".notes.tsv");
  const auto midi = dir / "tracks" / (id + ".mid");
  const pl::dsp::AudioClip clip = pl::dsp::read_wav(wav);
  std::vector<pl::data::NoteEvent> notes;
  if (std::filesystem::exists(tsv))
    notes = pl::data::read_notes_tsv(tsv);
  else if (std::filesystem::exists(midi))
    notes = pl::data::read_notes_midi(midi);
  else
    throw pl::IoError("no annotations for track " + id);
  pl::dsp::SpecConfig cfg = rep;
  if (cfg.sample_rate != clip.sample_rate) {
    // no silent resampling: the representation declares its rate
    throw pl::ConfigError("track " + id + " is sampled at " + std::to_string(clip.sample_rate) +
                          " Hz but the representation wants " + std::to_string(cfg.sample_rate) +
                          "; resample explicitly (synth --sample-rate, or the resample op)");
  }
  return pl::data::ingest(clip, notes, cfg, id);
}

std::vector<pl::data::AlignedTrack> load_tracks(const std::filesystem::path& dir,
                                                const std::vector<std::string>& ids,
                                                const pl::dsp::SpecConfig& rep) {
  std::vector<pl::data::AlignedTrack> tracks;
  for (const std::string& id : ids) tracks.push_back(load_track(dir, id, rep));
  return tracks;
}

// --------------------------------------------------------------- commands

int cmd_spectrogram(const std::string& audio, const std::string& config, const std::string& out,
                    const std::string& csv) {
  const pl::dsp::SpecConfig cfg = pl::dsp::load_spec_config(config);
  const pl::dsp::AudioClip clip = pl::dsp::read_wav(audio);
  const pl::dsp::Spectrogram spec = pl::dsp::compute_representation(clip, cfg);
  pl::dsp::save_spectrogram(out, spec);
  if (!csv.empty()) pl::dsp::save_spectrogram_csv(csv, spec);

  // peak-band sanity line
  std::size_t best_t = 0, best_b = 0;
  double best = -1.0;
  for (std::size_t t = 0; t < spec.frames.rows; ++t)
    for (std::size_t b = 0; b < spec.frames.cols; ++b)
      if (spec.frames(t, b) > best) {
        best = spec.frames(t, b);
        best_t = t;
        best_b = b;
      }
  std::cout << "wrote " << out << ": " << spec.frames.rows << " frames x " << spec.frames.cols
            << " bands, config_hash=" << pl::dsp::config_hash(cfg) << "\n";
  std::cout << "peak band " << best_b << " at frame " << best_t << " (t="
            << (spec.frame_times.empty() ? 0.0 : spec.frame_times[best_t]) << " s, value " << best
            << ")\n";
  return kExitOk;
}

int cmd_synth(const std::string& out_dir, pl::data::SynthSpec spec, bool monophonic) {
  if (monophonic) {
    spec.min_polyphony = 1;
    spec.max_polyphony = 1;
  }
  const auto tracks = pl::data::synthesize(spec);
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir / "tracks");
  json catalog;
  catalog["sample_rate"] = spec.sample_rate;
  catalog["seed"] = spec.seed;
  catalog["tracks"] = json::array();
  for (const auto& tr : tracks) {
    pl::dsp::write_wav(dir / "tracks" / (tr.id + ".wav"), tr.clip);
    pl::data::write_notes_tsv(dir / "tracks" / (tr.id + ".notes.tsv"), tr.notes);
    catalog["tracks"].push_back(
        {{"id", tr.id}, {"instrument", "synth"}, {"real_piano", false}});
  }
  pl::io::atomic_write_file(dir / "catalog.json", catalog.dump(2));
  std::cout << "wrote " << tracks.size() << " tracks to " << out_dir << "\n";
  return kExitOk;
}

struct FoldData {
  std::vector<pl::data::AlignedTrack> train, valid;
  int fold = 0;
};

std::vector<FoldData> assemble_folds(const std::filesystem::path& data_dir,
                                     const pl::dsp::SpecConfig& rep, const std::string& split_path,
                                     const std::vector<int>& folds, double valid_frac) {
  std::vector<FoldData> out;
  if (!split_path.empty()) {
    const pl::data::SplitConfig split = pl::data::read_split_file(split_path);
    for (int f : folds) {
      const pl::data::Fold fold = pl::data::load_split(split, static_cast<std::size_t>(f));
      FoldData fd;
      fd.fold = f;
      fd.train = load_tracks(data_dir, fold.train, rep);
      fd.valid = load_tracks(data_dir, fold.valid, rep);
      out.push_back(std::move(fd));
    }
    return out;
  }
  const auto catalog = read_catalog(data_dir);
  std::vector<std::string> ids;
  for (const auto& e : catalog) ids.push_back(e.id);
  std::sort(ids.begin(), ids.end());
  const std::size_t n_valid =
      valid_frac > 0 ? std::max<std::size_t>(1, static_cast<std::size_t>(ids.size() * valid_frac))
                     : 0;
  FoldData fd;
  fd.fold = 0;
  const std::size_t n_train = ids.size() - n_valid;
  fd.train = load_tracks(data_dir, {ids.begin(), ids.begin() + static_cast<long>(n_train)}, rep);
  fd.valid = n_valid ? load_tracks(data_dir, {ids.begin() + static_cast<long>(n_train), ids.end()},
                                   rep)
                     : std::vector<pl::data::AlignedTrack>{};
  out.push_back(std::move(fd));
  return out;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& split_path, std::vector<int> folds, const std::string& out_dir,
              double valid_frac, bool strict) {
  const pl::train::TrainConfig cfg = pl::train::load_train_config(config_path);
  cfg.validate();
  if (folds.empty()) folds = {0};
  const auto fold_data = assemble_folds(data_dir, cfg.representation, split_path, folds,
                                        valid_frac);

  const std::string run_name = pl::train::config_hash(cfg);
  const std::filesystem::path out_base = std::filesystem::path(out_dir) / run_name;
  std::vector<pl::eval::MetricsReport> fold_reports;
  bool any_failed = false;

  std::cout << "run " << run_name << " (" << pl::zoo::to_string(cfg.model.kind) << ", "
            << pl::dsp::to_string(cfg.representation.spec_type) << ")\n";
  std::cout << "fold        P        R       F1   status\n";
  for (std::size_t i = 0; i < fold_data.size(); ++i) {
    const auto dir = out_base / ("fold" + std::to_string(fold_data[i].fold));
    pl::train::TrainOptions opts;
    std::filesystem::create_directories(dir);
    opts.checkpoint_path = dir / "checkpoint.bin";
    const pl::train::RunRecord rec =
        pl::train::train_run(cfg, fold_data[i].train, fold_data[i].valid, opts);
    pl::train::save_run_record(dir, rec);
    any_failed = any_failed || rec.failed;

    pl::eval::MetricsReport rep;
    rep.precision = rec.final_valid.precision;
    rep.recall = rec.final_valid.recall;
    rep.f1 = rec.final_valid.f1;
    fold_reports.push_back(rep);
    std::ostringstream line;
    line.precision(4);
    line << std::fixed;
    line << fold_data[i].fold << "     " << rec.final_valid.precision << "   "
         << rec.final_valid.recall << "   " << rec.final_valid.f1 << "   "
         << (rec.failed ? ("failed@" + std::to_string(rec.fail_step)) : "ok");
    std::cout << line.str() << "\n";
  }
  const pl::eval::MetricsReport mean = pl::eval::aggregate_folds(fold_reports);
  std::cout << "mean  " << std::fixed;
  std::cout.precision(4);
  std::cout << mean.precision << "   " << mean.recall << "   " << mean.f1 << "\n";
  if (any_failed && strict) return kExitRuntime;
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             std::vector<std::string> track_ids, const std::string& out_dir,
             const std::string& mode_str) {
  const pl::nn::Checkpoint ckpt = pl::nn::load_checkpoint(checkpoint);
  const json meta = json::parse(ckpt.meta_json);
  const pl::train::TrainConfig cfg =
      pl::train::train_config_from_json_string(meta.at("train_config").dump());
  const auto mode = pl::eval::average_mode_from_string(mode_str);

  if (track_ids.empty())
    for (const auto& e : read_catalog(data_dir)) track_ids.push_back(e.id);

  pl::nn::Network net = ckpt.net;
  const std::size_t context = cfg.model.is_conv() ? cfg.model.context_frames : 1;
  pl::eval::MetricsReport pooled;
  Matrix all_pred, all_truth;
  std::vector<pl::eval::MetricsReport::Entry> entries;
  for (const std::string& id : track_ids) {
    const pl::data::AlignedTrack track = load_track(data_dir, id, cfg.representation);
    const Matrix score = pl::train::predict_track(net, track, context);
    const Matrix bin = pl::eval::threshold(score);
    const pl::eval::MetricsReport rep = pl::eval::framewise_prf(bin, track.y, mode);
    entries.push_back({id, -1, rep.precision, rep.recall, rep.f1});
    const std::size_t base = all_pred.rows;
    Matrix merged(base + bin.rows, 88);
    if (base) std::copy(all_pred.v.begin(), all_pred.v.end(), merged.v.begin());
    std::copy(bin.v.begin(), bin.v.end(), merged.v.begin() + static_cast<long>(base * 88));
    all_pred = std::move(merged);
    Matrix merged_t(base + bin.rows, 88);
    if (base) std::copy(all_truth.v.begin(), all_truth.v.end(), merged_t.v.begin());
    std::copy(track.y.v.begin(), track.y.v.end(),
              merged_t.v.begin() + static_cast<long>(base * 88));
    all_truth = std::move(merged_t);
  }
  pooled = pl::eval::framewise_prf(all_pred, all_truth, mode);
  pooled.breakdown = entries;

  std::cout.precision(4);
  std::cout << std::fixed;
  std::cout << "P=" << pooled.precision << " R=" << pooled.recall << " F1=" << pooled.f1 << " ("
            << pooled.mode << ", " << track_ids.size() << " tracks)\n";
  if (!out_dir.empty())
    pl::eval::save_metrics_csv(std::filesystem::path(out_dir) / "metrics.csv", pooled);
  return kExitOk;
}

int cmd_study_run(const std::string& space_path, const std::string& mode, std::size_t n,
                  std::uint64_t seed, const std::string& data_dir, const std::string& out_dir,
                  const std::string& base_config, double valid_frac, int jobs) {
  const pl::hp::ParamSpace space =
      space_path.empty() ? pl::hp::study_space() : pl::hp::load_space(space_path);
  std::vector<pl::hp::Configuration> configs;
  if (mode == "grid")
    configs = pl::hp::enumerate_grid(space);
  else if (mode == "random")
    configs = pl::hp::sample_random(space, n, seed);
  else
    throw pl::ConfigError("study-run: mode must be grid or random");

  pl::train::TrainConfig base;
  if (!base_config.empty()) base = pl::train::load_train_config(base_config);

  const std::filesystem::path ledger = std::filesystem::path(out_dir) / "trials.csv";
  std::filesystem::create_directories(out_dir);

  std::mutex ledger_mutex;
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= configs.size()) return;
      pl::train::TrainConfig cfg = pl::hp::trial_train_config(space, configs[i], base);
      cfg.seed = seed + i;
      pl::hp::TrialResult trial;
      trial.config = configs[i];
      try {
        const auto fold_data =
            assemble_folds(data_dir, cfg.representation, "", {0}, valid_frac);
        const pl::train::RunRecord rec =
            pl::train::train_run(cfg, fold_data[0].train, fold_data[0].valid);
        trial.score = rec.best_f1;
        trial.status = rec.failed ? pl::hp::TrialStatus::diverged : pl::hp::TrialStatus::ok;
      } catch (const std::exception& e) {
        std::cerr << "trial " << i << " error: " << e.what() << "\n";
        trial.score = 0.0;
        trial.status = pl::hp::TrialStatus::diverged;
      }
      {
        const std::lock_guard<std::mutex> lock(ledger_mutex);
        pl::hp::append_trial(ledger, space, trial);
      }
      done.fetch_add(1);
    }
  };
  const int n_workers = std::max(1, jobs);
  std::vector<std::thread> pool;
  for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::cout << "appended " << done.load() << " trials to " << ledger.string() << "\n";
  return kExitOk;
}

int cmd_study_analyze(const std::string& ledger, const std::string& out_dir,
                      const std::string& space_path, int n_trees, std::uint64_t seed,
                      bool impute_diverged) {
  const pl::hp::ParamSpace space =
      space_path.empty() ? pl::hp::study_space() : pl::hp::load_space(space_path);
  const pl::hp::LedgerReadResult read = pl::hp::read_ledger(ledger, space);
  if (read.skipped)
    std::cerr << "warning: skipped " << read.skipped << " corrupt ledger rows\n";

  pl::hp::ForestOptions opts;
  opts.n_trees = n_trees;
  opts.impute_diverged = impute_diverged;
  const pl::hp::Forest forest = pl::hp::fit_forest(space, read.trials, opts, seed);
  const pl::hp::ImportanceReport report = pl::hp::analyze(forest);
  pl::hp::save_report(out_dir, report);

  std::cout << "analyzed " << read.trials.size() << " trials (" << read.skipped
            << " skipped); top effects:\n";
  std::cout.precision(2);
  std::cout << std::fixed;
  for (std::size_t i = 0; i < std::min<std::size_t>(5, report.main_effects.size()); ++i)
    std::cout << "  " << report.main_effects[i].name << ": "
              << report.main_effects[i].share_total_pct << "%\n";
  std::cout << "report written to " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pianolab: framewise piano transcription workbench"};
  app.require_subcommand(1);

  // spectrogram
  std::string sg_audio, sg_config, sg_out, sg_csv;
  auto* sg = app.add_subcommand("spectrogram", "compute a time-frequency representation");
  sg->add_option("--audio", sg_audio, "input WAV (mono)")->required();
  sg->add_option("--config", sg_config, "representation config JSON")->required();
  sg->add_option("--out", sg_out, "output container path")->required();
  sg->add_option("--csv", sg_csv, "also write a CSV preview");

  // synth
  std::string sy_out;
  pl::data::SynthSpec sy_spec;
  bool sy_mono = false;
  auto* sy = app.add_subcommand("synth", "generate a synthetic dataset");
  sy->add_option("--out", sy_out, "output dataset directory")->required();
  sy->add_option("--tracks", sy_spec.n_tracks, "number of tracks");
  sy->add_option("--duration", sy_spec.duration, "seconds per track");
  sy->add_option("--seed", sy_spec.seed, "generator seed");
  sy->add_option("--sample-rate", sy_spec.sample_rate, "sample rate in Hz");
  sy->add_option("--min-polyphony", sy_spec.min_polyphony, "min simultaneous notes");
  sy->add_option("--max-polyphony", sy_spec.max_polyphony, "max simultaneous notes");
  sy->add_option("--noise", sy_spec.noise_floor, "white-noise amplitude");
  sy->add_flag("--monophonic", sy_mono, "force polyphony 1");

  // train
  std::string tr_config, tr_data = default_data_dir(), tr_split, tr_out = "runs";
  std::vector<int> tr_folds;
  double tr_valid_frac = 0.2;
  bool tr_strict = false;
  auto* tr = app.add_subcommand("train", "train a model per the run config");
  tr->add_option("--config", tr_config, "run-config JSON")->required();
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--split", tr_split, "split file (JSON)");
  tr->add_option("--folds", tr_folds, "fold indices")->delimiter(',');
  tr->add_option("--out", tr_out, "output directory");
  tr->add_option("--valid-frac", tr_valid_frac, "validation fraction when no split file");
  tr->add_flag("--strict", tr_strict, "exit 1 when a run diverges");

  // eval
  std::string ev_ckpt, ev_data = default_data_dir(), ev_out, ev_mode = "aggregate";
  std::vector<std::string> ev_tracks;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--tracks", ev_tracks, "track ids (default: all)")->delimiter(',');
  ev->add_option("--out", ev_out, "output directory for metrics.csv");
  ev->add_option("--mode", ev_mode, "aggregate | per_frame_mean");

  // study-run
  std::string sr_space, sr_mode = "random", sr_data = default_data_dir(), sr_out = "study",
              sr_base;
  std::size_t sr_n = 16;
  std::uint64_t sr_seed = 1;
  double sr_valid_frac = 0.2;
  int sr_jobs = 1;
  auto* sr = app.add_subcommand("study-run", "run grid/random trials into a ledger");
  sr->add_option("--space", sr_space, "space JSON ({\"preset\": \"table1\"|\"study\"} or dims)");
  sr->add_option("--mode", sr_mode, "grid | random")->required();
  sr->add_option("--n", sr_n, "number of random trials");
  sr->add_option("--seed", sr_seed, "sampling seed");
  sr->add_option("--data", sr_data, "dataset directory")->required();
  sr->add_option("--out", sr_out, "study output directory");
  sr->add_option("--base", sr_base, "base run-config for trials");
  sr->add_option("--valid-frac", sr_valid_frac, "validation fraction");
  sr->add_option("--jobs", sr_jobs, "worker pool size");

  // study-analyze
  std::string sa_ledger, sa_out = "study", sa_space;
  int sa_trees = 100;
  std::uint64_t sa_seed = 1;
  bool sa_impute = false;
  auto* sa = app.add_subcommand("study-analyze", "fit the importance forest over a ledger");
  sa->add_option("--ledger", sa_ledger, "trials.csv path")->required();
  sa->add_option("--out", sa_out, "report directory");
  sa->add_option("--space", sa_space, "space JSON (default: the full study space)");
  sa->add_option("--trees", sa_trees, "forest size");
  sa->add_option("--seed", sa_seed, "forest seed");
  sa->add_flag("--impute-diverged", sa_impute, "impute diverged trials as worst score");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp")
      return app.exit(e);  // help goes to stdout, exit 0
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (sg->parsed()) return cmd_spectrogram(sg_audio, sg_config, sg_out, sg_csv);
    if (sy->parsed()) return cmd_synth(sy_out, sy_spec, sy_mono);
    if (tr->parsed())
      return cmd_train(tr_config, tr_data, tr_split, tr_folds, tr_out, tr_valid_frac, tr_strict);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_tracks, ev_out, ev_mode);
    if (sr->parsed())
      return cmd_study_run(sr_space, sr_mode, sr_n, sr_seed, sr_data, sr_out, sr_base,
                           sr_valid_frac, sr_jobs);
    if (sa->parsed())
      return cmd_study_analyze(sa_ledger, sa_out, sa_space, sa_trees, sa_seed, sa_impute);
  } catch (const pl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const pl::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const pl::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
