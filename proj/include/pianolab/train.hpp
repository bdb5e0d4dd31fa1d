#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pianolab/data.hpp"
#include "pianolab/dsp.hpp"
#include "pianolab/eval.hpp"
#include "pianolab/nn.hpp"
#include "pianolab/optim.hpp"
#include "pianolab/zoo.hpp"

namespace pianolab::train {

struct TrainConfig {
  zoo::ModelClass model;
  dsp::SpecConfig representation;
  opt::OptimizerConfig optimizer;
  opt::Schedule schedule;
  int epochs = 100;
  std::size_t batch_size = 256;
  double dropout = 0.0;     // probe-class knob (LogReg / Shallow)
  bool batch_norm = false;  // probe-class knob
  double l1 = 0.0, l2 = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

std::string to_json_string(const TrainConfig& cfg);
TrainConfig train_config_from_json_string(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string config_hash(const TrainConfig& cfg);

struct EpochMetrics {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct RunRecord {
  std::vector<double> train_loss;       // per epoch
  std::vector<EpochMetrics> val_curve;  // per epoch
  std::vector<double> lr_trace;         // per epoch
  EpochMetrics init_valid;              // evaluation at initialization
  int best_epoch = -1;                  // ties broken by the earlier epoch
  double best_f1 = 0.0;
  EpochMetrics final_train;  // after best-checkpoint restore + bn finalize
  EpochMetrics final_valid;
  bool failed = false;
  std::int64_t fail_step = -1;
  std::string fail_reason;
  double wall_seconds = 0.0;
  std::string checkpoint_path;

  std::string to_json() const;
  static RunRecord from_json(const std::string& text);
};

void save_run_record(const std::filesystem::path& dir, const RunRecord& rec);

struct TrainOptions {
  /// When set, the final (and resumable per-epoch) checkpoint is written here.
  std::optional<std::filesystem::path> checkpoint_path;
  /// Resume from this checkpoint instead of initializing.
  std::optional<std::filesystem::path> resume_from;
  /// Divergence ceiling: abort when loss exceeds this multiple of the
  /// first batch's loss.
  double divergence_factor = 1e3;
};

/// Scheduled mini-batch training with per-epoch validation, best-F1 model
/// selection and whole-training-set batch-norm finalization. Divergence
/// marks the record failed instead of throwing.
RunRecord train_run(const TrainConfig& cfg, const std::vector<data::AlignedTrack>& train_tracks,
                    const std::vector<data::AlignedTrack>& valid_tracks,
                    const TrainOptions& opts = {});

/// Model reconstruction for evaluation: loads a checkpoint and predicts
/// a T x 88 score matrix for one track.
Matrix predict_track(nn::Network& net, const data::AlignedTrack& track,
                     std::size_t context_frames);

/// First alpha in `candidates` for which `diverges` is false; throws
/// ConfigError when every candidate diverges.
double lr_search(const std::vector<double>& candidates,
                 const std::function<bool(double)>& diverges);

/// The paper-style recipe: decade steps from 10.0 downward, each probed
/// with a short training run on the given data.
double lr_search(const TrainConfig& cfg_template,
                 const std::vector<data::AlignedTrack>& train_tracks, int probe_epochs);

}  // namespace pianolab::train
