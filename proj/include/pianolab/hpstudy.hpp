#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pianolab/dsp.hpp"
#include "pianolab/train.hpp"

namespace pianolab::hp {

struct Dimension {
  std::string name;
  bool ordered = false;              // ordered-discrete (threshold splits) vs categorical
  std::vector<std::string> values;   // canonical labels, duplicate-free
  std::vector<double> numeric;       // split positions for ordered dims
};

/// Hyperparameter space: named discrete dimensions plus an optional
/// conditional-applicability rule keyed on one dimension (the spectrogram
/// type). Inapplicable dimensions are canonicalized by the grid enumerator
/// and marginalized uniformly by the analyzer.
struct ParamSpace {
  std::vector<Dimension> dims;
  int cond_dim = -1;  // index of the gating dimension, -1 = none
  std::vector<std::vector<int>> applicable_when;  // per dim: gating values; empty = always

  std::size_t dim_index(const std::string& name) const;
  bool applicable(std::size_t dim, int cond_value) const;
  void validate() const;
};

using Configuration = std::vector<int>;  // value index per dimension

enum class TrialStatus { ok, diverged };

struct TrialResult {
  Configuration config;
  double score = 0.0;  // validation F1
  TrialStatus status = TrialStatus::ok;
};

/// The Table-1 representation grid with the recorded applicability rule
/// (204 configurations).
ParamSpace table1_space();

/// Table 1 + Table 3: representation axes plus optimizer, learning rate,
/// momentum, scheduler, batch norm, dropout and L1/L2 penalties.
ParamSpace study_space();

ParamSpace space_from_json(const std::string& text);
ParamSpace load_space(const std::filesystem::path& path);
std::string space_to_json(const ParamSpace& space);

/// Full cartesian grid honoring applicability: inapplicable dimensions are
/// pinned to their first value, duplicates removed. Deterministic order.
std::vector<Configuration> enumerate_grid(const ParamSpace& space);

/// Uniform independent draws per dimension.
std::vector<Configuration> sample_random(const ParamSpace& space, std::size_t n,
                                         std::uint64_t seed);

dsp::SpecConfig representation_from(const ParamSpace& space, const Configuration& config);

/// Applies the training-axis values (when present) onto a base config.
train::TrainConfig trial_train_config(const ParamSpace& space, const Configuration& config,
                                      const train::TrainConfig& base);

std::string config_hash(const ParamSpace& space, const Configuration& config);

// ------------------------------------------------------------- the forest

struct TreeNode {
  int dim = -1;  // -1 = leaf
  std::vector<char> go_left;  // per value index of `dim`
  int left = -1, right = -1;
  double mean = 0.0;
  std::size_t count = 0;
};

struct Tree {
  std::vector<TreeNode> nodes;  // node 0 is the root
};

struct Forest {
  ParamSpace space;
  std::vector<Tree> trees;
};

struct ForestOptions {
  int n_trees = 100;
  int min_leaf = 2;
  bool impute_diverged = false;  // default: diverged trials are excluded
  double impute_score = 0.0;     // worst-score imputation when enabled
};

/// Bootstrap-sampled regression trees; categorical splits order categories
/// by mean response, ordered dimensions split on thresholds; sqrt(d)
/// feature subsampling, no depth limit.
Forest fit_forest(const ParamSpace& space, const std::vector<TrialResult>& trials,
                  const ForestOptions& opts, std::uint64_t seed);

double predict(const Forest& forest, const Configuration& config);

struct MarginalCurve {
  std::string dimension;
  std::vector<std::string> values;
  std::vector<double> mean;    // tree-averaged exact marginal
  std::vector<double> spread;  // stddev across trees
  double share_total_pct = 0.0;  // variance share of the forest's total
  double share_main_pct = 0.0;   // normalized by the sum of main effects
};

/// Exact per-tree partition integration with all other dimensions
/// marginalized uniformly over their declared values, averaged over trees.
MarginalCurve marginal(const Forest& forest, const std::string& dimension);

/// Pairwise-marginal variance minus both main effects, as a share (%) of
/// total variance; clipped at 0.
double interaction(const Forest& forest, const std::string& dim_i, const std::string& dim_j);

struct ImportanceReport {
  struct MainEffect {
    std::string name;
    double share_total_pct;
    double share_main_pct;
  };
  struct Interaction {
    std::string name_i, name_j;
    double share_total_pct;
  };
  std::vector<MainEffect> main_effects;    // share desc, name asc
  std::vector<Interaction> interactions;   // share desc
  std::vector<MarginalCurve> curves;
  std::string header;  // forest parameters for the report
};

ImportanceReport analyze(const Forest& forest, bool pairwise = true);

void save_report(const std::filesystem::path& dir, const ImportanceReport& report);

// ------------------------------------------------------------- the ledger

/// Append-only CSV: config hash, one column per dimension, score, status.
void append_trial(const std::filesystem::path& ledger, const ParamSpace& space,
                  const TrialResult& trial);
void write_ledger_header(const std::filesystem::path& ledger, const ParamSpace& space);

struct LedgerReadResult {
  std::vector<TrialResult> trials;
  std::size_t skipped = 0;  // corrupt rows
};

LedgerReadResult read_ledger(const std::filesystem::path& ledger, const ParamSpace& space);

}  // namespace pianolab::hp
