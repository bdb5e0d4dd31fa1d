#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pianolab/matrix.hpp"

namespace pianolab::eval {

enum class AverageMode { aggregate, per_frame_mean };

std::string to_string(AverageMode m);
AverageMode average_mode_from_string(const std::string& s);

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::string mode = "aggregate";

  // Filled by aggregate_folds: the harmonic mean of the averaged P/R,
  // reported alongside the mean of per-fold F1 values.
  double f1_from_pr = 0.0;

  struct Entry {
    std::string track;
    int fold = -1;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
  };
  std::vector<Entry> breakdown;
};

/// Strict comparison: a score of exactly 0.5 maps to 0.
Matrix threshold(const Matrix& pred);

/// Framewise precision / recall / F1 over a T x 88 binary pair.
MetricsReport framewise_prf(const Matrix& pred, const Matrix& truth,
                            AverageMode mode = AverageMode::aggregate);

/// Arithmetic mean of P, R and of the per-fold F1 values; the harmonic
/// mean of the averaged P/R lands in f1_from_pr.
MetricsReport aggregate_folds(const std::vector<MetricsReport>& reports);

void save_metrics_csv(const std::filesystem::path& path, const MetricsReport& report);

}  // namespace pianolab::eval
