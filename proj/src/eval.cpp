#include "pianolab/eval.hpp"

#include <sstream>

#include "pianolab/io.hpp"

namespace pianolab::eval {

std::string to_string(AverageMode m) {
  return m == AverageMode::aggregate ? "aggregate" : "per_frame_mean";
}

AverageMode average_mode_from_string(const std::string& s) {
  if (s == "aggregate") return AverageMode::aggregate;
  if (s == "per_frame_mean") return AverageMode::per_frame_mean;
  throw ConfigError("unknown averaging mode: " + s);
}

Matrix threshold(const Matrix& pred) {
  Matrix out(pred.rows, pred.cols);
  for (std::size_t i = 0; i < pred.v.size(); ++i) out.v[i] = pred.v[i] > 0.5 ? 1.0 : 0.0;
  return out;
}

MetricsReport framewise_prf(const Matrix& pred, const Matrix& truth, AverageMode mode) {
  require_same_shape(pred, truth, "framewise_prf");
  MetricsReport rep;
  rep.mode = to_string(mode);

  if (mode == AverageMode::aggregate) {
    // Micro average: confusion counts summed over all frames first.
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
      const bool p = pred.v[i] != 0.0;
      const bool t = truth.v[i] != 0.0;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    rep.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    rep.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  } else {
    // Mean of per-frame ratios; frames with an empty denominator are
    // skipped for that ratio.
    double psum = 0.0, rsum = 0.0;
    std::size_t pframes = 0, rframes = 0;
    for (std::size_t t = 0; t < pred.rows; ++t) {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (std::size_t j = 0; j < pred.cols; ++j) {
        const bool p = pred(t, j) != 0.0;
        const bool g = truth(t, j) != 0.0;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
      }
      if (tp + fp > 0) {
        psum += static_cast<double>(tp) / static_cast<double>(tp + fp);
        ++pframes;
      }
      if (tp + fn > 0) {
        rsum += static_cast<double>(tp) / static_cast<double>(tp + fn);
        ++rframes;
      }
    }
    rep.precision = pframes ? psum / static_cast<double>(pframes) : 0.0;
    rep.recall = rframes ? rsum / static_cast<double>(rframes) : 0.0;
  }
  rep.f1 = rep.precision + rep.recall > 0
               ? 2.0 * rep.precision * rep.recall / (rep.precision + rep.recall)
               : 0.0;
  rep.f1_from_pr = rep.f1;
  return rep;
}

MetricsReport aggregate_folds(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ValueError("aggregate_folds: no reports");
  MetricsReport out;
  out.mode = reports.front().mode + "+fold_mean";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    out.precision += reports[i].precision;
    out.recall += reports[i].recall;
    out.f1 += reports[i].f1;
    MetricsReport::Entry e;
    e.fold = static_cast<int>(i);
    e.precision = reports[i].precision;
    e.recall = reports[i].recall;
    e.f1 = reports[i].f1;
    out.breakdown.push_back(e);
  }
  const double n = static_cast<double>(reports.size());
  out.precision /= n;
  out.recall /= n;
  out.f1 /= n;  // mean of per-fold F1, not the harmonic mean of P/R
  out.f1_from_pr = out.precision + out.recall > 0
                       ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
                       : 0.0;
  return out;
}

void save_metrics_csv(const std::filesystem::path& path, const MetricsReport& report) {
  std::ostringstream out;
  out.precision(10);
  out << "track,fold,mode,P,R,F1\n";
  out << "ALL,-1," << report.mode << ',' << report.precision << ',' << report.recall << ','
      << report.f1 << "\n";
  for (const auto& e : report.breakdown)
    out << (e.track.empty() ? "-" : e.track) << ',' << e.fold << ',' << report.mode << ','
        << e.precision << ',' << e.recall << ',' << e.f1 << "\n";
  io::atomic_write_file(path, out.str());
}

}  // namespace pianolab::eval
