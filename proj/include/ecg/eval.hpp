#pragma once

#include <array>
#include <string>
#include <vector>

#include "ecg/errors.hpp"

namespace ecg::eval {

inline constexpr int kClasses = 4;  // reporting order N, S, V, F

struct ConfusionMatrix {
  // rows = true class, cols = predicted class
  std::array<std::array<long, kClasses>, kClasses> counts{};

  long total() const;
  long trace() const;
};

void accumulate(ConfusionMatrix& cm, int true_class, int predicted_class);

// Elementwise sum, for parallel evaluation shards.
ConfusionMatrix merge(const ConfusionMatrix& a, const ConfusionMatrix& b);

struct Metrics {
  std::array<double, kClasses> precision{};
  std::array<double, kClasses> recall{};
  std::array<long, kClasses> support{};  // true beats per class
  double accuracy = 0.0;
  long total = 0;
};

// precision_c = cm[c][c] / column sum, recall_c = cm[c][c] / row sum,
// accuracy = trace / total; 0/0 is reported as 0.0, matching the reporting
// convention for never-predicted classes. Throws EmptyMatrix when total == 0.
Metrics metrics(const ConfusionMatrix& cm);

// Per-class specificity (true negative rate), available behind a flag in
// reports for comparison with sensitivity/specificity-style tables.
std::array<double, kClasses> specificity(const ConfusionMatrix& cm);

struct ReportMeta {
  std::string paradigm;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string build_id;
  bool leakage_warning = false;  // set for intra-patient evaluations
  bool include_specificity = false;
};

// CSV: one row per class (class, n, precision_pct, recall_pct), then an
// overall accuracy row. Percentages are rendered half-up to 1 decimal.
std::string report_csv(const Metrics& m, const ConfusionMatrix& cm, const ReportMeta& meta);

// JSON with full-precision metrics plus split paradigm, seed, config hash,
// and build identifier.
std::string report_json(const Metrics& m, const ConfusionMatrix& cm, const ReportMeta& meta);

// Percentage with one decimal, half-up: 0.90849 -> "90.8".
std::string format_pct(double fraction);

}  // namespace ecg::eval
