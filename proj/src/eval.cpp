#include "ecg/eval.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "ecg/aami.hpp"

namespace ecg::eval {

long ConfusionMatrix::total() const {
  long t = 0;
  for (const auto& row : counts)
    for (long v : row) t += v;
  return t;
}

long ConfusionMatrix::trace() const {
  long t = 0;
  for (int i = 0; i < kClasses; ++i) t += counts[i][i];
  return t;
}

void accumulate(ConfusionMatrix& cm, int true_class, int predicted_class) {
  if (true_class < 0 || true_class >= kClasses || predicted_class < 0 ||
      predicted_class >= kClasses)
    throw std::invalid_argument("confusion matrix class index out of range");
  ++cm.counts[true_class][predicted_class];
}

ConfusionMatrix merge(const ConfusionMatrix& a, const ConfusionMatrix& b) {
  ConfusionMatrix out = a;
  for (int i = 0; i < kClasses; ++i)
    for (int j = 0; j < kClasses; ++j) out.counts[i][j] += b.counts[i][j];
  return out;
}

Metrics metrics(const ConfusionMatrix& cm) {
  Metrics m;
  m.total = cm.total();
  if (m.total == 0) throw EmptyMatrix("confusion matrix is empty");

  for (int c = 0; c < kClasses; ++c) {
    long row = 0, col = 0;
    for (int k = 0; k < kClasses; ++k) {
      row += cm.counts[c][k];
      col += cm.counts[k][c];
    }
    const long diag = cm.counts[c][c];
    m.precision[c] = col > 0 ? static_cast<double>(diag) / static_cast<double>(col) : 0.0;
    m.recall[c] = row > 0 ? static_cast<double>(diag) / static_cast<double>(row) : 0.0;
    m.support[c] = row;
  }
  m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(m.total);
  return m;
}

std::array<double, kClasses> specificity(const ConfusionMatrix& cm) {
  std::array<double, kClasses> out{};
  const long total = cm.total();
  for (int c = 0; c < kClasses; ++c) {
    long row = 0, col = 0;
    for (int k = 0; k < kClasses; ++k) {
      row += cm.counts[c][k];
      col += cm.counts[k][c];
    }
    const long tn = total - row - col + cm.counts[c][c];
    const long fp = col - cm.counts[c][c];
    out[c] = (tn + fp) > 0 ? static_cast<double>(tn) / static_cast<double>(tn + fp) : 0.0;
  }
  return out;
}

std::string format_pct(double fraction) {
  const double pct = fraction * 100.0;
  // half-up at one decimal
  const long scaled = static_cast<long>(std::floor(pct * 10.0 + 0.5));
  std::ostringstream out;
  out << scaled / 10 << '.' << std::abs(scaled % 10);
  return out.str();
}

std::string report_csv(const Metrics& m, const ConfusionMatrix& cm, const ReportMeta& meta) {
  std::ostringstream out;
  if (meta.leakage_warning)
    out << "# WARNING: intra-patient split - beats from one patient can appear on both "
           "sides; metrics are susceptible to identity leakage\n";
  out << "class,n,precision_pct,recall_pct";
  if (meta.include_specificity) out << ",specificity_pct";
  out << '\n';
  const auto spec =
      meta.include_specificity ? specificity(cm) : std::array<double, kClasses>{};
  for (int c = 0; c < kClasses; ++c) {
    out << kAamiNames[c] << ',' << m.support[c] << ',' << format_pct(m.precision[c]) << ','
        << format_pct(m.recall[c]);
    if (meta.include_specificity) out << ',' << format_pct(spec[c]);
    out << '\n';
  }
  out << "overall," << m.total << ",accuracy," << format_pct(m.accuracy) << '\n';
  return out.str();
}

std::string report_json(const Metrics& m, const ConfusionMatrix& cm, const ReportMeta& meta) {
  nlohmann::json j;
  j["paradigm"] = meta.paradigm;
  j["seed"] = meta.seed;
  j["config_hash"] = meta.config_hash;
  j["build_id"] = meta.build_id;
  j["leakage_warning"] = meta.leakage_warning;
  j["accuracy"] = m.accuracy;
  j["total"] = m.total;
  nlohmann::json per_class = nlohmann::json::object();
  const auto spec = meta.include_specificity ? specificity(cm)
                                             : std::array<double, kClasses>{};
  for (int c = 0; c < kClasses; ++c) {
    nlohmann::json e;
    e["n"] = m.support[c];
    e["precision"] = m.precision[c];
    e["recall"] = m.recall[c];
    if (meta.include_specificity) e["specificity"] = spec[c];
    per_class[std::string(1, kAamiNames[c])] = e;
  }
  j["per_class"] = per_class;
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < kClasses; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 0; k < kClasses; ++k) row.push_back(cm.counts[i][k]);
    rows.push_back(row);
  }
  j["confusion"] = rows;
  return j.dump(2);
}

}  // namespace ecg::eval
