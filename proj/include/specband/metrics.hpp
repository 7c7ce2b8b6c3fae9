#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "specband/common.hpp"

namespace specband {

// rows = true class, cols = predicted class.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<long> counts;
  long n = 0;

  explicit ConfusionMatrix(int classes = 0)
      : num_classes(classes), counts(static_cast<std::size_t>(classes) * classes, 0) {}

  long& at(int t, int p) { return counts[static_cast<std::size_t>(t) * num_classes + p]; }
  long at(int t, int p) const { return counts[static_cast<std::size_t>(t) * num_classes + p]; }

  long row_sum(int t) const {
    long s = 0;
    for (int p = 0; p < num_classes; ++p) s += at(t, p);
    return s;
  }
  long col_sum(int p) const {
    long s = 0;
    for (int t = 0; t < num_classes; ++t) s += at(t, p);
    return s;
  }
};

inline ConfusionMatrix confusion(const std::vector<int>& predictions,
                                 const std::vector<int>& labels, int num_classes) {
  if (predictions.size() != labels.size()) {
    throw DataError("confusion: predictions and labels differ in length");
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes) {
      throw DataError("confusion: label or prediction out of range at sample " + std::to_string(i));
    }
    ++cm.at(t, p);
    ++cm.n;
  }
  return cm;
}

// kappa = 1 - (1 - p_o)/(1 - p_e); undefined when p_e = 1 (a single class on
// both axes), reported as nullopt.
inline std::optional<double> kappa(const ConfusionMatrix& cm) {
  if (cm.n <= 0) throw DataError("kappa: empty confusion matrix");
  const double n = static_cast<double>(cm.n);
  double po = 0.0, pe = 0.0;
  for (int c = 0; c < cm.num_classes; ++c) {
    po += static_cast<double>(cm.at(c, c));
    pe += (static_cast<double>(cm.row_sum(c)) / n) * (static_cast<double>(cm.col_sum(c)) / n);
  }
  po /= n;
  if (pe >= 1.0) return std::nullopt;
  return 1.0 - (1.0 - po) / (1.0 - pe);
}

struct MetricsReport {
  std::vector<double> per_class_accuracy;  // NaN marks a class absent from the data
  double average_accuracy = 0.0;
  double kappa_value = std::numeric_limits<double>::quiet_NaN();
};

// Per-class accuracy = diagonal / row sum; AA is their unweighted mean over
// the classes actually present.
inline MetricsReport metrics_report(const ConfusionMatrix& cm) {
  MetricsReport report;
  report.per_class_accuracy.assign(static_cast<std::size_t>(cm.num_classes),
                                   std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < cm.num_classes; ++c) {
    const long row = cm.row_sum(c);
    if (row == 0) {
      if (log_level() >= 1) {
        std::fprintf(stderr, "[specband] warning: class %d absent, excluded from AA\n", c);
      }
      continue;
    }
    const double acc = static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
    report.per_class_accuracy[static_cast<std::size_t>(c)] = acc;
    sum += acc;
    ++present;
  }
  if (present == 0) throw DataError("metrics_report: no class present");
  report.average_accuracy = sum / present;
  const auto k = kappa(cm);
  report.kappa_value = k ? *k : std::numeric_limits<double>::quiet_NaN();
  return report;
}

}  // namespace specband
