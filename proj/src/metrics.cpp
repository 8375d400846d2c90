#include "sgumlp/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace sgumlp {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : classes_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least 1 class");
}

void ConfusionMatrix::accumulate(std::uint16_t reference, std::uint16_t predicted) {
  if (reference < 1 || reference > classes_ || predicted < 1 || predicted > classes_) {
    throw DataError("confusion matrix: label pair (" + std::to_string(reference) + ", " +
                    std::to_string(predicted) + ") outside [1, " + std::to_string(classes_) +
                    "]");
  }
  ++counts_[(reference - 1) * classes_ + (predicted - 1)];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) {
    throw DimensionError("confusion matrix merge: " + std::to_string(classes_) + " vs " +
                         std::to_string(other.classes_) + " classes");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (std::uint64_t c : counts_) n += c;
  return n;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t ref) const {
  std::uint64_t n = 0;
  for (std::size_t j = 0; j < classes_; ++j) n += count(ref, j);
  return n;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < classes_; ++i) n += count(i, pred);
  return n;
}

double overall_accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t n = cm.total();
  if (n == 0) throw MetricError("overall accuracy undefined on an empty matrix");
  std::uint64_t trace = 0;
  for (std::size_t i = 0; i < cm.num_classes(); ++i) trace += cm.count(i, i);
  return double(trace) / double(n);
}

double average_accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw MetricError("average accuracy undefined on an empty matrix");
  double sum = 0.0;
  for (std::size_t i = 0; i < cm.num_classes(); ++i) {
    const std::uint64_t row = cm.row_sum(i);
    if (row == 0) {
      throw MetricError("average accuracy undefined: class " + std::to_string(i + 1) +
                        " has no reference samples");
    }
    sum += double(cm.count(i, i)) / double(row);
  }
  return sum / double(cm.num_classes());
}

double kappa(const ConfusionMatrix& cm) {
  const std::uint64_t n = cm.total();
  if (n == 0) throw MetricError("kappa undefined on an empty matrix");
  std::uint64_t trace = 0;
  double pe = 0.0;
  for (std::size_t i = 0; i < cm.num_classes(); ++i) {
    trace += cm.count(i, i);
    pe += double(cm.row_sum(i)) * double(cm.col_sum(i));
  }
  pe /= double(n) * double(n);
  if (pe == 1.0) {
    throw MetricError("kappa undefined: chance agreement is 1 (all mass in one cell)");
  }
  const double po = double(trace) / double(n);
  return (po - pe) / (1.0 - pe);
}

std::vector<double> f1_per_class(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw MetricError("F1 undefined on an empty matrix");
  std::vector<double> f1(cm.num_classes(), 0.0);
  for (std::size_t i = 0; i < cm.num_classes(); ++i) {
    const std::uint64_t row = cm.row_sum(i);
    const std::uint64_t col = cm.col_sum(i);
    const double diag = double(cm.count(i, i));
    const double precision = col > 0 ? diag / double(col) : 0.0;
    const double recall = row > 0 ? diag / double(row) : 0.0;
    f1[i] = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall)
                                       : 0.0;
  }
  return f1;
}

namespace {

std::string sanitize_key(const std::string& name) {
  std::string out = name;
  for (char& c : out) {
    if (c == ' ' || c == '\t' || c == '=' || c == '\n') c = '_';
  }
  return out;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::string> default_class_names(std::size_t num_classes) {
  std::vector<std::string> names;
  for (std::size_t i = 1; i <= num_classes; ++i) names.push_back("class_" + std::to_string(i));
  return names;
}

std::string render_report(const ConfusionMatrix& cm,
                          const std::vector<std::string>& class_names) {
  if (class_names.size() != cm.num_classes()) {
    throw ConfigError("report: " + std::to_string(class_names.size()) + " class names for " +
                      std::to_string(cm.num_classes()) + " classes");
  }
  const double oa = overall_accuracy(cm);
  const double aa = average_accuracy(cm);
  const double k = kappa(cm);
  const std::vector<double> f1 = f1_per_class(cm);

  std::size_t name_width = 24;
  for (const auto& n : class_names) name_width = std::max(name_width, n.size() + 8);

  std::ostringstream out;
  auto row = [&](const std::string& name, double value) {
    out << name;
    for (std::size_t i = name.size(); i < name_width; ++i) out << ' ';
    const std::string v = fixed2(value);
    for (std::size_t i = v.size(); i < 8; ++i) out << ' ';
    out << v << '\n';
  };
  out << "Metric";
  for (std::size_t i = 6; i < name_width; ++i) out << ' ';
  out << "   value\n";
  for (std::size_t i = 0; i < name_width + 8; ++i) out << '-';
  out << '\n';
  for (std::size_t i = 0; i < cm.num_classes(); ++i) {
    row(class_names[i] + " F1 x100", f1[i] * 100.0);
  }
  row("OA x100", oa * 100.0);
  row("AA x100", aa * 100.0);
  row("Kappa x100", k * 100.0);
  out << '\n';
  out << "oa=" << full(oa) << '\n';
  out << "aa=" << full(aa) << '\n';
  out << "kappa=" << full(k) << '\n';
  for (std::size_t i = 0; i < cm.num_classes(); ++i) {
    out << "f1." << sanitize_key(class_names[i]) << '=' << full(f1[i]) << '\n';
  }
  return out.str();
}

}  // namespace sgumlp
