#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sgumlp/errors.hpp"

namespace sgumlp {

// Rows reference, columns prediction; labels are 1-based on the accumulate
// interface and offset internally.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  void accumulate(std::uint16_t reference, std::uint16_t predicted);
  void merge(const ConfusionMatrix& other);

  std::size_t num_classes() const { return classes_; }
  std::uint64_t count(std::size_t ref, std::size_t pred) const {
    return counts_[ref * classes_ + pred];
  }
  std::uint64_t& count(std::size_t ref, std::size_t pred) {
    return counts_[ref * classes_ + pred];
  }
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t ref) const;
  std::uint64_t col_sum(std::size_t pred) const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

double overall_accuracy(const ConfusionMatrix& cm);
// Mean per-class recall; every class must have at least one reference sample.
double average_accuracy(const ConfusionMatrix& cm);
// (p_o - p_e)/(1 - p_e) with p_e from the row/column marginal product.
double kappa(const ConfusionMatrix& cm);
// 2PR/(P+R) per class, 0 when P+R is degenerate.
std::vector<double> f1_per_class(const ConfusionMatrix& cm);

// Human table (per-class F1 rows, then OAx100/AAx100/kappa x100, 2 decimals)
// followed by machine-readable key=value lines that parse back exactly.
std::string render_report(const ConfusionMatrix& cm,
                          const std::vector<std::string>& class_names);

// "class_1".."class_C"
std::vector<std::string> default_class_names(std::size_t num_classes);

}  // namespace sgumlp
