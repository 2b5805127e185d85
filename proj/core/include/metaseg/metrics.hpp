#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "metaseg/common.hpp"

namespace metaseg {

// K x K pixel-count matrix; rows = reference class, columns = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return k_; }
  int64_t count(int ref, int pred) const { return counts_[idx(ref, pred)]; }
  int64_t total() const;

  // Pixels equal to ignore_label (in ref) are skipped.
  void update(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& ref,
              std::optional<int> ignore_label = std::nullopt);
  void merge(const ConfusionMatrix& other);

  int64_t tp(int k) const;
  int64_t fp(int k) const;
  int64_t fn(int k) const;
  int64_t tn(int k) const;

 private:
  size_t idx(int ref, int pred) const { return static_cast<size_t>(ref) * k_ + pred; }
  int k_;
  std::vector<int64_t> counts_;
};

struct MetricReport {
  double oa = 0.0;
  double miou = 0.0;
  double precision = 0.0;  // macro
  double recall = 0.0;     // macro
  double f1 = 0.0;         // from macro precision/recall
  std::vector<double> per_class_iou;   // -1 where undefined
  std::vector<double> per_class_f1;    // -1 where undefined
  std::vector<std::string> class_names;

  std::string to_text() const;  // metric=value lines plus per-class table
};

// OA, IoU/mIoU, precision, recall, F1 from a confusion matrix. Classes with a
// zero denominator are excluded from the macro means. Throws on an all-zero
// matrix (metrics undefined).
MetricReport derive_metrics(const ConfusionMatrix& cm,
                            const std::vector<std::string>& class_names = {});

}  // namespace metaseg
