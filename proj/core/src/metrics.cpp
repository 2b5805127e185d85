#include "metaseg/metrics.hpp"

#include <numeric>
#include <sstream>

namespace metaseg {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (num_classes <= 0) throw ValueError("ConfusionMatrix: need at least one class");
  counts_.assign(static_cast<size_t>(k_) * k_, 0);
}

int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), int64_t{0});
}

void ConfusionMatrix::update(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& ref,
                             std::optional<int> ignore_label) {
  if (pred.size() != ref.size())
    throw ShapeError("confusion_update: prediction and reference sizes differ");
  for (size_t i = 0; i < pred.size(); ++i) {
    int r = ref[i], p = pred[i];
    if (ignore_label && r == *ignore_label) continue;
    if (r >= k_ || p >= k_)
      throw ValueError("confusion_update: class id out of range (ref " + std::to_string(r) +
                       ", pred " + std::to_string(p) + ", K " + std::to_string(k_) + ")");
    counts_[idx(r, p)]++;
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("ConfusionMatrix::merge: class count mismatch");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

int64_t ConfusionMatrix::tp(int k) const { return counts_[idx(k, k)]; }

int64_t ConfusionMatrix::fp(int k) const {
  int64_t col = 0;
  for (int r = 0; r < k_; ++r) col += counts_[idx(r, k)];
  return col - tp(k);
}

int64_t ConfusionMatrix::fn(int k) const {
  int64_t row = 0;
  for (int p = 0; p < k_; ++p) row += counts_[idx(k, p)];
  return row - tp(k);
}

int64_t ConfusionMatrix::tn(int k) const { return total() - tp(k) - fp(k) - fn(k); }

MetricReport derive_metrics(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
  int64_t total = cm.total();
  if (total == 0) throw ValueError("derive_metrics: empty confusion matrix, metrics undefined");
  int k = cm.num_classes();

  MetricReport rep;
  rep.class_names = class_names;
  int64_t trace = 0;
  for (int i = 0; i < k; ++i) trace += cm.tp(i);
  rep.oa = static_cast<double>(trace) / static_cast<double>(total);

  double iou_sum = 0, prec_sum = 0, rec_sum = 0;
  int iou_n = 0, prec_n = 0, rec_n = 0;
  rep.per_class_iou.assign(static_cast<size_t>(k), -1.0);
  rep.per_class_f1.assign(static_cast<size_t>(k), -1.0);
  for (int i = 0; i < k; ++i) {
    int64_t tp = cm.tp(i), fp = cm.fp(i), fn = cm.fn(i);
    double p = -1, r = -1;
    if (tp + fp + fn > 0) {
      rep.per_class_iou[static_cast<size_t>(i)] =
          static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
      iou_sum += rep.per_class_iou[static_cast<size_t>(i)];
      iou_n++;
    }
    if (tp + fp > 0) {
      p = static_cast<double>(tp) / static_cast<double>(tp + fp);
      prec_sum += p;
      prec_n++;
    }
    if (tp + fn > 0) {
      r = static_cast<double>(tp) / static_cast<double>(tp + fn);
      rec_sum += r;
      rec_n++;
    }
    if (p >= 0 && r >= 0 && p + r > 0)
      rep.per_class_f1[static_cast<size_t>(i)] = 2.0 * p * r / (p + r);
    else if (p >= 0 && r >= 0)
      rep.per_class_f1[static_cast<size_t>(i)] = 0.0;
  }
  rep.miou = iou_n ? iou_sum / iou_n : 0.0;
  rep.precision = prec_n ? prec_sum / prec_n : 0.0;
  rep.recall = rec_n ? rec_sum / rec_n : 0.0;
  rep.f1 = (rep.precision + rep.recall) > 0
               ? 2.0 * rep.precision * rep.recall / (rep.precision + rep.recall)
               : 0.0;
  return rep;
}

std::string MetricReport::to_text() const {
  std::ostringstream os;
  os.precision(10);
  os << "oa=" << oa << "\n"
     << "miou=" << miou << "\n"
     << "precision=" << precision << "\n"
     << "recall=" << recall << "\n"
     << "f1=" << f1 << "\n";
  os << "# class\tiou\tf1\n";
  for (size_t i = 0; i < per_class_iou.size(); ++i) {
    std::string name = i < class_names.size() ? class_names[i] : ("class" + std::to_string(i));
    os << name << "\t";
    if (per_class_iou[i] < 0)
      os << "n/a";
    else
      os << per_class_iou[i];
    os << "\t";
    if (per_class_f1[i] < 0)
      os << "n/a";
    else
      os << per_class_f1[i];
    os << "\n";
  }
  return os.str();
}

}  // namespace metaseg
