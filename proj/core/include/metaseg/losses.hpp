#pragma once

#include <deque>
#include <vector>

#include "metaseg/encoders.hpp"
#include "metaseg/tensor.hpp"

namespace metaseg {

// Softmax predictions [N,K,H,W] with dense class-id targets (N*H*W).
struct LossBatch {
  Tensor probs;
  std::vector<uint8_t> targets;
};

// -(1/N) sum_n mean_pixels sum_k y log(clamp(yhat, 1e-8, 1))
Tensor cross_entropy(const LossBatch& batch);

// 1 - (1/(N*K)) sum_{n,k} (2 * sum_pix yhat*y + eps) / (sum_pix yhat + sum_pix y + eps)
Tensor dice_loss(const LossBatch& batch, double eps = 1e-6);

struct LossReport {
  double ce = 0.0;
  double dice = 0.0;
  double itm = 0.0;
  double total = 0.0;  // (ce + dice) + itm, bit-for-bit as summed
};

LossReport total_loss(double ce, double dice, double itm);

// FIFO buffer of pooled feature vectors supplying extra contrastive negatives.
class FeatureQueue {
 public:
  explicit FeatureQueue(size_t capacity = 16) : capacity_(capacity) {}
  void push(std::vector<double> v);
  size_t size() const { return entries_.size(); }
  size_t capacity() const { return capacity_; }
  const std::deque<std::vector<double>>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  size_t capacity_;
  std::deque<std::vector<double>> entries_;
};

// Pooling projections plus the 2-way match head used by the ITM loss.
struct ItmParams {
  Tensor img_proj_w, img_proj_b;  // [C, C]
  Tensor txt_proj_w, txt_proj_b;  // [C, C]
  ItmHeadParams head;             // [2C, 2]
};

ItmParams make_itm_params(int channels, Rng& rng);

struct ItmQueues {
  FeatureQueue image{16};
  FeatureQueue text{16};
};

// Contrastive (symmetric InfoNCE over batch + queue candidates, normalized
// features, temperature tau) plus the 2-way match term over aligned pairs and
// all within-batch mismatched pairs. Enqueues the current projected pooled
// features afterwards.
Tensor itm_loss(const Tensor& f_img, const Tensor& f_text,
                const std::vector<uint8_t>& text_pad, const ItmParams& params,
                ItmQueues& queues, double tau = 0.07);

}  // namespace metaseg
