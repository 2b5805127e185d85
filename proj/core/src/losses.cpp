#include "metaseg/losses.hpp"

#include <cmath>

namespace metaseg {

namespace {

void check_batch(const LossBatch& batch, const char* op) {
  if (batch.probs.ndim() != 4)
    throw ShapeError(std::string(op) + ": predictions must be [N,K,H,W], got " +
                     shape_str(batch.probs.shape()));
  int64_t n = batch.probs.dim(0), k = batch.probs.dim(1);
  int64_t hw = batch.probs.dim(2) * batch.probs.dim(3);
  if (static_cast<int64_t>(batch.targets.size()) != n * hw)
    throw ShapeError(std::string(op) + ": target size " + std::to_string(batch.targets.size()) +
                     " does not match predictions " + shape_str(batch.probs.shape()));
  for (uint8_t t : batch.targets)
    if (t >= k)
      throw ValueError(std::string(op) + ": target class " + std::to_string(t) +
                       " out of range for K=" + std::to_string(k));
}

// One-hot mask [N,K,H,W] as a constant tensor.
Tensor one_hot(const LossBatch& batch) {
  int64_t n = batch.probs.dim(0), k = batch.probs.dim(1);
  int64_t h = batch.probs.dim(2), w = batch.probs.dim(3);
  std::vector<double> m(static_cast<size_t>(n * k * h * w), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t p = 0; p < h * w; ++p) {
      int64_t cls = batch.targets[static_cast<size_t>(i * h * w + p)];
      m[static_cast<size_t>((i * k + cls) * h * w + p)] = 1.0;
    }
  return Tensor::from({n, k, h, w}, m);
}

// Row-wise log-softmax with a detached max shift, composed from core ops.
Tensor log_softmax_rows(const Tensor& logits) {
  int64_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<double> mx(static_cast<size_t>(rows), 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    double m = logits.at(r * cols);
    for (int64_t c = 1; c < cols; ++c) m = std::max(m, logits.at(r * cols + c));
    mx[static_cast<size_t>(r)] = m;
  }
  Tensor shift = Tensor::from({rows, 1}, mx);
  Tensor centered = sub(logits, shift);
  Tensor lse = add(log(sum(exp(centered), 1, true)), shift);  // [rows,1]
  return sub(logits, lse);
}

// Mean of -logp at the given column per row.
Tensor nll_of(const Tensor& logp, const std::vector<int64_t>& cols) {
  int64_t rows = logp.dim(0), c = logp.dim(1);
  std::vector<double> pick(static_cast<size_t>(rows * c), 0.0);
  for (int64_t r = 0; r < rows; ++r) pick[static_cast<size_t>(r * c + cols[static_cast<size_t>(r)])] = 1.0;
  Tensor mask = Tensor::from({rows, c}, pick);
  return mul_scalar(sum_all(mul(logp, mask)), -1.0 / static_cast<double>(rows));
}

Tensor l2_normalize_rows(const Tensor& x) {
  Tensor sq = sum(mul(x, x), 1, true);
  return mul(x, rsqrt(sq, 1e-12));
}

}  // namespace

Tensor cross_entropy(const LossBatch& batch) {
  check_batch(batch, "cross_entropy");
  int64_t n = batch.probs.dim(0);
  int64_t hw = batch.probs.dim(2) * batch.probs.dim(3);
  Tensor logp = log(clamp(batch.probs, 1e-8, 1.0));
  Tensor picked = mul(logp, one_hot(batch));
  return mul_scalar(sum_all(picked), -1.0 / static_cast<double>(n * hw));
}

Tensor dice_loss(const LossBatch& batch, double eps) {
  check_batch(batch, "dice_loss");
  int64_t n = batch.probs.dim(0), k = batch.probs.dim(1);
  int64_t hw = batch.probs.dim(2) * batch.probs.dim(3);
  Tensor probs_flat = reshape(batch.probs, {n, k, hw});
  Tensor onehot_flat = reshape(one_hot(batch), {n, k, hw});
  Tensor intersect = sum(mul(probs_flat, onehot_flat), 2, false);  // [N,K]
  Tensor pred_sum = sum(probs_flat, 2, false);
  Tensor ref_sum = sum(onehot_flat, 2, false);
  Tensor frac = div(add_scalar(mul_scalar(intersect, 2.0), eps),
                    add_scalar(add(pred_sum, ref_sum), eps));
  return add_scalar(mul_scalar(sum_all(frac), -1.0 / static_cast<double>(n * k)), 1.0);
}

LossReport total_loss(double ce, double dice, double itm) {
  if (!std::isfinite(ce) || !std::isfinite(dice) || !std::isfinite(itm))
    throw NumericError("total_loss: non-finite term (ce=" + std::to_string(ce) + ", dice=" +
                       std::to_string(dice) + ", itm=" + std::to_string(itm) + ")");
  LossReport r;
  r.ce = ce;
  r.dice = dice;
  r.itm = itm;
  r.total = (ce + dice) + itm;
  return r;
}

void FeatureQueue::push(std::vector<double> v) {
  entries_.push_back(std::move(v));
  while (entries_.size() > capacity_) entries_.pop_front();
}

ItmParams make_itm_params(int channels, Rng& rng) {
  ItmParams p;
  int64_t c = channels;
  p.img_proj_w = Tensor::trunc_normal({c, c}, rng, 0.02, true);
  p.img_proj_b = Tensor::zeros({c}, true);
  p.txt_proj_w = Tensor::trunc_normal({c, c}, rng, 0.02, true);
  p.txt_proj_b = Tensor::zeros({c}, true);
  p.head.w1 = Tensor::trunc_normal({2 * c, 2 * c}, rng, 0.02, true);
  p.head.b1 = Tensor::zeros({2 * c}, true);
  p.head.w2 = Tensor::trunc_normal({2 * c, 2}, rng, 0.02, true);
  p.head.b2 = Tensor::zeros({2}, true);
  return p;
}

namespace {

// InfoNCE of anchors vs [in-batch positives ++ queue negatives].
Tensor info_nce(const Tensor& anchors, const Tensor& positives, const FeatureQueue& queue,
                double tau) {
  int64_t b = anchors.dim(0), c = anchors.dim(1);
  std::vector<Tensor> cands{positives};
  if (queue.size() > 0) {
    std::vector<double> buf;
    buf.reserve(queue.size() * static_cast<size_t>(c));
    for (const auto& e : queue.entries()) {
      if (static_cast<int64_t>(e.size()) != c)
        throw ShapeError("itm_loss: queued feature width mismatch");
      buf.insert(buf.end(), e.begin(), e.end());
    }
    cands.push_back(Tensor::from({static_cast<int64_t>(queue.size()), c}, buf));
  }
  Tensor candidates = concat(cands, 0);  // [B+Q, C]
  Tensor logits = mul_scalar(matmul(anchors, transpose_last2(candidates)), 1.0 / tau);
  std::vector<int64_t> own(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) own[static_cast<size_t>(i)] = i;
  return nll_of(log_softmax_rows(logits), own);
}

}  // namespace

Tensor itm_loss(const Tensor& f_img, const Tensor& f_text, const std::vector<uint8_t>& text_pad,
                const ItmParams& params, ItmQueues& queues, double tau) {
  if (f_img.dim(-1) != f_text.dim(-1))
    throw ShapeError("itm_loss: channel mismatch " + shape_str(f_img.shape()) + " vs " +
                     shape_str(f_text.shape()));
  int64_t b = f_img.dim(0);

  Tensor pooled_img = masked_mean_pool(f_img, nullptr);          // [B,C]
  Tensor pooled_txt = masked_mean_pool(f_text, &text_pad);       // [B,C]
  Tensor zi = l2_normalize_rows(linear(pooled_img, params.img_proj_w, params.img_proj_b));
  Tensor zt = l2_normalize_rows(linear(pooled_txt, params.txt_proj_w, params.txt_proj_b));

  // Contrastive: (image anchors vs text candidates) + (text vs image).
  Tensor contrastive = add(info_nce(zi, zt, queues.text, tau), info_nce(zt, zi, queues.image, tau));

  // Match term: aligned pairs labelled 1, every mismatched in-batch pair 0.
  std::vector<Tensor> pairs;
  std::vector<int64_t> labels;
  for (int64_t i = 0; i < b; ++i) {
    pairs.push_back(concat({slice(pooled_img, 0, i, 1), slice(pooled_txt, 0, i, 1)}, 1));
    labels.push_back(1);
  }
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < b; ++j) {
      if (i == j) continue;
      pairs.push_back(concat({slice(pooled_img, 0, i, 1), slice(pooled_txt, 0, j, 1)}, 1));
      labels.push_back(0);
    }
  Tensor logits = itm_head(concat(pairs, 0), params.head);
  Tensor match = nll_of(log_softmax_rows(logits), labels);

  Tensor loss = add(contrastive, match);

  // FIFO update with the detached projected features of this batch.
  {
    NoGradGuard ng;
    std::vector<double> zi_v = zi.to_vector();
    std::vector<double> zt_v = zt.to_vector();
    int64_t c = zi.dim(1);
    for (int64_t i = 0; i < b; ++i) {
      queues.image.push(std::vector<double>(zi_v.begin() + i * c, zi_v.begin() + (i + 1) * c));
      queues.text.push(std::vector<double>(zt_v.begin() + i * c, zt_v.begin() + (i + 1) * c));
    }
  }
  return loss;
}

}  // namespace metaseg
