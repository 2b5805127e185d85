#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "metaseg/losses.hpp"

using namespace metaseg;

namespace {

// Random softmax-normalized predictions [N,K,H,W] plus targets.
LossBatch random_batch(Rng& rng, int n, int k, int h, int w) {
  Tensor logits = Tensor::randn({n, k, h, w}, rng, 1.5);
  LossBatch b;
  b.probs = softmax(logits, 1);
  b.targets.resize(static_cast<size_t>(n) * h * w);
  for (auto& t : b.targets) t = static_cast<uint8_t>(rng.uniform_int(static_cast<uint64_t>(k)));
  return b;
}

LossBatch one_hot_batch(Rng& rng, int n, int k, int h, int w) {
  LossBatch b;
  b.targets.resize(static_cast<size_t>(n) * h * w);
  for (auto& t : b.targets) t = static_cast<uint8_t>(rng.uniform_int(static_cast<uint64_t>(k)));
  std::vector<double> p(static_cast<size_t>(n) * k * h * w, 0.0);
  for (int i = 0; i < n; ++i)
    for (int px = 0; px < h * w; ++px)
      p[static_cast<size_t>((i * k + b.targets[static_cast<size_t>(i * h * w + px)]) * h * w + px)] = 1.0;
  b.probs = Tensor::from({n, k, h, w}, p);
  return b;
}

// Plain-loop oracles, no tensor ops involved.
double ce_oracle(const LossBatch& b) {
  int64_t n = b.probs.dim(0), k = b.probs.dim(1), hw = b.probs.dim(2) * b.probs.dim(3);
  double total = 0;
  for (int64_t i = 0; i < n; ++i) {
    double sample = 0;
    for (int64_t p = 0; p < hw; ++p) {
      int cls = b.targets[static_cast<size_t>(i * hw + p)];
      double v = b.probs.at((i * k + cls) * hw + p);
      v = std::min(std::max(v, 1e-8), 1.0);
      sample += std::log(v);
    }
    total += sample / static_cast<double>(hw);
  }
  return -total / static_cast<double>(n);
}

double dice_oracle(const LossBatch& b, double eps = 1e-6) {
  int64_t n = b.probs.dim(0), k = b.probs.dim(1), hw = b.probs.dim(2) * b.probs.dim(3);
  double acc = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < k; ++c) {
      double inter = 0, psum = 0, rsum = 0;
      for (int64_t p = 0; p < hw; ++p) {
        double pv = b.probs.at((i * k + c) * hw + p);
        double rv = b.targets[static_cast<size_t>(i * hw + p)] == c ? 1.0 : 0.0;
        inter += pv * rv;
        psum += pv;
        rsum += rv;
      }
      acc += (2 * inter + eps) / (psum + rsum + eps);
    }
  return 1.0 - acc / static_cast<double>(n * k);
}

ItmParams identity_itm(int c) {
  ItmParams p;
  std::vector<double> eye(static_cast<size_t>(c) * c, 0.0);
  for (int i = 0; i < c; ++i) eye[static_cast<size_t>(i * c + i)] = 1.0;
  p.img_proj_w = Tensor::from({c, c}, eye);
  p.img_proj_b = Tensor::zeros({c});
  p.txt_proj_w = Tensor::from({c, c}, eye);
  p.txt_proj_b = Tensor::zeros({c});
  p.head.w1 = Tensor::zeros({2 * c, 2 * c});
  p.head.b1 = Tensor::zeros({2 * c});
  p.head.w2 = Tensor::zeros({2 * c, 2});
  p.head.b2 = Tensor::zeros({2});
  return p;
}

}  // namespace

TEST_CASE("cross entropy of an exact one-hot prediction is ~0") {
  Rng rng(3);
  auto b = one_hot_batch(rng, 2, 3, 4, 4);
  CHECK(cross_entropy(b).at(0) <= 1e-7);
}

TEST_CASE("cross entropy of a uniform prediction is ln K") {
  int n = 2, k = 4, h = 4, w = 4;
  Tensor probs = Tensor::full({n, k, h, w}, 0.25);
  LossBatch b{probs, std::vector<uint8_t>(static_cast<size_t>(n) * h * w, 2)};
  CHECK(std::fabs(cross_entropy(b).at(0) - std::log(4.0)) < 1e-9);
}

TEST_CASE("cross entropy matches the per-pixel oracle") {
  Rng rng(5);
  auto b = random_batch(rng, 2, 3, 4, 4);
  CHECK(std::fabs(cross_entropy(b).at(0) - ce_oracle(b)) < 1e-10);
}

TEST_CASE("dice of a perfect prediction is ~0 and disjoint masks give ~1") {
  Rng rng(7);
  auto b = one_hot_batch(rng, 2, 3, 4, 4);
  CHECK(std::fabs(dice_loss(b).at(0)) < 1e-6);

  // binary task, prediction and target disjoint everywhere
  int n = 1, h = 4, w = 4;
  std::vector<double> p(static_cast<size_t>(n) * 2 * h * w, 0.0);
  for (int px = 0; px < h * w; ++px) p[static_cast<size_t>(px)] = 1.0;  // predict class 0
  LossBatch d{Tensor::from({n, 2, h, w}, p),
              std::vector<uint8_t>(static_cast<size_t>(n) * h * w, 1)};  // truth class 1
  CHECK(std::fabs(dice_loss(d).at(0) - 1.0) < 1e-3);
}

TEST_CASE("dice matches the summation oracle and stays in [0, 1]") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    auto b = random_batch(rng, 2, 3, 4, 4);
    double v = dice_loss(b).at(0);
    CHECK(std::fabs(v - dice_oracle(b)) < 1e-10);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0 + 1e-6);
    CHECK(cross_entropy(b).at(0) >= 0.0);
  }
}

TEST_CASE("loss shape and class range validation") {
  Rng rng(13);
  auto b = random_batch(rng, 1, 3, 2, 2);
  b.targets.pop_back();
  CHECK_THROWS_AS(cross_entropy(b), ShapeError);
  auto c = random_batch(rng, 1, 3, 2, 2);
  c.targets[0] = 9;
  CHECK_THROWS_AS(dice_loss(c), ValueError);
}

TEST_CASE("total loss is the exact term sum") {
  auto z = total_loss(0, 0, 0);
  CHECK(z.total == 0.0);
  auto r = total_loss(1.0, 0.5, 0.25);
  CHECK(r.total == 1.75);
  double a = 0.1234567891234, b = 1e-7, c = 3.14159;
  CHECK(total_loss(a, b, c).total == (a + b) + c);  // bit-for-bit
  CHECK_THROWS_AS(total_loss(std::nan(""), 0, 0), NumericError);
}

TEST_CASE("gradient of a summed loss equals the sum of per-term gradients") {
  Rng rng(17);
  std::vector<double> xv = Tensor::randn({1 * 3 * 4 * 4}, rng).to_vector();
  std::vector<uint8_t> targets(16);
  for (auto& t : targets) t = static_cast<uint8_t>(rng.uniform_int(3));

  auto grads = [&](int which) {
    Tensor x = Tensor::from({1, 3, 4, 4}, xv, true);
    LossBatch b{softmax(x, 1), targets};
    Tensor l;
    if (which == 0) l = add(cross_entropy(b), dice_loss(b));
    if (which == 1) l = cross_entropy(b);
    if (which == 2) l = dice_loss(b);
    backward(l);
    return x.grad_vector();
  };
  auto combined = grads(0);
  auto g1 = grads(1);
  auto g2 = grads(2);
  for (size_t i = 0; i < combined.size(); ++i)
    CHECK(std::fabs(combined[i] - (g1[i] + g2[i])) < 1e-12);
}

TEST_CASE("losses are invariant to shuffling the batch order") {
  Rng rng(19);
  int n = 3, k = 3, h = 4, w = 4;
  auto b = random_batch(rng, n, k, h, w);

  // permute samples (2,0,1)
  std::vector<int> perm{2, 0, 1};
  std::vector<double> pv(static_cast<size_t>(n) * k * h * w);
  std::vector<uint8_t> pt(static_cast<size_t>(n) * h * w);
  for (int i = 0; i < n; ++i) {
    int src = perm[static_cast<size_t>(i)];
    for (int64_t j = 0; j < static_cast<int64_t>(k) * h * w; ++j)
      pv[static_cast<size_t>(i * k * h * w + j)] = b.probs.at(src * k * h * w + j);
    for (int64_t j = 0; j < static_cast<int64_t>(h) * w; ++j)
      pt[static_cast<size_t>(i * h * w + j)] = b.targets[static_cast<size_t>(src * h * w + j)];
  }
  LossBatch shuffled{Tensor::from({n, k, h, w}, pv), pt};
  CHECK(std::fabs(cross_entropy(b).at(0) - cross_entropy(shuffled).at(0)) < 1e-12);
  CHECK(std::fabs(dice_loss(b).at(0) - dice_loss(shuffled).at(0)) < 1e-12);

  // itm: same permutation applied to both modalities
  int c = 4, l1 = 2, l2 = 3;
  Tensor fi = Tensor::randn({n, l1, c}, rng);
  Tensor ft = Tensor::randn({n, l2, c}, rng);
  std::vector<uint8_t> pad(static_cast<size_t>(n) * l2, 0);
  auto permute_rows = [&](const Tensor& t, int64_t rowlen) {
    std::vector<double> out(static_cast<size_t>(n) * rowlen);
    for (int i = 0; i < n; ++i)
      for (int64_t j = 0; j < rowlen; ++j)
        out[static_cast<size_t>(i * rowlen + j)] = t.at(perm[static_cast<size_t>(i)] * rowlen + j);
    return Tensor::from(t.shape(), out);
  };
  ItmParams ip = identity_itm(c);
  ItmQueues q1, q2;
  double va = itm_loss(fi, ft, pad, ip, q1).at(0);
  double vb = itm_loss(permute_rows(fi, l1 * c), permute_rows(ft, l2 * c), pad, ip, q2).at(0);
  CHECK(std::fabs(va - vb) < 1e-12);
}

TEST_CASE("feature queue keeps the last 16 entries in push order") {
  FeatureQueue q(16);
  for (int i = 0; i < 17; ++i) q.push({static_cast<double>(i)});
  CHECK(q.size() == 16);
  CHECK(q.entries().front()[0] == 1.0);  // entry 0 evicted
  CHECK(q.entries().back()[0] == 16.0);

  for (size_t n : {3u, 16u, 40u}) {
    FeatureQueue p(16);
    for (size_t i = 0; i < n; ++i) p.push({static_cast<double>(i)});
    size_t expect = std::min<size_t>(n, 16);
    CHECK(p.size() == expect);
    for (size_t i = 0; i < expect; ++i)
      CHECK(p.entries()[i][0] == static_cast<double>(n - expect + i));
  }
}

TEST_CASE("itm contrastive term vanishes for a single pair with empty queues") {
  int c = 4;
  Tensor fi = Tensor::from({1, 1, c}, {1, 0, 0, 0});
  Tensor ft = Tensor::from({1, 1, c}, {0, 1, 0, 0});
  std::vector<uint8_t> pad(1, 0);
  ItmParams ip = identity_itm(c);  // zero match head -> match term is exactly ln 2
  ItmQueues q;
  double v = itm_loss(fi, ft, pad, ip, q).at(0);
  CHECK(v == std::log(2.0));  // contrastive = -log softmax(single logit) = 0 exactly
  CHECK(q.image.size() == 1);
  CHECK(q.text.size() == 1);
}

TEST_CASE("aligned pair scores lower than a pair swapped against a queue entry") {
  int c = 6;
  double tau = 0.07;
  auto unit = [&](int axis) {
    std::vector<double> v(static_cast<size_t>(c), 0.0);
    v[static_cast<size_t>(axis)] = 1.0;
    return v;
  };
  ItmParams ip = identity_itm(c);

  auto run = [&](const std::vector<double>& img, const std::vector<double>& txt) {
    ItmQueues q;
    for (int i = 0; i < 4; ++i) {
      q.image.push(unit(2 + i));
      q.text.push(unit(2 + i));
    }
    Tensor fi = Tensor::from({1, 1, c}, img);
    Tensor ft = Tensor::from({1, 1, c}, txt);
    std::vector<uint8_t> pad(1, 0);
    return itm_loss(fi, ft, pad, ip, q, tau).at(0);
  };

  double aligned = run(unit(0), unit(0));     // identical pooled features
  double swapped = run(unit(0), unit(2));     // text equals a queue negative
  CHECK(aligned < swapped);

  // brute-force check of the aligned case over the 1x5 similarity matrix:
  // sim(anchor, positive)=1, four orthogonal negatives at 0; both directions.
  double z = std::exp(1.0 / tau) + 4.0 * std::exp(0.0);
  double expect = 2.0 * -std::log(std::exp(1.0 / tau) / z) + std::log(2.0);
  CHECK(std::fabs(aligned - expect) < 1e-9);
}

TEST_CASE("itm loss is differentiable end to end") {
  Rng rng(23);
  int n = 2, c = 4, l1 = 3, l2 = 3;
  Tensor ft = Tensor::randn({n, l2, c}, rng);
  std::vector<uint8_t> pad(static_cast<size_t>(n) * l2, 0);
  pad[2] = 1;
  Rng prng(31);
  ItmParams ip = make_itm_params(c, prng);
  Tensor fi = Tensor::randn({n, l1, c}, rng);
  auto f = [&](const Tensor& x) {
    ItmQueues q;
    q.image.push(std::vector<double>(static_cast<size_t>(c), 0.5));
    q.text.push(std::vector<double>(static_cast<size_t>(c), -0.25));
    return itm_loss(x, ft, pad, ip, q);
  };
  CHECK(fd_check(f, fi, 1e-5, 1e-4).pass);
  auto g = [&](const Tensor& x) {
    ItmQueues q;
    return itm_loss(fi, x, pad, ip, q);
  };
  CHECK(fd_check(g, ft, 1e-5, 1e-4).pass);
}

TEST_CASE("itm rejects mismatched channel widths") {
  Tensor fi = Tensor::zeros({1, 2, 4});
  Tensor ft = Tensor::zeros({1, 2, 6});
  std::vector<uint8_t> pad(2, 0);
  ItmParams ip = identity_itm(4);
  ItmQueues q;
  CHECK_THROWS_AS(itm_loss(fi, ft, pad, ip, q), ShapeError);
}
