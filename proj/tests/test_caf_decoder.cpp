#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "metaseg/caf_decoder.hpp"

using namespace metaseg;

namespace {

void zero_all(std::initializer_list<Tensor*> ts) {
  for (Tensor* t : ts)
    t->copy_from(std::vector<double>(static_cast<size_t>(t->numel()), 0.0));
}

void zero_block(AttnBlock& b) {
  zero_all({&b.ln1_g, &b.ln1_b, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.ln2_g,
            &b.ln2_b, &b.w1, &b.b1, &b.w2, &b.b2});
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Plain scalar matmul helper for the oracle: (r x k) * (k x c) + bias[c]
std::vector<double> lin_ref(const std::vector<double>& x, int r, int k,
                            const std::vector<double>& w, int c, const std::vector<double>& b) {
  std::vector<double> out(static_cast<size_t>(r) * c, 0.0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) {
      double acc = b.empty() ? 0.0 : b[static_cast<size_t>(j)];
      for (int t = 0; t < k; ++t)
        acc += x[static_cast<size_t>(i * k + t)] * w[static_cast<size_t>(t * c + j)];
      out[static_cast<size_t>(i * c + j)] = acc;
    }
  return out;
}

std::vector<double> layer_norm_ref(const std::vector<double>& x, int rows, int c,
                                   const std::vector<double>& g, const std::vector<double>& b) {
  std::vector<double> out(x.size());
  for (int r = 0; r < rows; ++r) {
    double mu = 0;
    for (int j = 0; j < c; ++j) mu += x[static_cast<size_t>(r * c + j)];
    mu /= c;
    double var = 0;
    for (int j = 0; j < c; ++j) {
      double d = x[static_cast<size_t>(r * c + j)] - mu;
      var += d * d;
    }
    var /= c;
    double rstd = 1.0 / std::sqrt(var + 1e-5);
    for (int j = 0; j < c; ++j)
      out[static_cast<size_t>(r * c + j)] =
          (x[static_cast<size_t>(r * c + j)] - mu) * rstd * g[static_cast<size_t>(j)] +
          b[static_cast<size_t>(j)];
  }
  return out;
}

std::vector<double> mlp_ref(const std::vector<double>& x, int rows, int c,
                            const CrossAttentionParams& p) {
  auto h = lin_ref(x, rows, c, p.mlp_w1.to_vector(), 4 * c, p.mlp_b1.to_vector());
  for (auto& v : h) v = gelu_ref(v);
  return lin_ref(h, rows, 4 * c, p.mlp_w2.to_vector(), c, p.mlp_b2.to_vector());
}

// softmax(q kT / sqrt(d)) v with single head, scalar loops
std::vector<double> attn_ref(const std::vector<double>& q_in, int lq,
                             const std::vector<double>& kv_in, int lk, int c,
                             const CrossAttentionParams& p) {
  auto q = lin_ref(q_in, lq, c, p.q_w.to_vector(), c, p.q_b.to_vector());
  auto k = lin_ref(kv_in, lk, c, p.k_w.to_vector(), c, p.k_b.to_vector());
  auto v = lin_ref(kv_in, lk, c, p.v_w.to_vector(), c, p.v_b.to_vector());
  std::vector<double> out(static_cast<size_t>(lq) * c, 0.0);
  double scale = 1.0 / std::sqrt(static_cast<double>(c));  // one head: d = C
  for (int i = 0; i < lq; ++i) {
    std::vector<double> s(static_cast<size_t>(lk));
    double mx = -1e300;
    for (int j = 0; j < lk; ++j) {
      double acc = 0;
      for (int t = 0; t < c; ++t)
        acc += q[static_cast<size_t>(i * c + t)] * k[static_cast<size_t>(j * c + t)];
      s[static_cast<size_t>(j)] = acc * scale;
      mx = std::max(mx, s[static_cast<size_t>(j)]);
    }
    double z = 0;
    for (int j = 0; j < lk; ++j) {
      s[static_cast<size_t>(j)] = std::exp(s[static_cast<size_t>(j)] - mx);
      z += s[static_cast<size_t>(j)];
    }
    for (int j = 0; j < lk; ++j)
      for (int t = 0; t < c; ++t)
        out[static_cast<size_t>(i * c + t)] +=
            s[static_cast<size_t>(j)] / z * v[static_cast<size_t>(j * c + t)];
  }
  return out;
}

}  // namespace

TEST_CASE("zeroed value and mlp weights make the alignment stage the identity") {
  int c = 8;
  Rng rng(3);
  auto p_img = make_cross_attention(c, 2, rng);
  auto p_txt = make_cross_attention(c, 2, rng);
  zero_all({&p_img.v_w, &p_img.v_b, &p_img.mlp_w1, &p_img.mlp_b1, &p_img.mlp_w2, &p_img.mlp_b2});
  zero_all({&p_txt.v_w, &p_txt.v_b, &p_txt.mlp_w1, &p_txt.mlp_b1, &p_txt.mlp_w2, &p_txt.mlp_b2});

  Tensor f_img = Tensor::randn({2, 5, c}, rng);
  Tensor f_txt = Tensor::randn({2, 3, c}, rng);
  std::vector<uint8_t> pad(6, 0);
  pad[2] = 1;

  auto [img_prime, img_out] = cross_attend_image(f_img, f_txt, p_img, &pad);
  CHECK(img_prime.to_vector() == f_img.to_vector());  // element-wise exact
  CHECK(img_out.to_vector() == f_img.to_vector());
  auto [txt_prime, txt_out] = cross_attend_text(f_txt, img_out, p_txt);
  CHECK(txt_prime.to_vector() == f_txt.to_vector());
  CHECK(txt_out.to_vector() == f_txt.to_vector());
}

TEST_CASE("single unmasked text token gets attention weight exactly one") {
  int c = 6;
  Rng rng(5);
  auto p = make_cross_attention(c, 3, rng);
  Tensor f_img = Tensor::randn({1, 4, c}, rng);
  Tensor f_txt = Tensor::randn({1, 1, c}, rng);
  std::vector<uint8_t> pad(1, 0);
  auto [prime, out] = cross_attend_image(f_img, f_txt, p, &pad);

  Tensor v = linear(f_txt, p.v_w, p.v_b);  // the only key's value
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < c; ++j)
      CHECK(prime.at({0, i, j}) ==
            doctest::Approx(f_img.at({0, i, j}) + v.at({0, 0, j})).epsilon(1e-12));
}

TEST_CASE("single image token: every text position attends with weight one") {
  int c = 6;
  Rng rng(7);
  auto p = make_cross_attention(c, 3, rng);
  Tensor f_txt = Tensor::randn({1, 4, c}, rng);
  Tensor f_img_out = Tensor::randn({1, 1, c}, rng);
  auto [prime, out] = cross_attend_text(f_txt, f_img_out, p);
  Tensor v = linear(f_img_out, p.v_w, p.v_b);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < c; ++j)
      CHECK(out.at({0, i, j}) ==
            doctest::Approx(prime.at({0, i, j}) + v.at({0, 0, j})).epsilon(1e-12));
}

TEST_CASE("cross attention matches an independent scalar evaluation") {
  // B=1, L1=2, L2=2, C=2, one head; the oracle follows the update formulas
  // step by step with plain loops.
  int c = 2;
  Rng rng(11);
  auto p_img = make_cross_attention(c, 1, rng);
  auto p_txt = make_cross_attention(c, 1, rng);
  // use larger weights than init so the attention is far from uniform
  for (Tensor* t : {&p_img.q_w, &p_img.k_w, &p_img.v_w, &p_txt.q_w, &p_txt.k_w, &p_txt.v_w}) {
    auto v = t->to_vector();
    for (auto& x : v) x *= 40.0;
    t->copy_from(v);
  }
  Tensor f_img = Tensor::from({1, 2, c}, {0.3, -0.7, 1.2, 0.4});
  Tensor f_txt = Tensor::from({1, 2, c}, {-0.5, 0.8, 0.9, -0.1});
  std::vector<uint8_t> pad(2, 0);

  auto [prime, out] = cross_attend_image(f_img, f_txt, p_img, &pad);

  auto fi = f_img.to_vector();
  auto ft = f_txt.to_vector();
  auto attn = attn_ref(fi, 2, ft, 2, c, p_img);
  std::vector<double> prime_ref(4), out_ref(4);
  for (int i = 0; i < 4; ++i) prime_ref[static_cast<size_t>(i)] = fi[static_cast<size_t>(i)] + attn[static_cast<size_t>(i)];
  auto ln = layer_norm_ref(prime_ref, 2, c, p_img.norm_g.to_vector(), p_img.norm_b.to_vector());
  auto mlp = mlp_ref(ln, 2, c, p_img);
  for (int i = 0; i < 4; ++i) out_ref[static_cast<size_t>(i)] = prime_ref[static_cast<size_t>(i)] + mlp[static_cast<size_t>(i)];

  auto pv = prime.to_vector();
  auto ov = out.to_vector();
  for (int i = 0; i < 4; ++i) {
    CHECK(pv[static_cast<size_t>(i)] == doctest::Approx(prime_ref[static_cast<size_t>(i)]).epsilon(1e-12));
    CHECK(ov[static_cast<size_t>(i)] == doctest::Approx(out_ref[static_cast<size_t>(i)]).epsilon(1e-12));
  }

  // text side: F'_text = F_text + MLP(LN(F_text)), then attention into image
  auto [tprime, tout] = cross_attend_text(f_txt, out, p_txt);
  auto tmlp = mlp_ref(layer_norm_ref(ft, 2, c, p_txt.norm_g.to_vector(), p_txt.norm_b.to_vector()),
                      2, c, p_txt);
  std::vector<double> tprime_ref(4), tout_ref(4);
  for (int i = 0; i < 4; ++i) tprime_ref[static_cast<size_t>(i)] = ft[static_cast<size_t>(i)] + tmlp[static_cast<size_t>(i)];
  auto tattn = attn_ref(tprime_ref, 2, ov, 2, c, p_txt);
  for (int i = 0; i < 4; ++i) tout_ref[static_cast<size_t>(i)] = tprime_ref[static_cast<size_t>(i)] + tattn[static_cast<size_t>(i)];
  auto tpv = tprime.to_vector();
  auto tov = tout.to_vector();
  for (int i = 0; i < 4; ++i) {
    CHECK(tpv[static_cast<size_t>(i)] == doctest::Approx(tprime_ref[static_cast<size_t>(i)]).epsilon(1e-11));
    CHECK(tov[static_cast<size_t>(i)] == doctest::Approx(tout_ref[static_cast<size_t>(i)]).epsilon(1e-11));
  }
}

TEST_CASE("channel width mismatches are rejected") {
  Rng rng(13);
  auto p = make_cross_attention(4, 2, rng);
  Tensor a = Tensor::zeros({1, 2, 4});
  Tensor b = Tensor::zeros({1, 2, 6});
  CHECK_THROWS_AS(cross_attend_image(a, b, p, nullptr), ShapeError);
}

TEST_CASE("masked text keys receive exactly zero weight") {
  int c = 4;
  Rng rng(17);
  auto p = make_cross_attention(c, 2, rng);
  Tensor f_img = Tensor::randn({1, 3, c}, rng);
  Tensor f_txt = Tensor::randn({1, 3, c}, rng);
  std::vector<uint8_t> pad = {0, 0, 1};

  auto out_a = cross_attend_image(f_img, f_txt, p, &pad).second.to_vector();
  // blow up the masked token: with exactly zero weight nothing may change
  Tensor f_txt_b = f_txt.clone();
  for (int j = 0; j < c; ++j) f_txt_b.set(2 * c + j, 1e12);
  auto out_b = cross_attend_image(f_img, f_txt_b, p, &pad).second.to_vector();
  CHECK(out_a == out_b);
}

TEST_CASE("attention rows over unmasked keys sum to one") {
  // constant value rows pass through untouched iff the weights sum to 1
  int c = 4;
  Rng rng(19);
  auto p = make_cross_attention(c, 2, rng);
  zero_all({&p.mlp_w1, &p.mlp_b1, &p.mlp_w2, &p.mlp_b2});
  Tensor f_img = Tensor::randn({1, 3, c}, rng);
  Tensor f_txt = Tensor::from({1, 2, c}, {1.5, -2.0, 0.25, 3.0, 1.5, -2.0, 0.25, 3.0});
  std::vector<uint8_t> pad(2, 0);
  Tensor v = linear(f_txt, p.v_w, p.v_b);  // both rows identical
  auto [prime, out] = cross_attend_image(f_img, f_txt, p, &pad);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < c; ++j)
      CHECK(prime.at({0, i, j}) ==
            doctest::Approx(f_img.at({0, i, j}) + v.at({0, 0, j})).epsilon(1e-9));
}

TEST_CASE("joint encoding with zero weights is the identity on both parts") {
  int c = 6, l1 = 4, l2 = 3;
  Rng rng(23);
  auto p = make_joint_encoder(c, 3, l1, l2, 2, rng);
  zero_all({&p.img_type, &p.txt_type, &p.pos});
  for (auto& b : p.blocks) zero_block(b);
  Tensor fi = Tensor::randn({2, l1, c}, rng);
  Tensor ft = Tensor::randn({2, l2, c}, rng);
  std::vector<uint8_t> pad(static_cast<size_t>(2 * l2), 0);
  auto [oi, ot] = joint_encode(fi, ft, p, &pad);
  CHECK(oi.to_vector() == fi.to_vector());
  CHECK(ot.to_vector() == ft.to_vector());
}

TEST_CASE("joint encoding preserves token counts through split and concat") {
  int c = 6, l1 = 4, l2 = 3;
  Rng rng(29);
  auto p = make_joint_encoder(c, 3, l1, l2, 2, rng);
  Tensor fi = Tensor::randn({2, l1, c}, rng);
  Tensor ft = Tensor::randn({2, l2, c}, rng);
  auto [oi, ot] = joint_encode(fi, ft, p, nullptr);
  CHECK(oi.shape() == Shape{2, l1, c});
  CHECK(ot.shape() == Shape{2, l2, c});

  Tensor wrong = Tensor::randn({2, l2 + 1, c}, rng);
  CHECK_THROWS_AS(joint_encode(fi, wrong, p, nullptr), ShapeError);
}

TEST_CASE("joint encoder gradient check") {
  int c = 4, l1 = 3, l2 = 2;
  Rng rng(31);
  auto p = make_joint_encoder(c, 2, l1, l2, 1, rng);
  Tensor fi = Tensor::randn({1, l1, c}, rng);
  Tensor ft = Tensor::randn({1, l2, c}, rng);
  auto f = [&](const Tensor& x) {
    auto [oi, ot] = joint_encode(x, ft, p, nullptr);
    return sum_all(add(mul(oi, oi), sum(mul(ot, ot), 1, true)));
  };
  CHECK(fd_check(f, fi, 1e-5, 1e-3).pass);
  auto fw = [&](const Tensor& w) {
    JointEncoderParams q = p;
    q.blocks[0].wq = w;
    auto [oi, ot] = joint_encode(fi, ft, q, nullptr);
    return sum_all(add(mul(oi, oi), sum(mul(ot, ot), 1, true)));
  };
  CHECK(fd_check(fw, p.blocks[0].wq, 1e-5, 1e-3).pass);
}

TEST_CASE("fusion prior: zero projection is the identity, unit prior doubles") {
  int c = 5;
  Rng rng(37);
  FusionParams p;
  p.proj_w = Tensor::zeros({c, c});
  p.proj_b = Tensor::zeros({c});
  Tensor fi = Tensor::randn({2, 3, c}, rng);
  Tensor ft = Tensor::randn({2, 4, c}, rng);
  std::vector<uint8_t> pad(8, 0);
  CHECK(fuse(fi, ft, p, &pad).to_vector() == fi.to_vector());

  p.proj_b = Tensor::full({c}, 1.0);
  auto doubled = fuse(fi, ft, p, &pad).to_vector();
  auto base = fi.to_vector();
  for (size_t i = 0; i < base.size(); ++i)
    CHECK(doubled[i] == doctest::Approx(2 * base[i]).epsilon(1e-12));
}

TEST_CASE("fusion matches an elementwise reimplementation") {
  int c = 4, l1 = 3, l2 = 5, b = 2;
  Rng rng(41);
  FusionParams p = make_fusion(c, rng);
  Tensor fi = Tensor::randn({b, l1, c}, rng);
  Tensor ft = Tensor::randn({b, l2, c}, rng);
  std::vector<uint8_t> pad(static_cast<size_t>(b * l2), 0);
  pad[1] = 1;
  pad[l2 + 3] = 1;

  auto got = fuse(fi, ft, p, &pad).to_vector();

  auto w = p.proj_w.to_vector();
  auto bias = p.proj_b.to_vector();
  for (int bi = 0; bi < b; ++bi) {
    std::vector<double> pooled(static_cast<size_t>(c), 0.0);
    int count = 0;
    for (int j = 0; j < l2; ++j) {
      if (pad[static_cast<size_t>(bi * l2 + j)]) continue;
      count++;
      for (int t = 0; t < c; ++t) pooled[static_cast<size_t>(t)] += ft.at({bi, j, t});
    }
    for (auto& v : pooled) v /= count;
    std::vector<double> g(static_cast<size_t>(c));
    for (int t = 0; t < c; ++t) {
      double acc = bias[static_cast<size_t>(t)];
      for (int s = 0; s < c; ++s) acc += pooled[static_cast<size_t>(s)] * w[static_cast<size_t>(s * c + t)];
      g[static_cast<size_t>(t)] = acc;
    }
    for (int i = 0; i < l1; ++i)
      for (int t = 0; t < c; ++t) {
        double expect = fi.at({bi, i, t}) * (1.0 + g[static_cast<size_t>(t)]);
        CHECK(got[static_cast<size_t>((bi * l1 + i) * c + t)] ==
              doctest::Approx(expect).epsilon(1e-10));
      }
  }
}

TEST_CASE("fusion is invariant to permuting text tokens with their mask") {
  int c = 4, l2 = 5;
  Rng rng(43);
  FusionParams p = make_fusion(c, rng);
  Tensor fi = Tensor::randn({1, 3, c}, rng);
  Tensor ft = Tensor::randn({1, l2, c}, rng);
  std::vector<uint8_t> pad = {0, 1, 0, 0, 1};

  std::vector<int> perm = {4, 2, 0, 3, 1};
  std::vector<double> permuted(static_cast<size_t>(l2) * c);
  std::vector<uint8_t> pad_p(static_cast<size_t>(l2));
  for (int j = 0; j < l2; ++j) {
    pad_p[static_cast<size_t>(j)] = pad[static_cast<size_t>(perm[static_cast<size_t>(j)])];
    for (int t = 0; t < c; ++t)
      permuted[static_cast<size_t>(j * c + t)] = ft.at({0, perm[static_cast<size_t>(j)], t});
  }
  Tensor ftp = Tensor::from({1, l2, c}, permuted);
  auto a = fuse(fi, ft, p, &pad).to_vector();
  auto b = fuse(fi, ftp, p, &pad_p).to_vector();
  for (size_t i = 0; i < a.size(); ++i) CHECK(std::fabs(a[i] - b[i]) < 1e-6);
}

TEST_CASE("segmentation head shapes and constant-field behaviour") {
  int c = 6, k = 4;
  Rng rng(47);
  SegHeadParams p = make_seg_head(c, k, rng);
  Tensor fused = Tensor::randn({2, 64, c}, rng);
  Tensor logits = segment_head(fused, 8, 8, p, 64, 64);
  CHECK(logits.shape() == Shape{2, k, 64, 64});

  std::vector<double> rowvals = {0.3, -0.2, 0.5, 1.0, -0.7, 0.1};
  std::vector<double> constant;
  for (int i = 0; i < 64; ++i) constant.insert(constant.end(), rowvals.begin(), rowvals.end());
  Tensor const_feat = Tensor::from({1, 64, c}, constant);
  Tensor cl = segment_head(const_feat, 8, 8, p, 64, 64);
  for (int cls = 0; cls < k; ++cls) {
    double first = cl.at({0, cls, 0, 0});
    for (int y = 0; y < 64; y += 7)
      for (int x = 0; x < 64; x += 5)
        CHECK(cl.at({0, cls, y, x}) == doctest::Approx(first).epsilon(1e-12));
  }

  CHECK_THROWS_AS(segment_head(fused, 7, 8, p, 64, 64), ShapeError);
}

TEST_CASE("full decoder parameter gradients match finite differences") {
  // toy features: batch 2, 8 image tokens (4x2 grid), 3 text tokens
  int c = 4, heads = 2, l1 = 8, l2 = 3, k = 3;
  Rng rng(53);
  auto p_img = make_cross_attention(c, heads, rng);
  auto p_txt = make_cross_attention(c, heads, rng);
  auto joint = make_joint_encoder(c, heads, l1, l2, 1, rng);
  auto fws = make_fusion(c, rng);
  auto head = make_seg_head(c, k, rng);

  Tensor f_img = Tensor::randn({2, l1, c}, rng);
  Tensor f_txt = Tensor::randn({2, l2, c}, rng);
  std::vector<uint8_t> pad(static_cast<size_t>(2 * l2), 0);
  pad[2] = 1;
  Tensor probe = Tensor::randn({2, k, 8, 4}, rng);

  auto forward = [&]() {
    auto [ip, io] = cross_attend_image(f_img, f_txt, p_img, &pad);
    auto [tp, to] = cross_attend_text(f_txt, io, p_txt);
    auto [ji, jt] = joint_encode(io, to, joint, &pad);
    Tensor fused = fuse(ji, jt, fws, &pad);
    Tensor logits = segment_head(fused, 4, 2, head, 8, 4);
    Tensor probs = softmax(logits, 1);
    return sum_all(mul(probs, probe));  // fixed random weighting, O(1) gradients
  };

  // every decoder parameter
  std::vector<std::pair<std::string, Tensor*>> params;
  auto add_cross = [&](const char* tag, CrossAttentionParams& p) {
    const char* names[] = {"q_w", "q_b", "k_w", "k_b", "v_w", "v_b", "norm_g", "norm_b",
                           "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2"};
    Tensor* ts[] = {&p.q_w, &p.q_b, &p.k_w, &p.k_b, &p.v_w, &p.v_b, &p.norm_g, &p.norm_b,
                    &p.mlp_w1, &p.mlp_b1, &p.mlp_w2, &p.mlp_b2};
    for (int i = 0; i < 12; ++i) params.emplace_back(std::string(tag) + "." + names[i], ts[i]);
  };
  auto add_block = [&](const char* tag, AttnBlock& b) {
    const char* names[] = {"ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                           "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"};
    Tensor* ts[] = {&b.ln1_g, &b.ln1_b, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo,
                    &b.ln2_g, &b.ln2_b, &b.w1, &b.b1, &b.w2, &b.b2};
    for (int i = 0; i < 16; ++i) params.emplace_back(std::string(tag) + "." + names[i], ts[i]);
  };
  add_cross("cross_img", p_img);
  add_cross("cross_txt", p_txt);
  params.emplace_back("joint.img_type", &joint.img_type);
  params.emplace_back("joint.txt_type", &joint.txt_type);
  params.emplace_back("joint.pos", &joint.pos);
  add_block("joint.block0", joint.blocks[0]);
  params.emplace_back("fusion.proj_w", &fws.proj_w);
  params.emplace_back("fusion.proj_b", &fws.proj_b);
  params.emplace_back("head.w", &head.w);
  params.emplace_back("head.b", &head.b);

  for (auto& [name, t] : params) {
    auto f = [&](const Tensor& x) {
      Tensor saved = *t;
      *t = x;
      Tensor y = forward();
      *t = saved;
      return y;
    };
    FdReport rep = fd_check(f, *t, 1e-5, 1e-3, 24, 1234);
    INFO(name << " max rel err " << rep.max_rel_err);
    CHECK(rep.pass);
  }

  // gradients also flow back into both input features
  auto fx = [&](const Tensor& x) {
    Tensor saved = f_img;
    f_img = x;
    Tensor y = forward();
    f_img = saved;
    return y;
  };
  CHECK(fd_check(fx, f_img, 1e-5, 1e-3, 24, 99).pass);
}
