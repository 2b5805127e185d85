#include "metaseg/caf_decoder.hpp"

namespace metaseg {

namespace {
constexpr double kInitStd = 0.02;
}

CrossAttentionParams make_cross_attention(int channels, int heads, Rng& rng) {
  if (channels % heads != 0)
    throw ValueError("cross_attention: channels must be divisible by heads");
  CrossAttentionParams p;
  int64_t c = channels;
  p.q_w = Tensor::trunc_normal({c, c}, rng, kInitStd, true);
  p.q_b = Tensor::zeros({c}, true);
  p.k_w = Tensor::trunc_normal({c, c}, rng, kInitStd, true);
  p.k_b = Tensor::zeros({c}, true);
  p.v_w = Tensor::trunc_normal({c, c}, rng, kInitStd, true);
  p.v_b = Tensor::zeros({c}, true);
  p.norm_g = Tensor::full({c}, 1.0, true);
  p.norm_b = Tensor::zeros({c}, true);
  p.mlp_w1 = Tensor::trunc_normal({c, 4 * c}, rng, kInitStd, true);
  p.mlp_b1 = Tensor::zeros({4 * c}, true);
  p.mlp_w2 = Tensor::trunc_normal({4 * c, c}, rng, kInitStd, true);
  p.mlp_b2 = Tensor::zeros({c}, true);
  p.heads = heads;
  return p;
}

namespace {

Tensor cross_attn(const Tensor& q_in, const Tensor& kv_in, const CrossAttentionParams& p,
                  const std::vector<uint8_t>* kv_pad) {
  if (q_in.dim(-1) != kv_in.dim(-1))
    throw ShapeError("cross_attention: channel widths differ, " + shape_str(q_in.shape()) +
                     " vs " + shape_str(kv_in.shape()));
  Tensor q = linear(q_in, p.q_w, p.q_b);
  Tensor k = linear(kv_in, p.k_w, p.k_b);
  Tensor v = linear(kv_in, p.v_w, p.v_b);
  return scaled_dot_attention(q, k, v, p.heads, kv_pad);
}

}  // namespace

std::pair<Tensor, Tensor> cross_attend_image(const Tensor& f_img, const Tensor& f_text,
                                             const CrossAttentionParams& p,
                                             const std::vector<uint8_t>* text_pad) {
  Tensor prime = add(f_img, cross_attn(f_img, f_text, p, text_pad));
  Tensor out = add(prime, mlp_block(layer_norm(prime, p.norm_g, p.norm_b), p.mlp_w1, p.mlp_b1,
                                    p.mlp_w2, p.mlp_b2));
  return {prime, out};
}

std::pair<Tensor, Tensor> cross_attend_text(const Tensor& f_text, const Tensor& f_img_out,
                                            const CrossAttentionParams& p) {
  Tensor prime = add(f_text, mlp_block(layer_norm(f_text, p.norm_g, p.norm_b), p.mlp_w1, p.mlp_b1,
                                       p.mlp_w2, p.mlp_b2));
  Tensor out = add(prime, cross_attn(prime, f_img_out, p, nullptr));
  return {prime, out};
}

JointEncoderParams make_joint_encoder(int channels, int heads, int l1, int l2, int blocks,
                                      Rng& rng) {
  JointEncoderParams p;
  int64_t c = channels;
  p.img_type = Tensor::trunc_normal({c}, rng, kInitStd, true);
  p.txt_type = Tensor::trunc_normal({c}, rng, kInitStd, true);
  p.pos = Tensor::trunc_normal({static_cast<int64_t>(l1) + l2, c}, rng, kInitStd, true);
  for (int i = 0; i < blocks; ++i) p.blocks.push_back(make_attn_block(channels, heads, 4, rng));
  return p;
}

std::pair<Tensor, Tensor> joint_encode(const Tensor& f_img, const Tensor& f_text,
                                       const JointEncoderParams& p,
                                       const std::vector<uint8_t>* text_pad) {
  int64_t b = f_img.dim(0), l1 = f_img.dim(1), l2 = f_text.dim(1);
  if (l1 + l2 != p.pos.dim(0))
    throw ShapeError("joint_encode: sequence length " + std::to_string(l1 + l2) +
                     " does not match position table " + shape_str(p.pos.shape()));
  Tensor xi = add(f_img, p.img_type);
  Tensor xt = add(f_text, p.txt_type);
  Tensor x = add(concat({xi, xt}, 1), p.pos);

  std::vector<uint8_t> joint_pad;
  const std::vector<uint8_t>* pad_ptr = nullptr;
  if (text_pad) {
    joint_pad.assign(static_cast<size_t>(b * (l1 + l2)), 0);
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < l2; ++j)
        joint_pad[static_cast<size_t>(i * (l1 + l2) + l1 + j)] =
            (*text_pad)[static_cast<size_t>(i * l2 + j)];
    pad_ptr = &joint_pad;
  }
  for (const auto& blk : p.blocks) x = self_attention_block(blk, x, pad_ptr);
  return {slice(x, 1, 0, l1), slice(x, 1, l1, l2)};
}

FusionParams make_fusion(int channels, Rng& rng) {
  FusionParams p;
  int64_t c = channels;
  p.proj_w = Tensor::trunc_normal({c, c}, rng, kInitStd, true);
  p.proj_b = Tensor::zeros({c}, true);
  return p;
}

Tensor fuse(const Tensor& f_img_joint, const Tensor& f_text_joint, const FusionParams& p,
            const std::vector<uint8_t>* text_pad) {
  Tensor g = linear(masked_mean_pool(f_text_joint, text_pad), p.proj_w, p.proj_b);  // [B,C]
  int64_t b = g.dim(0), c = g.dim(1);
  Tensor prior = reshape(g, {b, 1, c});
  return add(f_img_joint, mul(f_img_joint, prior));
}

SegHeadParams make_seg_head(int channels, int num_classes, Rng& rng) {
  SegHeadParams p;
  p.w = Tensor::trunc_normal({channels, num_classes}, rng, kInitStd, true);
  p.b = Tensor::zeros({num_classes}, true);
  return p;
}

Tensor segment_head(const Tensor& fused, int h, int w, const SegHeadParams& p, int out_h,
                    int out_w) {
  int64_t b = fused.dim(0), l = fused.dim(1);
  if (l != static_cast<int64_t>(h) * w)
    throw ShapeError("segment_head: token count " + std::to_string(l) + " != " +
                     std::to_string(h) + "x" + std::to_string(w));
  int64_t k = p.w.dim(1);
  Tensor logits = linear(fused, p.w, p.b);                               // [B,L,K]
  Tensor grid = permute(reshape(logits, {b, h, w, k}), {0, 3, 1, 2});    // [B,K,h,w]
  return bilinear_upsample(grid, out_h, out_w);
}

}  // namespace metaseg
