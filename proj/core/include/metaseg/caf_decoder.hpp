#pragma once

#include <utility>
#include <vector>

#include "metaseg/encoders.hpp"
#include "metaseg/tensor.hpp"

namespace metaseg {

// Projections and MLP for one crossmodal attention fusion round. No output
// projection: attention is softmax(q kᵀ / sqrt(d)) v with d = C / heads.
struct CrossAttentionParams {
  Tensor q_w, q_b;  // delta_q
  Tensor k_w, k_b;  // rho_k
  Tensor v_w, v_b;  // rho_v
  Tensor norm_g, norm_b;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  int heads = 1;
};

CrossAttentionParams make_cross_attention(int channels, int heads, Rng& rng);

struct AlignmentTrace {
  Tensor f_img_prime, f_img_out;
  Tensor f_text_prime, f_text_out;
};

// F'_img = F_img + attn(q=F_img, kv=F_text); F_img_out = F'_img + MLP(LN(F'_img)).
std::pair<Tensor, Tensor> cross_attend_image(const Tensor& f_img, const Tensor& f_text,
                                             const CrossAttentionParams& p,
                                             const std::vector<uint8_t>* text_pad);

// F'_text = F_text + MLP(LN(F_text)); F_text_out = F'_text + attn(q=F'_text, kv=F_img_out).
std::pair<Tensor, Tensor> cross_attend_text(const Tensor& f_text, const Tensor& f_img_out,
                                            const CrossAttentionParams& p);

// Joint sequence encoding: concat image+text tokens with learned modality and
// position embeddings, run standard transformer blocks, split back.
struct JointEncoderParams {
  Tensor img_type, txt_type;  // [C]
  Tensor pos;                 // [L1+L2, C]
  std::vector<AttnBlock> blocks;
};

JointEncoderParams make_joint_encoder(int channels, int heads, int l1, int l2, int blocks,
                                      Rng& rng);
std::pair<Tensor, Tensor> joint_encode(const Tensor& f_img, const Tensor& f_text,
                                       const JointEncoderParams& p,
                                       const std::vector<uint8_t>* text_pad);

// Channel-wise global text prior: fused = F_img + F_img * g, g = proj(pool(F_text)).
struct FusionParams {
  Tensor proj_w, proj_b;  // [C, C]
};

FusionParams make_fusion(int channels, Rng& rng);
Tensor fuse(const Tensor& f_img_joint, const Tensor& f_text_joint, const FusionParams& p,
            const std::vector<uint8_t>* text_pad);

struct SegHeadParams {
  Tensor w;  // [C, K]
  Tensor b;  // [K]
};

SegHeadParams make_seg_head(int channels, int num_classes, Rng& rng);

// [B,L1,C] tokens on an h x w grid -> 1x1 projection to K classes, then
// align-corners bilinear upsampling to (out_h, out_w). Returns [B,K,H,W].
Tensor segment_head(const Tensor& fused, int h, int w, const SegHeadParams& p, int out_h,
                    int out_w);

}  // namespace metaseg
