#pragma once

#include <utility>
#include <vector>

#include "metaseg/tensor.hpp"

namespace metaseg {

struct EncoderConfig {
  int patch_size = 4;
  int window_size = 4;
  int stage1_blocks = 2;
  int stage2_blocks = 2;
  int heads = 4;
  int channels = 64;  // C, the shared image/text width
  int vocab_size = 2;
  int text_blocks = 2;
  int text_len = 250;
  int img_size = 64;  // square input, fixed per model (positional embeddings)

  void validate() const;
  int stage1_channels() const { return channels / 2; }
  int grid1() const { return img_size / patch_size; }        // stage-1 token grid side
  int grid2() const { return img_size / (patch_size * 2); }  // final grid side
};

// F_img in R^{B x L1 x C} with its spatial grid.
struct ImageFeature {
  Tensor values;
  int h = 0;
  int w = 0;
  int tokens() const { return h * w; }
};

// F_text in R^{B x L2 x C}; pad_mask is 1 at padding positions.
struct TextFeature {
  Tensor values;
  std::vector<uint8_t> pad_mask;  // B * L2
};

struct TextBatch {
  std::vector<int> tokens;       // B * L2
  std::vector<uint8_t> pad_mask; // B * L2, 1 = padding
  int batch = 0;
  int len = 0;
};

// Standard pre-norm transformer block (self-attention with output projection,
// then MLP). Zeroed weights make it the identity via the residual paths.
struct AttnBlock {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor w1, b1, w2, b2;
  int heads = 1;
};

AttnBlock make_attn_block(int channels, int heads, int mlp_ratio, Rng& rng);

// key_pad: B * L flags, 1 = exclude key (padded positions get -1e30 logits).
Tensor self_attention_block(const AttnBlock& blk, const Tensor& x,
                            const std::vector<uint8_t>* key_pad = nullptr);

// Multi-head scaled dot-product attention without output projection:
// softmax(Q Kᵀ / sqrt(d) + mask) V with d = C / heads.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                            const std::vector<uint8_t>* key_pad = nullptr);

// Mean over the sequence axis; with pad, padded positions are excluded and an
// all-pad row pools to zeros.
Tensor masked_mean_pool(const Tensor& x, const std::vector<uint8_t>* pad = nullptr);

struct ImageEncoderParams {
  Tensor patch_w, patch_b;  // [3*p*p, C1]
  Tensor pos1;              // [grid1^2, C1]
  std::vector<AttnBlock> stage1;
  Tensor merge_w, merge_b;  // [4*C1, C]
  Tensor pos2;              // [grid2^2, C]
  std::vector<AttnBlock> stage2;
};

ImageEncoderParams make_image_encoder(const EncoderConfig& cfg, Rng& rng);
ImageFeature encode_image(const Tensor& img, const ImageEncoderParams& p,
                          const EncoderConfig& cfg);

struct TextEncoderParams {
  Tensor tok_emb;  // [V, C]
  Tensor pos_emb;  // [L2, C]
  std::vector<AttnBlock> blocks;
};

TextEncoderParams make_text_encoder(const EncoderConfig& cfg, Rng& rng);
TextFeature encode_text(const TextBatch& batch, const TextEncoderParams& p,
                        const EncoderConfig& cfg);

// Two-way match/mismatch logits from a concatenated pooled image/text pair.
// One hidden layer: a purely linear scorer is additive in the two halves and
// cannot rank aligned pairs above shuffled ones even in principle.
struct ItmHeadParams {
  Tensor w1;  // [2C, 2C]
  Tensor b1;  // [2C]
  Tensor w2;  // [2C, 2]
  Tensor b2;  // [2]
};

Tensor itm_head(const Tensor& pooled_pair, const ItmHeadParams& p);

}  // namespace metaseg
