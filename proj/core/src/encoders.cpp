#include "metaseg/encoders.hpp"

namespace metaseg {

namespace {
constexpr double kMaskValue = -1e30;
constexpr double kInitStd = 0.02;

Tensor param(const Shape& s, Rng& rng) { return Tensor::trunc_normal(s, rng, kInitStd, true); }
Tensor zeros_param(const Shape& s) { return Tensor::zeros(s, true); }
Tensor ones_param(const Shape& s) { return Tensor::full(s, 1.0, true); }

// Additive attention mask [B,1,1,L] from pad flags (B*L, 1 = pad).
Tensor additive_key_mask(const std::vector<uint8_t>& pad, int64_t b, int64_t l) {
  std::vector<double> m(pad.size());
  for (size_t i = 0; i < pad.size(); ++i) m[i] = pad[i] ? kMaskValue : 0.0;
  Tensor t = Tensor::from({b, 1, 1, l}, m);
  return t;
}

}  // namespace

void EncoderConfig::validate() const {
  if (channels <= 0 || heads <= 0) throw ValueError("EncoderConfig: channels/heads must be positive");
  if (channels % heads != 0) throw ValueError("EncoderConfig: channels must be divisible by heads");
  if (channels % 2 != 0) throw ValueError("EncoderConfig: channels must be even (stage-1 width is C/2)");
  if (stage1_channels() % heads != 0)
    throw ValueError("EncoderConfig: stage-1 width C/2 must be divisible by heads");
  if (img_size % (patch_size * 2) != 0)
    throw ShapeError("EncoderConfig: image side " + std::to_string(img_size) +
                     " not divisible by patch*2 = " + std::to_string(patch_size * 2));
  if (grid1() % window_size != 0 || grid2() % window_size != 0)
    throw ShapeError("EncoderConfig: token grids " + std::to_string(grid1()) + "/" +
                     std::to_string(grid2()) + " not divisible by window " +
                     std::to_string(window_size));
  if (text_len <= 0 || vocab_size < 2) throw ValueError("EncoderConfig: bad text settings");
}

AttnBlock make_attn_block(int channels, int heads, int mlp_ratio, Rng& rng) {
  AttnBlock b;
  int64_t c = channels;
  int64_t hdim = c * mlp_ratio;
  b.ln1_g = ones_param({c});
  b.ln1_b = zeros_param({c});
  b.wq = param({c, c}, rng);
  b.bq = zeros_param({c});
  b.wk = param({c, c}, rng);
  b.bk = zeros_param({c});
  b.wv = param({c, c}, rng);
  b.bv = zeros_param({c});
  b.wo = param({c, c}, rng);
  b.bo = zeros_param({c});
  b.ln2_g = ones_param({c});
  b.ln2_b = zeros_param({c});
  b.w1 = param({c, hdim}, rng);
  b.b1 = zeros_param({hdim});
  b.w2 = param({hdim, c}, rng);
  b.b2 = zeros_param({c});
  b.heads = heads;
  return b;
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                            const std::vector<uint8_t>* key_pad) {
  int64_t b = q.dim(0), lq = q.dim(1), c = q.dim(2);
  int64_t lk = k.dim(1);
  if (k.dim(2) != c || v.dim(2) != c)
    throw ShapeError("attention: channel mismatch " + shape_str(q.shape()) + " vs " +
                     shape_str(k.shape()));
  if (c % heads != 0) throw ShapeError("attention: channels not divisible by heads");
  int64_t d = c / heads;

  auto split = [&](const Tensor& t, int64_t l) {
    return permute(reshape(t, {b, l, heads, d}), {0, 2, 1, 3});  // [B,h,L,d]
  };
  Tensor qh = split(q, lq);
  Tensor kh = split(k, lk);
  Tensor vh = split(v, lk);

  Tensor scores = mul_scalar(matmul(qh, transpose_last2(kh)), 1.0 / std::sqrt(static_cast<double>(d)));
  if (key_pad) {
    if (static_cast<int64_t>(key_pad->size()) != b * lk)
      throw ShapeError("attention: pad mask size mismatch");
    scores = add(scores, additive_key_mask(*key_pad, b, lk));
  }
  Tensor attn = softmax(scores, -1);
  Tensor out = matmul(attn, vh);                      // [B,h,Lq,d]
  return reshape(permute(out, {0, 2, 1, 3}), {b, lq, c});
}

Tensor self_attention_block(const AttnBlock& blk, const Tensor& x,
                            const std::vector<uint8_t>* key_pad) {
  Tensor h = layer_norm(x, blk.ln1_g, blk.ln1_b);
  Tensor q = linear(h, blk.wq, blk.bq);
  Tensor k = linear(h, blk.wk, blk.bk);
  Tensor v = linear(h, blk.wv, blk.bv);
  Tensor a = linear(scaled_dot_attention(q, k, v, blk.heads, key_pad), blk.wo, blk.bo);
  Tensor x1 = add(x, a);
  Tensor m = mlp_block(layer_norm(x1, blk.ln2_g, blk.ln2_b), blk.w1, blk.b1, blk.w2, blk.b2);
  return add(x1, m);
}

Tensor masked_mean_pool(const Tensor& x, const std::vector<uint8_t>* pad) {
  int64_t b = x.dim(0), l = x.dim(1);
  std::vector<double> keep(static_cast<size_t>(b * l), 1.0);
  std::vector<double> inv_count(static_cast<size_t>(b), 1.0 / static_cast<double>(l));
  if (pad) {
    if (static_cast<int64_t>(pad->size()) != b * l)
      throw ShapeError("masked_mean_pool: pad mask size mismatch");
    for (int64_t i = 0; i < b; ++i) {
      int64_t count = 0;
      for (int64_t j = 0; j < l; ++j) {
        bool is_pad = (*pad)[static_cast<size_t>(i * l + j)] != 0;
        keep[static_cast<size_t>(i * l + j)] = is_pad ? 0.0 : 1.0;
        if (!is_pad) count++;
      }
      inv_count[static_cast<size_t>(i)] = count > 0 ? 1.0 / static_cast<double>(count) : 0.0;
    }
  }
  Tensor mask = Tensor::from({b, l, 1}, keep);
  Tensor inv = Tensor::from({b, 1}, inv_count);
  return mul(sum(mul(x, mask), 1, false), inv);  // [B,C]
}

// ---------------------------------------------------------------------------
// Image encoder: 4x4 patch embedding, windowed attention stage, 2x merge,
// second windowed stage. Shifted windows use a cyclic roll of the token grid.
// ---------------------------------------------------------------------------

namespace {

// Token-grid gather indices for window partition of a [B, h*w, C] sequence.
std::vector<int64_t> window_partition_index(int64_t b, int64_t h, int64_t w, int64_t win) {
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(b * h * w));
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t wy = 0; wy < h / win; ++wy)
      for (int64_t wx = 0; wx < w / win; ++wx)
        for (int64_t iy = 0; iy < win; ++iy)
          for (int64_t ix = 0; ix < win; ++ix)
            idx.push_back(bi * h * w + (wy * win + iy) * w + wx * win + ix);
  return idx;
}

std::vector<int64_t> invert_index(const std::vector<int64_t>& idx) {
  std::vector<int64_t> inv(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) inv[static_cast<size_t>(idx[i])] = static_cast<int64_t>(i);
  return inv;
}

std::vector<int64_t> roll_index(int64_t b, int64_t h, int64_t w, int64_t dy, int64_t dx) {
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(b * h * w));
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        int64_t sy = ((y + dy) % h + h) % h;
        int64_t sx = ((x + dx) % w + w) % w;
        idx.push_back(bi * h * w + sy * w + sx);
      }
  return idx;
}

Tensor gather_tokens(const Tensor& x, const std::vector<int64_t>& idx, int64_t c) {
  Tensor flat = reshape(x, {-1, c});
  return gather_rows(flat, idx);
}

// One windowed-attention block; shifted blocks roll the grid by win/2.
Tensor windowed_block(const AttnBlock& blk, const Tensor& x, int64_t h, int64_t w, int64_t win,
                      bool shifted) {
  int64_t b = x.dim(0), c = x.dim(2);
  Tensor t = x;
  if (shifted) t = reshape(gather_tokens(t, roll_index(b, h, w, win / 2, win / 2), c), {b, h * w, c});
  int64_t nw = (h / win) * (w / win);
  auto part = window_partition_index(b, h, w, win);
  Tensor windows = reshape(gather_tokens(t, part, c), {b * nw, win * win, c});
  Tensor out = self_attention_block(blk, windows);
  Tensor merged = reshape(gather_tokens(reshape(out, {b, h * w, c}), invert_index(part), c),
                          {b, h * w, c});
  if (shifted)
    merged = reshape(gather_tokens(merged, roll_index(b, h, w, -(win / 2), -(win / 2)), c),
                     {b, h * w, c});
  return merged;
}

}  // namespace

ImageEncoderParams make_image_encoder(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  ImageEncoderParams p;
  int64_t c1 = cfg.stage1_channels();
  int64_t c = cfg.channels;
  int64_t pp = static_cast<int64_t>(cfg.patch_size) * cfg.patch_size * 3;
  p.patch_w = param({pp, c1}, rng);
  p.patch_b = zeros_param({c1});
  p.pos1 = param({static_cast<int64_t>(cfg.grid1()) * cfg.grid1(), c1}, rng);
  for (int i = 0; i < cfg.stage1_blocks; ++i) p.stage1.push_back(make_attn_block(static_cast<int>(c1), cfg.heads, 4, rng));
  p.merge_w = param({4 * c1, c}, rng);
  p.merge_b = zeros_param({c});
  p.pos2 = param({static_cast<int64_t>(cfg.grid2()) * cfg.grid2(), c}, rng);
  for (int i = 0; i < cfg.stage2_blocks; ++i) p.stage2.push_back(make_attn_block(static_cast<int>(c), cfg.heads, 4, rng));
  return p;
}

ImageFeature encode_image(const Tensor& img, const ImageEncoderParams& p,
                          const EncoderConfig& cfg) {
  if (img.ndim() != 4 || img.dim(1) != 3)
    throw ShapeError("encode_image: expected [B,3,H,W], got " + shape_str(img.shape()));
  int64_t b = img.dim(0), ih = img.dim(2), iw = img.dim(3);
  int64_t ps = cfg.patch_size;
  if (ih % (ps * 2) != 0 || iw % (ps * 2) != 0)
    throw ShapeError("encode_image: " + std::to_string(ih) + "x" + std::to_string(iw) +
                     " not divisible by " + std::to_string(ps * 2));
  int64_t h1 = ih / ps, w1 = iw / ps;
  if (h1 != cfg.grid1() || w1 != cfg.grid1())
    throw ShapeError("encode_image: input size does not match configured img_size");

  // Patchify: [B,3,H,W] -> [B*N1, 3*ps*ps], channel-major within a patch.
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(b * h1 * w1 * 3 * ps * ps));
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t py = 0; py < h1; ++py)
      for (int64_t px = 0; px < w1; ++px)
        for (int64_t ch = 0; ch < 3; ++ch)
          for (int64_t dy = 0; dy < ps; ++dy)
            for (int64_t dx = 0; dx < ps; ++dx)
              idx.push_back(((bi * 3 + ch) * ih + py * ps + dy) * iw + px * ps + dx);
  Tensor patches = gather_elems(img, idx, {b * h1 * w1, 3 * ps * ps});
  Tensor x = reshape(linear(patches, p.patch_w, p.patch_b), {b, h1 * w1, cfg.stage1_channels()});
  x = add(x, p.pos1);

  int64_t win = cfg.window_size;
  for (size_t i = 0; i < p.stage1.size(); ++i)
    x = windowed_block(p.stage1[i], x, h1, w1, win, i % 2 == 1);

  // 2x2 patch merge: concat neighbors then project C/2*4 -> C.
  int64_t h2 = h1 / 2, w2 = w1 / 2;
  int64_t c1 = cfg.stage1_channels();
  std::vector<int64_t> midx;
  midx.reserve(static_cast<size_t>(b * h2 * w2 * 4));
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t y = 0; y < h2; ++y)
      for (int64_t x2 = 0; x2 < w2; ++x2) {
        midx.push_back(bi * h1 * w1 + (2 * y) * w1 + 2 * x2);
        midx.push_back(bi * h1 * w1 + (2 * y) * w1 + 2 * x2 + 1);
        midx.push_back(bi * h1 * w1 + (2 * y + 1) * w1 + 2 * x2);
        midx.push_back(bi * h1 * w1 + (2 * y + 1) * w1 + 2 * x2 + 1);
      }
  Tensor merged = reshape(gather_tokens(x, midx, c1), {b, h2 * w2, 4 * c1});
  Tensor y = reshape(linear(merged, p.merge_w, p.merge_b), {b, h2 * w2, cfg.channels});
  y = add(y, p.pos2);
  for (size_t i = 0; i < p.stage2.size(); ++i)
    y = windowed_block(p.stage2[i], y, h2, w2, win, i % 2 == 1);

  ImageFeature f;
  f.values = y;
  f.h = static_cast<int>(h2);
  f.w = static_cast<int>(w2);
  return f;
}

// ---------------------------------------------------------------------------
// Text encoder: token + position embeddings, standard transformer blocks.
// ---------------------------------------------------------------------------

TextEncoderParams make_text_encoder(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  TextEncoderParams p;
  p.tok_emb = param({cfg.vocab_size, cfg.channels}, rng);
  p.pos_emb = param({cfg.text_len, cfg.channels}, rng);
  for (int i = 0; i < cfg.text_blocks; ++i)
    p.blocks.push_back(make_attn_block(cfg.channels, cfg.heads, 4, rng));
  return p;
}

TextFeature encode_text(const TextBatch& batch, const TextEncoderParams& p,
                        const EncoderConfig& cfg) {
  if (batch.len != cfg.text_len)
    throw ValueError("encode_text: sequences must have length " + std::to_string(cfg.text_len));
  if (static_cast<int>(batch.tokens.size()) != batch.batch * batch.len ||
      batch.pad_mask.size() != batch.tokens.size())
    throw ShapeError("encode_text: batch buffers inconsistent");
  int64_t b = batch.batch, l = batch.len;
  Tensor x = reshape(embedding(p.tok_emb, batch.tokens), {b, l, cfg.channels});
  x = add(x, p.pos_emb);
  for (const auto& blk : p.blocks) x = self_attention_block(blk, x, &batch.pad_mask);
  TextFeature f;
  f.values = x;
  f.pad_mask = batch.pad_mask;
  return f;
}

Tensor itm_head(const Tensor& pooled_pair, const ItmHeadParams& p) {
  if (pooled_pair.ndim() != 2 || pooled_pair.dim(1) != p.w1.dim(0))
    throw ShapeError("itm_head: expected [B,2C] input matching head weights");
  return linear(gelu(linear(pooled_pair, p.w1, p.b1)), p.w2, p.b2);
}

}  // namespace metaseg
