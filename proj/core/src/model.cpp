#include "metaseg/model.hpp"

namespace metaseg {

PromptMode prompt_mode_from_string(const std::string& s) {
  if (s == "full") return PromptMode::kFull;
  if (s == "simple") return PromptMode::kSimple;
  if (s == "none") return PromptMode::kNone;
  throw ValueError("unknown prompt mode '" + s + "' (expected full|simple|none)");
}

const char* prompt_mode_name(PromptMode m) {
  switch (m) {
    case PromptMode::kFull: return "full";
    case PromptMode::kSimple: return "simple";
    case PromptMode::kNone: return "none";
  }
  return "?";
}

void ModelConfig::normalize() {
  if (prompt_mode == PromptMode::kNone) {
    use_alignment = false;
    use_fusion = false;
  }
  if (!use_alignment) {
    use_fusion = false;
    prompt_mode = PromptMode::kNone;
  }
}

void ModelConfig::validate() const {
  enc.validate();
  if (num_classes < 2) throw ValueError("model needs at least 2 classes");
  if (use_fusion && !use_alignment) throw ValueError("fusion requires the alignment stage");
  if (prompt_mode == PromptMode::kNone && use_alignment)
    throw ValueError("alignment requires a text prompt mode");
}

MetaSegNet::MetaSegNet(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.normalize();
  cfg_.validate();
  Rng rng(seed ^ 0xa11ce5eadbeef001ull);
  img_enc_ = make_image_encoder(cfg_.enc, rng);
  if (has_text_branch()) {
    txt_enc_ = make_text_encoder(cfg_.enc, rng);
    cross_img_ = make_cross_attention(cfg_.enc.channels, cfg_.enc.heads, rng);
    cross_txt_ = make_cross_attention(cfg_.enc.channels, cfg_.enc.heads, rng);
    int l1 = cfg_.enc.grid2() * cfg_.enc.grid2();
    joint_ = make_joint_encoder(cfg_.enc.channels, cfg_.enc.heads, l1, cfg_.enc.text_len,
                                cfg_.joint_blocks, rng);
    fusion_ = make_fusion(cfg_.enc.channels, rng);
    itm_ = make_itm_params(cfg_.enc.channels, rng);
    if (cfg_.freeze_text_encoder) {
      txt_enc_.tok_emb.set_requires_grad(false);
      txt_enc_.pos_emb.set_requires_grad(false);
      for (auto& b : txt_enc_.blocks) {
        for (Tensor* t : {&b.ln1_g, &b.ln1_b, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo,
                          &b.bo, &b.ln2_g, &b.ln2_b, &b.w1, &b.b1, &b.w2, &b.b2})
          t->set_requires_grad(false);
      }
    }
  }
  head_ = make_seg_head(cfg_.enc.channels, cfg_.num_classes, rng);
}

TextFeature MetaSegNet::encode_text_feature(const TextBatch& text) {
  if (!has_text_branch()) throw ValueError("model has no text branch");
  if (cfg_.freeze_text_encoder) {
    NoGradGuard ng;
    return encode_text(text, txt_enc_, cfg_.enc);
  }
  return encode_text(text, txt_enc_, cfg_.enc);
}

MetaSegNet::Output MetaSegNet::forward(const Tensor& images, const TextBatch* text,
                                       const TextFeature* text_feature) {
  Output out;
  ImageFeature fi = encode_image(images, img_enc_, cfg_.enc);
  out.f_img = fi.values;
  int64_t hw = images.dim(2);
  int64_t ww = images.dim(3);

  if (!has_text_branch()) {
    out.logits = segment_head(fi.values, fi.h, fi.w, head_, static_cast<int>(hw),
                              static_cast<int>(ww));
    return out;
  }

  TextFeature ft;
  if (text_feature) {
    ft = *text_feature;
  } else {
    if (!text) throw ValueError("forward: text batch required in prompt mode " +
                                std::string(prompt_mode_name(cfg_.prompt_mode)));
    ft = encode_text_feature(*text);
  }
  if (ft.values.dim(0) != images.dim(0))
    throw ShapeError("forward: text batch size does not match image batch");
  out.f_text = ft.values;
  out.has_text = true;

  auto [img_prime, img_out] = cross_attend_image(fi.values, ft.values, cross_img_, &ft.pad_mask);
  auto [txt_prime, txt_out] = cross_attend_text(ft.values, img_out, cross_txt_);
  out.trace = {img_prime, img_out, txt_prime, txt_out};

  auto [img_joint, txt_joint] = joint_encode(img_out, txt_out, joint_, &ft.pad_mask);
  Tensor x = cfg_.use_fusion ? fuse(img_joint, txt_joint, fusion_, &ft.pad_mask) : img_joint;
  out.logits =
      segment_head(x, fi.h, fi.w, head_, static_cast<int>(hw), static_cast<int>(ww));
  return out;
}

namespace {

void add_block(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
               const AttnBlock& b) {
  out.emplace_back(prefix + ".ln1_g", b.ln1_g);
  out.emplace_back(prefix + ".ln1_b", b.ln1_b);
  out.emplace_back(prefix + ".wq", b.wq);
  out.emplace_back(prefix + ".bq", b.bq);
  out.emplace_back(prefix + ".wk", b.wk);
  out.emplace_back(prefix + ".bk", b.bk);
  out.emplace_back(prefix + ".wv", b.wv);
  out.emplace_back(prefix + ".bv", b.bv);
  out.emplace_back(prefix + ".wo", b.wo);
  out.emplace_back(prefix + ".bo", b.bo);
  out.emplace_back(prefix + ".ln2_g", b.ln2_g);
  out.emplace_back(prefix + ".ln2_b", b.ln2_b);
  out.emplace_back(prefix + ".w1", b.w1);
  out.emplace_back(prefix + ".b1", b.b1);
  out.emplace_back(prefix + ".w2", b.w2);
  out.emplace_back(prefix + ".b2", b.b2);
}

void add_cross(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
               const CrossAttentionParams& p) {
  out.emplace_back(prefix + ".q_w", p.q_w);
  out.emplace_back(prefix + ".q_b", p.q_b);
  out.emplace_back(prefix + ".k_w", p.k_w);
  out.emplace_back(prefix + ".k_b", p.k_b);
  out.emplace_back(prefix + ".v_w", p.v_w);
  out.emplace_back(prefix + ".v_b", p.v_b);
  out.emplace_back(prefix + ".norm_g", p.norm_g);
  out.emplace_back(prefix + ".norm_b", p.norm_b);
  out.emplace_back(prefix + ".mlp_w1", p.mlp_w1);
  out.emplace_back(prefix + ".mlp_b1", p.mlp_b1);
  out.emplace_back(prefix + ".mlp_w2", p.mlp_w2);
  out.emplace_back(prefix + ".mlp_b2", p.mlp_b2);
}

}  // namespace

void MetaSegNet::collect(std::vector<std::pair<std::string, Tensor>>& out,
                         bool trainable_only) const {
  std::vector<std::pair<std::string, Tensor>> all;
  all.emplace_back("img_enc.patch_w", img_enc_.patch_w);
  all.emplace_back("img_enc.patch_b", img_enc_.patch_b);
  all.emplace_back("img_enc.pos1", img_enc_.pos1);
  for (size_t i = 0; i < img_enc_.stage1.size(); ++i)
    add_block(all, "img_enc.stage1." + std::to_string(i), img_enc_.stage1[i]);
  all.emplace_back("img_enc.merge_w", img_enc_.merge_w);
  all.emplace_back("img_enc.merge_b", img_enc_.merge_b);
  all.emplace_back("img_enc.pos2", img_enc_.pos2);
  for (size_t i = 0; i < img_enc_.stage2.size(); ++i)
    add_block(all, "img_enc.stage2." + std::to_string(i), img_enc_.stage2[i]);

  if (has_text_branch()) {
    all.emplace_back("txt_enc.tok_emb", txt_enc_.tok_emb);
    all.emplace_back("txt_enc.pos_emb", txt_enc_.pos_emb);
    for (size_t i = 0; i < txt_enc_.blocks.size(); ++i)
      add_block(all, "txt_enc.block." + std::to_string(i), txt_enc_.blocks[i]);
    add_cross(all, "caf.cross_img", cross_img_);
    add_cross(all, "caf.cross_txt", cross_txt_);
    all.emplace_back("caf.joint.img_type", joint_.img_type);
    all.emplace_back("caf.joint.txt_type", joint_.txt_type);
    all.emplace_back("caf.joint.pos", joint_.pos);
    for (size_t i = 0; i < joint_.blocks.size(); ++i)
      add_block(all, "caf.joint.block." + std::to_string(i), joint_.blocks[i]);
    all.emplace_back("caf.fusion.proj_w", fusion_.proj_w);
    all.emplace_back("caf.fusion.proj_b", fusion_.proj_b);
    all.emplace_back("itm.img_proj_w", itm_.img_proj_w);
    all.emplace_back("itm.img_proj_b", itm_.img_proj_b);
    all.emplace_back("itm.txt_proj_w", itm_.txt_proj_w);
    all.emplace_back("itm.txt_proj_b", itm_.txt_proj_b);
    all.emplace_back("itm.head_w1", itm_.head.w1);
    all.emplace_back("itm.head_b1", itm_.head.b1);
    all.emplace_back("itm.head_w2", itm_.head.w2);
    all.emplace_back("itm.head_b2", itm_.head.b2);
  }
  all.emplace_back("head.w", head_.w);
  all.emplace_back("head.b", head_.b);

  for (auto& [name, t] : all)
    if (!trainable_only || t.requires_grad()) out.emplace_back(name, t);
}

std::vector<std::pair<std::string, Tensor>> MetaSegNet::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  collect(out, false);
  return out;
}

std::vector<std::pair<std::string, Tensor>> MetaSegNet::trainable_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  collect(out, true);
  return out;
}

double MetaSegNet::parameter_checksum(const std::string& prefix) const {
  double acc = 0;
  int64_t count = 0;
  for (const auto& [name, t] : named_parameters()) {
    if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
    int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) acc += t.at(i) * static_cast<double>((i % 97) + 1);
    count += n;
  }
  return acc + static_cast<double>(count) * 1e-9;
}

void MetaSegNet::copy_parameters_from(const MetaSegNet& other) {
  auto mine = named_parameters();
  auto theirs = other.named_parameters();
  if (mine.size() != theirs.size())
    throw ValueError("copy_parameters_from: parameter lists differ");
  for (size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].first != theirs[i].first || mine[i].second.shape() != theirs[i].second.shape())
      throw ValueError("copy_parameters_from: mismatch at " + mine[i].first);
    mine[i].second.copy_from(theirs[i].second.to_vector());
  }
}

}  // namespace metaseg
