#pragma once

#include <string>
#include <utility>
#include <vector>

#include "metaseg/caf_decoder.hpp"
#include "metaseg/encoders.hpp"
#include "metaseg/losses.hpp"

namespace metaseg {

enum class PromptMode { kFull, kSimple, kNone };

PromptMode prompt_mode_from_string(const std::string& s);
const char* prompt_mode_name(PromptMode m);

struct ModelConfig {
  EncoderConfig enc;
  int num_classes = 5;
  int joint_blocks = 2;
  bool use_alignment = true;
  bool use_fusion = true;
  PromptMode prompt_mode = PromptMode::kFull;
  bool freeze_text_encoder = true;

  // prompt none <=> no alignment; fusion requires alignment.
  void normalize();
  void validate() const;
};

// Image encoder + (optionally) text encoder, crossmodal alignment, joint
// encoding, text-prior fusion, and the segmentation head.
class MetaSegNet {
 public:
  MetaSegNet(ModelConfig cfg, uint64_t seed);

  struct Output {
    Tensor logits;          // [B,K,H,W]
    Tensor f_img;           // encoder output [B,L1,C]
    Tensor f_text;          // encoder output [B,L2,C] (alignment path only)
    AlignmentTrace trace;   // filled when alignment runs
    bool has_text = false;
  };

  // text may be null only in prompt-none mode. text_feature, when given,
  // short-circuits the (frozen) text encoder with a precomputed feature.
  Output forward(const Tensor& images, const TextBatch* text,
                 const TextFeature* text_feature = nullptr);

  TextFeature encode_text_feature(const TextBatch& text);

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<std::pair<std::string, Tensor>> trainable_parameters() const;

  const ModelConfig& config() const { return cfg_; }
  ItmParams& itm() { return itm_; }
  const TextEncoderParams& text_encoder() const { return txt_enc_; }

  // Bit-exact forward reproducibility helper: checksum over all parameters.
  double parameter_checksum(const std::string& prefix = "") const;
  void copy_parameters_from(const MetaSegNet& other);

 private:
  ModelConfig cfg_;
  ImageEncoderParams img_enc_;
  TextEncoderParams txt_enc_;
  CrossAttentionParams cross_img_, cross_txt_;
  JointEncoderParams joint_;
  FusionParams fusion_;
  SegHeadParams head_;
  ItmParams itm_;

  bool has_text_branch() const { return cfg_.prompt_mode != PromptMode::kNone; }
  void collect(std::vector<std::pair<std::string, Tensor>>& out, bool trainable_only) const;
};

}  // namespace metaseg
