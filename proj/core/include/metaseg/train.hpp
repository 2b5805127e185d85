#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metaseg/checkpoint.hpp"
#include "metaseg/data.hpp"
#include "metaseg/metrics.hpp"
#include "metaseg/model.hpp"

namespace metaseg {

struct TrainConfig {
  // optimizer recipe
  double learning_rate = 3e-4;
  int batch_size = 2;
  double weight_decay = 2.5e-4;
  int max_epochs = 45;
  std::string schedule = "cosine";
  int early_stopping_patience = 10;
  uint64_t seed = 1;
  bool freeze_text_encoder = true;
  std::string prompt_mode = "full";  // full | simple | none

  // model dimensions
  int channels = 32;
  int heads = 4;
  int img_size = 64;
  int stage1_blocks = 2;
  int stage2_blocks = 2;
  int text_blocks = 2;
  int joint_blocks = 2;
  bool use_alignment = true;
  bool use_fusion = true;

  // run behaviour
  std::string precision = "f32";  // f32 | f64
  bool augment = true;
  int eval_every = 1;
  double itm_temperature = 0.07;

  void validate() const;
  std::string to_text() const;
  static TrainConfig from_file(const std::string& path);
  void apply_override(const std::string& key, const std::string& value);

  Dtype dtype() const;
};

ModelConfig model_config_from_train(const TrainConfig& cfg, int num_classes, int vocab_size);

// One tokenized prompt per climate (full mode) or a single shared bundle.
struct PromptLibrary {
  PromptMode mode = PromptMode::kNone;
  std::map<std::string, PromptBundle> by_climate;
  std::optional<PromptBundle> shared;  // simple mode

  const PromptBundle& bundle_for(const std::string& climate_code) const;
};

PromptLibrary build_prompt_library(PromptMode mode, const std::vector<std::string>& class_names,
                                   const std::vector<std::string>& climates,
                                   const ClimateGrid& grid, PromptProvider& provider,
                                   const Tokenizer& tokenizer);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_miou = -1.0;  // -1 when not evaluated
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::vector<LossReport> step_losses;
  double best_val_miou = -1.0;
  int best_epoch = -1;
  bool early_stopped = false;
  int steps_run = 0;
};

// Trains in place; on return the model carries the best-validation weights
// (final weights when there is no validation split).
TrainResult train_model(MetaSegNet& model, const TrainConfig& cfg,
                        const std::vector<LabeledScene>& train_scenes,
                        const std::vector<LabeledScene>& val_scenes,
                        const PromptLibrary* prompts);

struct EvalOptions {
  int batch_size = 2;
  bool flip_tta = false;
  std::optional<int> ignore_label;
};

MetricReport evaluate_model(MetaSegNet& model, const std::vector<LabeledScene>& scenes,
                            const PromptLibrary* prompts, const EvalOptions& opt = {});

struct ZeroShotReport {
  std::vector<std::tuple<std::string, int, double>> per_class;  // name, target id, IoU
  double mean_iou = 0.0;
  std::string to_text() const;
};

// Full-K argmax over the source classes; mapped predictions become the target
// id, everything else counts as an off-category prediction against recall.
ZeroShotReport zero_shot_eval(MetaSegNet& model, const std::vector<LabeledScene>& foreign,
                              const PromptLibrary* prompts,
                              const std::vector<std::pair<int, int>>& mapping,
                              const std::vector<std::string>& target_class_names,
                              const EvalOptions& opt = {});

struct VariantSpec {
  std::string name;
  bool use_alignment = true;
  bool use_fusion = true;
  std::string prompt_mode = "full";
};

struct AblateCell {
  std::string variant;
  uint64_t seed = 0;
  double val_miou = -1.0;
  bool failed = false;
  std::string error;
};

struct AblateTable {
  std::vector<AblateCell> cells;
  std::vector<std::pair<std::string, double>> means;  // variant -> mean mIoU
  std::string to_text() const;
  std::string to_csv() const;
  double mean_of(const std::string& variant) const;
};

// Trains every (variant, seed) cell with a shared seed set; failures are
// recorded per cell and do not stop the grid.
AblateTable run_ablation(
    const TrainConfig& base, const std::vector<VariantSpec>& grid,
    const std::vector<uint64_t>& seeds, const std::vector<LabeledScene>& train_scenes,
    const std::vector<LabeledScene>& val_scenes,
    const std::function<const PromptLibrary*(const std::string& mode)>& library_for);

std::string history_to_text(const TrainResult& r);

}  // namespace metaseg
