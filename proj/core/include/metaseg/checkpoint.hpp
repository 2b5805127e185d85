#pragma once

#include <optional>
#include <string>

#include "metaseg/model.hpp"
#include "metaseg/optimizer.hpp"

namespace metaseg {

std::string model_config_to_text(const ModelConfig& cfg);
ModelConfig model_config_from_text(const std::string& text);

struct CheckpointData {
  ModelConfig config;
  Dtype dtype = Dtype::f64;
  int epoch = 0;
  double best_val_miou = 0.0;
  std::vector<std::pair<std::string, std::pair<Shape, std::vector<double>>>> params;
  bool has_optimizer = false;
  int64_t optimizer_steps = 0;
  std::vector<std::vector<double>> opt_m, opt_v;  // aligned with params
};

void save_checkpoint(const std::string& path, const MetaSegNet& model, const AdamW* opt,
                     int epoch, double best_val_miou);

CheckpointData load_checkpoint_data(const std::string& path);

// Rebuilds the model (under the checkpoint's precision mode) and restores
// every parameter bit-exactly.
MetaSegNet restore_model(const CheckpointData& data);

void restore_optimizer(AdamW& opt, const CheckpointData& data);

}  // namespace metaseg
