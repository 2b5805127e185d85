#include "metaseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace metaseg {

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (learning_rate <= 0 || weight_decay < 0 || batch_size <= 0 || max_epochs < 0)
    throw ValueError("train config: hyperparameters must be positive");
  if (schedule != "cosine" && schedule != "constant")
    throw ValueError("train config: unknown schedule '" + schedule + "'");
  if (precision != "f32" && precision != "f64")
    throw ValueError("train config: precision must be f32 or f64");
  prompt_mode_from_string(prompt_mode);
}

Dtype TrainConfig::dtype() const { return precision == "f64" ? Dtype::f64 : Dtype::f32; }

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os.precision(12);
  os << "learning_rate=" << learning_rate << "\n"
     << "batch_size=" << batch_size << "\n"
     << "weight_decay=" << weight_decay << "\n"
     << "max_epochs=" << max_epochs << "\n"
     << "schedule=" << schedule << "\n"
     << "early_stopping_patience=" << early_stopping_patience << "\n"
     << "seed=" << seed << "\n"
     << "freeze_text_encoder=" << (freeze_text_encoder ? 1 : 0) << "\n"
     << "prompt_mode=" << prompt_mode << "\n"
     << "channels=" << channels << "\n"
     << "heads=" << heads << "\n"
     << "img_size=" << img_size << "\n"
     << "stage1_blocks=" << stage1_blocks << "\n"
     << "stage2_blocks=" << stage2_blocks << "\n"
     << "text_blocks=" << text_blocks << "\n"
     << "joint_blocks=" << joint_blocks << "\n"
     << "use_alignment=" << (use_alignment ? 1 : 0) << "\n"
     << "use_fusion=" << (use_fusion ? 1 : 0) << "\n"
     << "precision=" << precision << "\n"
     << "augment=" << (augment ? 1 : 0) << "\n"
     << "eval_every=" << eval_every << "\n"
     << "itm_temperature=" << itm_temperature << "\n";
  return os.str();
}

void TrainConfig::apply_override(const std::string& key, const std::string& value) {
  auto b = [&]() { return value == "1" || value == "true" || value == "yes"; };
  if (key == "learning_rate") learning_rate = std::stod(value);
  else if (key == "batch_size") batch_size = std::stoi(value);
  else if (key == "weight_decay") weight_decay = std::stod(value);
  else if (key == "max_epochs") max_epochs = std::stoi(value);
  else if (key == "schedule") schedule = value;
  else if (key == "early_stopping_patience") early_stopping_patience = std::stoi(value);
  else if (key == "seed") seed = std::stoull(value);
  else if (key == "freeze_text_encoder") freeze_text_encoder = b();
  else if (key == "prompt_mode") prompt_mode = value;
  else if (key == "channels") channels = std::stoi(value);
  else if (key == "heads") heads = std::stoi(value);
  else if (key == "img_size") img_size = std::stoi(value);
  else if (key == "stage1_blocks") stage1_blocks = std::stoi(value);
  else if (key == "stage2_blocks") stage2_blocks = std::stoi(value);
  else if (key == "text_blocks") text_blocks = std::stoi(value);
  else if (key == "joint_blocks") joint_blocks = std::stoi(value);
  else if (key == "use_alignment") use_alignment = b();
  else if (key == "use_fusion") use_fusion = b();
  else if (key == "precision") precision = value;
  else if (key == "augment") augment = b();
  else if (key == "eval_every") eval_every = std::stoi(value);
  else if (key == "itm_temperature") itm_temperature = std::stod(value);
  else throw ValueError("unknown train config key '" + key + "'");
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    lineno++;
    if (line.empty() || line[0] == '#') continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError("config " + path + ": line " + std::to_string(lineno) + " is not key=value");
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    while (!key.empty() && key.back() == ' ') key.pop_back();
    while (!value.empty() && (value.back() == '\r' || value.back() == ' ')) value.pop_back();
    size_t vstart = value.find_first_not_of(' ');
    value = vstart == std::string::npos ? "" : value.substr(vstart);
    cfg.apply_override(key, value);
  }
  return cfg;
}

ModelConfig model_config_from_train(const TrainConfig& cfg, int num_classes, int vocab_size) {
  ModelConfig m;
  m.enc.channels = cfg.channels;
  m.enc.heads = cfg.heads;
  m.enc.img_size = cfg.img_size;
  m.enc.stage1_blocks = cfg.stage1_blocks;
  m.enc.stage2_blocks = cfg.stage2_blocks;
  m.enc.text_blocks = cfg.text_blocks;
  m.enc.vocab_size = std::max(vocab_size, 2);
  m.num_classes = num_classes;
  m.joint_blocks = cfg.joint_blocks;
  m.use_alignment = cfg.use_alignment;
  m.use_fusion = cfg.use_fusion;
  m.prompt_mode = prompt_mode_from_string(cfg.prompt_mode);
  m.freeze_text_encoder = cfg.freeze_text_encoder;
  m.normalize();
  return m;
}

// ---------------------------------------------------------------------------
// Prompt library
// ---------------------------------------------------------------------------

const PromptBundle& PromptLibrary::bundle_for(const std::string& climate_code) const {
  if (mode == PromptMode::kSimple) {
    if (!shared) throw ValueError("prompt library: simple bundle missing");
    return *shared;
  }
  auto it = by_climate.find(climate_code);
  if (it == by_climate.end())
    throw ValueError("prompt library: no bundle for climate " + climate_code);
  return it->second;
}

PromptLibrary build_prompt_library(PromptMode mode, const std::vector<std::string>& class_names,
                                   const std::vector<std::string>& climates,
                                   const ClimateGrid& grid, PromptProvider& provider,
                                   const Tokenizer& tokenizer) {
  PromptLibrary lib;
  lib.mode = mode;
  if (mode == PromptMode::kNone) return lib;
  if (mode == PromptMode::kSimple) {
    lib.shared = simple_prompt_bundle(tokenizer);
    return lib;
  }
  for (const auto& code : climates) {
    if (lib.by_climate.count(code)) continue;
    auto [lat, lon] = zone_fixture_coords(code);
    ImageMetadata meta;
    meta.latitude = lat;
    meta.longitude = lon;
    meta.region_name = "synthetic-" + code;
    lib.by_climate.emplace(code, assemble_bundle(meta, class_names, grid, provider, tokenizer));
  }
  return lib;
}

// ---------------------------------------------------------------------------
// Batch assembly and the per-climate text-feature cache
// ---------------------------------------------------------------------------

namespace {

Tensor scenes_to_images(const std::vector<const LabeledScene*>& batch) {
  int64_t b = static_cast<int64_t>(batch.size());
  int n = batch[0]->size;
  std::vector<double> buf;
  buf.reserve(static_cast<size_t>(b) * 3 * n * n);
  for (const auto* s : batch) {
    auto v = s->image.to_vector();
    buf.insert(buf.end(), v.begin(), v.end());
  }
  return Tensor::from({b, 3, n, n}, buf);
}

std::vector<uint8_t> scenes_to_targets(const std::vector<const LabeledScene*>& batch) {
  std::vector<uint8_t> t;
  for (const auto* s : batch) t.insert(t.end(), s->labels.begin(), s->labels.end());
  return t;
}

TextBatch bundles_to_text_batch(const std::vector<const PromptBundle*>& bundles) {
  TextBatch tb;
  tb.batch = static_cast<int>(bundles.size());
  tb.len = kPromptLength;
  for (const auto* b : bundles) {
    tb.tokens.insert(tb.tokens.end(), b->token_ids.begin(), b->token_ids.end());
    tb.pad_mask.insert(tb.pad_mask.end(), b->pad_mask.begin(), b->pad_mask.end());
  }
  return tb;
}

// For frozen text encoders the per-climate feature is computed once and then
// stitched per batch as a constant; otherwise the encoder runs on every batch.
class TextFeatureCache {
 public:
  TextFeatureCache(MetaSegNet& model, const PromptLibrary* lib) : model_(model), lib_(lib) {}

  bool active() const {
    return lib_ && lib_->mode != PromptMode::kNone &&
           model_.config().prompt_mode != PromptMode::kNone;
  }

  // Returns the stitched batch feature for frozen encoders, or encodes live.
  TextFeature batch_feature(const std::vector<const LabeledScene*>& batch) {
    std::vector<const PromptBundle*> bundles;
    for (const auto* s : batch) bundles.push_back(&lib_->bundle_for(s->climate_code));
    if (!model_.config().freeze_text_encoder) return model_.encode_text_feature(bundles_to_text_batch(bundles));

    int64_t c = model_.config().enc.channels;
    int64_t l = kPromptLength;
    std::vector<double> values;
    values.reserve(batch.size() * static_cast<size_t>(l * c));
    TextFeature out;
    for (const auto* bundle : bundles) {
      const auto& f = climate_feature(bundle);
      values.insert(values.end(), f.first.begin(), f.first.end());
      out.pad_mask.insert(out.pad_mask.end(), f.second.begin(), f.second.end());
    }
    out.values = Tensor::from({static_cast<int64_t>(batch.size()), l, c}, values);
    return out;
  }

  void invalidate() { cache_.clear(); }

 private:
  const std::pair<std::vector<double>, std::vector<uint8_t>>& climate_feature(
      const PromptBundle* bundle) {
    std::string key = lib_->mode == PromptMode::kSimple ? "<simple>" : bundle->zone.code;
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    TextBatch tb = bundles_to_text_batch({bundle});
    TextFeature f = model_.encode_text_feature(tb);
    return cache_.emplace(key, std::make_pair(f.values.to_vector(), f.pad_mask)).first->second;
  }

  MetaSegNet& model_;
  const PromptLibrary* lib_;
  std::map<std::string, std::pair<std::vector<double>, std::vector<uint8_t>>> cache_;
};

void check_scenes(const MetaSegNet& model, const std::vector<LabeledScene>& scenes,
                  const char* what) {
  for (const auto& s : scenes) {
    if (static_cast<int>(s.class_names.size()) != model.config().num_classes)
      throw ValueError(std::string(what) + ": scene " + s.id + " has " +
                       std::to_string(s.class_names.size()) + " classes, model expects " +
                       std::to_string(model.config().num_classes));
    if (s.size != model.config().enc.img_size)
      throw ValueError(std::string(what) + ": scene " + s.id + " size " + std::to_string(s.size) +
                       " does not match model img_size " +
                       std::to_string(model.config().enc.img_size));
  }
}

// Averaged softmax probabilities across the four flips, as raw values.
std::vector<double> tta_probs(MetaSegNet& model, const std::vector<const LabeledScene*>& batch,
                              TextFeatureCache& cache, bool flip_tta) {
  int64_t b = static_cast<int64_t>(batch.size());
  int n = batch[0]->size;
  int k = model.config().num_classes;
  std::vector<double> acc(static_cast<size_t>(b) * k * n * n, 0.0);
  int variants = flip_tta ? 4 : 1;
  for (int t = 0; t < variants; ++t) {
    bool fh = t == 1 || t == 3, fv = t == 2 || t == 3;
    std::vector<LabeledScene> flipped;
    std::vector<const LabeledScene*> ptrs;
    if (t == 0) {
      ptrs = batch;
    } else {
      flipped.reserve(batch.size());
      for (const auto* s : batch) {
        LabeledScene f = *s;
        std::vector<double> img(static_cast<size_t>(3) * n * n);
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x) {
            int sy = fv ? n - 1 - y : y, sx = fh ? n - 1 - x : x;
            for (int ch = 0; ch < 3; ++ch)
              img[(static_cast<size_t>(ch) * n + y) * n + x] =
                  s->image.at((static_cast<int64_t>(ch) * n + sy) * n + sx);
          }
        f.image = Tensor::from({3, n, n}, img);
        flipped.push_back(std::move(f));
      }
      for (const auto& f : flipped) ptrs.push_back(&f);
    }
    Tensor images = scenes_to_images(ptrs);
    TextFeature tf;
    MetaSegNet::Output out;
    if (cache.active()) {
      tf = cache.batch_feature(ptrs);
      out = model.forward(images, nullptr, &tf);
    } else {
      out = model.forward(images, nullptr);
    }
    Tensor probs = softmax(out.logits, 1);
    auto pv = probs.to_vector();
    for (int64_t i = 0; i < b; ++i)
      for (int c = 0; c < k; ++c)
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x) {
            int oy = fv ? n - 1 - y : y, ox = fh ? n - 1 - x : x;  // undo the flip
            acc[((static_cast<size_t>(i) * k + c) * n + oy) * n + ox] +=
                pv[((static_cast<size_t>(i) * k + c) * n + y) * n + x];
          }
  }
  for (auto& v : acc) v /= variants;
  return acc;
}

std::vector<uint8_t> argmax_raw(const std::vector<double>& probs, int64_t b, int k, int n) {
  std::vector<uint8_t> out(static_cast<size_t>(b) * n * n);
  for (int64_t i = 0; i < b; ++i)
    for (int64_t p = 0; p < static_cast<int64_t>(n) * n; ++p) {
      int best = 0;
      double bestv = probs[static_cast<size_t>((i * k) * n * n + p)];
      for (int c = 1; c < k; ++c) {
        double v = probs[static_cast<size_t>((i * k + c) * n * n + p)];
        if (v > bestv) {
          bestv = v;
          best = c;
        }
      }
      out[static_cast<size_t>(i * n * n + p)] = static_cast<uint8_t>(best);
    }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainResult train_model(MetaSegNet& model, const TrainConfig& cfg,
                        const std::vector<LabeledScene>& train_scenes,
                        const std::vector<LabeledScene>& val_scenes,
                        const PromptLibrary* prompts) {
  cfg.validate();
  if (train_scenes.empty()) throw ValueError("train: empty training split");
  check_scenes(model, train_scenes, "train");
  check_scenes(model, val_scenes, "train(val)");
  bool needs_text = model.config().prompt_mode != PromptMode::kNone;
  if (needs_text && (!prompts || prompts->mode != model.config().prompt_mode))
    throw ValueError("train: prompt library missing or mode mismatch");

  AdamWConfig ocfg;
  ocfg.weight_decay = cfg.weight_decay;
  AdamW opt(model.trainable_parameters(), ocfg);

  int n = static_cast<int>(train_scenes.size());
  int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  int64_t total_steps = static_cast<int64_t>(cfg.max_epochs) * steps_per_epoch;

  TrainResult result;
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ull + 0x1234abcd);
  TextFeatureCache cache(model, prompts);
  ItmQueues queues;

  std::vector<std::pair<std::string, std::vector<double>>> best_params;
  auto snapshot = [&]() {
    best_params.clear();
    for (const auto& [name, t] : model.named_parameters())
      best_params.emplace_back(name, t.to_vector());
  };
  auto restore = [&]() {
    auto params = model.named_parameters();
    for (size_t i = 0; i < params.size(); ++i) params[i].second.copy_from(best_params[i].second);
  };

  int64_t global_step = 0;
  int epochs_since_best = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    double loss_sum = 0;
    double lr = cfg.learning_rate;
    for (int start = 0; start < n; start += cfg.batch_size) {
      int bsz = std::min(cfg.batch_size, n - start);
      std::vector<LabeledScene> augmented;
      std::vector<const LabeledScene*> batch;
      std::vector<std::string> batch_ids;
      augmented.reserve(static_cast<size_t>(bsz));
      for (int i = 0; i < bsz; ++i) {
        const LabeledScene& s = train_scenes[static_cast<size_t>(order[static_cast<size_t>(start + i)])];
        batch_ids.push_back(s.id);
        if (cfg.augment)
          augmented.push_back(augment_flip(s, rng));
        else
          augmented.push_back(s);
      }
      for (const auto& s : augmented) batch.push_back(&s);

      Tensor images = scenes_to_images(batch);
      std::vector<uint8_t> targets = scenes_to_targets(batch);

      opt.zero_grad();
      tape_clear();

      MetaSegNet::Output out;
      TextFeature tf;
      if (needs_text) {
        tf = cache.batch_feature(batch);
        out = model.forward(images, nullptr, &tf);
      } else {
        out = model.forward(images, nullptr);
      }

      Tensor probs = softmax(out.logits, 1);
      LossBatch lb{probs, targets};
      Tensor ce = cross_entropy(lb);
      Tensor dice = dice_loss(lb);
      Tensor total;
      LossReport report;
      if (needs_text) {
        Tensor itm = itm_loss(out.f_img, out.f_text, tf.pad_mask, model.itm(), queues,
                              cfg.itm_temperature);
        total = add(add(ce, dice), itm);
        report = [&] {
          try {
            return total_loss(ce.at(0), dice.at(0), itm.at(0));
          } catch (const NumericError& e) {
            std::string ids;
            for (const auto& id : batch_ids) ids += id + " ";
            throw NumericError("non-finite loss at step " + std::to_string(global_step) +
                               ", batch [" + ids + "]: " + e.what());
          }
        }();
      } else {
        total = add(ce, dice);
        try {
          report = total_loss(ce.at(0), dice.at(0), 0.0);
        } catch (const NumericError& e) {
          std::string ids;
          for (const auto& id : batch_ids) ids += id + " ";
          throw NumericError("non-finite loss at step " + std::to_string(global_step) +
                             ", batch [" + ids + "]: " + e.what());
        }
      }

      backward(total);
      lr = cfg.schedule == "cosine" ? cosine_lr(cfg.learning_rate, global_step, total_steps)
                                    : cfg.learning_rate;
      opt.step(lr);
      global_step++;
      result.steps_run++;
      result.step_losses.push_back(report);
      loss_sum += report.total;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / steps_per_epoch;
    stats.lr = lr;

    bool do_eval = !val_scenes.empty() && cfg.eval_every > 0 &&
                   ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.max_epochs);
    if (do_eval) {
      EvalOptions eo;
      eo.batch_size = cfg.batch_size;
      stats.val_miou = evaluate_model(model, val_scenes, prompts, eo).miou;
      if (stats.val_miou > result.best_val_miou) {
        result.best_val_miou = stats.val_miou;
        result.best_epoch = epoch;
        epochs_since_best = 0;
        snapshot();
      } else {
        epochs_since_best++;
      }
    }
    result.history.push_back(stats);

    if (!val_scenes.empty() && cfg.early_stopping_patience > 0 &&
        epochs_since_best >= cfg.early_stopping_patience) {
      result.early_stopped = true;
      break;
    }
  }

  if (!best_params.empty()) restore();
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

MetricReport evaluate_model(MetaSegNet& model, const std::vector<LabeledScene>& scenes,
                            const PromptLibrary* prompts, const EvalOptions& opt) {
  check_scenes(model, scenes, "evaluate");
  NoGradGuard ng;
  TextFeatureCache cache(model, prompts);
  if (model.config().prompt_mode != PromptMode::kNone && !cache.active())
    throw ValueError("evaluate: model needs prompts but none were supplied");

  ConfusionMatrix cm(model.config().num_classes);
  int n = static_cast<int>(scenes.size());
  for (int start = 0; start < n; start += opt.batch_size) {
    int bsz = std::min(opt.batch_size, n - start);
    std::vector<const LabeledScene*> batch;
    for (int i = 0; i < bsz; ++i) batch.push_back(&scenes[static_cast<size_t>(start + i)]);
    auto probs = tta_probs(model, batch, cache, opt.flip_tta);
    auto pred = argmax_raw(probs, bsz, model.config().num_classes, batch[0]->size);
    cm.update(pred, scenes_to_targets(batch), opt.ignore_label);
  }
  return derive_metrics(cm, scenes.empty() ? std::vector<std::string>{} : scenes[0].class_names);
}

ZeroShotReport zero_shot_eval(MetaSegNet& model, const std::vector<LabeledScene>& foreign,
                              const PromptLibrary* prompts,
                              const std::vector<std::pair<int, int>>& mapping,
                              const std::vector<std::string>& target_class_names,
                              const EvalOptions& opt) {
  if (mapping.empty()) throw ValueError("zero_shot_eval: empty class mapping");
  if (foreign.empty()) throw ValueError("zero_shot_eval: empty foreign split");
  int source_k = model.config().num_classes;
  int target_k = static_cast<int>(target_class_names.size());
  for (auto [s, t] : mapping)
    if (s < 0 || s >= source_k || t < 0 || t >= target_k)
      throw ValueError("zero_shot_eval: mapping entry out of range");
  for (const auto& s : foreign)
    if (static_cast<int>(s.class_names.size()) != target_k)
      throw ValueError("zero_shot_eval: foreign scene class count mismatch");

  std::vector<int> map_to_target(static_cast<size_t>(source_k), -1);
  for (auto [s, t] : mapping) map_to_target[static_cast<size_t>(s)] = t;

  NoGradGuard ng;
  TextFeatureCache cache(model, prompts);
  if (model.config().prompt_mode != PromptMode::kNone && !cache.active())
    throw ValueError("zero_shot_eval: model needs prompts but none were supplied");

  // Extra row/column holds off-category predictions.
  ConfusionMatrix cm(target_k + 1);
  int n = static_cast<int>(foreign.size());
  for (int start = 0; start < n; start += opt.batch_size) {
    int bsz = std::min(opt.batch_size, n - start);
    std::vector<const LabeledScene*> batch;
    for (int i = 0; i < bsz; ++i) batch.push_back(&foreign[static_cast<size_t>(start + i)]);
    auto probs = tta_probs(model, batch, cache, opt.flip_tta);
    auto pred = argmax_raw(probs, bsz, source_k, batch[0]->size);
    std::vector<uint8_t> mapped(pred.size());
    for (size_t i = 0; i < pred.size(); ++i) {
      int t = map_to_target[pred[i]];
      mapped[i] = static_cast<uint8_t>(t < 0 ? target_k : t);
    }
    cm.update(mapped, scenes_to_targets(batch), opt.ignore_label);
  }

  ZeroShotReport rep;
  double sum = 0;
  for (auto [s, t] : mapping) {
    int64_t tp = cm.tp(t), fp = cm.fp(t), fn = cm.fn(t);
    double iou = (tp + fp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp + fn)
                                    : 0.0;
    rep.per_class.emplace_back(target_class_names[static_cast<size_t>(t)], t, iou);
    sum += iou;
  }
  rep.mean_iou = sum / static_cast<double>(mapping.size());
  return rep;
}

std::string ZeroShotReport::to_text() const {
  std::ostringstream os;
  os.precision(10);
  os << "mean_overlapping_iou=" << mean_iou << "\n";
  for (const auto& [name, id, iou] : per_class)
    os << "iou_" << name << "=" << iou << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Ablation grid
// ---------------------------------------------------------------------------

AblateTable run_ablation(
    const TrainConfig& base, const std::vector<VariantSpec>& grid,
    const std::vector<uint64_t>& seeds, const std::vector<LabeledScene>& train_scenes,
    const std::vector<LabeledScene>& val_scenes,
    const std::function<const PromptLibrary*(const std::string& mode)>& library_for) {
  AblateTable table;
  if (grid.empty() || seeds.empty()) throw ValueError("ablate: empty grid or seed list");
  if (train_scenes.empty()) throw ValueError("ablate: empty training split");
  int vocab = 2;
  {
    const PromptLibrary* full = library_for("full");
    if (full && !full->by_climate.empty()) {
      // vocabulary size comes from the tokenizer by way of the max token id
      for (const auto& [code, b] : full->by_climate)
        for (int id : b.token_ids) vocab = std::max(vocab, id + 1);
    }
    const PromptLibrary* simple = library_for("simple");
    if (simple && simple->shared)
      for (int id : simple->shared->token_ids) vocab = std::max(vocab, id + 1);
  }

  for (const auto& variant : grid) {
    double sum = 0;
    int ok = 0;
    for (uint64_t seed : seeds) {
      AblateCell cell;
      cell.variant = variant.name;
      cell.seed = seed;
      try {
        TrainConfig cfg = base;
        cfg.use_alignment = variant.use_alignment;
        cfg.use_fusion = variant.use_fusion;
        cfg.prompt_mode = variant.prompt_mode;
        cfg.seed = seed;
        set_default_dtype(cfg.dtype());
        ModelConfig mc = model_config_from_train(
            cfg, static_cast<int>(train_scenes[0].class_names.size()), vocab);
        MetaSegNet model(mc, seed);
        const PromptLibrary* lib =
            mc.prompt_mode == PromptMode::kNone ? nullptr : library_for(cfg.prompt_mode);
        TrainResult r = train_model(model, cfg, train_scenes, val_scenes, lib);
        EvalOptions eo;
        eo.batch_size = cfg.batch_size;
        cell.val_miou = evaluate_model(model, val_scenes, lib, eo).miou;
        sum += cell.val_miou;
        ok++;
      } catch (const Error& e) {
        cell.failed = true;
        cell.error = e.what();
      }
      table.cells.push_back(cell);
    }
    table.means.emplace_back(variant.name, ok ? sum / ok : -1.0);
  }
  set_default_dtype(Dtype::f64);
  return table;
}

double AblateTable::mean_of(const std::string& variant) const {
  for (const auto& [name, v] : means)
    if (name == variant) return v;
  throw ValueError("ablation table has no variant " + variant);
}

std::string AblateTable::to_text() const {
  std::ostringstream os;
  os.precision(6);
  os << "variant\tseed\tval_miou\n";
  for (const auto& c : cells) {
    os << c.variant << "\t" << c.seed << "\t";
    if (c.failed)
      os << "FAILED(" << c.error << ")";
    else
      os << c.val_miou;
    os << "\n";
  }
  for (const auto& [name, v] : means) os << name << "\tmean\t" << v << "\n";
  return os.str();
}

std::string AblateTable::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "variant,seed,val_miou,failed\n";
  for (const auto& c : cells)
    os << c.variant << "," << c.seed << "," << (c.failed ? -1.0 : c.val_miou) << ","
       << (c.failed ? 1 : 0) << "\n";
  for (const auto& [name, v] : means) os << name << ",mean," << v << ",0\n";
  return os.str();
}

std::string history_to_text(const TrainResult& r) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch\tmean_loss\tval_miou\tlr\n";
  for (const auto& e : r.history)
    os << e.epoch << "\t" << e.mean_loss << "\t" << e.val_miou << "\t" << e.lr << "\n";
  os << "best_epoch=" << r.best_epoch << "\n";
  os << "best_val_miou=" << r.best_val_miou << "\n";
  os << "early_stopped=" << (r.early_stopped ? 1 : 0) << "\n";
  os << "steps=" << r.steps_run << "\n";
  return os.str();
}

}  // namespace metaseg
