#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <unistd.h>

#include "metaseg/train.hpp"

using namespace metaseg;
namespace fs = std::filesystem;

namespace {

const std::string kAssets = METASEG_ASSETS_DIR;

struct Fixture {
  ClimateGrid grid = ClimateGrid::load(kAssets + "/climate_grid.txt");
  CannedProvider canned = CannedProvider::load(kAssets + "/canned_prompts.txt");
  Tokenizer tok = build_prompt_tokenizer(kAssets + "/canned_prompts.txt");
  std::vector<std::string> classes{"background", "building", "road", "tree"};

  std::vector<LabeledScene> scenes(int n, int size, const std::string& zone, uint64_t seed0) {
    std::vector<LabeledScene> out;
    ClimateZone z{zone, koppen_zone_names().at(zone)};
    for (int i = 0; i < n; ++i)
      out.push_back(generate_scene(seed0 + static_cast<uint64_t>(i), z, size,
                                   static_cast<int>(classes.size())));
    return out;
  }

  PromptLibrary library(const std::string& mode, const std::vector<std::string>& climates) {
    return build_prompt_library(prompt_mode_from_string(mode), classes, climates, grid, canned,
                                tok);
  }

  TrainConfig config(int img_size, int epochs) {
    TrainConfig cfg;
    cfg.channels = 16;
    cfg.heads = 4;
    cfg.img_size = img_size;
    cfg.max_epochs = epochs;
    cfg.precision = "f64";
    cfg.augment = false;
    cfg.early_stopping_patience = 0;
    cfg.learning_rate = 1e-3;
    return cfg;
  }

  MetaSegNet model(const TrainConfig& cfg, uint64_t seed) {
    set_default_dtype(cfg.dtype());
    return MetaSegNet(model_config_from_train(cfg, static_cast<int>(classes.size()),
                                              tok.vocab_size()),
                      seed);
  }
};

}  // namespace

TEST_CASE("train config defaults follow the recipe") {
  TrainConfig cfg;
  CHECK(cfg.learning_rate == 3e-4);
  CHECK(cfg.batch_size == 2);
  CHECK(cfg.weight_decay == 2.5e-4);
  CHECK(cfg.max_epochs == 45);
  CHECK(cfg.schedule == "cosine");
  CHECK(cfg.freeze_text_encoder);
}

TEST_CASE("train config file parsing and overrides") {
  auto dir = fs::temp_directory_path() / ("metaseg_cfg_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "cfg.txt");
    out << "# comment\nlearning_rate=0.001\nbatch_size=4\nprompt_mode=simple\n";
  }
  TrainConfig cfg = TrainConfig::from_file((dir / "cfg.txt").string());
  CHECK(cfg.learning_rate == 0.001);
  CHECK(cfg.batch_size == 4);
  CHECK(cfg.prompt_mode == "simple");
  cfg.apply_override("batch_size", "8");
  CHECK(cfg.batch_size == 8);
  CHECK_THROWS_AS(cfg.apply_override("nope", "1"), ValueError);
  CHECK_THROWS_AS(TrainConfig::from_file((dir / "missing.txt").string()), IoError);
  fs::remove_all(dir);
}

TEST_CASE("cosine schedule endpoints") {
  double lr0 = 3e-4;
  CHECK(cosine_lr(lr0, 0, 100) == lr0);
  CHECK(cosine_lr(lr0, 99, 100) <= 0.01 * lr0);
  CHECK(cosine_lr(lr0, 0, 1) == lr0);
}

TEST_CASE("zero epochs leaves parameters at initialization") {
  Fixture fx;
  TrainConfig cfg = fx.config(32, 0);
  MetaSegNet model = fx.model(cfg, 3);
  double before = model.parameter_checksum();
  auto train = fx.scenes(2, 32, "Cfb", 10);
  PromptLibrary lib = fx.library("full", {"Cfb"});
  auto r = train_model(model, cfg, train, {}, &lib);
  CHECK(r.steps_run == 0);
  CHECK(model.parameter_checksum() == before);
  set_default_dtype(Dtype::f64);
}

TEST_CASE("training is reproducible: identical loss traces") {
  Fixture fx;
  auto train = fx.scenes(4, 32, "Cfb", 20);
  PromptLibrary lib = fx.library("full", {"Cfb"});

  auto run = [&]() {
    TrainConfig cfg = fx.config(32, 2);
    cfg.seed = 5;
    MetaSegNet model = fx.model(cfg, 7);
    return train_model(model, cfg, train, {}, &lib);
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.step_losses.size() == b.step_losses.size());
  for (size_t i = 0; i < a.step_losses.size(); ++i)
    CHECK(std::fabs(a.step_losses[i].total - b.step_losses[i].total) < 1e-10);
  set_default_dtype(Dtype::f64);
}

TEST_CASE("frozen text encoder is bitwise unchanged by training") {
  Fixture fx;
  TrainConfig cfg = fx.config(32, 2);
  MetaSegNet model = fx.model(cfg, 11);
  double before = model.parameter_checksum("txt_enc.");
  auto before_tok = model.text_encoder().tok_emb.to_vector();
  auto train = fx.scenes(4, 32, "Cfb", 30);
  PromptLibrary lib = fx.library("full", {"Cfb"});
  train_model(model, cfg, train, {}, &lib);
  CHECK(model.parameter_checksum("txt_enc.") == before);
  CHECK(model.text_encoder().tok_emb.to_vector() == before_tok);
  set_default_dtype(Dtype::f64);
}

TEST_CASE("unfrozen text encoder does change") {
  Fixture fx;
  TrainConfig cfg = fx.config(32, 2);
  cfg.freeze_text_encoder = false;
  MetaSegNet model = fx.model(cfg, 11);
  double before = model.parameter_checksum("txt_enc.");
  auto train = fx.scenes(4, 32, "Cfb", 30);
  PromptLibrary lib = fx.library("full", {"Cfb"});
  train_model(model, cfg, train, {}, &lib);
  CHECK(model.parameter_checksum("txt_enc.") != before);
  set_default_dtype(Dtype::f64);
}

TEST_CASE("checkpoint round trip reproduces the forward pass bitwise") {
  Fixture fx;
  TrainConfig cfg = fx.config(32, 1);
  MetaSegNet model = fx.model(cfg, 13);
  auto train = fx.scenes(2, 32, "Cfa", 40);
  PromptLibrary lib = fx.library("full", {"Cfa"});
  train_model(model, cfg, train, {}, &lib);

  std::vector<const LabeledScene*> batch{&train[0], &train[1]};
  std::vector<double> img;
  for (auto* s : batch) {
    auto v = s->image.to_vector();
    img.insert(img.end(), v.begin(), v.end());
  }
  Tensor images = Tensor::from({2, 3, 32, 32}, img);
  const PromptBundle& bundle = lib.bundle_for("Cfa");
  TextBatch tb;
  tb.batch = 2;
  tb.len = kPromptLength;
  for (int i = 0; i < 2; ++i) {
    tb.tokens.insert(tb.tokens.end(), bundle.token_ids.begin(), bundle.token_ids.end());
    tb.pad_mask.insert(tb.pad_mask.end(), bundle.pad_mask.begin(), bundle.pad_mask.end());
  }
  NoGradGuard ng;
  auto logits_before = model.forward(images, &tb).logits.to_vector();

  auto dir = fs::temp_directory_path() / ("metaseg_ckpt_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::string path = (dir / "model.ckpt").string();

  AdamW opt(model.trainable_parameters(), {});
  save_checkpoint(path, model, &opt, 1, 0.5);

  auto data = load_checkpoint_data(path);
  CHECK(data.epoch == 1);
  CHECK(data.best_val_miou == 0.5);
  CHECK(data.dtype == Dtype::f64);
  MetaSegNet restored = restore_model(data);
  auto logits_after = restored.forward(images, &tb).logits.to_vector();
  CHECK(logits_before == logits_after);  // bitwise

  AdamW opt2(restored.trainable_parameters(), {});
  restore_optimizer(opt2, data);
  CHECK(opt2.steps_taken() == opt.steps_taken());

  fs::remove_all(dir);
  set_default_dtype(Dtype::f64);
}

TEST_CASE("evaluation is deterministic and validates inputs") {
  Fixture fx;
  TrainConfig cfg = fx.config(32, 1);
  MetaSegNet model = fx.model(cfg, 17);
  auto scenes = fx.scenes(3, 32, "Cfb", 50);
  PromptLibrary lib = fx.library("full", {"Cfb"});
  auto a = evaluate_model(model, scenes, &lib);
  auto b = evaluate_model(model, scenes, &lib);
  CHECK(a.miou == b.miou);
  CHECK(a.oa == b.oa);
  CHECK_THROWS_AS(evaluate_model(model, {}, &lib), ValueError);  // empty split undefined
  set_default_dtype(Dtype::f64);
}

TEST_CASE("early stopping keeps the best checkpoint") {
  Fixture fx;
  TrainConfig cfg = fx.config(32, 6);
  cfg.early_stopping_patience = 2;
  cfg.learning_rate = 3e-3;
  MetaSegNet model = fx.model(cfg, 19);
  auto train = fx.scenes(4, 32, "Cfb", 60);
  auto val = fx.scenes(2, 32, "Cfb", 70);
  PromptLibrary lib = fx.library("full", {"Cfb"});
  auto r = train_model(model, cfg, train, val, &lib);
  // the weights in the model now reproduce the best recorded validation mIoU
  double check = evaluate_model(model, val, &lib).miou;
  CHECK(check == doctest::Approx(r.best_val_miou).epsilon(1e-12));
  for (const auto& e : r.history)
    if (e.val_miou >= 0) CHECK(r.best_val_miou >= e.val_miou);
  set_default_dtype(Dtype::f64);
}

TEST_CASE("non-finite loss aborts with the offending batch id") {
  Fixture fx;
  TrainConfig cfg = fx.config(32, 3);
  cfg.learning_rate = 1e18;  // forces an overflow within a couple of steps
  MetaSegNet model = fx.model(cfg, 23);
  auto train = fx.scenes(2, 32, "Cfb", 80);
  PromptLibrary lib = fx.library("full", {"Cfb"});
  CHECK_THROWS_WITH_AS(train_model(model, cfg, train, {}, &lib), doctest::Contains("batch"),
                       NumericError);
  set_default_dtype(Dtype::f64);
}

TEST_CASE("zero-shot with the identity mapping equals plain evaluation") {
  Fixture fx;
  TrainConfig cfg = fx.config(32, 1);
  MetaSegNet model = fx.model(cfg, 29);
  auto scenes = fx.scenes(3, 32, "Cfb", 90);
  PromptLibrary lib = fx.library("full", {"Cfb"});
  auto plain = evaluate_model(model, scenes, &lib);
  std::vector<std::pair<int, int>> identity;
  for (int i = 0; i < 4; ++i) identity.emplace_back(i, i);
  auto zs = zero_shot_eval(model, scenes, &lib, identity, fx.classes);
  for (const auto& [name, id, iou] : zs.per_class)
    CHECK(iou == plain.per_class_iou[static_cast<size_t>(id)]);

  auto one = zero_shot_eval(model, scenes, &lib, {{3, 3}}, fx.classes);
  CHECK(one.per_class.size() == 1);
  CHECK(std::get<0>(one.per_class[0]) == "tree");

  CHECK_THROWS_AS(zero_shot_eval(model, scenes, &lib, {}, fx.classes), ValueError);
  set_default_dtype(Dtype::f64);
}

TEST_CASE("an ablation grid of one variant degenerates to train plus evaluate") {
  Fixture fx;
  TrainConfig cfg = fx.config(32, 1);
  auto train = fx.scenes(4, 32, "Cfb", 100);
  auto val = fx.scenes(2, 32, "Cfb", 110);
  PromptLibrary full = fx.library("full", {"Cfb"});
  PromptLibrary simple = fx.library("simple", {"Cfb"});
  auto lib_for = [&](const std::string& mode) -> const PromptLibrary* {
    if (mode == "full") return &full;
    if (mode == "simple") return &simple;
    return nullptr;
  };

  auto table = run_ablation(cfg, {{"full_model", true, true, "full"}}, {41}, train, val, lib_for);
  CHECK(table.cells.size() == 1);
  CHECK_FALSE(table.cells[0].failed);

  TrainConfig direct = cfg;
  direct.seed = 41;
  set_default_dtype(direct.dtype());
  MetaSegNet model = fx.model(direct, 41);
  train_model(model, direct, train, val, &full);
  double miou = evaluate_model(model, val, &full).miou;
  CHECK(table.cells[0].val_miou == doctest::Approx(miou).epsilon(1e-12));
  CHECK(table.mean_of("full_model") == table.cells[0].val_miou);

  // table text has one row per cell plus a mean row
  auto text = table.to_text();
  CHECK(text.find("full_model\t41") != std::string::npos);
  CHECK(text.find("full_model\tmean") != std::string::npos);
  set_default_dtype(Dtype::f64);
}

TEST_CASE("prompt-none model trains without any text machinery") {
  Fixture fx;
  TrainConfig cfg = fx.config(32, 1);
  cfg.prompt_mode = "none";
  MetaSegNet model = fx.model(cfg, 31);
  CHECK(model.config().use_alignment == false);
  auto train = fx.scenes(2, 32, "Cfb", 120);
  auto r = train_model(model, cfg, train, {}, nullptr);
  CHECK(r.steps_run == 1);
  auto rep = evaluate_model(model, train, nullptr);
  CHECK(rep.miou >= 0.0);
  set_default_dtype(Dtype::f64);
}
