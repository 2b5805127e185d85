// metaseg command line: synthetic data generation, prompt building, training,
// evaluation, zero-shot transfer, ablation grids, and self checks.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "metaseg/train.hpp"

using namespace metaseg;
namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string assets = "assets";
  std::string provider = "canned";
  std::string http_url;
  std::string http_model = "gpt-3.5-turbo";
  std::string http_auth_env = "METASEG_API_TOKEN";
  std::string http_cache = "prompt_cache";
};

void add_common(CLI::App* cmd, CommonArgs& c) {
  cmd->add_option("--assets", c.assets, "directory with climate_grid.txt and canned_prompts.txt");
  cmd->add_option("--provider", c.provider, "prompt provider: canned or http");
  cmd->add_option("--http-url", c.http_url, "chat-completion endpoint for the http provider");
  cmd->add_option("--http-model", c.http_model, "model name sent to the endpoint");
  cmd->add_option("--http-auth-env", c.http_auth_env, "env var holding the bearer token");
  cmd->add_option("--http-cache", c.http_cache, "response cache directory");
}

std::unique_ptr<PromptProvider> make_provider(const CommonArgs& c) {
  if (c.provider == "canned")
    return std::make_unique<CannedProvider>(
        CannedProvider::load(c.assets + "/canned_prompts.txt"));
  if (c.provider == "http") {
    if (c.http_url.empty()) throw ValueError("http provider needs --http-url");
    HttpProviderConfig cfg;
    cfg.url = c.http_url;
    cfg.model = c.http_model;
    cfg.auth_token_env = c.http_auth_env;
    cfg.cache_dir = c.http_cache;
    return std::make_unique<HttpProvider>(cfg);
  }
  throw ValueError("unknown provider '" + c.provider + "'");
}

Tokenizer dataset_tokenizer(const std::string& data_dir, const CommonArgs& c) {
  std::string vocab = data_dir + "/vocab.txt";
  if (fs::exists(vocab)) return Tokenizer::from_vocab_file(vocab);
  return build_prompt_tokenizer(c.assets + "/canned_prompts.txt");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<std::string> dataset_climates(const DatasetManifest& m) {
  std::vector<std::string> codes;
  for (const auto& [split, records] : m.splits)
    for (const auto& r : records)
      if (std::find(codes.begin(), codes.end(), r.climate_code) == codes.end())
        codes.push_back(r.climate_code);
  return codes;
}

void write_file(const std::string& path, const std::string& content) {
  fs::create_directories(fs::path(path).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << content;
}

// Train-config flags: every field of the key=value config file is exposed as
// a flag of the same name.
struct ConfigFlags {
  std::map<std::string, std::string> overrides;
  void add_to(CLI::App* cmd) {
    static const char* keys[] = {
        "learning_rate",  "batch_size",     "weight_decay",   "max_epochs",
        "schedule",       "early_stopping_patience",          "seed",
        "freeze_text_encoder",              "prompt_mode",    "channels",
        "heads",          "img_size",       "stage1_blocks",  "stage2_blocks",
        "text_blocks",    "joint_blocks",   "use_alignment",  "use_fusion",
        "precision",      "augment",        "eval_every",     "itm_temperature"};
    for (const char* k : keys) {
      auto cb = [this, k](const std::string& v) { overrides[k] = v; };
      cmd->add_option_function<std::string>(std::string("--") + k, cb);
    }
  }
  void apply(TrainConfig& cfg) const {
    for (const auto& [k, v] : overrides) cfg.apply_override(k, v);
  }
};

TrainConfig load_config(const std::string& config_path, const ConfigFlags& flags) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = TrainConfig::from_file(config_path);
  flags.apply(cfg);
  cfg.validate();
  return cfg;
}

PromptLibrary library_for_mode(const std::string& mode, const DatasetManifest& m,
                               const std::string& data_dir, const CommonArgs& common) {
  Tokenizer tok = dataset_tokenizer(data_dir, common);
  ClimateGrid grid = ClimateGrid::load(common.assets + "/climate_grid.txt");
  auto provider = make_provider(common);
  return build_prompt_library(prompt_mode_from_string(mode), m.class_names, dataset_climates(m),
                              grid, *provider, tok);
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& out_dir, const std::string& climates_csv, int train_n,
                 int val_n, int test_n, int size, int patch, int k, uint64_t seed,
                 const std::string& weights_csv, int sites, double noise,
                 const CommonArgs& common) {
  auto climates = split_list(climates_csv);
  if (climates.empty()) throw ValueError("gen-data: need at least one climate");
  GenOptions opt;
  opt.sites_per_64px = sites;
  opt.noise_amp = noise;
  if (!weights_csv.empty()) {
    for (const auto& w : split_list(weights_csv)) opt.class_weights.push_back(std::stod(w));
  }

  DatasetManifest m;
  m.k = k;
  m.class_names.assign(canonical_class_names().begin(), canonical_class_names().begin() + k);

  uint64_t next_seed = seed;
  auto gen_split = [&](const std::string& split, int count) {
    for (int i = 0; i < count; ++i)
      for (const auto& code : climates) {
        ClimateZone z{code, koppen_zone_names().at(code)};
        LabeledScene scene = generate_scene(next_seed++, z, size, k, opt);
        if (patch < size) {
          for (auto& tile : tile_patches(scene, patch)) {
            write_scene(tile, out_dir);
            m.splits[split].push_back({tile.id, next_seed - 1, code});
          }
        } else {
          write_scene(scene, out_dir);
          m.splits[split].push_back({scene.id, next_seed - 1, code});
        }
      }
  };
  gen_split("train", train_n);
  gen_split("val", val_n);
  if (test_n > 0) gen_split("test", test_n);
  write_manifest(m, out_dir);

  Tokenizer tok = build_prompt_tokenizer(common.assets + "/canned_prompts.txt");
  tok.save_vocab(out_dir + "/vocab.txt");

  int total = 0;
  for (const auto& [split, records] : m.splits) total += static_cast<int>(records.size());
  std::cout << "wrote " << total << " scenes to " << out_dir << " (vocab "
            << tok.vocab_size() << " tokens)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// prompt
// ---------------------------------------------------------------------------

int cmd_prompt(double lat, double lon, const std::string& classes_csv, const std::string& mode,
               const std::string& out_path, const CommonArgs& common) {
  Tokenizer tok = build_prompt_tokenizer(common.assets + "/canned_prompts.txt");
  PromptBundle bundle;
  if (mode == "simple") {
    bundle = simple_prompt_bundle(tok);
  } else {
    ClimateGrid grid = ClimateGrid::load(common.assets + "/climate_grid.txt");
    auto provider = make_provider(common);
    ImageMetadata meta;
    meta.latitude = lat;
    meta.longitude = lon;
    bundle = assemble_bundle(meta, split_list(classes_csv), grid, *provider, tok);
  }

  std::ostringstream os;
  os << "zone=" << bundle.zone.code << "\n"
     << "zone_name=" << bundle.zone.description << "\n"
     << "merged_text=" << bundle.merged_text << "\n";
  os << "token_ids=";
  for (size_t i = 0; i < bundle.token_ids.size(); ++i)
    os << (i ? "," : "") << bundle.token_ids[i];
  os << "\npad_mask=";
  for (size_t i = 0; i < bundle.pad_mask.size(); ++i)
    os << (i ? "," : "") << static_cast<int>(bundle.pad_mask[i]);
  os << "\n";
  if (!out_path.empty()) write_file(out_path, os.str());
  std::cout << os.str();
  return 0;
}

// ---------------------------------------------------------------------------
// train / eval / zero-shot / ablate
// ---------------------------------------------------------------------------

int cmd_train(const std::string& data_dir, const std::string& out_dir,
              const std::string& config_path, const ConfigFlags& flags,
              const CommonArgs& common) {
  TrainConfig cfg = load_config(config_path, flags);
  DatasetManifest m = read_manifest(data_dir);
  auto train_scenes = load_split(data_dir, m, "train");
  std::vector<LabeledScene> val_scenes;
  if (m.splits.count("val")) val_scenes = load_split(data_dir, m, "val");

  Tokenizer tok = dataset_tokenizer(data_dir, common);
  PromptLibrary lib;
  const PromptLibrary* lib_ptr = nullptr;
  if (cfg.prompt_mode != "none") {
    lib = library_for_mode(cfg.prompt_mode, m, data_dir, common);
    lib_ptr = &lib;
  }

  set_default_dtype(cfg.dtype());
  MetaSegNet model(model_config_from_train(cfg, m.k, tok.vocab_size()), cfg.seed);
  TrainResult r = train_model(model, cfg, train_scenes, val_scenes, lib_ptr);

  fs::create_directories(out_dir);
  AdamW opt(model.trainable_parameters(), {});
  save_checkpoint(out_dir + "/model.ckpt", model, &opt, static_cast<int>(r.history.size()),
                  r.best_val_miou);
  write_file(out_dir + "/history.txt", history_to_text(r));
  write_file(out_dir + "/config.txt", cfg.to_text());

  if (!val_scenes.empty()) {
    EvalOptions eo;
    eo.batch_size = cfg.batch_size;
    MetricReport rep = evaluate_model(model, val_scenes, lib_ptr, eo);
    write_file(out_dir + "/report.txt", rep.to_text());
    std::cout << "val miou " << rep.miou << " (best epoch " << r.best_epoch << ")\n";
  }
  std::cout << "checkpoint written to " << out_dir << "/model.ckpt after " << r.steps_run
            << " steps\n";
  return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& split, const std::string& ckpt_path,
             const std::string& out_path, bool flip_tta, const CommonArgs& common) {
  CheckpointData data = load_checkpoint_data(ckpt_path);
  MetaSegNet model = restore_model(data);
  set_default_dtype(data.dtype);
  DatasetManifest m = read_manifest(data_dir);
  if (m.k != model.config().num_classes)
    throw ValueError("eval: dataset has " + std::to_string(m.k) + " classes, checkpoint " +
                     std::to_string(model.config().num_classes));
  auto scenes = load_split(data_dir, m, split);

  const PromptLibrary* lib_ptr = nullptr;
  PromptLibrary lib;
  if (model.config().prompt_mode != PromptMode::kNone) {
    lib = library_for_mode(prompt_mode_name(model.config().prompt_mode), m, data_dir, common);
    lib_ptr = &lib;
  }
  EvalOptions eo;
  eo.flip_tta = flip_tta;
  MetricReport rep = evaluate_model(model, scenes, lib_ptr, eo);
  if (!out_path.empty()) write_file(out_path, rep.to_text());
  std::cout << rep.to_text();
  set_default_dtype(Dtype::f64);
  return 0;
}

int cmd_zero_shot(const std::string& data_dir, const std::string& split,
                  const std::string& ckpt_path, const std::string& mapping_csv,
                  const std::string& out_path, const CommonArgs& common) {
  CheckpointData data = load_checkpoint_data(ckpt_path);
  MetaSegNet model = restore_model(data);
  set_default_dtype(data.dtype);
  DatasetManifest m = read_manifest(data_dir);
  auto scenes = load_split(data_dir, m, split);

  std::vector<std::pair<int, int>> mapping;
  for (const auto& pair : split_list(mapping_csv)) {
    size_t colon = pair.find(':');
    if (colon == std::string::npos)
      throw ValueError("zero-shot: mapping entries look like source:target");
    mapping.emplace_back(std::stoi(pair.substr(0, colon)), std::stoi(pair.substr(colon + 1)));
  }

  const PromptLibrary* lib_ptr = nullptr;
  PromptLibrary lib;
  if (model.config().prompt_mode != PromptMode::kNone) {
    lib = library_for_mode(prompt_mode_name(model.config().prompt_mode), m, data_dir, common);
    lib_ptr = &lib;
  }
  ZeroShotReport rep = zero_shot_eval(model, scenes, lib_ptr, mapping, m.class_names);
  if (!out_path.empty()) write_file(out_path, rep.to_text());
  std::cout << rep.to_text();
  set_default_dtype(Dtype::f64);
  return 0;
}

int cmd_ablate(const std::string& data_dir, const std::string& out_dir,
               const std::string& grid_name, const std::string& seeds_csv,
               const std::string& config_path, const ConfigFlags& flags,
               const CommonArgs& common) {
  TrainConfig base = load_config(config_path, flags);
  DatasetManifest m = read_manifest(data_dir);
  auto train_scenes = load_split(data_dir, m, "train");
  auto val_scenes = load_split(data_dir, m, "val");

  std::vector<VariantSpec> grid;
  if (grid_name == "component" || grid_name == "both") {
    grid.push_back({"baseline", false, false, "none"});
    grid.push_back({"alignment", true, false, "full"});
    grid.push_back({"alignment_fusion", true, true, "full"});
  }
  if (grid_name == "prompt" || grid_name == "both") {
    grid.push_back({"prompt_none", false, false, "none"});
    grid.push_back({"prompt_simple", true, true, "simple"});
    grid.push_back({"prompt_full", true, true, "full"});
  }
  if (grid.empty()) throw ValueError("ablate: grid must be component, prompt, or both");

  std::vector<uint64_t> seeds;
  for (const auto& s : split_list(seeds_csv)) seeds.push_back(std::stoull(s));

  PromptLibrary full = library_for_mode("full", m, data_dir, common);
  PromptLibrary simple = library_for_mode("simple", m, data_dir, common);
  auto lib_for = [&](const std::string& mode) -> const PromptLibrary* {
    if (mode == "full") return &full;
    if (mode == "simple") return &simple;
    return nullptr;
  };

  AblateTable table = run_ablation(base, grid, seeds, train_scenes, val_scenes, lib_for);
  fs::create_directories(out_dir);
  write_file(out_dir + "/ablation.txt", table.to_text());
  write_file(out_dir + "/ablation.csv", table.to_csv());
  std::cout << table.to_text();
  return 0;
}

// ---------------------------------------------------------------------------
// check: gradient and oracle self-tests
// ---------------------------------------------------------------------------

int cmd_check(int seeds) {
  set_default_dtype(Dtype::f64);
  int failures = 0;
  auto report = [&](const std::string& name, bool ok, double value) {
    std::cout << (ok ? "[ok]   " : "[FAIL] ") << name << " (" << value << ")\n";
    if (!ok) failures++;
  };

  // gradient checks over the differentiable operations
  struct OpCase {
    const char* name;
    std::function<FdReport(Rng&)> run;
  };
  auto scalarize = [](Tensor t) { return sum_all(mul(t, add_scalar(t, 0.3))); };
  std::vector<OpCase> ops = {
      {"grad/add", [&](Rng& r) {
         Tensor a = Tensor::randn({2, 3}, r), b = Tensor::randn({3}, r);
         return fd_check([&](const Tensor& t) { return scalarize(add(t, b)); }, a);
       }},
      {"grad/mul", [&](Rng& r) {
         Tensor a = Tensor::randn({2, 3}, r), b = Tensor::randn({2, 3}, r);
         return fd_check([&](const Tensor& t) { return scalarize(mul(a, t)); }, b);
       }},
      {"grad/div", [&](Rng& r) {
         Tensor a = Tensor::randn({4}, r), b = Tensor::rand_uniform({4}, r, 0.5, 2.0);
         return fd_check([&](const Tensor& t) { return scalarize(div(a, t)); }, b);
       }},
      {"grad/matmul", [&](Rng& r) {
         Tensor a = Tensor::randn({3, 4}, r), b = Tensor::randn({4, 2}, r);
         return fd_check([&](const Tensor& t) { return scalarize(matmul(t, b)); }, a);
       }},
      {"grad/softmax", [&](Rng& r) {
         Tensor a = Tensor::randn({3, 4}, r, 2.0);
         return fd_check([&](const Tensor& t) { return scalarize(softmax(t, 1)); }, a);
       }},
      {"grad/layer_norm", [&](Rng& r) {
         Tensor a = Tensor::randn({3, 6}, r);
         Tensor g = Tensor::rand_uniform({6}, r, 0.5, 1.5), b = Tensor::randn({6}, r, 0.2);
         return fd_check([&](const Tensor& t) { return scalarize(layer_norm(t, g, b)); }, a);
       }},
      {"grad/gelu", [&](Rng& r) {
         Tensor a = Tensor::randn({6}, r);
         return fd_check([&](const Tensor& t) { return scalarize(gelu(t)); }, a);
       }},
      {"grad/mlp_block", [&](Rng& r) {
         int c = 3;
         Tensor x = Tensor::randn({2, c}, r);
         Tensor w1 = Tensor::randn({c, 4 * c}, r, 0.3), b1 = Tensor::randn({4 * c}, r, 0.1);
         Tensor w2 = Tensor::randn({4 * c, c}, r, 0.3), b2 = Tensor::randn({c}, r, 0.1);
         return fd_check(
             [&](const Tensor& t) { return scalarize(mlp_block(t, w1, b1, w2, b2)); }, x);
       }},
      {"grad/bilinear", [&](Rng& r) {
         Tensor a = Tensor::randn({1, 2, 3, 3}, r);
         return fd_check(
             [&](const Tensor& t) { return scalarize(bilinear_upsample(t, 7, 5)); }, a);
       }},
      {"grad/attention", [&](Rng& r) {
         auto p = make_cross_attention(4, 2, r);
         Tensor fi = Tensor::randn({1, 3, 4}, r), ft = Tensor::randn({1, 2, 4}, r);
         return fd_check(
             [&](const Tensor& t) {
               auto [prime, out] = cross_attend_image(t, ft, p, nullptr);
               return scalarize(out);
             },
             fi);
       }},
  };
  for (auto& c : ops) {
    double worst = 0;
    for (int s = 0; s < seeds; ++s) {
      Rng r(static_cast<uint64_t>(s) * 2654435761ull + 99);
      worst = std::max(worst, c.run(r).max_rel_err);
    }
    report(c.name, worst <= 1e-4, worst);
  }

  // metric oracle fuzz: confusion-matrix metrics vs plain pixel loops
  {
    Rng rng(4242);
    double worst = 0;
    for (int t = 0; t < 25; ++t) {
      int k = 2 + static_cast<int>(rng.uniform_int(5));
      std::vector<uint8_t> pred(32 * 32), ref(32 * 32);
      for (auto& v : pred) v = static_cast<uint8_t>(rng.uniform_int(k));
      for (auto& v : ref) v = static_cast<uint8_t>(rng.uniform_int(k));
      ConfusionMatrix cm(k);
      cm.update(pred, ref);
      auto m = derive_metrics(cm);
      // oracle
      std::vector<int64_t> tp(k, 0), fp(k, 0), fn(k, 0);
      int64_t correct = 0;
      for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == ref[i]) {
          correct++;
          tp[pred[i]]++;
        } else {
          fp[pred[i]]++;
          fn[ref[i]]++;
        }
      }
      double iou = 0;
      int niou = 0;
      for (int c = 0; c < k; ++c)
        if (tp[c] + fp[c] + fn[c] > 0) {
          iou += static_cast<double>(tp[c]) / (tp[c] + fp[c] + fn[c]);
          niou++;
        }
      worst = std::max(worst, std::fabs(m.oa - static_cast<double>(correct) / pred.size()));
      worst = std::max(worst, std::fabs(m.miou - iou / niou));
    }
    report("oracle/metrics", worst < 1e-12, worst);
  }

  // loss invariants
  {
    Rng rng(777);
    Tensor probs = Tensor::full({2, 4, 4, 4}, 0.25);
    LossBatch b{probs, std::vector<uint8_t>(32, 1)};
    double ce = cross_entropy(b).at(0);
    report("loss/uniform_ce_ln_k", std::fabs(ce - std::log(4.0)) < 1e-9,
           std::fabs(ce - std::log(4.0)));

    bool dice_ok = true;
    double dice_worst = 0;
    for (int t = 0; t < 10; ++t) {
      Tensor logits = Tensor::randn({2, 3, 4, 4}, rng, 2.0);
      std::vector<uint8_t> targets(32);
      for (auto& v : targets) v = static_cast<uint8_t>(rng.uniform_int(3));
      LossBatch lb{softmax(logits, 1), targets};
      double d = dice_loss(lb).at(0);
      dice_worst = std::max(dice_worst, d);
      if (d < 0 || d > 1.0 + 1e-6) dice_ok = false;
    }
    report("loss/dice_range", dice_ok, dice_worst);

    FeatureQueue q(16);
    for (int i = 0; i < 23; ++i) q.push({static_cast<double>(i)});
    report("loss/queue_fifo_16", q.size() == 16 && q.entries().front()[0] == 7.0,
           static_cast<double>(q.size()));

    auto r = total_loss(0.125, 0.5, 0.0625);
    report("loss/total_bitwise", r.total == (0.125 + 0.5) + 0.0625, r.total);
  }

  std::cout << (failures ? "CHECK FAILED\n" : "all checks passed\n");
  return failures ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metadata-collaborative vision-language segmentation workbench"};
  app.require_subcommand(1);

  CommonArgs common;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gen_out = "dataset", gen_climates = "Cfb,Cfa", gen_weights;
  int gen_train = 8, gen_val = 4, gen_test = 0, gen_size = 64, gen_patch = 64, gen_k = 5;
  uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--climates", gen_climates, "comma-separated Koppen codes");
  gen->add_option("--train-scenes", gen_train, "scenes per climate for the train split");
  gen->add_option("--val-scenes", gen_val, "scenes per climate for the val split");
  gen->add_option("--test-scenes", gen_test, "scenes per climate for the test split");
  gen->add_option("--size", gen_size, "scene side in pixels (multiple of 8)");
  gen->add_option("--patch", gen_patch, "tile side; < size enables tiling");
  gen->add_option("--classes", gen_k, "number of classes (3..6)");
  gen->add_option("--seed", gen_seed, "base seed");
  gen->add_option("--class-weights", gen_weights, "comma-separated site class weights");
  int gen_sites = 6;
  double gen_noise = 0.05;
  gen->add_option("--sites", gen_sites, "Voronoi sites per 64x64 of area");
  gen->add_option("--noise", gen_noise, "per-pixel color noise amplitude");
  add_common(gen, common);

  // prompt
  auto* prompt = app.add_subcommand("prompt", "emit a prompt bundle for given metadata");
  double p_lat = 52.4, p_lon = 13.1;
  std::string p_classes = "background,building,road,tree,agriculture";
  std::string p_mode = "full", p_out;
  prompt->add_option("--lat", p_lat, "latitude");
  prompt->add_option("--lon", p_lon, "longitude");
  prompt->add_option("--classes", p_classes, "comma-separated class names");
  prompt->add_option("--mode", p_mode, "full or simple");
  prompt->add_option("--out", p_out, "write the bundle to this file");
  add_common(prompt, common);

  // train
  auto* train = app.add_subcommand("train", "train a model on a dataset");
  std::string t_data, t_out = "run", t_config;
  ConfigFlags t_flags;
  train->add_option("--data", t_data, "dataset directory")->required();
  train->add_option("--out", t_out, "output directory");
  train->add_option("--config", t_config, "key=value config file");
  t_flags.add_to(train);
  add_common(train, common);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string e_data, e_split = "val", e_ckpt, e_out;
  bool e_tta = false;
  eval->add_option("--data", e_data, "dataset directory")->required();
  eval->add_option("--split", e_split, "split name");
  eval->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
  eval->add_option("--out", e_out, "metric report file");
  eval->add_flag("--flip-tta", e_tta, "average predictions over flips");
  add_common(eval, common);

  // zero-shot
  auto* zs = app.add_subcommand("zero-shot", "overlapping-class IoU on a foreign dataset");
  std::string z_data, z_split = "test", z_ckpt, z_mapping = "1:1,3:3", z_out;
  zs->add_option("--data", z_data, "foreign dataset directory")->required();
  zs->add_option("--split", z_split, "split name");
  zs->add_option("--checkpoint", z_ckpt, "checkpoint file")->required();
  zs->add_option("--mapping", z_mapping, "source:target id pairs, comma separated");
  zs->add_option("--out", z_out, "report file");
  add_common(zs, common);

  // ablate
  auto* ab = app.add_subcommand("ablate", "train an ablation grid");
  std::string a_data, a_out = "ablation", a_grid = "both", a_seeds = "1,2,3", a_config;
  ConfigFlags a_flags;
  ab->add_option("--data", a_data, "dataset directory")->required();
  ab->add_option("--out", a_out, "output directory");
  ab->add_option("--grid", a_grid, "component, prompt, or both");
  ab->add_option("--seeds", a_seeds, "comma-separated seeds");
  ab->add_option("--config", a_config, "key=value config file");
  a_flags.add_to(ab);
  add_common(ab, common);

  // check
  auto* check = app.add_subcommand("check", "run the gradient and oracle self-tests");
  int c_seeds = 20;
  check->add_option("--seeds", c_seeds, "seeds per gradient case");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_out, gen_climates, gen_train, gen_val, gen_test, gen_size,
                          gen_patch, gen_k, gen_seed, gen_weights, gen_sites, gen_noise, common);
    if (prompt->parsed()) return cmd_prompt(p_lat, p_lon, p_classes, p_mode, p_out, common);
    if (train->parsed()) return cmd_train(t_data, t_out, t_config, t_flags, common);
    if (eval->parsed()) return cmd_eval(e_data, e_split, e_ckpt, e_out, e_tta, common);
    if (zs->parsed()) return cmd_zero_shot(z_data, z_split, z_ckpt, z_mapping, z_out, common);
    if (ab->parsed()) return cmd_ablate(a_data, a_out, a_grid, a_seeds, a_config, a_flags, common);
    if (check->parsed()) return cmd_check(c_seeds);
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
