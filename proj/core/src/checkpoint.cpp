#include "metaseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace metaseg {

namespace {
constexpr char kMagic[9] = "MSEGCKPT";

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint: truncated file");
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  uint32_t n = read_pod<uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw IoError("checkpoint: truncated string");
  return s;
}

}  // namespace

std::string model_config_to_text(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "channels=" << cfg.enc.channels << "\n"
     << "heads=" << cfg.enc.heads << "\n"
     << "patch_size=" << cfg.enc.patch_size << "\n"
     << "window_size=" << cfg.enc.window_size << "\n"
     << "stage1_blocks=" << cfg.enc.stage1_blocks << "\n"
     << "stage2_blocks=" << cfg.enc.stage2_blocks << "\n"
     << "text_blocks=" << cfg.enc.text_blocks << "\n"
     << "text_len=" << cfg.enc.text_len << "\n"
     << "vocab_size=" << cfg.enc.vocab_size << "\n"
     << "img_size=" << cfg.enc.img_size << "\n"
     << "num_classes=" << cfg.num_classes << "\n"
     << "joint_blocks=" << cfg.joint_blocks << "\n"
     << "use_alignment=" << (cfg.use_alignment ? 1 : 0) << "\n"
     << "use_fusion=" << (cfg.use_fusion ? 1 : 0) << "\n"
     << "prompt_mode=" << prompt_mode_name(cfg.prompt_mode) << "\n"
     << "freeze_text_encoder=" << (cfg.freeze_text_encoder ? 1 : 0) << "\n";
  return os.str();
}

ModelConfig model_config_from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    size_t eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto geti = [&](const char* k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw IoError(std::string("checkpoint config missing key ") + k);
    return std::stoi(it->second);
  };
  ModelConfig cfg;
  cfg.enc.channels = geti("channels");
  cfg.enc.heads = geti("heads");
  cfg.enc.patch_size = geti("patch_size");
  cfg.enc.window_size = geti("window_size");
  cfg.enc.stage1_blocks = geti("stage1_blocks");
  cfg.enc.stage2_blocks = geti("stage2_blocks");
  cfg.enc.text_blocks = geti("text_blocks");
  cfg.enc.text_len = geti("text_len");
  cfg.enc.vocab_size = geti("vocab_size");
  cfg.enc.img_size = geti("img_size");
  cfg.num_classes = geti("num_classes");
  cfg.joint_blocks = geti("joint_blocks");
  cfg.use_alignment = geti("use_alignment") != 0;
  cfg.use_fusion = geti("use_fusion") != 0;
  cfg.prompt_mode = prompt_mode_from_string(kv.at("prompt_mode"));
  cfg.freeze_text_encoder = geti("freeze_text_encoder") != 0;
  return cfg;
}

void save_checkpoint(const std::string& path, const MetaSegNet& model, const AdamW* opt,
                     int epoch, double best_val_miou) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kMagic, 8);
  write_pod<uint8_t>(out, 1);  // format version
  write_string(out, model_config_to_text(model.config()));

  auto params = model.named_parameters();
  write_pod<uint8_t>(out, params.empty() || params[0].second.dtype() == Dtype::f64 ? 1 : 0);
  write_pod<int32_t>(out, epoch);
  write_pod<double>(out, best_val_miou);
  write_pod<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    write_string(out, name);
    write_pod<uint32_t>(out, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) write_pod<int64_t>(out, d);
    auto v = t.to_vector();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }

  write_pod<uint8_t>(out, opt ? 1 : 0);
  if (opt) {
    write_pod<int64_t>(out, opt->steps_taken());
    auto& slots = const_cast<AdamW*>(opt)->slots();
    write_pod<uint32_t>(out, static_cast<uint32_t>(slots.size()));
    for (auto& s : slots) {
      write_string(out, s.name);
      write_pod<uint64_t>(out, s.m.size());
      out.write(reinterpret_cast<const char*>(s.m.data()),
                static_cast<std::streamsize>(s.m.size() * sizeof(double)));
      out.write(reinterpret_cast<const char*>(s.v.data()),
                static_cast<std::streamsize>(s.v.size() * sizeof(double)));
    }
  }
}

CheckpointData load_checkpoint_data(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("not a checkpoint file: " + path);
  uint8_t version = read_pod<uint8_t>(in);
  if (version != 1) throw IoError("unsupported checkpoint version");

  CheckpointData d;
  d.config = model_config_from_text(read_string(in));
  d.dtype = read_pod<uint8_t>(in) ? Dtype::f64 : Dtype::f32;
  d.epoch = read_pod<int32_t>(in);
  d.best_val_miou = read_pod<double>(in);
  uint32_t nparams = read_pod<uint32_t>(in);
  for (uint32_t i = 0; i < nparams; ++i) {
    std::string name = read_string(in);
    uint32_t nd = read_pod<uint32_t>(in);
    Shape shape;
    for (uint32_t j = 0; j < nd; ++j) shape.push_back(read_pod<int64_t>(in));
    std::vector<double> data(static_cast<size_t>(numel_of(shape)));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw IoError("checkpoint: truncated parameter " + name);
    d.params.emplace_back(name, std::make_pair(shape, std::move(data)));
  }
  d.has_optimizer = read_pod<uint8_t>(in) != 0;
  if (d.has_optimizer) {
    d.optimizer_steps = read_pod<int64_t>(in);
    uint32_t nslots = read_pod<uint32_t>(in);
    for (uint32_t i = 0; i < nslots; ++i) {
      read_string(in);  // slot name, order matches params
      uint64_t n = read_pod<uint64_t>(in);
      std::vector<double> m(n), v(n);
      in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(n * sizeof(double)));
      in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
      if (!in) throw IoError("checkpoint: truncated optimizer state");
      d.opt_m.push_back(std::move(m));
      d.opt_v.push_back(std::move(v));
    }
  }
  return d;
}

MetaSegNet restore_model(const CheckpointData& data) {
  Dtype prev = default_dtype();
  set_default_dtype(data.dtype);
  MetaSegNet model(data.config, 0);
  set_default_dtype(prev);

  auto params = model.named_parameters();
  if (params.size() != data.params.size())
    throw IoError("checkpoint: parameter count mismatch (model " + std::to_string(params.size()) +
                  ", file " + std::to_string(data.params.size()) + ")");
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& [name, payload] = data.params[i];
    if (params[i].first != name || params[i].second.shape() != payload.first)
      throw IoError("checkpoint: parameter mismatch at " + name);
    params[i].second.copy_from(payload.second);
  }
  return model;
}

void restore_optimizer(AdamW& opt, const CheckpointData& data) {
  if (!data.has_optimizer) throw IoError("checkpoint has no optimizer state");
  auto& slots = opt.slots();
  if (slots.size() != data.opt_m.size())
    throw IoError("checkpoint: optimizer slot count mismatch");
  for (size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].m.size() != data.opt_m[i].size())
      throw IoError("checkpoint: optimizer state size mismatch at " + slots[i].name);
    slots[i].m = data.opt_m[i];
    slots[i].v = data.opt_v[i];
  }
  opt.restore_step_count(data.optimizer_steps);
}

}  // namespace metaseg
