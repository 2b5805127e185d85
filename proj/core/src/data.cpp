#include "metaseg/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace metaseg {

namespace fs = std::filesystem;

const std::vector<std::string>& canonical_class_names() {
  static const std::vector<std::string> names = {"background", "building", "road",
                                                 "tree",       "agriculture", "water"};
  return names;
}

namespace {

// hue word -> base RGB, shared vocabulary with the canned prompt corpus
const std::map<std::string, std::array<double, 3>>& hue_table() {
  static const std::map<std::string, std::array<double, 3>> t = {
      {"dark green", {0.10, 0.40, 0.14}},   {"olive green", {0.52, 0.60, 0.22}},
      {"pale yellow", {0.80, 0.74, 0.38}},  {"deep green", {0.05, 0.33, 0.10}},
      {"bright green", {0.30, 0.62, 0.20}}, {"dusty green", {0.47, 0.52, 0.30}},
      {"sandy yellow", {0.76, 0.66, 0.42}}, {"gray green", {0.42, 0.50, 0.36}},
      {"golden yellow", {0.82, 0.70, 0.30}},
  };
  return t;
}

struct ZoneVeg {
  const char* tree;
  const char* agri;
  double lat, lon;
};

const std::map<std::string, ZoneVeg>& zone_table() {
  static const std::map<std::string, ZoneVeg> t = {
      {"Cfb", {"dark green", "olive green", 48.75, 2.25}},
      {"Cfa", {"olive green", "dark green", 32.25, 118.75}},
      {"Dfb", {"olive green", "dark green", 52.25, 13.25}},
      {"Af", {"deep green", "bright green", 1.25, 103.75}},
      {"BWh", {"dusty green", "sandy yellow", 24.25, 54.75}},
      {"Csa", {"gray green", "golden yellow", 37.25, -5.75}},
  };
  return t;
}

}  // namespace

bool zone_supported(const std::string& zone_code) { return zone_table().count(zone_code) > 0; }

const VegPalette& veg_palette(const std::string& zone_code) {
  static std::map<std::string, VegPalette> cache;
  auto it = cache.find(zone_code);
  if (it != cache.end()) return it->second;
  auto zt = zone_table().find(zone_code);
  if (zt == zone_table().end())
    throw ValueError("synthetic generator does not support climate zone " + zone_code);
  VegPalette p;
  p.tree_hue_word = zt->second.tree;
  p.agri_hue_word = zt->second.agri;
  p.tree = hue_table().at(p.tree_hue_word);
  p.agriculture = hue_table().at(p.agri_hue_word);
  return cache.emplace(zone_code, p).first->second;
}

std::array<double, 3> class_base_color(const std::string& class_name,
                                       const std::string& zone_code) {
  if (class_name == "background") return {0.62, 0.60, 0.58};
  if (class_name == "building") return {0.55, 0.24, 0.22};
  if (class_name == "road") return {0.26, 0.26, 0.29};
  if (class_name == "water") return {0.16, 0.30, 0.55};
  if (class_name == "tree") return veg_palette(zone_code).tree;
  if (class_name == "agriculture") return veg_palette(zone_code).agriculture;
  throw ValueError("unknown class name " + class_name);
}

std::pair<double, double> zone_fixture_coords(const std::string& zone_code) {
  auto it = zone_table().find(zone_code);
  if (it == zone_table().end())
    throw ValueError("no fixture coordinates for climate zone " + zone_code);
  return {it->second.lat, it->second.lon};
}

LabeledScene generate_scene(uint64_t seed, const ClimateZone& climate, int size, int k,
                            const GenOptions& opt) {
  if (size <= 0 || size % 8 != 0)
    throw ValueError("scene size must be a positive multiple of 8, got " + std::to_string(size));
  if (k < 3 || k > static_cast<int>(canonical_class_names().size()))
    throw ValueError("class count must be in [3, " +
                     std::to_string(canonical_class_names().size()) + "], got " +
                     std::to_string(k));
  if (!opt.class_weights.empty() && static_cast<int>(opt.class_weights.size()) != k)
    throw ValueError("class_weights must have K entries");
  if (!zone_supported(climate.code))
    throw ValueError("synthetic generator does not support climate zone " + climate.code);

  LabeledScene s;
  s.size = size;
  s.climate_code = climate.code;
  s.class_names.assign(canonical_class_names().begin(), canonical_class_names().begin() + k);
  s.id = climate.code + "_" + std::to_string(seed);

  Rng rng(seed ^ 0x5eedc0de12345678ull);

  // Voronoi sites with independently sampled classes; a scene need not
  // contain every class.
  int sites = std::max(3, opt.sites_per_64px * (size / 64 == 0 ? 1 : (size / 64) * (size / 64)));
  std::vector<double> sx(sites), sy(sites);
  std::vector<int> scls(sites);
  for (int i = 0; i < sites; ++i) {
    sx[i] = rng.uniform(0.0, static_cast<double>(size));
    sy[i] = rng.uniform(0.0, static_cast<double>(size));
  }
  for (int i = 0; i < sites; ++i) {
    if (opt.class_weights.empty()) {
      scls[i] = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(k)));
    } else {
      double total = 0;
      for (double w : opt.class_weights) total += w;
      double u = rng.uniform(0.0, total);
      int c = 0;
      while (c + 1 < k && u >= opt.class_weights[static_cast<size_t>(c)]) {
        u -= opt.class_weights[static_cast<size_t>(c)];
        c++;
      }
      scls[i] = c;
    }
  }
  std::vector<double> brightness(sites);
  for (int i = 0; i < sites; ++i) brightness[i] = 1.0 + opt.region_jitter * rng.uniform(-1.0, 1.0);

  s.labels.assign(static_cast<size_t>(size) * size, 0);
  std::vector<double> img(static_cast<size_t>(3) * size * size, 0.0);
  std::vector<std::array<double, 3>> base(static_cast<size_t>(k));
  for (int c = 0; c < k; ++c) base[static_cast<size_t>(c)] = class_base_color(s.class_names[static_cast<size_t>(c)], climate.code);

  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      int bestsite = 0;
      double best = 1e30;
      for (int i = 0; i < sites; ++i) {
        double dx = sx[i] - (x + 0.5), dy = sy[i] - (y + 0.5);
        double d = dx * dx + dy * dy;
        if (d < best) {
          best = d;
          bestsite = i;
        }
      }
      int cls = scls[bestsite];
      s.labels[static_cast<size_t>(y) * size + x] = static_cast<uint8_t>(cls);
      const auto& rgb = base[static_cast<size_t>(cls)];
      double gain = brightness[bestsite];
      for (int ch = 0; ch < 3; ++ch) {
        double v = rgb[static_cast<size_t>(ch)] * gain + opt.noise_amp * rng.uniform(-1.0, 1.0);
        img[(static_cast<size_t>(ch) * size + y) * size + x] = std::clamp(v, 0.0, 1.0);
      }
    }

  s.image = Tensor::from({3, size, size}, img);

  auto [lat, lon] = zone_fixture_coords(climate.code);
  s.metadata.latitude = lat + rng.uniform(-0.1, 0.1);
  s.metadata.longitude = lon + rng.uniform(-0.1, 0.1);
  s.metadata.region_name = "synthetic-" + climate.code;
  s.metadata.acquisition_time = "2024-06-01T10:00:00Z";
  s.metadata.resolution_m = 0.5;
  return s;
}

std::vector<LabeledScene> tile_patches(const LabeledScene& scene, int patch) {
  if (patch <= 0 || scene.size % patch != 0)
    throw ValueError("scene size " + std::to_string(scene.size) + " not divisible by patch " +
                     std::to_string(patch));
  int n = scene.size / patch;
  std::vector<LabeledScene> tiles;
  tiles.reserve(static_cast<size_t>(n) * n);
  for (int ty = 0; ty < n; ++ty)
    for (int tx = 0; tx < n; ++tx) {
      LabeledScene t;
      t.size = patch;
      t.metadata = scene.metadata;
      t.class_names = scene.class_names;
      t.climate_code = scene.climate_code;
      t.id = scene.id + "_t" + std::to_string(ty) + std::to_string(tx);
      t.labels.resize(static_cast<size_t>(patch) * patch);
      std::vector<double> img(static_cast<size_t>(3) * patch * patch);
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x) {
          int sy = ty * patch + y, sx = tx * patch + x;
          t.labels[static_cast<size_t>(y) * patch + x] =
              scene.labels[static_cast<size_t>(sy) * scene.size + sx];
          for (int ch = 0; ch < 3; ++ch)
            img[(static_cast<size_t>(ch) * patch + y) * patch + x] =
                scene.image.at((static_cast<int64_t>(ch) * scene.size + sy) * scene.size + sx);
        }
      t.image = Tensor::from({3, patch, patch}, img);
      tiles.push_back(std::move(t));
    }
  return tiles;
}

LabeledScene augment_flip(const LabeledScene& scene, Rng& rng) {
  uint64_t t = rng.uniform_int(4);  // none / h / v / hv
  bool fh = t == 1 || t == 3;
  bool fv = t == 2 || t == 3;
  LabeledScene out = scene;
  if (!fh && !fv) return out;
  int n = scene.size;
  std::vector<double> img(static_cast<size_t>(3) * n * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      int sy = fv ? n - 1 - y : y;
      int sx = fh ? n - 1 - x : x;
      out.labels[static_cast<size_t>(y) * n + x] = scene.labels[static_cast<size_t>(sy) * n + sx];
      for (int ch = 0; ch < 3; ++ch)
        img[(static_cast<size_t>(ch) * n + y) * n + x] =
            scene.image.at((static_cast<int64_t>(ch) * n + sy) * n + sx);
    }
  out.image = Tensor::from({3, n, n}, img);
  return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

void DatasetManifest::validate() const {
  if (k <= 0 || static_cast<int>(class_names.size()) != k)
    throw ValueError("manifest: class_names must have K entries");
  std::map<std::string, std::string> seen;  // id -> split
  for (const auto& [split, records] : splits)
    for (const auto& r : records) {
      auto [it, fresh] = seen.emplace(r.id, split);
      if (!fresh)
        throw ValueError("manifest: scene " + r.id + " appears in splits '" + it->second +
                         "' and '" + split + "'");
    }
}

namespace {

void write_ppm(const std::string& path, const Tensor& image, int size) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P6\n" << size << " " << size << "\n255\n";
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        double v = image.at((static_cast<int64_t>(ch) * size + y) * size + x);
        int q = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        out.put(static_cast<char>(q));
      }
}

std::string read_pnm_header(std::istream& in, const std::string& magic, const std::string& path,
                            int& w, int& h) {
  std::string m;
  int maxval;
  in >> m >> w >> h >> maxval;
  if (m != magic || maxval != 255) throw IoError("unsupported raster format in " + path);
  in.get();  // single whitespace before binary payload
  return m;
}

}  // namespace

void write_scene(const LabeledScene& scene, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "labels");
  fs::create_directories(fs::path(dir) / "meta");
  write_ppm((fs::path(dir) / "images" / (scene.id + ".ppm")).string(), scene.image, scene.size);

  std::ofstream lab((fs::path(dir) / "labels" / (scene.id + ".pgm")).string(), std::ios::binary);
  if (!lab) throw IoError("cannot write labels for " + scene.id);
  lab << "P5\n" << scene.size << " " << scene.size << "\n255\n";
  lab.write(reinterpret_cast<const char*>(scene.labels.data()),
            static_cast<std::streamsize>(scene.labels.size()));

  std::ofstream meta((fs::path(dir) / "meta" / (scene.id + ".txt")).string());
  meta.precision(12);
  meta << "latitude=" << scene.metadata.latitude << "\n"
       << "longitude=" << scene.metadata.longitude << "\n"
       << "region=" << scene.metadata.region_name << "\n"
       << "acquisition_time=" << scene.metadata.acquisition_time << "\n"
       << "resolution_m=" << scene.metadata.resolution_m << "\n"
       << "climate=" << scene.climate_code << "\n";
}

LabeledScene read_scene(const std::string& dir, const std::string& id,
                        const std::vector<std::string>& expected_class_names) {
  LabeledScene s;
  s.id = id;
  s.class_names = expected_class_names;

  std::string img_path = (fs::path(dir) / "images" / (id + ".ppm")).string();
  std::ifstream img(img_path, std::ios::binary);
  if (!img) throw IoError("missing image file " + img_path);
  int w, h;
  read_pnm_header(img, "P6", img_path, w, h);
  if (w != h) throw IoError("non-square raster in " + img_path);
  s.size = w;
  std::vector<unsigned char> raw(static_cast<size_t>(3) * w * h);
  img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!img) throw IoError("truncated raster " + img_path);
  std::vector<double> data(static_cast<size_t>(3) * w * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        data[(static_cast<size_t>(ch) * h + y) * w + x] =
            raw[(static_cast<size_t>(y) * w + x) * 3 + static_cast<size_t>(ch)] / 255.0;
  s.image = Tensor::from({3, h, w}, data);

  std::string lab_path = (fs::path(dir) / "labels" / (id + ".pgm")).string();
  std::ifstream lab(lab_path, std::ios::binary);
  if (!lab) throw IoError("missing label file " + lab_path);
  read_pnm_header(lab, "P5", lab_path, w, h);
  s.labels.resize(static_cast<size_t>(w) * h);
  lab.read(reinterpret_cast<char*>(s.labels.data()), static_cast<std::streamsize>(s.labels.size()));
  if (!lab) throw IoError("truncated raster " + lab_path);
  for (uint8_t v : s.labels)
    if (v >= expected_class_names.size())
      throw ValueError("label id " + std::to_string(v) + " out of range in " + lab_path);

  std::string meta_path = (fs::path(dir) / "meta" / (id + ".txt")).string();
  std::ifstream meta(meta_path);
  if (!meta) throw IoError("missing metadata file " + meta_path);
  std::string line;
  while (std::getline(meta, line)) {
    size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "latitude") s.metadata.latitude = std::stod(val);
    if (key == "longitude") s.metadata.longitude = std::stod(val);
    if (key == "region") s.metadata.region_name = val;
    if (key == "acquisition_time") s.metadata.acquisition_time = val;
    if (key == "resolution_m") s.metadata.resolution_m = std::stod(val);
    if (key == "climate") s.climate_code = val;
  }
  return s;
}

void write_manifest(const DatasetManifest& m, const std::string& dir) {
  m.validate();
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / "manifest");
  if (!out) throw IoError("cannot write manifest in " + dir);
  out << "k=" << m.k << "\n";
  out << "classes=";
  for (size_t i = 0; i < m.class_names.size(); ++i) out << (i ? "," : "") << m.class_names[i];
  out << "\n";
  for (const auto& [split, records] : m.splits) {
    out << "split=" << split << "\n";
    for (const auto& r : records)
      out << "scene=" << r.id << "," << r.seed << "," << r.climate_code << "\n";
  }
}

DatasetManifest read_manifest(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest");
  if (!in) throw IoError("missing manifest in " + dir);
  DatasetManifest m;
  std::string line, split;
  while (std::getline(in, line)) {
    if (line.rfind("k=", 0) == 0) m.k = std::stoi(line.substr(2));
    else if (line.rfind("classes=", 0) == 0) {
      std::istringstream ss(line.substr(8));
      std::string name;
      while (std::getline(ss, name, ',')) m.class_names.push_back(name);
    } else if (line.rfind("split=", 0) == 0) {
      split = line.substr(6);
      m.splits[split];
    } else if (line.rfind("scene=", 0) == 0) {
      if (split.empty()) throw IoError("manifest: scene record before any split");
      std::istringstream ss(line.substr(6));
      SceneRecord r;
      std::string seed;
      std::getline(ss, r.id, ',');
      std::getline(ss, seed, ',');
      std::getline(ss, r.climate_code, ',');
      r.seed = std::stoull(seed);
      m.splits[split].push_back(r);
    }
  }
  m.validate();
  return m;
}

void check_class_order(const DatasetManifest& m, const std::vector<std::string>& expected) {
  if (m.class_names != expected) {
    std::string got, want;
    for (const auto& n : m.class_names) got += n + " ";
    for (const auto& n : expected) want += n + " ";
    throw ValueError("class-order mismatch: dataset has [" + got + "] but caller expects [" +
                     want + "]");
  }
}

std::vector<LabeledScene> load_split(const std::string& dir, const DatasetManifest& m,
                                     const std::string& split) {
  auto it = m.splits.find(split);
  if (it == m.splits.end()) throw ValueError("dataset has no split '" + split + "'");
  std::vector<LabeledScene> scenes;
  for (const auto& r : it->second) scenes.push_back(read_scene(dir, r.id, m.class_names));
  return scenes;
}

}  // namespace metaseg
