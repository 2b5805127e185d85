#pragma once

#include <map>
#include <string>
#include <vector>

#include "metaseg/climate.hpp"
#include "metaseg/prompt.hpp"
#include "metaseg/tensor.hpp"

namespace metaseg {

// Canonical class order; generate_scene(K) uses the first K entries.
const std::vector<std::string>& canonical_class_names();

// Per-zone vegetation palette. Built classes are climate-invariant; tree and
// agriculture colors come from the same hue vocabulary as the canned corpus.
struct VegPalette {
  std::array<double, 3> tree;
  std::array<double, 3> agriculture;
  std::string tree_hue_word;
  std::string agri_hue_word;
};
const VegPalette& veg_palette(const std::string& zone_code);
std::array<double, 3> class_base_color(const std::string& class_name, const std::string& zone_code);

// Fixture coordinate (cell center region) for each synthetic-world zone.
std::pair<double, double> zone_fixture_coords(const std::string& zone_code);
bool zone_supported(const std::string& zone_code);

struct LabeledScene {
  Tensor image;                  // [3,H,W] in [0,1]
  std::vector<uint8_t> labels;   // H*W class ids
  ImageMetadata metadata;
  std::vector<std::string> class_names;
  std::string climate_code;
  std::string id;
  int size = 0;
};

struct GenOptions {
  int sites_per_64px = 6;             // Voronoi sites per 64x64 of area
  double noise_amp = 0.05;            // per-pixel uniform color noise
  double region_jitter = 0.05;        // per-region brightness jitter
  std::vector<double> class_weights;  // weights for extra sites; empty = uniform
};

LabeledScene generate_scene(uint64_t seed, const ClimateZone& climate, int size, int k,
                            const GenOptions& opt = {});

std::vector<LabeledScene> tile_patches(const LabeledScene& scene, int patch);

LabeledScene augment_flip(const LabeledScene& scene, Rng& rng);

// ---------------------------------------------------------------------------
// On-disk dataset: images/<id>.ppm, labels/<id>.pgm, meta/<id>.txt, manifest.
// ---------------------------------------------------------------------------

struct SceneRecord {
  std::string id;
  uint64_t seed = 0;
  std::string climate_code;
};

struct DatasetManifest {
  int k = 0;
  std::vector<std::string> class_names;
  std::map<std::string, std::vector<SceneRecord>> splits;  // train / val / test

  void validate() const;  // disjoint splits, consistent K
};

void write_scene(const LabeledScene& scene, const std::string& dir);
LabeledScene read_scene(const std::string& dir, const std::string& id,
                        const std::vector<std::string>& expected_class_names);

void write_manifest(const DatasetManifest& m, const std::string& dir);
DatasetManifest read_manifest(const std::string& dir);

// Class lists must match exactly, in order; anything else is a hard error.
void check_class_order(const DatasetManifest& m, const std::vector<std::string>& expected);

std::vector<LabeledScene> load_split(const std::string& dir, const DatasetManifest& m,
                                     const std::string& split);

}  // namespace metaseg
