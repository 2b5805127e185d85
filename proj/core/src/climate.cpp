#include "metaseg/climate.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>

namespace metaseg {

const std::unordered_map<std::string, std::string>& koppen_zone_names() {
  // Naming follows common regional usage for Cfa/Dfb (subtropical monsoon,
  // temperate continental) and conventional Koppen names elsewhere.
  static const std::unordered_map<std::string, std::string> names = {
      {"Af", "tropical rainforest climate zone"},
      {"Am", "tropical monsoon climate zone"},
      {"Aw", "tropical savanna climate zone"},
      {"BWh", "hot desert climate zone"},
      {"BWk", "cold desert climate zone"},
      {"BSh", "hot semi-arid climate zone"},
      {"BSk", "cold semi-arid climate zone"},
      {"Csa", "hot-summer mediterranean climate zone"},
      {"Csb", "warm-summer mediterranean climate zone"},
      {"Csc", "cold-summer mediterranean climate zone"},
      {"Cwa", "monsoon-influenced humid subtropical climate zone"},
      {"Cwb", "subtropical highland climate zone"},
      {"Cwc", "cold subtropical highland climate zone"},
      {"Cfa", "subtropical monsoon climate zone"},
      {"Cfb", "temperate oceanic climate zone"},
      {"Cfc", "subpolar oceanic climate zone"},
      {"Dsa", "hot-summer mediterranean continental climate zone"},
      {"Dsb", "warm-summer mediterranean continental climate zone"},
      {"Dsc", "dry-summer subarctic climate zone"},
      {"Dsd", "very cold dry-summer subarctic climate zone"},
      {"Dwa", "monsoon-influenced hot-summer continental climate zone"},
      {"Dwb", "monsoon-influenced warm-summer continental climate zone"},
      {"Dwc", "monsoon-influenced subarctic climate zone"},
      {"Dwd", "very cold monsoon-influenced subarctic climate zone"},
      {"Dfa", "hot-summer humid continental climate zone"},
      {"Dfb", "temperate continental climate zone"},
      {"Dfc", "subarctic climate zone"},
      {"Dfd", "very cold subarctic climate zone"},
      {"ET", "tundra climate zone"},
      {"EF", "ice cap climate zone"},
  };
  return names;
}

bool is_koppen_code(const std::string& code) { return koppen_zone_names().count(code) > 0; }

namespace {

void check_coords(double lat, double lon) {
  if (!(lat >= -90.0 && lat <= 90.0))
    throw ValueError("latitude " + std::to_string(lat) + " outside [-90, 90]");
  if (!(lon >= -180.0 && lon <= 180.0))
    throw ValueError("longitude " + std::to_string(lon) + " outside [-180, 180]");
}

// Cell index of the nearest 0.5-degree cell center (x.25 / x.75).
int64_t cell_index(double v) { return static_cast<int64_t>(std::floor(v / 0.5)); }

int64_t cell_key(double lat, double lon) {
  return (cell_index(lat) + 180) * 1440 + (cell_index(lon) + 360);
}

}  // namespace

void ClimateGrid::insert(double lat, double lon, const std::string& code) {
  if (!is_koppen_code(code))
    throw IoError("climate grid: unknown Koppen-Geiger code '" + code + "'");
  check_coords(lat, lon);
  cells_[cell_key(lat, lon)] = code;
}

ClimateGrid ClimateGrid::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open climate grid " + path);
  ClimateGrid g;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    lineno++;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string lat_s, lon_s, code;
    if (!std::getline(ss, lat_s, ',') || !std::getline(ss, lon_s, ',') ||
        !std::getline(ss, code))
      throw IoError("malformed climate grid line " + std::to_string(lineno) + " in " + path);
    while (!code.empty() && (code.back() == '\r' || code.back() == ' ')) code.pop_back();
    try {
      g.insert(std::stod(lat_s), std::stod(lon_s), code);
    } catch (const std::invalid_argument&) {
      throw IoError("malformed climate grid line " + std::to_string(lineno) + " in " + path);
    }
  }
  if (g.cells_.empty()) throw IoError("climate grid " + path + " has no cells");
  return g;
}

ClimateGrid ClimateGrid::from_cells(
    const std::vector<std::tuple<double, double, std::string>>& cells) {
  ClimateGrid g;
  for (const auto& [lat, lon, code] : cells) g.insert(lat, lon, code);
  if (g.cells_.empty()) throw ValueError("climate grid: no cells");
  return g;
}

ClimateZone ClimateGrid::lookup(double lat, double lon) const {
  check_coords(lat, lon);
  auto it = cells_.find(cell_key(lat, lon));
  if (it == cells_.end())
    throw ValueError("no climate data at (" + std::to_string(lat) + ", " + std::to_string(lon) +
                     ") — ocean or uncovered cell");
  ClimateZone z;
  z.code = it->second;
  z.description = koppen_zone_names().at(z.code);
  return z;
}

}  // namespace metaseg
