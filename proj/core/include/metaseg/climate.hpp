#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "metaseg/common.hpp"

namespace metaseg {

struct ClimateZone {
  std::string code;         // Koppen-Geiger label, e.g. "Cfa"
  std::string description;  // human-readable name
};

// The fixed Koppen-Geiger label set; code -> description.
const std::unordered_map<std::string, std::string>& koppen_zone_names();
bool is_koppen_code(const std::string& code);

// 0.5-degree climate grid: lines "lat,lon,code" with lat/lon at cell centers
// (x.25 / x.75). Lookup snaps to the nearest cell; missing cells are no-data.
class ClimateGrid {
 public:
  static ClimateGrid load(const std::string& path);
  static ClimateGrid from_cells(
      const std::vector<std::tuple<double, double, std::string>>& cells);

  // Throws ValueError for out-of-range coordinates or no-data cells.
  ClimateZone lookup(double lat, double lon) const;
  size_t cell_count() const { return cells_.size(); }

 private:
  // key = lat_index * 1440 + lon_index (0.5-degree bins)
  std::unordered_map<int64_t, std::string> cells_;
  void insert(double lat, double lon, const std::string& code);
};

}  // namespace metaseg
