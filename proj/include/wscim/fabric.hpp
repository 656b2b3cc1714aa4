#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace wscim {

// Error with a machine-readable kind so the CLI can map failures to exit codes.
enum class ErrorKind {
  Config,
  Infeasible,
  TooLarge,
  Deadlock,
  Unrecoverable,
  Invalid,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct WaferTopology {
  int dies_rows = 9;
  int dies_cols = 7;
  int cores_rows_per_die = 13;
  int cores_cols_per_die = 17;
  int64_t core_sram_bytes = 4ll * 1024 * 1024;
  int link_width_bits = 256;  // per direction
  int n_wafers = 1;
  double inter_wafer_gbps = 800.0;  // eight 100G ports, aggregated

  int dies_per_wafer() const { return dies_rows * dies_cols; }
  int cores_per_die() const { return cores_rows_per_die * cores_cols_per_die; }
  int cores_per_wafer() const { return dies_per_wafer() * cores_per_die(); }
  int64_t total_cores() const { return int64_t(n_wafers) * cores_per_wafer(); }
  int64_t sram_per_wafer_bytes() const { return int64_t(cores_per_wafer()) * core_sram_bytes; }
  int global_rows() const { return dies_rows * cores_rows_per_die; }
  int global_cols() const { return dies_cols * cores_cols_per_die; }

  void validate() const;
};

struct CoreCoord {
  int16_t wafer = 0;
  int16_t die_row = 0;
  int16_t die_col = 0;
  int16_t core_row = 0;
  int16_t core_col = 0;

  friend bool operator==(const CoreCoord&, const CoreCoord&) = default;
  friend auto operator<=>(const CoreCoord&, const CoreCoord&) = default;
};

// Flat index <-> coordinate. Wafer-major, die-row-major, core-row-major.
uint32_t core_index(const WaferTopology& topo, const CoreCoord& c);
CoreCoord core_at(const WaferTopology& topo, uint32_t index);
bool in_bounds(const WaferTopology& topo, const CoreCoord& c);

// Position on the seamless per-wafer core grid (dies do not add hops).
inline int global_row(const WaferTopology& topo, const CoreCoord& c) {
  return c.die_row * topo.cores_rows_per_die + c.core_row;
}
inline int global_col(const WaferTopology& topo, const CoreCoord& c) {
  return c.die_col * topo.cores_cols_per_die + c.core_col;
}

int manhattan(const WaferTopology& topo, const CoreCoord& a, const CoreCoord& b);

// Weighted hop distance: Manhattan hops, multiplied by cost_inter when the
// endpoints sit on different dies. Cross-wafer pairs are rejected; the
// inter-wafer link is modeled separately by the engine.
double distance(const WaferTopology& topo, const CoreCoord& a, const CoreCoord& b,
                double cost_inter);

struct YieldParams {
  double defect_density_per_cm2 = 0.09;  // D0
  double core_area_mm2 = 2.97;           // A
};

// Murphy model: Y = ((1 - e^(-A*D0)) / (A*D0))^2, with A converted to cm^2.
double murphy_yield(const YieldParams& p);

struct LinkKey {
  uint32_t from = 0;
  uint32_t to = 0;
  friend bool operator==(const LinkKey&, const LinkKey&) = default;
};
struct LinkKeyHash {
  size_t operator()(const LinkKey& k) const {
    return std::hash<uint64_t>()((uint64_t(k.from) << 32) | k.to);
  }
};

struct DefectMap {
  std::vector<uint8_t> defective;  // one flag per core, indexed by core_index
  std::unordered_set<LinkKey, LinkKeyHash> defective_links;  // directed edges
  uint64_t seed = 0;

  bool is_defective(const WaferTopology& topo, const CoreCoord& c) const {
    return defective[core_index(topo, c)] != 0;
  }
  bool link_defective(uint32_t from, uint32_t to) const {
    return defective_links.contains(LinkKey{from, to});
  }
  int64_t defect_count() const;
};

// Each core is independently defective with probability 1 - murphy_yield(p).
// The per-core draw is a pure hash of (seed, core index), so the parallel and
// serial paths produce identical maps.
DefectMap sample_defects(const WaferTopology& topo, const YieldParams& p, uint64_t seed);
DefectMap sample_defects_serial(const WaferTopology& topo, const YieldParams& p, uint64_t seed);

// Optional link-defect sampling; off unless rate > 0.
void sample_link_defects(DefectMap& map, const WaferTopology& topo, double rate, uint64_t seed);

// Boustrophedon traversal of the die grid: row 0 left-to-right, row 1
// right-to-left, ... Consecutive dies are always grid-adjacent.
std::vector<std::pair<int, int>> snake_order(const WaferTopology& topo);

// All cores of one wafer in snake order: dies in snake_order, cores within a
// die boustrophedon as well, with the scan direction stitched so consecutive
// cores stay close.
std::vector<CoreCoord> snake_core_order(const WaferTopology& topo, int wafer);

// Dimension-order route (X/columns first, then Y/rows) between two cores on
// the same wafer. When a defective link or core blocks the XY path, falls back
// to a BFS detour with a fixed neighbor visiting order, standing in for the
// static detour tables of the hardware.
std::vector<CoreCoord> route(const WaferTopology& topo, const CoreCoord& a, const CoreCoord& b,
                             const DefectMap* defects = nullptr);

}  // namespace wscim
