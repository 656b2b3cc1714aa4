#include "wscim/fabric.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <deque>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace wscim {

void WaferTopology::validate() const {
  if (dies_rows <= 0 || dies_cols <= 0 || cores_rows_per_die <= 0 || cores_cols_per_die <= 0 ||
      n_wafers <= 0) {
    throw Error(ErrorKind::Config, "topology dimensions must be positive");
  }
  if (core_sram_bytes <= 0) throw Error(ErrorKind::Config, "core_sram_bytes must be positive");
  if (link_width_bits <= 0) throw Error(ErrorKind::Config, "link_width_bits must be positive");
}

uint32_t core_index(const WaferTopology& topo, const CoreCoord& c) {
  int die = c.die_row * topo.dies_cols + c.die_col;
  int within = c.core_row * topo.cores_cols_per_die + c.core_col;
  return uint32_t((int64_t(c.wafer) * topo.dies_per_wafer() + die) * topo.cores_per_die() +
                  within);
}

CoreCoord core_at(const WaferTopology& topo, uint32_t index) {
  int cpd = topo.cores_per_die();
  int within = int(index % cpd);
  int die_global = int(index / cpd);
  int die = die_global % topo.dies_per_wafer();
  CoreCoord c;
  c.wafer = int16_t(die_global / topo.dies_per_wafer());
  c.die_row = int16_t(die / topo.dies_cols);
  c.die_col = int16_t(die % topo.dies_cols);
  c.core_row = int16_t(within / topo.cores_cols_per_die);
  c.core_col = int16_t(within % topo.cores_cols_per_die);
  return c;
}

bool in_bounds(const WaferTopology& topo, const CoreCoord& c) {
  return c.wafer >= 0 && c.wafer < topo.n_wafers && c.die_row >= 0 && c.die_row < topo.dies_rows &&
         c.die_col >= 0 && c.die_col < topo.dies_cols && c.core_row >= 0 &&
         c.core_row < topo.cores_rows_per_die && c.core_col >= 0 &&
         c.core_col < topo.cores_cols_per_die;
}

int manhattan(const WaferTopology& topo, const CoreCoord& a, const CoreCoord& b) {
  return std::abs(global_row(topo, a) - global_row(topo, b)) +
         std::abs(global_col(topo, a) - global_col(topo, b));
}

double distance(const WaferTopology& topo, const CoreCoord& a, const CoreCoord& b,
                double cost_inter) {
  if (a.wafer != b.wafer) {
    throw Error(ErrorKind::Invalid, "distance() is intra-wafer only; inter-wafer links are "
                                    "modeled by the engine");
  }
  int hops = manhattan(topo, a, b);
  bool same_die = a.die_row == b.die_row && a.die_col == b.die_col;
  return double(hops) * (same_die ? 1.0 : cost_inter);
}

double murphy_yield(const YieldParams& p) {
  double x = (p.core_area_mm2 / 100.0) * p.defect_density_per_cm2;
  if (x <= 0.0) throw Error(ErrorKind::Config, "A*D0 must be positive");
  double y = (1.0 - std::exp(-x)) / x;
  return y * y;
}

int64_t DefectMap::defect_count() const {
  int64_t n = 0;
  for (uint8_t d : defective) n += d;
  return n;
}

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Uniform in [0,1) from a (seed, counter) pair.
double hash_u01(uint64_t seed, uint64_t counter) {
  uint64_t z = splitmix64(seed ^ splitmix64(counter));
  return double(z >> 11) * 0x1.0p-53;
}

CoreCoord from_global(const WaferTopology& topo, int wafer, int gr, int gc) {
  CoreCoord c;
  c.wafer = int16_t(wafer);
  c.die_row = int16_t(gr / topo.cores_rows_per_die);
  c.core_row = int16_t(gr % topo.cores_rows_per_die);
  c.die_col = int16_t(gc / topo.cores_cols_per_die);
  c.core_col = int16_t(gc % topo.cores_cols_per_die);
  return c;
}

}  // namespace

DefectMap sample_defects_serial(const WaferTopology& topo, const YieldParams& p, uint64_t seed) {
  double p_defect = 1.0 - murphy_yield(p);
  DefectMap map;
  map.seed = seed;
  int64_t n = topo.total_cores();
  map.defective.assign(size_t(n), 0);
  for (int64_t i = 0; i < n; ++i) {
    map.defective[size_t(i)] = hash_u01(seed, uint64_t(i)) < p_defect ? 1 : 0;
  }
  return map;
}

DefectMap sample_defects(const WaferTopology& topo, const YieldParams& p, uint64_t seed) {
  double p_defect = 1.0 - murphy_yield(p);
  DefectMap map;
  map.seed = seed;
  int64_t n = topo.total_cores();
  map.defective.assign(size_t(n), 0);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    map.defective[size_t(i)] = hash_u01(seed, uint64_t(i)) < p_defect ? 1 : 0;
  }
  return map;
}

void sample_link_defects(DefectMap& map, const WaferTopology& topo, double rate, uint64_t seed) {
  if (rate <= 0.0) return;
  int64_t n = topo.total_cores();
  // Counter space disjoint from core sampling: offset by total core count.
  uint64_t counter = uint64_t(n);
  for (int64_t i = 0; i < n; ++i) {
    CoreCoord c = core_at(topo, uint32_t(i));
    const int dr[2] = {0, 1};
    const int dc[2] = {1, 0};
    for (int k = 0; k < 2; ++k) {
      int gr = global_row(topo, c) + dr[k];
      int gc = global_col(topo, c) + dc[k];
      if (gr >= topo.global_rows() || gc >= topo.global_cols()) continue;
      CoreCoord nb;
      nb.wafer = c.wafer;
      nb.die_row = int16_t(gr / topo.cores_rows_per_die);
      nb.core_row = int16_t(gr % topo.cores_rows_per_die);
      nb.die_col = int16_t(gc / topo.cores_cols_per_die);
      nb.core_col = int16_t(gc % topo.cores_cols_per_die);
      counter++;
      if (hash_u01(seed, counter) < rate) {
        uint32_t u = uint32_t(i), v = core_index(topo, nb);
        map.defective_links.insert(LinkKey{u, v});
        map.defective_links.insert(LinkKey{v, u});
      }
    }
  }
}

std::vector<std::pair<int, int>> snake_order(const WaferTopology& topo) {
  std::vector<std::pair<int, int>> order;
  order.reserve(size_t(topo.dies_per_wafer()));
  for (int r = 0; r < topo.dies_rows; ++r) {
    if (r % 2 == 0) {
      for (int c = 0; c < topo.dies_cols; ++c) order.emplace_back(r, c);
    } else {
      for (int c = topo.dies_cols - 1; c >= 0; --c) order.emplace_back(r, c);
    }
  }
  return order;
}

std::vector<CoreCoord> snake_core_order(const WaferTopology& topo, int wafer) {
  // Column serpentine inside each die-row band, bands alternating direction.
  // Whole dies are visited consecutively and in snake_order; consecutive cores
  // are grid-adjacent except at band turns.
  std::vector<CoreCoord> order;
  order.reserve(size_t(topo.cores_per_wafer()));
  int band_rows = topo.cores_rows_per_die;
  int n_cols = topo.global_cols();
  for (int band = 0; band < topo.dies_rows; ++band) {
    for (int k = 0; k < n_cols; ++k) {
      int gc = band % 2 == 0 ? k : n_cols - 1 - k;
      bool down = k % 2 == 0;  // first column enters from the top of the band
      for (int j = 0; j < band_rows; ++j) {
        int lr = down ? j : band_rows - 1 - j;
        int gr = band * band_rows + lr;
        order.push_back(from_global(topo, wafer, gr, gc));
      }
    }
  }
  return order;
}

namespace {

bool path_clear(const WaferTopology& topo, const std::vector<CoreCoord>& path,
                const DefectMap* defects) {
  if (!defects) return true;
  for (size_t i = 0; i + 1 < path.size(); ++i) {
    uint32_t u = core_index(topo, path[i]);
    uint32_t v = core_index(topo, path[i + 1]);
    if (defects->link_defective(u, v)) return false;
    // Intermediate routers on defective cores are unusable.
    if (i > 0 && defects->defective[u]) return false;
  }
  return true;
}

}  // namespace

std::vector<CoreCoord> route(const WaferTopology& topo, const CoreCoord& a, const CoreCoord& b,
                             const DefectMap* defects) {
  if (a.wafer != b.wafer) throw Error(ErrorKind::Invalid, "route() is intra-wafer only");
  std::vector<CoreCoord> path;
  int gr = global_row(topo, a), gc = global_col(topo, a);
  int tr = global_row(topo, b), tc = global_col(topo, b);
  path.push_back(a);
  while (gc != tc) {
    gc += (tc > gc) ? 1 : -1;
    path.push_back(from_global(topo, a.wafer, gr, gc));
  }
  while (gr != tr) {
    gr += (tr > gr) ? 1 : -1;
    path.push_back(from_global(topo, a.wafer, gr, gc));
  }
  if (path_clear(topo, path, defects)) return path;

  // BFS detour, fixed neighbor order for determinism.
  int rows = topo.global_rows(), cols = topo.global_cols();
  std::vector<int32_t> prev(size_t(rows) * cols, -1);
  auto cell = [&](int r, int c) { return r * cols + c; };
  std::deque<std::pair<int, int>> queue;
  queue.emplace_back(global_row(topo, a), global_col(topo, a));
  prev[size_t(cell(queue.front().first, queue.front().second))] = cell(queue.front().first,
                                                                       queue.front().second);
  const int dr[4] = {-1, 0, 0, 1};
  const int dc[4] = {0, -1, 1, 0};
  bool found = false;
  while (!queue.empty() && !found) {
    auto [r, c] = queue.front();
    queue.pop_front();
    for (int k = 0; k < 4; ++k) {
      int nr = r + dr[k], nc = c + dc[k];
      if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
      if (prev[size_t(cell(nr, nc))] != -1) continue;
      CoreCoord from = from_global(topo, a.wafer, r, c);
      CoreCoord to = from_global(topo, a.wafer, nr, nc);
      if (defects) {
        if (defects->link_defective(core_index(topo, from), core_index(topo, to))) continue;
        bool is_target = (nr == tr && nc == tc);
        if (!is_target && defects->defective[core_index(topo, to)]) continue;
      }
      prev[size_t(cell(nr, nc))] = cell(r, c);
      if (nr == tr && nc == tc) {
        found = true;
        break;
      }
      queue.emplace_back(nr, nc);
    }
  }
  if (!found) throw Error(ErrorKind::Unrecoverable, "no route between cores avoiding defects");
  std::vector<CoreCoord> out;
  int cur = cell(tr, tc);
  int start = cell(global_row(topo, a), global_col(topo, a));
  while (true) {
    out.push_back(from_global(topo, a.wafer, cur / cols, cur % cols));
    if (cur == start) break;
    cur = prev[size_t(cur)];
  }
  std::reverse(out.begin(), out.end());
  return out;
}

}  // namespace wscim
