#include "wscim/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "wscim/kvcache.hpp"

namespace wscim {

int MIQPInstance::usable_core_count() const {
  int n = 0;
  for (size_t i = 0; i < cores.size(); ++i) n += core_defective[i] ? 0 : 1;
  return n;
}

MIQPInstance build_miqp(const std::vector<StaticLayer>& layers_in, const WaferTopology& topo,
                        const std::vector<CoreCoord>& candidate_cores, const DefectMap& defects,
                        double cost_inter) {
  MIQPInstance inst;
  inst.topo = topo;
  inst.layers = layers_in;
  inst.cores = candidate_cores;
  inst.cost_inter = cost_inter;
  inst.core_defective.resize(candidate_cores.size());
  for (size_t i = 0; i < candidate_cores.size(); ++i) {
    inst.core_defective[i] = defects.is_defective(topo, candidate_cores[i]) ? 1 : 0;
  }

  for (size_t l = 0; l < inst.layers.size(); ++l) {
    auto& layer = inst.layers[l];
    layer.first_tile = int(inst.tiles.size());
    for (int i = 0; i < layer.profile.input_splits; ++i) {
      for (int o = 0; o < layer.profile.output_splits; ++o) {
        inst.tiles.push_back(TileRef{int(l), i, o});
      }
    }
  }
  if (int(inst.tiles.size()) > inst.usable_core_count()) {
    throw Error(ErrorKind::Infeasible, "fewer non-defective cores than tiles");
  }

  // Accumulate the three interaction classes into unordered pairs. The gather
  // condition matches in both directions, so its volume lands twice, exactly
  // as in the quadratic form.
  std::map<std::pair<int, int>, int64_t> acc;
  auto add = [&](int a, int b, int64_t vol) {
    if (a == b || vol == 0) return;
    if (a > b) std::swap(a, b);
    acc[{a, b}] += vol;
  };
  auto tile_id = [&](int l, int i, int o) {
    return inst.layers[size_t(l)].first_tile + i * inst.layers[size_t(l)].profile.output_splits + o;
  };
  for (size_t l = 0; l + 1 < inst.layers.size(); ++l) {
    const auto& p1 = inst.layers[l].profile;
    const auto& p2 = inst.layers[l + 1].profile;
    for (int i1 = 0; i1 < p1.input_splits; ++i1) {
      for (int o1 = 0; o1 < p1.output_splits; ++o1) {
        if (o1 >= p2.input_splits) continue;  // o1 == i2 pairing
        for (int o2 = 0; o2 < p2.output_splits; ++o2) {
          add(tile_id(int(l), i1, o1), tile_id(int(l + 1), o1, o2), p1.output_volume);
        }
      }
    }
  }
  for (size_t l = 0; l < inst.layers.size(); ++l) {
    const auto& p = inst.layers[l].profile;
    if (p.input_splits > 1) {
      int last_i = p.input_splits - 1;
      for (int o = 0; o < p.output_splits; ++o) {
        for (int i1 = 0; i1 < last_i; ++i1) {
          add(tile_id(int(l), i1, o), tile_id(int(l), last_i, o), p.reduction_volume);
        }
      }
    }
    if (p.output_splits > 1 && p.gather_volume > 0) {
      int last_i = p.input_splits - 1;
      for (int o1 = 0; o1 < p.output_splits; ++o1) {
        for (int o2 = 0; o2 < p.output_splits; ++o2) {
          if (o1 == o2) continue;
          add(tile_id(int(l), last_i, o1), tile_id(int(l), last_i, o2), p.gather_volume);
        }
      }
    }
  }
  inst.pairs.reserve(acc.size());
  for (const auto& [key, vol] : acc) inst.pairs.push_back(PairTerm{key.first, key.second, vol});

  inst.adjacency.resize(inst.tiles.size());
  for (const auto& pr : inst.pairs) {
    inst.adjacency[size_t(pr.t1)].emplace_back(pr.t2, pr.volume);
    inst.adjacency[size_t(pr.t2)].emplace_back(pr.t1, pr.volume);
  }
  return inst;
}

MIQPInstance build_block_miqp(const TransformerSpec& spec, const WaferTopology& topo,
                              const std::vector<CoreCoord>& candidate_cores,
                              const DefectMap& defects, double cost_inter) {
  TransformerSpec one_block = spec;
  one_block.n_blocks = 1;
  auto stages = partition_stages(one_block);
  std::vector<StaticLayer> layers;
  for (const auto& s : stages) {
    if (s.is_attention_dynamic) continue;
    StaticLayer layer;
    layer.kind = s.kind;
    layer.profile = comm_profile(s, spec, topo.core_sram_bytes);
    layers.push_back(layer);
  }
  return build_miqp(layers, topo, candidate_cores, defects, cost_inter);
}

namespace {

void check_feasible(const MappingAssignment& a, const MIQPInstance& inst) {
  if (a.tile_core.size() != inst.tiles.size()) {
    throw Error(ErrorKind::Invalid, "assignment does not cover every tile (Eq. 3 violated)");
  }
  std::vector<int> core_use(inst.cores.size(), -1);
  for (size_t t = 0; t < a.tile_core.size(); ++t) {
    int c = a.tile_core[t];
    if (c < 0 || c >= int(inst.cores.size())) {
      throw Error(ErrorKind::Invalid, "tile placed outside the candidate core set");
    }
    if (inst.core_defective[size_t(c)]) {
      throw Error(ErrorKind::Invalid, "tile placed on a defective core (Eq. 2 violated)");
    }
    if (core_use[size_t(c)] >= 0) {
      throw Error(ErrorKind::Invalid, "two tiles share a core (Eq. 2 violated)");
    }
    core_use[size_t(c)] = int(t);
  }
}

double pair_cost(const MIQPInstance& inst, int c1, int c2, int64_t vol) {
  return distance(inst.topo, inst.cores[size_t(c1)], inst.cores[size_t(c2)], inst.cost_inter) *
         double(vol);
}

}  // namespace

double objective_value_serial(const MappingAssignment& a, const MIQPInstance& inst) {
  check_feasible(a, inst);
  double total = 0.0;
  for (const auto& pr : inst.pairs) {
    total += pair_cost(inst, a.tile_core[size_t(pr.t1)], a.tile_core[size_t(pr.t2)], pr.volume);
  }
  return total;
}

double objective_value(const MappingAssignment& a, const MIQPInstance& inst) {
  check_feasible(a, inst);
  const int64_t n = int64_t(inst.pairs.size());
  constexpr int64_t kChunk = 2048;
  const int64_t n_chunks = (n + kChunk - 1) / kChunk;
  std::vector<double> partial(size_t(std::max<int64_t>(n_chunks, 1)), 0.0);
#pragma omp parallel for schedule(static)
  for (int64_t ch = 0; ch < n_chunks; ++ch) {
    double acc = 0.0;
    int64_t end = std::min(n, (ch + 1) * kChunk);
    for (int64_t k = ch * kChunk; k < end; ++k) {
      const auto& pr = inst.pairs[size_t(k)];
      acc += pair_cost(inst, a.tile_core[size_t(pr.t1)], a.tile_core[size_t(pr.t2)], pr.volume);
    }
    partial[size_t(ch)] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;  // fixed order, independent of threads
  return total;
}

VolumeBreakdown objective_breakdown(const MappingAssignment& a, const MIQPInstance& inst) {
  check_feasible(a, inst);
  // Reconstruct per-class contributions by re-deriving each pair's class from
  // the tile refs; a pair can carry several classes only within one layer.
  VolumeBreakdown out;
  auto dist = [&](int t1, int t2) {
    return distance(inst.topo, inst.cores[size_t(a.tile_core[size_t(t1)])],
                    inst.cores[size_t(a.tile_core[size_t(t2)])], inst.cost_inter);
  };
  for (const auto& pr : inst.pairs) {
    const TileRef& r1 = inst.tiles[size_t(pr.t1)];
    const TileRef& r2 = inst.tiles[size_t(pr.t2)];
    double d = dist(pr.t1, pr.t2);
    if (r1.layer != r2.layer) {
      out.inter_layer += int64_t(d * double(pr.volume));
      continue;
    }
    const auto& p = inst.layers[size_t(r1.layer)].profile;
    int last_i = p.input_splits - 1;
    int64_t vol = pr.volume;
    if (r1.out_split == r2.out_split && (r1.in_split == last_i || r2.in_split == last_i)) {
      out.reduction += int64_t(d * double(p.reduction_volume));
      vol -= p.reduction_volume;
    }
    if (vol > 0) out.gather += int64_t(d * double(vol));
  }
  return out;
}

SolveResult solve_exact(const MIQPInstance& inst) {
  const int n_tiles = int(inst.tiles.size());
  const int n_cores = int(inst.cores.size());
  if (n_tiles > 12 || n_cores > 16) {
    throw Error(ErrorKind::TooLarge, "solve_exact is limited to 12 tiles / 16 cores");
  }
  if (n_tiles > inst.usable_core_count()) {
    throw Error(ErrorKind::Infeasible, "fewer non-defective cores than tiles");
  }

  std::vector<int> current(size_t(n_tiles), -1);
  std::vector<uint8_t> used(size_t(n_cores), 0);
  std::vector<int> best;
  double best_cost = std::numeric_limits<double>::infinity();

  // Depth-first in lexicographic (tile, core) order; strict improvement keeps
  // the lexicographically first optimum.
  auto dfs = [&](auto&& self, int t, double cost) -> void {
    if (cost >= best_cost) return;
    if (t == n_tiles) {
      best = current;
      best_cost = cost;
      return;
    }
    for (int c = 0; c < n_cores; ++c) {
      if (used[size_t(c)] || inst.core_defective[size_t(c)]) continue;
      double added = 0.0;
      for (const auto& [other, vol] : inst.adjacency[size_t(t)]) {
        if (current[size_t(other)] >= 0) {
          added += pair_cost(inst, c, current[size_t(other)], vol);
        }
      }
      current[size_t(t)] = c;
      used[size_t(c)] = 1;
      self(self, t + 1, cost + added);
      used[size_t(c)] = 0;
      current[size_t(t)] = -1;
    }
  };
  dfs(dfs, 0, 0.0);

  SolveResult result;
  result.assignment.tile_core = best;
  result.objective = best_cost;
  return result;
}

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct AnnealState {
  std::vector<int> tile_core;
  std::vector<int> core_tile;  // -1 when free
  double cost = 0.0;
};

double tile_contrib(const MIQPInstance& inst, const std::vector<int>& tile_core, int t) {
  double acc = 0.0;
  for (const auto& [other, vol] : inst.adjacency[size_t(t)]) {
    acc += pair_cost(inst, tile_core[size_t(t)], tile_core[size_t(other)], vol);
  }
  return acc;
}

// Direct interaction between two tiles, to undo double counting when both
// tiles of a move are re-evaluated.
double pair_cost_between(const MIQPInstance& inst, const std::vector<int>& tile_core, int t,
                         int u) {
  double acc = 0.0;
  for (const auto& [other, vol] : inst.adjacency[size_t(t)]) {
    if (other == u) acc += pair_cost(inst, tile_core[size_t(t)], tile_core[size_t(u)], vol);
  }
  return acc;
}

SolveResult anneal_once(const MIQPInstance& inst, uint64_t seed, const HeuristicParams& params,
                        const std::vector<int>& seed_assignment, std::vector<double>* trace) {
  std::mt19937_64 rng(seed);
  auto u01 = [&] { return double(rng() >> 11) * 0x1.0p-53; };

  const int n_tiles = int(inst.tiles.size());
  const int n_cores = int(inst.cores.size());
  std::vector<int> usable;
  for (int c = 0; c < n_cores; ++c) {
    if (!inst.core_defective[size_t(c)]) usable.push_back(c);
  }

  AnnealState st;
  st.tile_core = seed_assignment;
  st.core_tile.assign(size_t(n_cores), -1);
  for (int t = 0; t < n_tiles; ++t) st.core_tile[size_t(st.tile_core[size_t(t)])] = t;
  MappingAssignment seed_a;
  seed_a.tile_core = st.tile_core;
  st.cost = objective_value_serial(seed_a, inst);

  std::vector<int> best = st.tile_core;
  double best_cost = st.cost;
  if (trace) trace->push_back(best_cost);

  double t0 = std::max(1.0, params.t_start_frac * st.cost);
  double t_end = std::min(params.t_end, t0);
  for (int64_t iter = 0; iter < params.iterations; ++iter) {
    double frac = params.iterations > 1 ? double(iter) / double(params.iterations - 1) : 1.0;
    double temp = t0 * std::pow(t_end / t0, frac);

    int t = int(rng() % uint64_t(n_tiles));
    int target = usable[size_t(rng() % uint64_t(usable.size()))];
    int c_old = st.tile_core[size_t(t)];
    if (target == c_old) continue;
    int u = st.core_tile[size_t(target)];  // occupant of target, or -1

    double before, after;
    if (u < 0) {
      before = tile_contrib(inst, st.tile_core, t);
      st.tile_core[size_t(t)] = target;
      after = tile_contrib(inst, st.tile_core, t);
      st.tile_core[size_t(t)] = c_old;
    } else {
      before = tile_contrib(inst, st.tile_core, t) + tile_contrib(inst, st.tile_core, u) -
               pair_cost_between(inst, st.tile_core, t, u);
      std::swap(st.tile_core[size_t(t)], st.tile_core[size_t(u)]);
      after = tile_contrib(inst, st.tile_core, t) + tile_contrib(inst, st.tile_core, u) -
              pair_cost_between(inst, st.tile_core, t, u);
      std::swap(st.tile_core[size_t(t)], st.tile_core[size_t(u)]);
    }
    double delta = after - before;
    if (delta <= 0.0 || u01() < std::exp(-delta / temp)) {
      st.tile_core[size_t(t)] = target;
      st.core_tile[size_t(target)] = t;
      st.core_tile[size_t(c_old)] = u;
      if (u >= 0) st.tile_core[size_t(u)] = c_old;
      st.cost += delta;
      if (st.cost < best_cost - 1e-9) {
        best = st.tile_core;
        best_cost = st.cost;
      }
    }
    if (trace) trace->push_back(best_cost);
  }

  SolveResult result;
  result.assignment.tile_core = best;
  result.objective = objective_value_serial(result.assignment, inst);
  return result;
}

}  // namespace

SolveResult solve_heuristic(const MIQPInstance& inst, uint64_t seed, const HeuristicParams& params,
                            std::vector<double>* best_trace) {
  const int n_tiles = int(inst.tiles.size());
  if (n_tiles > inst.usable_core_count()) {
    throw Error(ErrorKind::Infeasible, "fewer non-defective cores than tiles");
  }

  // Greedy seeding: tiles in order onto non-defective candidates in snake order.
  std::vector<int> order(inst.cores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  {
    std::map<std::pair<int, uint32_t>, int> snake_pos;
    std::map<int, std::vector<CoreCoord>> per_wafer;
    for (const auto& c : inst.cores) per_wafer[c.wafer];
    for (auto& [w, _] : per_wafer) {
      auto snake = snake_core_order(inst.topo, w);
      for (size_t i = 0; i < snake.size(); ++i) {
        snake_pos[{w, core_index(inst.topo, snake[i])}] = int(i);
      }
    }
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const auto& ca = inst.cores[size_t(a)];
      const auto& cb = inst.cores[size_t(b)];
      auto ka = std::make_pair(int(ca.wafer), snake_pos.at({ca.wafer, core_index(inst.topo, ca)}));
      auto kb = std::make_pair(int(cb.wafer), snake_pos.at({cb.wafer, core_index(inst.topo, cb)}));
      return ka < kb;
    });
  }
  std::vector<int> seed_assignment;
  seed_assignment.reserve(size_t(n_tiles));
  for (int c : order) {
    if (int(seed_assignment.size()) == n_tiles) break;
    if (!inst.core_defective[size_t(c)]) seed_assignment.push_back(c);
  }

  size_t restarts = size_t(std::max(1, params.restarts));
  std::vector<SolveResult> results(restarts);
  std::vector<std::vector<double>> traces(restarts);
#pragma omp parallel for schedule(dynamic)
  for (int64_t r = 0; r < int64_t(restarts); ++r) {
    uint64_t rs = splitmix64(seed ^ uint64_t(r + 1));
    results[size_t(r)] =
        anneal_once(inst, rs, params, seed_assignment, best_trace ? &traces[size_t(r)] : nullptr);
  }
  size_t winner = 0;
  for (size_t r = 1; r < restarts; ++r) {
    const auto& a = results[r];
    const auto& b = results[winner];
    if (a.objective < b.objective - 1e-9 ||
        (std::abs(a.objective - b.objective) <= 1e-9 &&
         a.assignment.tile_core < b.assignment.tile_core)) {
      winner = r;
    }
  }
  if (best_trace) *best_trace = traces[winner];
  return results[winner];
}

}  // namespace wscim
