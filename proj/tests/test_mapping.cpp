#include <algorithm>
#include <random>

#include "doctest.h"
#include "wscim/kvcache.hpp"
#include "wscim/mapping.hpp"

using namespace wscim;

namespace {

WaferTopology strip_topology(int cols) {
  WaferTopology topo;
  topo.dies_rows = 1;
  topo.dies_cols = 1;
  topo.cores_rows_per_die = 1;
  topo.cores_cols_per_die = cols;
  return topo;
}

DefectMap clean_map(const WaferTopology& topo) {
  DefectMap d;
  d.defective.assign(size_t(topo.total_cores()), 0);
  return d;
}

StaticLayer single_tile_layer(int64_t output_volume) {
  StaticLayer l;
  l.profile.input_splits = 1;
  l.profile.output_splits = 1;
  l.profile.core_count = 1;
  l.profile.output_volume = output_volume;
  return l;
}

// Independent oracle: full enumeration over every injective tile->core map,
// costs recomputed from scratch (no branch-and-bound, no adjacency lists).
double enumerate_optimum(const MIQPInstance& inst) {
  int n_tiles = int(inst.tiles.size());
  int n_cores = int(inst.cores.size());
  std::vector<int> perm;
  for (int c = 0; c < n_cores; ++c) perm.push_back(c);
  double best = std::numeric_limits<double>::infinity();
  // Enumerate n_cores-permutation prefixes via sorted permutations of core
  // indices, taking the first n_tiles entries.
  std::sort(perm.begin(), perm.end());
  do {
    bool ok = true;
    for (int t = 0; t < n_tiles && ok; ++t) {
      ok = !inst.core_defective[size_t(perm[size_t(t)])];
    }
    if (!ok) continue;
    double cost = 0;
    for (const auto& pr : inst.pairs) {
      const CoreCoord& c1 = inst.cores[size_t(perm[size_t(pr.t1)])];
      const CoreCoord& c2 = inst.cores[size_t(perm[size_t(pr.t2)])];
      cost += distance(inst.topo, c1, c2, inst.cost_inter) * double(pr.volume);
    }
    best = std::min(best, cost);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

MIQPInstance random_instance(std::mt19937_64& rng, int max_layers, int max_splits, int rows,
                             int cols, double defect_rate) {
  WaferTopology topo;
  topo.dies_rows = 1;
  topo.dies_cols = 2;
  topo.cores_rows_per_die = rows;
  topo.cores_cols_per_die = (cols + 1) / 2;
  DefectMap defects = clean_map(topo);
  std::vector<CoreCoord> cores;
  for (int i = 0; i < topo.cores_per_wafer(); ++i) cores.push_back(core_at(topo, uint32_t(i)));

  std::vector<StaticLayer> layers;
  int n_layers = 1 + int(rng() % uint64_t(max_layers));
  int total_tiles = 0;
  for (int l = 0; l < n_layers; ++l) {
    StaticLayer layer;
    layer.profile.input_splits = 1 + int(rng() % uint64_t(max_splits));
    layer.profile.output_splits = 1 + int(rng() % uint64_t(max_splits));
    layer.profile.output_volume = 1 + int64_t(rng() % 50);
    layer.profile.reduction_volume = layer.profile.input_splits > 1 ? 1 + int64_t(rng() % 50) : 0;
    layer.profile.gather_volume = layer.profile.output_splits > 1 ? 1 + int64_t(rng() % 50) : 0;
    int tiles = layer.profile.input_splits * layer.profile.output_splits;
    if (total_tiles + tiles > int(cores.size()) - 1) break;
    total_tiles += tiles;
    layers.push_back(layer);
  }
  if (layers.empty()) layers.push_back(single_tile_layer(int64_t(1 + rng() % 50)));
  for (auto& f : defects.defective) {
    if (double(rng() >> 11) * 0x1.0p-53 < defect_rate) f = 1;
  }
  // Keep the instance feasible.
  int usable = 0;
  for (auto f : defects.defective) usable += f ? 0 : 1;
  int needed = 0;
  for (const auto& l : layers) needed += l.profile.input_splits * l.profile.output_splits;
  for (size_t i = 0; i < defects.defective.size() && usable < needed; ++i) {
    if (defects.defective[i]) {
      defects.defective[i] = 0;
      usable++;
    }
  }
  return build_miqp(layers, topo, cores, defects, 1.0 + double(rng() % 4));
}

}  // namespace

TEST_CASE("two single-tile layers on a 1x2 strip carry one output term") {
  auto topo = strip_topology(2);
  auto defects = clean_map(topo);
  std::vector<CoreCoord> cores{core_at(topo, 0), core_at(topo, 1)};
  std::vector<StaticLayer> layers{single_tile_layer(10), single_tile_layer(99)};
  auto inst = build_miqp(layers, topo, cores, defects, 4.0);
  REQUIRE(inst.pairs.size() == 1);
  CHECK(inst.pairs[0].volume == 10);

  auto res = solve_exact(inst);
  CHECK(res.objective == 10.0);  // 1 hop, same die
}

TEST_CASE("defective middle core forces distance 2") {
  auto topo = strip_topology(3);
  auto defects = clean_map(topo);
  defects.defective[1] = 1;
  std::vector<CoreCoord> cores{core_at(topo, 0), core_at(topo, 1), core_at(topo, 2)};
  std::vector<StaticLayer> layers{single_tile_layer(7), single_tile_layer(0)};
  auto inst = build_miqp(layers, topo, cores, defects, 4.0);
  auto res = solve_exact(inst);
  CHECK(res.objective == 14.0);  // 2 hops * 7
  CHECK(inst.cores[size_t(res.assignment.tile_core[0])].core_col != 1);
  CHECK(inst.cores[size_t(res.assignment.tile_core[1])].core_col != 1);
}

TEST_CASE("input splits introduce a reduction term") {
  auto topo = strip_topology(4);
  auto defects = clean_map(topo);
  std::vector<CoreCoord> cores;
  for (int i = 0; i < 4; ++i) cores.push_back(core_at(topo, uint32_t(i)));
  StaticLayer layer;
  layer.profile.input_splits = 2;
  layer.profile.output_splits = 1;
  layer.profile.reduction_volume = 5;
  auto inst = build_miqp({layer}, topo, cores, defects, 4.0);
  REQUIRE(inst.pairs.size() == 1);
  CHECK(inst.pairs[0].volume == 5);
}

TEST_CASE("objective_value basics and violations") {
  auto topo = strip_topology(4);
  auto defects = clean_map(topo);
  std::vector<CoreCoord> cores;
  for (int i = 0; i < 4; ++i) cores.push_back(core_at(topo, uint32_t(i)));

  SUBCASE("single tile costs zero") {
    auto inst = build_miqp({single_tile_layer(10)}, topo, cores, defects, 4.0);
    MappingAssignment a;
    a.tile_core = {2};
    CHECK(objective_value(a, inst) == 0.0);
  }

  SUBCASE("adjacent producer and consumer, volume 10") {
    auto inst =
        build_miqp({single_tile_layer(10), single_tile_layer(0)}, topo, cores, defects, 4.0);
    MappingAssignment a;
    a.tile_core = {0, 1};
    CHECK(objective_value(a, inst) == 10.0);
  }

  SUBCASE("cross-die pair picks up the penalty") {
    WaferTopology two_dies;
    two_dies.dies_rows = 1;
    two_dies.dies_cols = 2;
    two_dies.cores_rows_per_die = 1;
    two_dies.cores_cols_per_die = 1;
    auto d2 = clean_map(two_dies);
    std::vector<CoreCoord> cc{core_at(two_dies, 0), core_at(two_dies, 1)};
    auto inst =
        build_miqp({single_tile_layer(10), single_tile_layer(0)}, two_dies, cc, d2, 4.0);
    MappingAssignment a;
    a.tile_core = {0, 1};
    CHECK(objective_value(a, inst) == 40.0);
  }

  SUBCASE("violations are named") {
    auto inst =
        build_miqp({single_tile_layer(10), single_tile_layer(0)}, topo, cores, defects, 4.0);
    MappingAssignment dup;
    dup.tile_core = {1, 1};
    CHECK_THROWS_WITH_AS(objective_value(dup, inst),
                         doctest::Contains("Eq. 2"), Error);
    auto bad_defects = clean_map(topo);
    bad_defects.defective[0] = 1;
    auto inst2 =
        build_miqp({single_tile_layer(10), single_tile_layer(0)}, topo, cores, bad_defects, 4.0);
    MappingAssignment on_defect;
    on_defect.tile_core = {0, 1};
    CHECK_THROWS_WITH_AS(objective_value(on_defect, inst2),
                         doctest::Contains("defective"), Error);
    MappingAssignment missing;
    missing.tile_core = {0};
    CHECK_THROWS_WITH_AS(objective_value(missing, inst),
                         doctest::Contains("Eq. 3"), Error);
  }
}

TEST_CASE("parallel and serial objective agree") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng, 3, 2, 3, 6, 0.0);
    MappingAssignment a;
    int n_tiles = int(inst.tiles.size());
    for (int t = 0; t < n_tiles; ++t) a.tile_core.push_back(t);
    CHECK(objective_value(a, inst) == objective_value_serial(a, inst));
  }
}

TEST_CASE("solve_exact matches full enumeration") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    auto inst = random_instance(rng, 3, 2, 2, 4, trial % 3 == 0 ? 0.2 : 0.0);
    if (int(inst.tiles.size()) > 7) continue;
    auto res = solve_exact(inst);
    double want = enumerate_optimum(inst);
    CHECK(res.objective == doctest::Approx(want).epsilon(1e-12));
    CHECK(objective_value(res.assignment, inst) == doctest::Approx(res.objective));
  }
}

TEST_CASE("solve_exact guards and errors") {
  auto topo = strip_topology(2);
  auto defects = clean_map(topo);
  defects.defective[0] = 1;
  defects.defective[1] = 1;
  std::vector<CoreCoord> cores{core_at(topo, 0), core_at(topo, 1)};
  CHECK_THROWS_AS(build_miqp({single_tile_layer(1)}, topo, cores, defects, 1.0), Error);

  WaferTopology big = strip_topology(20);
  auto dbig = clean_map(big);
  std::vector<CoreCoord> many;
  for (int i = 0; i < 20; ++i) many.push_back(core_at(big, uint32_t(i)));
  auto inst = build_miqp({single_tile_layer(1)}, big, many, dbig, 1.0);
  CHECK_THROWS_AS(solve_exact(inst), Error);
}

TEST_CASE("heuristic is feasible, deterministic, and close to exact") {
  std::mt19937_64 rng(5150);
  int matches = 0, trials = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng, 3, 2, 2, 4, 0.0);
    if (int(inst.tiles.size()) > 8) continue;
    trials++;
    auto exact = solve_exact(inst);
    HeuristicParams hp;
    hp.iterations = 3000;
    auto heur = solve_heuristic(inst, 99, hp);
    CHECK(heur.objective >= exact.objective - 1e-9);
    if (heur.objective <= exact.objective + 1e-9) matches++;
    auto heur2 = solve_heuristic(inst, 99, hp);
    CHECK(heur.assignment.tile_core == heur2.assignment.tile_core);
    CHECK_NOTHROW(objective_value(heur.assignment, inst));
  }
  CHECK(trials >= 10);
  CHECK(matches * 20 >= trials * 18);  // >= 18/20 of the instances
}

TEST_CASE("heuristic best-so-far trace never increases") {
  std::mt19937_64 rng(77);
  auto inst = random_instance(rng, 3, 2, 3, 6, 0.1);
  HeuristicParams hp;
  hp.iterations = 2000;
  hp.restarts = 2;
  std::vector<double> trace;
  auto res = solve_heuristic(inst, 3, hp, &trace);
  REQUIRE(!trace.empty());
  for (size_t i = 0; i + 1 < trace.size(); ++i) CHECK(trace[i + 1] <= trace[i] + 1e-9);
  CHECK(res.objective == doctest::Approx(trace.back()));
}

namespace {

// Minimal placement + pool for fault tests: a 2x8 grid (so detours exist),
// weight tiles on the first three cores of row 0, one KV group on the last
// four cores of row 0.
struct FaultRig {
  WaferTopology topo;
  DefectMap defects;
  Placement placement;
  KVPool pool;

  explicit FaultRig(int threshold = 0) {
    topo = strip_topology(8);
    topo.cores_rows_per_die = 2;
    defects = clean_map(topo);
    placement.topo = topo;
    placement.cost_inter = 4.0;
    for (int i = 0; i < 3; ++i) {
      PlacedTile t;
      t.block = 0;
      t.layer = i;
      t.core = core_at(topo, uint32_t(i));
      placement.tiles.push_back(t);
    }
    KVConfig cfg;
    cfg.n_heads = 2;
    cfg.head_dim = 64;
    cfg.threshold_blocks = threshold;
    std::vector<CoreCoord> leftovers;
    for (int i = 4; i < 8; ++i) leftovers.push_back(core_at(topo, uint32_t(i)));
    pool = KVPool(topo, cfg, {leftovers});
    placement.score_rings = {pool.score_ring(0)};
    placement.value_rings = {pool.value_ring(0)};
    placement.directory_cores = {pool.directory_core(0)};
  }
};

}  // namespace

TEST_CASE("fault on a KV-only core evicts its sequences and moves no weights") {
  FaultRig rig;
  REQUIRE(rig.pool.allocate_sequence(3, 16).has_value());
  auto k_core = rig.pool.head_placements(3, 0)[0].k_core;
  auto before = rig.placement.tiles;
  auto res = remap_on_fault(rig.placement, rig.pool, rig.defects, k_core);
  CHECK(!res.weights_moved);
  CHECK(res.evicted_seqs == std::vector<int64_t>{3});
  CHECK(!rig.pool.is_resident(3));
  for (size_t i = 0; i < before.size(); ++i) {
    CHECK(before[i].core == rig.placement.tiles[i].core);
  }
}

TEST_CASE("weight fault shifts tiles along the chain to the nearest KV core") {
  FaultRig rig;
  REQUIRE(rig.pool.allocate_sequence(1, 4).has_value());
  // Weight cores 0..2, KV cores 4..7; fault core 2. Nearest KV core is 4
  // (score ring front), chain 2 -> 3 -> 4. Core 3 is idle, so the chain
  // spans one idle hop before the KV terminal.
  CoreCoord faulty = core_at(rig.topo, 2);
  auto res = remap_on_fault(rig.placement, rig.pool, rig.defects, faulty);
  CHECK(res.weights_moved);
  REQUIRE(res.chain.size() == 3);
  CHECK(res.chain.front() == faulty);
  CHECK(res.chain.back() == core_at(rig.topo, 4));
  // The faulty core's tile moved one hop; the terminal lost its ring slot.
  CHECK(rig.placement.tiles[2].core == core_at(rig.topo, 3));
  CHECK(!rig.pool.is_kv_core(core_at(rig.topo, 4)));
  CHECK_NOTHROW(rig.placement.validate_against(rig.defects));
}

TEST_CASE("two successive faults stay recoverable") {
  FaultRig rig;
  REQUIRE(rig.pool.allocate_sequence(1, 4).has_value());
  auto r1 = remap_on_fault(rig.placement, rig.pool, rig.defects, core_at(rig.topo, 2));
  auto r2 = remap_on_fault(rig.placement, rig.pool, rig.defects, core_at(rig.topo, 1));
  CHECK(r1.weights_moved);
  CHECK(r2.weights_moved);
  CHECK_NOTHROW(rig.placement.validate_against(rig.defects));
  // Weight tile multiset preserved: still exactly three tiles, distinct cores.
  CHECK(rig.placement.tiles.size() == 3);
}

TEST_CASE("fault on an unused core is a no-op") {
  FaultRig rig;
  auto before = rig.placement.tiles;
  auto res = remap_on_fault(rig.placement, rig.pool, rig.defects, core_at(rig.topo, 3));
  CHECK(!res.weights_moved);
  CHECK(res.evicted_seqs.empty());
  for (size_t i = 0; i < before.size(); ++i) {
    CHECK(before[i].core == rig.placement.tiles[i].core);
  }
}
