#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "wscim/fabric.hpp"
#include "wscim/workload.hpp"

namespace wscim {

struct TileRef {
  int layer = 0;      // position among the block's static stages
  int in_split = 0;   // i, 0-based
  int out_split = 0;  // o, 0-based
  friend bool operator==(const TileRef&, const TileRef&) = default;
  friend auto operator<=>(const TileRef&, const TileRef&) = default;
};

struct StaticLayer {
  StageKind kind = StageKind::QkvProj;
  LayerCommProfile profile;
  int first_tile = 0;  // offset into MIQPInstance::tiles
  int tile_count() const { return profile.input_splits * profile.output_splits; }
};

// One accumulated interaction between two tiles; the placement-dependent
// factor Manh * Penalty is applied at evaluation time.
struct PairTerm {
  int t1 = 0, t2 = 0;  // t1 < t2
  int64_t volume = 0;
};

struct MIQPInstance {
  WaferTopology topo;
  std::vector<StaticLayer> layers;
  std::vector<TileRef> tiles;
  std::vector<CoreCoord> cores;         // candidate cores
  std::vector<uint8_t> core_defective;  // parallel to cores
  double cost_inter = 1.0;
  std::vector<PairTerm> pairs;
  // Per-tile adjacency for incremental cost evaluation: (other tile, volume).
  std::vector<std::vector<std::pair<int, int64_t>>> adjacency;

  int usable_core_count() const;
};

// Builds the quadratic placement instance for one transformer block. Only the
// static-weight stages participate; the attention-dynamic stages get the
// block's leftover cores via the kvcache module.
MIQPInstance build_miqp(const std::vector<StaticLayer>& layers, const WaferTopology& topo,
                        const std::vector<CoreCoord>& candidate_cores, const DefectMap& defects,
                        double cost_inter);

// Convenience: profiles a block's static stages and builds the instance.
MIQPInstance build_block_miqp(const TransformerSpec& spec, const WaferTopology& topo,
                              const std::vector<CoreCoord>& candidate_cores,
                              const DefectMap& defects, double cost_inter);

enum class TreeNodeOp : uint8_t { Pass = 0, Reduction, Concatenation };

struct TreePlan {
  int depth = 5;                      // 32 leaves by default
  std::vector<int> leaf_slice;        // per leaf: slice index or -1
  std::vector<TreeNodeOp> node_ops;   // heap order, (2^depth - 1) internal nodes
  int64_t objective = 0;              // sum of depth(node) * weight(node)
};

struct MappingAssignment {
  std::vector<int> tile_core;        // per tile: index into instance cores
  std::vector<TreePlan> tile_plans;  // optional, parallel to tiles
  bool block_template = true;
};

// Sum over interacting tile pairs of Manh * volume * Penalty. Throws with the
// violated constraint named if the assignment is infeasible. The parallel
// version chunks the pair list so the result is independent of thread count.
double objective_value(const MappingAssignment& a, const MIQPInstance& inst);
double objective_value_serial(const MappingAssignment& a, const MIQPInstance& inst);

struct VolumeBreakdown {
  int64_t inter_layer = 0;
  int64_t reduction = 0;
  int64_t gather = 0;
};
// Placement-weighted communication volume per Eq.-style interaction class.
VolumeBreakdown objective_breakdown(const MappingAssignment& a, const MIQPInstance& inst);

struct SolveResult {
  MappingAssignment assignment;
  double objective = 0.0;
};

// Globally optimal branch-and-bound. Guarded to <= 12 tiles and <= 16
// candidate cores; ties broken by lexicographic placement order.
SolveResult solve_exact(const MIQPInstance& inst);

struct HeuristicParams {
  int64_t iterations = 20000;
  int restarts = 4;
  double t_start_frac = 0.05;  // T0 = frac * seed objective (at least 1)
  double t_end = 0.01;
};

// Greedy snake-order seeding plus simulated-annealing swap/relocate moves.
// Deterministic under (instance, seed, params); restarts run in parallel and
// are reduced with a fixed tie-break. best_trace, when given, receives the
// best-so-far objective after every move of the winning restart.
SolveResult solve_heuristic(const MIQPInstance& inst, uint64_t seed,
                            const HeuristicParams& params = {},
                            std::vector<double>* best_trace = nullptr);

struct SliceTag {
  int in_split = 0;
  int out_split = 0;
  friend bool operator==(const SliceTag&, const SliceTag&) = default;
  friend auto operator<=>(const SliceTag&, const SliceTag&) = default;
};

// Arranges a core's tile slices on the H-tree leaves, minimizing
// sum(depth(node) * weight(node)) with weight 1 for concatenation and 0 for
// reduction. Exact via dynamic programming over count compositions.
TreePlan intra_core_dp(const std::vector<SliceTag>& slices, int depth = 5);

// Independent evaluation of a concrete plan under the node-op rule; also
// recomputes node ops from leaf contents.
int64_t tree_plan_cost(const TreePlan& plan, const std::vector<SliceTag>& slices);

// ---- Global placement (template replicated across blocks) ----

struct PlacedTile {
  int block = 0;
  int layer = 0;
  int in_split = 0;
  int out_split = 0;
  StageKind kind = StageKind::QkvProj;
  CoreCoord core;
  TreePlan plan;
};

struct Placement {
  WaferTopology topo;
  TransformerSpec model;
  double cost_inter = 4.0;
  std::vector<PlacedTile> tiles;
  // Per block: the leftover cores handed to the KV manager.
  std::vector<std::vector<CoreCoord>> score_rings;
  std::vector<std::vector<CoreCoord>> value_rings;
  std::vector<CoreCoord> directory_cores;
  double template_objective = 0.0;
  VolumeBreakdown template_volumes;

  std::optional<int> tile_on_core(const WaferTopology& t, const CoreCoord& c) const;
  void validate_against(const DefectMap& defects) const;
};

struct RemapResult {
  std::vector<CoreCoord> chain;        // faulty core first, terminal KV core last
  std::vector<int64_t> evicted_seqs;   // sequences needing recomputation
  bool weights_moved = false;
};

class KVPool;  // kvcache.hpp

// Repairs a placement after a core fault. KV-only cores cost only their
// resident sequences; weight cores trigger a replacement chain to the nearest
// KV core (Manhattan metric, row-major tie-break), shifting every tile on the
// chain one hop and evicting the terminal core's sequences.
RemapResult remap_on_fault(Placement& placement, KVPool& pool, DefectMap& defects,
                           const CoreCoord& faulty);

}  // namespace wscim
