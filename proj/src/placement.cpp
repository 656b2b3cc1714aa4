#include <algorithm>
#include <limits>
#include <map>

#include "wscim/kvcache.hpp"
#include "wscim/mapping.hpp"

namespace wscim {

std::optional<int> Placement::tile_on_core(const WaferTopology& t, const CoreCoord& c) const {
  uint32_t idx = core_index(t, c);
  for (size_t i = 0; i < tiles.size(); ++i) {
    if (core_index(t, tiles[i].core) == idx) return int(i);
  }
  return std::nullopt;
}

void Placement::validate_against(const DefectMap& defects) const {
  std::map<uint32_t, int> core_use;
  for (size_t i = 0; i < tiles.size(); ++i) {
    const auto& t = tiles[i];
    if (!in_bounds(topo, t.core)) throw Error(ErrorKind::Invalid, "tile core out of bounds");
    if (defects.is_defective(topo, t.core)) {
      throw Error(ErrorKind::Invalid, "tile placed on a defective core (Eq. 2 violated)");
    }
    auto [it, inserted] = core_use.emplace(core_index(topo, t.core), int(i));
    if (!inserted) throw Error(ErrorKind::Invalid, "two tiles share a core (Eq. 2 violated)");
  }
  // Every block must carry the same tile multiset as block 0.
  std::map<int, int> per_block;
  for (const auto& t : tiles) per_block[t.block]++;
  for (const auto& [b, n] : per_block) {
    if (n != per_block.begin()->second) {
      throw Error(ErrorKind::Invalid, "blocks carry different tile counts (Eq. 3 violated)");
    }
  }
  for (size_t b = 0; b < score_rings.size(); ++b) {
    for (const auto& ring : {score_rings[b], value_rings[b]}) {
      for (const auto& c : ring) {
        if (core_use.contains(core_index(topo, c))) {
          throw Error(ErrorKind::Invalid, "KV ring core overlaps a weight core");
        }
      }
    }
  }
}

namespace {

void drop_ring_core(Placement& placement, const CoreCoord& core) {
  for (auto* rings : {&placement.score_rings, &placement.value_rings}) {
    for (auto& ring : *rings) {
      auto it = std::find(ring.begin(), ring.end(), core);
      if (it != ring.end()) ring.erase(it);
    }
  }
  for (size_t b = 0; b < placement.directory_cores.size(); ++b) {
    if (placement.directory_cores[b] == core && !placement.score_rings[b].empty()) {
      placement.directory_cores[b] = placement.score_rings[b].front();
    }
  }
}

}  // namespace

RemapResult remap_on_fault(Placement& placement, KVPool& pool, DefectMap& defects,
                           const CoreCoord& faulty) {
  const WaferTopology& topo = placement.topo;
  if (!in_bounds(topo, faulty)) throw Error(ErrorKind::Invalid, "faulty core out of bounds");
  defects.defective[core_index(topo, faulty)] = 1;

  RemapResult result;
  auto tile_idx = placement.tile_on_core(topo, faulty);
  bool was_kv = pool.is_kv_core(faulty);

  if (!tile_idx) {
    result.chain.push_back(faulty);
    if (was_kv) {
      // KV-only fault: no weight motion, resident sequences recompute.
      result.evicted_seqs = pool.evict_core(faulty);
      drop_ring_core(placement, faulty);
    }
    return result;
  }

  // Weight fault: chain to the Manhattan-nearest KV core, row-major tie-break.
  CoreCoord target;
  int best = std::numeric_limits<int>::max();
  bool found = false;
  for (const auto& c : pool.all_ring_cores()) {
    if (c.wafer != faulty.wafer) continue;
    if (defects.is_defective(topo, c)) continue;
    int d = manhattan(topo, faulty, c);
    auto key = std::make_tuple(d, global_row(topo, c), global_col(topo, c));
    auto best_key = found ? std::make_tuple(best, global_row(topo, target), global_col(topo, target))
                          : std::make_tuple(std::numeric_limits<int>::max(), 0, 0);
    if (!found || key < best_key) {
      best = d;
      target = c;
      found = true;
    }
  }
  if (!found) {
    throw Error(ErrorKind::Unrecoverable, "no reachable KV core for the replacement chain");
  }

  std::vector<CoreCoord> chain = route(topo, faulty, target, &defects);
  // A detour may brush another KV core first; the chain stops there.
  for (size_t i = 1; i + 1 < chain.size(); ++i) {
    if (pool.is_kv_core(chain[i])) {
      chain.resize(i + 1);
      break;
    }
  }

  // Shift every tile on the chain one hop toward the KV end.
  CoreCoord terminal = chain.back();
  result.evicted_seqs = pool.evict_core(terminal);
  drop_ring_core(placement, terminal);
  for (size_t j = chain.size() - 1; j > 0; --j) {
    auto moving = placement.tile_on_core(topo, chain[j - 1]);
    if (moving) placement.tiles[size_t(*moving)].core = chain[j];
  }
  result.chain = std::move(chain);
  result.weights_moved = true;
  return result;
}

}  // namespace wscim
