#include "wscim/kvcache.hpp"

#include <algorithm>

namespace wscim {

void KVConfig::validate() const {
  if (n_heads <= 0 || head_dim <= 0) throw Error(ErrorKind::Config, "heads/head_dim must be positive");
  if (head_dim > 128) throw Error(ErrorKind::Config, "head_dim exceeds 128-row logical blocks");
  if (crossbars_per_core <= 0 || blocks_per_crossbar <= 0 || tokens_per_block <= 0) {
    throw Error(ErrorKind::Config, "crossbar geometry must be positive");
  }
  if (blocks_per_core() > 256) {
    throw Error(ErrorKind::Config, "more than 256 blocks per core breaks the bitmap");
  }
  if (seq_slots <= 0 || seq_slots > 256) throw Error(ErrorKind::Config, "seq_slots must be in 1..256");
  if (threshold_blocks < 0) throw Error(ErrorKind::Config, "threshold must be >= 0");
}

std::optional<SeparationViolation> check_write_compute_separation(
    const std::vector<ActivityRecord>& records) {
  // Group per crossbar, then scan writes against computes. Record counts are
  // small per crossbar, so the quadratic scan inside a group is fine.
  std::map<std::pair<uint32_t, uint16_t>, std::vector<const ActivityRecord*>> by_xbar;
  for (const auto& r : records) by_xbar[{r.core, r.crossbar}].push_back(&r);
  std::optional<SeparationViolation> earliest;
  for (const auto& [key, recs] : by_xbar) {
    for (const auto* w : recs) {
      if (w->kind != ActivityRecord::Kind::Write) continue;
      for (const auto* c : recs) {
        if (c->kind != ActivityRecord::Kind::Compute) continue;
        int64_t lo = std::max(w->start_tick, c->start_tick);
        int64_t hi = std::min(w->start_tick + w->duration_ticks,
                              c->start_tick + c->duration_ticks);
        if (lo < hi) {
          if (!earliest || lo < earliest->tick) {
            earliest = SeparationViolation{lo, key.first, key.second};
          }
        }
      }
    }
  }
  return earliest;
}

KVPool::KVPool(const WaferTopology& topo, const KVConfig& cfg,
               const std::vector<std::vector<CoreCoord>>& leftover_cores_per_block)
    : topo_(topo), cfg_(cfg) {
  cfg_.validate();
  groups_.reserve(leftover_cores_per_block.size());
  for (const auto& leftovers : leftover_cores_per_block) {
    int n = int(leftovers.size());
    if (n / 2 < cfg_.n_heads) {
      throw Error(ErrorKind::Infeasible,
                  "leftover cores per block must give each ring at least n_heads cores");
    }
    Group g;
    int score_n = (n + 1) / 2;  // odd leftover goes to the score ring
    g.score_ring.assign(leftovers.begin(), leftovers.begin() + score_n);
    g.value_ring.assign(leftovers.begin() + score_n, leftovers.end());
    g.directory = g.score_ring.front();
    g.ring_pointer = 0;
    groups_.push_back(std::move(g));
    for (const auto& c : leftovers) {
      CoreState cs;
      cs.coord = c;
      cs.bitmap.assign(size_t(cfg_.seq_slots), {0, 0, 0, 0});
      cs.fill.assign(size_t(cfg_.blocks_per_core()), 0);
      cs.mode.assign(size_t(cfg_.blocks_per_core()), 0);
      cs.slot_seq.assign(size_t(cfg_.seq_slots), -1);
      cs.free_blocks = cfg_.blocks_per_core();
      cs.free_slots = cfg_.seq_slots;
      cores_.emplace(core_index(topo_, c), std::move(cs));
    }
  }
}

KVPool::CoreState& KVPool::core_state(const CoreCoord& c) {
  auto it = cores_.find(core_index(topo_, c));
  if (it == cores_.end()) throw Error(ErrorKind::Invalid, "core is not part of the KV pool");
  return it->second;
}

const KVPool::CoreState& KVPool::core_state(const CoreCoord& c) const {
  auto it = cores_.find(core_index(topo_, c));
  if (it == cores_.end()) throw Error(ErrorKind::Invalid, "core is not part of the KV pool");
  return it->second;
}

void KVPool::set_bit(CoreState& cs, int slot, int block, bool value) {
  auto& word = cs.bitmap[size_t(slot)][size_t(block / 64)];
  uint64_t mask = 1ull << (block % 64);
  if (value) {
    word |= mask;
  } else {
    word &= ~mask;
  }
}

bool KVPool::get_bit(const CoreState& cs, int slot, int block) const {
  return (cs.bitmap[size_t(slot)][size_t(block / 64)] >> (block % 64)) & 1u;
}

int KVPool::slot_of(const CoreState& cs, int64_t seq) const {
  for (int s = 0; s < cfg_.seq_slots; ++s) {
    if (cs.slot_seq[size_t(s)] == seq) return s;
  }
  return -1;
}

int KVPool::find_slot(CoreState& cs, int64_t seq) {
  int s = slot_of(cs, seq);
  if (s >= 0) return s;
  for (s = 0; s < cfg_.seq_slots; ++s) {
    if (cs.slot_seq[size_t(s)] < 0) {
      cs.slot_seq[size_t(s)] = seq;
      cs.free_slots--;
      return s;
    }
  }
  throw Error(ErrorKind::Invalid, "no free sequence slot");
}

// Lowest free block honoring the growth preference: K spreads away from the
// previous block's crossbar, V packs into it. prev_block < 0 means plain
// first-fit.
std::optional<int> KVPool::alloc_block(CoreState& cs, int64_t seq, KVMode mode, int prev_block) {
  if (cs.free_blocks == 0) return std::nullopt;
  int bpc = cfg_.blocks_per_crossbar;
  int prev_xbar = prev_block >= 0 ? prev_block / bpc : -1;
  int preferred = -1, fallback = -1;
  for (int b = 0; b < cfg_.blocks_per_core(); ++b) {
    if (cs.mode[size_t(b)] != 0) continue;
    bool same_xbar = prev_xbar >= 0 && b / bpc == prev_xbar;
    bool is_preferred = prev_xbar < 0 || (mode == KVMode::K ? !same_xbar : same_xbar);
    if (is_preferred) {
      if (preferred < 0) preferred = b;
    } else if (fallback < 0) {
      fallback = b;
    }
    if (preferred >= 0) break;
  }
  int b = preferred >= 0 ? preferred : fallback;
  if (b < 0) return std::nullopt;
  int slot = find_slot(cs, seq);
  cs.mode[size_t(b)] = mode == KVMode::K ? 1 : 2;
  cs.fill[size_t(b)] = 0;
  set_bit(cs, slot, b, true);
  cs.free_blocks--;
  return b;
}

bool KVPool::can_allocate(int initial_len) const {
  if (initial_len < 1) return false;
  int needed = (initial_len + cfg_.tokens_per_block - 1) / cfg_.tokens_per_block;
  for (const auto& g : groups_) {
    int ss = int(g.score_ring.size());
    int vs = int(g.value_ring.size());
    auto admits = [&](const CoreCoord& c) {
      const CoreState& cs = core_state(c);
      if (cs.free_slots == 0) return false;
      if (cs.free_blocks < needed) return false;
      if (cs.free_blocks < cfg_.threshold_blocks) return false;  // marked full
      return true;
    };
    int accepted = 0;
    for (int j = 0; j < ss && accepted < cfg_.n_heads; ++j) {
      const CoreCoord& sc = g.score_ring[size_t((g.ring_pointer + j) % ss)];
      const CoreCoord& vc = g.value_ring[size_t((g.ring_pointer + j) % vs)];
      if (admits(sc) && admits(vc)) accepted++;
    }
    if (accepted < cfg_.n_heads) return false;
  }
  return true;
}

std::optional<std::vector<std::vector<HeadPlacement>>> KVPool::allocate_sequence(
    int64_t seq, int initial_len) {
  if (initial_len < 1) throw Error(ErrorKind::Invalid, "initial_len must be >= 1");
  if (residents_.contains(seq)) throw Error(ErrorKind::Invalid, "sequence already resident");
  if (!can_allocate(initial_len)) return std::nullopt;

  int needed = (initial_len + cfg_.tokens_per_block - 1) / cfg_.tokens_per_block;
  Resident res;
  res.admit_order = admit_counter_++;
  res.chains.resize(groups_.size());
  std::vector<std::vector<HeadPlacement>> all_heads(groups_.size());

  for (size_t gi = 0; gi < groups_.size(); ++gi) {
    Group& g = groups_[gi];
    int ss = int(g.score_ring.size());
    int vs = int(g.value_ring.size());
    auto admits = [&](const CoreCoord& c) {
      const CoreState& cs = core_state(c);
      return cs.free_slots > 0 && cs.free_blocks >= needed &&
             cs.free_blocks >= cfg_.threshold_blocks;
    };
    std::vector<HeadPlacement> heads;
    int last_offset = 0;
    for (int j = 0; j < ss && int(heads.size()) < cfg_.n_heads; ++j) {
      const CoreCoord& sc = g.score_ring[size_t((g.ring_pointer + j) % ss)];
      const CoreCoord& vc = g.value_ring[size_t((g.ring_pointer + j) % vs)];
      if (admits(sc) && admits(vc)) {
        heads.push_back(HeadPlacement{sc, vc});
        last_offset = j;
      }
    }
    // can_allocate() already admitted us; the walk must succeed.
    if (int(heads.size()) < cfg_.n_heads) {
      throw Error(ErrorKind::Invalid, "ring walk diverged from capacity probe");
    }
    res.chains[gi].resize(size_t(cfg_.n_heads));
    for (int h = 0; h < cfg_.n_heads; ++h) {
      for (KVMode mode : {KVMode::K, KVMode::V}) {
        const CoreCoord& c = mode == KVMode::K ? heads[size_t(h)].k_core : heads[size_t(h)].v_core;
        CoreState& cs = core_state(c);
        Chain& chain = res.chains[gi][size_t(h)][size_t(mode)];
        int prev = -1;
        int remaining = initial_len;
        for (int b = 0; b < needed; ++b) {
          auto blk = alloc_block(cs, seq, mode, prev);
          if (!blk) throw Error(ErrorKind::Invalid, "block allocation diverged from probe");
          cs.fill[size_t(*blk)] =
              uint8_t(std::min(remaining, cfg_.tokens_per_block));
          remaining -= cfg_.tokens_per_block;
          chain.blocks.push_back(BlockRef{core_index(topo_, c), uint16_t(*blk)});
          prev = *blk;
        }
      }
    }
    g.page_table[seq] = heads;
    g.ring_pointer = (g.ring_pointer + last_offset + 1) % ss;
    all_heads[gi] = std::move(heads);
  }
  residents_[seq] = std::move(res);
  return all_heads;
}

PhysicalLocation KVPool::to_location(const BlockRef& ref, int offset) const {
  PhysicalLocation loc;
  loc.core = core_at(topo_, ref.core);
  loc.crossbar = ref.block / cfg_.blocks_per_crossbar;
  loc.block = ref.block % cfg_.blocks_per_crossbar;
  loc.offset = offset;
  return loc;
}

PhysicalLocation KVPool::translate(int64_t seq, int group, int head, KVMode mode,
                                   int token_index) const {
  auto it = residents_.find(seq);
  if (it == residents_.end()) throw Error(ErrorKind::Invalid, "unknown sequence");
  if (group < 0 || group >= n_groups() || head < 0 || head >= cfg_.n_heads) {
    throw Error(ErrorKind::Invalid, "group/head out of range");
  }
  // Level 1: page table (directory core) -> head's core. Level 2: the owning
  // block in allocation order. Level 3: fill registers -> offset.
  const Chain& chain = it->second.chains[size_t(group)][size_t(head)][size_t(mode)];
  int ordinal = token_index / cfg_.tokens_per_block;
  int offset = token_index % cfg_.tokens_per_block;
  if (token_index < 0 || ordinal >= int(chain.blocks.size())) {
    throw Error(ErrorKind::Invalid, "token beyond allocated blocks");
  }
  const BlockRef& ref = chain.blocks[size_t(ordinal)];
  const CoreState& cs = cores_.at(ref.core);
  if (offset >= int(cs.fill[size_t(ref.block)])) {
    throw Error(ErrorKind::Invalid, "token beyond fill");
  }
  return to_location(ref, offset);
}

bool KVPool::can_grow(int64_t seq, int group, int head, KVMode mode) const {
  auto it = residents_.find(seq);
  if (it == residents_.end()) return false;
  const Chain& chain = it->second.chains[size_t(group)][size_t(head)][size_t(mode)];
  const BlockRef& last = chain.blocks.back();
  const CoreState& cur = cores_.at(last.core);
  if (cur.free_blocks > 0) return true;
  // Spill candidates: later ring cores, one full lap.
  const Group& g = groups_[size_t(group)];
  const auto& ring = mode == KVMode::K ? g.score_ring : g.value_ring;
  for (const auto& c : ring) {
    const CoreState& cs = core_state(c);
    if (core_index(topo_, c) == last.core) continue;
    if (cs.free_blocks > 0 && (cs.free_slots > 0 || slot_of(cs, seq) >= 0)) return true;
  }
  return false;
}

std::optional<PhysicalLocation> KVPool::grow(int64_t seq, int group, int head, KVMode mode) {
  auto it = residents_.find(seq);
  if (it == residents_.end()) throw Error(ErrorKind::Invalid, "unknown sequence");
  Chain& chain = it->second.chains[size_t(group)][size_t(head)][size_t(mode)];
  BlockRef last = chain.blocks.back();
  CoreState& cur = cores_.at(last.core);
  if (int(cur.fill[size_t(last.block)]) < cfg_.tokens_per_block) {
    throw Error(ErrorKind::Invalid, "grow requires a full tail block");
  }
  auto blk = alloc_block(cur, seq, mode, int(last.block));
  if (blk) {
    chain.blocks.push_back(BlockRef{last.core, uint16_t(*blk)});
    return to_location(chain.blocks.back(), 0);
  }
  // Core full: spill to the next ring core that can take a block.
  const Group& g = groups_[size_t(group)];
  const auto& ring = mode == KVMode::K ? g.score_ring : g.value_ring;
  for (const auto& c : ring) {
    if (core_index(topo_, c) == last.core) continue;
    CoreState& cs = core_state(c);
    if (cs.free_blocks == 0 || (cs.free_slots == 0 && slot_of(cs, seq) < 0)) continue;
    auto spilled = alloc_block(cs, seq, mode, -1);
    if (spilled) {
      spills_++;
      chain.blocks.push_back(BlockRef{core_index(topo_, c), uint16_t(*spilled)});
      return to_location(chain.blocks.back(), 0);
    }
  }
  return std::nullopt;
}

std::optional<PhysicalLocation> KVPool::grow_k(int64_t seq, int group, int head) {
  return grow(seq, group, head, KVMode::K);
}

std::optional<PhysicalLocation> KVPool::grow_v(int64_t seq, int group, int head) {
  return grow(seq, group, head, KVMode::V);
}

bool KVPool::append_token(int64_t seq, int group) {
  auto it = residents_.find(seq);
  if (it == residents_.end()) throw Error(ErrorKind::Invalid, "unknown sequence");
  // Check the whole append first so a failure leaves no partial token.
  for (int h = 0; h < cfg_.n_heads; ++h) {
    for (KVMode mode : {KVMode::K, KVMode::V}) {
      const Chain& chain = it->second.chains[size_t(group)][size_t(h)][size_t(mode)];
      const BlockRef& last = chain.blocks.back();
      if (int(cores_.at(last.core).fill[size_t(last.block)]) == cfg_.tokens_per_block &&
          !can_grow(seq, group, h, mode)) {
        return false;
      }
    }
  }
  for (int h = 0; h < cfg_.n_heads; ++h) {
    for (KVMode mode : {KVMode::K, KVMode::V}) {
      Chain& chain = it->second.chains[size_t(group)][size_t(h)][size_t(mode)];
      BlockRef last = chain.blocks.back();
      if (int(cores_.at(last.core).fill[size_t(last.block)]) == cfg_.tokens_per_block) {
        auto grown = grow(seq, group, h, mode);
        if (!grown) throw Error(ErrorKind::Invalid, "growth diverged from probe");
        last = chain.blocks.back();
      }
      cores_.at(last.core).fill[size_t(last.block)]++;
    }
  }
  return true;
}

int KVPool::tokens_written(int64_t seq, int group) const {
  auto it = residents_.find(seq);
  if (it == residents_.end()) throw Error(ErrorKind::Invalid, "unknown sequence");
  const Chain& chain = it->second.chains[size_t(group)][0][size_t(KVMode::K)];
  int total = 0;
  for (const auto& ref : chain.blocks) total += int(cores_.at(ref.core).fill[size_t(ref.block)]);
  return total;
}

const std::vector<HeadPlacement>& KVPool::head_placements(int64_t seq, int group) const {
  auto it = groups_[size_t(group)].page_table.find(seq);
  if (it == groups_[size_t(group)].page_table.end()) {
    throw Error(ErrorKind::Invalid, "unknown sequence");
  }
  return it->second;
}

const std::vector<BlockRef>& KVPool::blocks_of(int64_t seq, int group, int head,
                                               KVMode mode) const {
  auto it = residents_.find(seq);
  if (it == residents_.end()) throw Error(ErrorKind::Invalid, "unknown sequence");
  return it->second.chains[size_t(group)][size_t(head)][size_t(mode)].blocks;
}

int KVPool::block_fill(const BlockRef& ref) const {
  return int(cores_.at(ref.core).fill[size_t(ref.block)]);
}

void KVPool::clear_sequence(int64_t seq) {
  auto it = residents_.find(seq);
  if (it == residents_.end()) return;
  for (auto& group_chains : it->second.chains) {
    for (auto& head_chains : group_chains) {
      for (auto& chain : head_chains) {
        for (const auto& ref : chain.blocks) {
          CoreState& cs = cores_.at(ref.core);
          int slot = slot_of(cs, seq);
          if (slot >= 0) set_bit(cs, slot, int(ref.block), false);
          cs.mode[size_t(ref.block)] = 0;
          cs.fill[size_t(ref.block)] = 0;
          cs.free_blocks++;
        }
      }
    }
  }
  // Free slots on cores that no longer hold blocks of this sequence.
  for (auto& [idx, cs] : cores_) {
    int slot = slot_of(cs, seq);
    if (slot < 0) continue;
    bool any = false;
    for (const auto& word : cs.bitmap[size_t(slot)]) any = any || word != 0;
    if (!any) {
      cs.slot_seq[size_t(slot)] = -1;
      cs.free_slots++;
    }
  }
  for (auto& g : groups_) g.page_table.erase(seq);
  residents_.erase(it);
}

int64_t KVPool::evict() {
  if (residents_.empty()) throw Error(ErrorKind::Invalid, "nothing to evict");
  int64_t victim = -1;
  int64_t max_order = -1;
  for (const auto& [seq, res] : residents_) {
    if (res.admit_order > max_order) {
      max_order = res.admit_order;
      victim = seq;
    }
  }
  clear_sequence(victim);
  return victim;
}

void KVPool::release(int64_t seq) { clear_sequence(seq); }

std::vector<int64_t> KVPool::resident_ids() const {
  std::vector<int64_t> ids;
  ids.reserve(residents_.size());
  for (const auto& [seq, _] : residents_) ids.push_back(seq);
  return ids;
}

std::vector<int64_t> KVPool::evict_core(const CoreCoord& core) {
  uint32_t idx = core_index(topo_, core);
  std::vector<int64_t> dropped;
  for (const auto& [seq, res] : residents_) {
    bool hit = false;
    for (const auto& gc : res.chains) {
      for (const auto& hc : gc) {
        for (const auto& chain : hc) {
          for (const auto& ref : chain.blocks) hit = hit || ref.core == idx;
        }
      }
    }
    if (hit) dropped.push_back(seq);
  }
  for (int64_t seq : dropped) clear_sequence(seq);
  for (auto& g : groups_) {
    auto drop = [&](std::vector<CoreCoord>& ring) {
      auto it = std::find(ring.begin(), ring.end(), core);
      if (it == ring.end()) return;
      size_t pos = size_t(it - ring.begin());
      ring.erase(it);
      if (!ring.empty() && g.ring_pointer > int(pos)) g.ring_pointer--;
      if (!ring.empty()) g.ring_pointer %= int(ring.size());
    };
    drop(g.score_ring);
    drop(g.value_ring);
    if (!g.score_ring.empty()) g.directory = g.score_ring.front();
  }
  cores_.erase(idx);
  return dropped;
}

bool KVPool::is_kv_core(const CoreCoord& core) const {
  return cores_.contains(core_index(topo_, core));
}

std::vector<CoreCoord> KVPool::all_ring_cores() const {
  std::vector<CoreCoord> out;
  out.reserve(cores_.size());
  for (const auto& [idx, cs] : cores_) out.push_back(cs.coord);
  return out;
}

int64_t KVPool::used_blocks() const {
  int64_t used = 0;
  for (const auto& [idx, cs] : cores_) used += cfg_.blocks_per_core() - cs.free_blocks;
  return used;
}

int64_t KVPool::free_blocks_on(const CoreCoord& core) const {
  return core_state(core).free_blocks;
}

void KVPool::validate() const {
  for (const auto& [idx, cs] : cores_) {
    std::vector<int> owners(size_t(cfg_.blocks_per_core()), -1);
    int used = 0;
    for (int s = 0; s < cfg_.seq_slots; ++s) {
      for (int b = 0; b < cfg_.blocks_per_core(); ++b) {
        if (!get_bit(cs, s, b)) continue;
        if (owners[size_t(b)] >= 0) {
          throw Error(ErrorKind::Invalid, "bitmap column owned by two slots");
        }
        owners[size_t(b)] = s;
        used++;
        if (cs.mode[size_t(b)] == 0) throw Error(ErrorKind::Invalid, "owned block marked free");
      }
    }
    if (used != cfg_.blocks_per_core() - cs.free_blocks) {
      throw Error(ErrorKind::Invalid, "free block counter drifted from bitmap");
    }
    for (int b = 0; b < cfg_.blocks_per_core(); ++b) {
      if (int(cs.fill[size_t(b)]) > cfg_.tokens_per_block) {
        throw Error(ErrorKind::Invalid, "fill register above block capacity");
      }
      if (cs.mode[size_t(b)] == 0 && owners[size_t(b)] >= 0) {
        throw Error(ErrorKind::Invalid, "mode/bitmap disagree");
      }
    }
  }
  // Every chain block must be owned by its sequence's slot.
  for (const auto& [seq, res] : residents_) {
    for (const auto& gc : res.chains) {
      for (const auto& hc : gc) {
        for (const auto& chain : hc) {
          for (const auto& ref : chain.blocks) {
            const CoreState& cs = cores_.at(ref.core);
            int slot = slot_of(cs, seq);
            if (slot < 0 || !get_bit(cs, slot, int(ref.block))) {
              throw Error(ErrorKind::Invalid, "chain references a block the bitmap disowns");
            }
          }
        }
      }
    }
  }
}

}  // namespace wscim
