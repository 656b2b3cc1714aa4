#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "wscim/fabric.hpp"

namespace wscim {

struct Placement;
struct RemapResult;

struct KVConfig {
  int n_heads = 8;
  int head_dim = 64;
  int crossbars_per_core = 32;
  int blocks_per_crossbar = 8;  // may shrink under the row-activation area tradeoff
  int tokens_per_block = 128;
  int seq_slots = 256;  // bitmap rows
  int threshold_blocks = 8;  // theta: cores with fewer free blocks reject new sequences

  int blocks_per_core() const { return crossbars_per_core * blocks_per_crossbar; }
  void validate() const;
};

enum class KVMode : uint8_t { K = 0, V = 1 };

struct BlockRef {
  uint32_t core = 0;   // flat core index
  uint16_t block = 0;  // crossbar * blocks_per_crossbar + index within crossbar
};

struct PhysicalLocation {
  CoreCoord core;
  int crossbar = 0;
  int block = 0;
  int offset = 0;
};

struct HeadPlacement {
  CoreCoord k_core;  // score ring: holds K, computes Q*K^T
  CoreCoord v_core;  // value ring: holds V, computes S*V
};

// One tick-stamped crossbar activity interval, emitted by the engine and
// checked by the separation probe.
struct ActivityRecord {
  int64_t start_tick = 0;
  int64_t duration_ticks = 0;
  uint32_t core = 0;
  uint16_t crossbar = 0;
  enum class Kind : uint8_t { Write = 0, Compute = 1 } kind = Kind::Write;
};

struct SeparationViolation {
  int64_t tick = 0;
  uint32_t core = 0;
  uint16_t crossbar = 0;
};

// CIM arrays cannot compute while accepting a write: reports the earliest
// overlap of a Write and a Compute interval on one crossbar, if any.
std::optional<SeparationViolation> check_write_compute_separation(
    const std::vector<ActivityRecord>& records);

// Distributed dynamic KV manager. One group of score/value core rings per
// transformer block, a page-table directory per group, per-core 256x256
// ownership bitmaps, and per-block fill registers.
class KVPool {
 public:
  KVPool() = default;

  // Splits each block's leftover cores evenly into a score ring and a value
  // ring (odd leftover goes to score), directory at the first score core.
  // Requires floor(leftovers/2) >= n_heads for every block.
  KVPool(const WaferTopology& topo, const KVConfig& cfg,
         const std::vector<std::vector<CoreCoord>>& leftover_cores_per_block);

  int n_groups() const { return int(groups_.size()); }
  const KVConfig& config() const { return cfg_; }
  const std::vector<CoreCoord>& score_ring(int group) const { return groups_[size_t(group)].score_ring; }
  const std::vector<CoreCoord>& value_ring(int group) const { return groups_[size_t(group)].value_ring; }
  CoreCoord directory_core(int group) const { return groups_[size_t(group)].directory; }
  int ring_pointer(int group) const { return groups_[size_t(group)].ring_pointer; }

  // Admission across every group, all-or-nothing; returns std::nullopt (no
  // state change) when some ring cannot host the sequence, signaling the
  // scheduler to wait or evict.
  std::optional<std::vector<std::vector<HeadPlacement>>> allocate_sequence(int64_t seq,
                                                                           int initial_len);
  bool can_allocate(int initial_len) const;

  bool is_resident(int64_t seq) const { return residents_.contains(seq); }
  int resident_count() const { return int(residents_.size()); }
  std::vector<int64_t> resident_ids() const;

  // Three-level lookup: page table -> core, bitmap -> owning block in
  // allocation order, fill registers -> offset. Pure; throws on unknown
  // sequence or a token beyond the written fill.
  PhysicalLocation translate(int64_t seq, int group, int head, KVMode mode,
                             int token_index) const;

  // Explicit growth of a full chain tail. K prefers a different crossbar of
  // the same core; V prefers the same crossbar. Falls over to later ring
  // cores when the core is full; std::nullopt means eviction is required.
  std::optional<PhysicalLocation> grow_k(int64_t seq, int group, int head);
  std::optional<PhysicalLocation> grow_v(int64_t seq, int group, int head);

  // Appends one token (K and V rows, every head) in one group. Checks first
  // and mutates only when the whole append fits; false signals eviction.
  bool append_token(int64_t seq, int group);

  int tokens_written(int64_t seq, int group) const;
  const std::vector<HeadPlacement>& head_placements(int64_t seq, int group) const;
  const std::vector<BlockRef>& blocks_of(int64_t seq, int group, int head, KVMode mode) const;
  int block_fill(const BlockRef& ref) const;

  // Evicts the most recently scheduled resident; returns its id so the
  // scheduler can requeue it at the front. Throws when nothing is resident.
  int64_t evict();
  // Normal completion; frees all state of seq.
  void release(int64_t seq);

  // Fault path: drops every sequence with blocks on the core and removes the
  // core from its rings. Returns the dropped sequence ids.
  std::vector<int64_t> evict_core(const CoreCoord& core);
  bool is_kv_core(const CoreCoord& core) const;
  std::vector<CoreCoord> all_ring_cores() const;

  int64_t used_blocks() const;
  int64_t free_blocks_on(const CoreCoord& core) const;
  int64_t spill_count() const { return spills_; }

  // Structural invariants: single ownership per bitmap column, fill bounds,
  // chain/bitmap agreement. Throws on violation.
  void validate() const;

 private:
  struct CoreState {
    CoreCoord coord;
    std::vector<std::array<uint64_t, 4>> bitmap;  // [slot][256 bits of block ownership]
    std::vector<uint8_t> fill;                    // per block, tokens 0..128
    std::vector<uint8_t> mode;                    // 0 free, 1 K, 2 V
    std::vector<int64_t> slot_seq;                // per slot: resident seq or -1
    int free_blocks = 0;
    int free_slots = 0;
  };
  struct Group {
    std::vector<CoreCoord> score_ring;
    std::vector<CoreCoord> value_ring;
    CoreCoord directory;
    int ring_pointer = 0;
    std::map<int64_t, std::vector<HeadPlacement>> page_table;
  };
  struct Chain {
    std::vector<BlockRef> blocks;  // allocation order
  };
  struct Resident {
    int64_t admit_order = 0;
    // chains[group][head][mode]
    std::vector<std::vector<std::array<Chain, 2>>> chains;
  };

  CoreState& core_state(const CoreCoord& c);
  const CoreState& core_state(const CoreCoord& c) const;
  CoreState& core_state(uint32_t index) { return cores_.at(index); }
  int find_slot(CoreState& cs, int64_t seq);
  std::optional<int> alloc_block(CoreState& cs, int64_t seq, KVMode mode, int prev_block);
  void set_bit(CoreState& cs, int slot, int block, bool value);
  bool get_bit(const CoreState& cs, int slot, int block) const;
  int slot_of(const CoreState& cs, int64_t seq) const;
  void clear_sequence(int64_t seq);
  std::optional<PhysicalLocation> grow(int64_t seq, int group, int head, KVMode mode);
  bool can_grow(int64_t seq, int group, int head, KVMode mode) const;
  PhysicalLocation to_location(const BlockRef& ref, int offset) const;

  WaferTopology topo_;
  KVConfig cfg_;
  std::vector<Group> groups_;
  std::map<uint32_t, CoreState> cores_;
  std::map<int64_t, Resident> residents_;
  int64_t admit_counter_ = 0;
  int64_t spills_ = 0;

  friend RemapResult remap_on_fault(Placement&, KVPool&, DefectMap&, const CoreCoord&);
};

}  // namespace wscim
