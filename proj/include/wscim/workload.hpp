#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wscim/fabric.hpp"

namespace wscim {

struct TransformerSpec {
  int n_blocks = 4;
  int d_model = 512;
  int n_heads = 8;
  int head_dim = 64;
  int d_ff = 2048;
  int weight_precision_bits = 8;
  int activation_precision_bits = 8;

  void validate() const;
};

enum class StageKind : uint8_t {
  QkvProj = 0,
  Score,        // Q*K^T plus softmax on the adjacent SFU
  WeightedSum,  // S*V
  OutProj,
  Ffn1,
  Ffn2,
};

constexpr int kStagesPerBlock = 6;

const char* stage_kind_name(StageKind k);
StageKind stage_kind_from_name(const std::string& name);

struct PipelineStage {
  int block_index = 0;
  StageKind kind = StageKind::QkvProj;
  // A zero channel count marks the sequence-dependent dimension of the
  // attention-dynamic stages.
  int in_channels = 0;
  int out_channels = 0;
  bool is_attention_dynamic = false;
};

// Six stages per block, fixed kind cycle, shapes derived from the spec.
std::vector<PipelineStage> partition_stages(const TransformerSpec& spec);

struct LayerCommProfile {
  int64_t output_volume = 0;     // bytes per token leaving one output slice
  int64_t reduction_volume = 0;  // 32-bit partial-sum bytes per tile
  int64_t gather_volume = 0;     // bytes exchanged among final-split tiles; 0 when O(l)=1
  int input_splits = 1;          // I(l)
  int output_splits = 1;         // O(l)
  int core_count = 1;            // #Core(l) = ceil(weight bytes / core capacity)
  int64_t weight_bytes = 0;
  int tile_in_channels = 0;   // rows held by one tile
  int tile_out_channels = 0;  // output channels held by one tile
};

// Static-weight stages only; attention-dynamic stages are profiled by the
// kvcache module. Output channels are split first; input splits appear only
// when a single output slice cannot fit the core.
LayerCommProfile comm_profile(const PipelineStage& stage, const TransformerSpec& spec,
                              int64_t core_capacity_bytes);

struct Request {
  int64_t arrival_tick = 0;
  int prefill_len = 1;  // L_P
  int decode_len = 1;   // L_D
};

struct RequestTrace {
  std::vector<Request> requests;
  uint64_t seed = 0;
};

struct LengthDistribution {
  enum class Kind { Fixed, UniformRange, Mixture } kind = Kind::Fixed;
  // Fixed
  int prefill = 128;
  int decode = 128;
  // UniformRange (inclusive bounds)
  int prefill_lo = 1, prefill_hi = 1;
  int decode_lo = 1, decode_hi = 1;
  // Mixture of (prefill, decode, weight) points
  struct Point {
    int prefill = 1;
    int decode = 1;
    double weight = 1.0;
  };
  std::vector<Point> points;

  void validate() const;
};

// Pure function of (dist, n_requests, inter_arrival, seed).
RequestTrace generate_trace(const LengthDistribution& dist, int n_requests, uint64_t seed,
                            int64_t inter_arrival_ticks = 0);

}  // namespace wscim
