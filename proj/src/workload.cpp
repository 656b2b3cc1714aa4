#include "wscim/workload.hpp"

#include <random>

namespace wscim {

void TransformerSpec::validate() const {
  if (n_blocks <= 0 || d_model <= 0 || n_heads <= 0 || head_dim <= 0 || d_ff <= 0) {
    throw Error(ErrorKind::Config, "model dimensions must be positive");
  }
  if (n_heads * head_dim != d_model) {
    throw Error(ErrorKind::Config, "n_heads * head_dim must equal d_model");
  }
  if (head_dim > 128) {
    throw Error(ErrorKind::Config, "head_dim exceeds the 128-row logical block limit");
  }
  if (weight_precision_bits <= 0 || activation_precision_bits <= 0) {
    throw Error(ErrorKind::Config, "precisions must be positive");
  }
}

const char* stage_kind_name(StageKind k) {
  switch (k) {
    case StageKind::QkvProj: return "qkv_proj";
    case StageKind::Score: return "score";
    case StageKind::WeightedSum: return "weighted_sum";
    case StageKind::OutProj: return "out_proj";
    case StageKind::Ffn1: return "ffn1";
    case StageKind::Ffn2: return "ffn2";
  }
  return "?";
}

StageKind stage_kind_from_name(const std::string& name) {
  for (int i = 0; i < kStagesPerBlock; ++i) {
    StageKind k = StageKind(i);
    if (name == stage_kind_name(k)) return k;
  }
  throw Error(ErrorKind::Config, "unknown stage kind: " + name);
}

std::vector<PipelineStage> partition_stages(const TransformerSpec& spec) {
  spec.validate();
  std::vector<PipelineStage> stages;
  stages.reserve(size_t(spec.n_blocks) * kStagesPerBlock);
  for (int b = 0; b < spec.n_blocks; ++b) {
    stages.push_back({b, StageKind::QkvProj, spec.d_model, 3 * spec.d_model, false});
    stages.push_back({b, StageKind::Score, spec.head_dim, 0, true});
    stages.push_back({b, StageKind::WeightedSum, 0, spec.head_dim, true});
    stages.push_back({b, StageKind::OutProj, spec.d_model, spec.d_model, false});
    stages.push_back({b, StageKind::Ffn1, spec.d_model, spec.d_ff, false});
    stages.push_back({b, StageKind::Ffn2, spec.d_ff, spec.d_model, false});
  }
  return stages;
}

namespace {
int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }
}  // namespace

LayerCommProfile comm_profile(const PipelineStage& stage, const TransformerSpec& spec,
                              int64_t core_capacity_bytes) {
  if (stage.is_attention_dynamic) {
    throw Error(ErrorKind::Invalid, "comm_profile applies to static-weight stages only");
  }
  if (core_capacity_bytes <= 0) throw Error(ErrorKind::Config, "core capacity must be positive");
  int64_t in = stage.in_channels, out = stage.out_channels;
  int64_t wb = in * out * spec.weight_precision_bits / 8;
  LayerCommProfile p;
  p.weight_bytes = wb;
  p.core_count = int(ceil_div(wb, core_capacity_bytes));

  auto slice_bytes = [&](int64_t splits_i, int64_t splits_o) {
    return ceil_div(in, splits_i) * ceil_div(out, splits_o) * spec.weight_precision_bits / 8;
  };
  int64_t O = std::min<int64_t>(p.core_count, out);
  while (slice_bytes(1, O) > core_capacity_bytes && O < out) ++O;
  int64_t I = 1;
  while (slice_bytes(I, O) > core_capacity_bytes) {
    if (I >= in) throw Error(ErrorKind::Infeasible, "single weight exceeds core capacity");
    ++I;
  }
  p.input_splits = int(I);
  p.output_splits = int(O);
  p.tile_in_channels = int(ceil_div(in, I));
  p.tile_out_channels = int(ceil_div(out, O));

  int64_t slice_out = ceil_div(out, O);
  p.output_volume = slice_out * spec.activation_precision_bits / 8;
  p.reduction_volume = I > 1 ? slice_out * 4 : 0;  // 32-bit partial sums
  p.gather_volume = O > 1 ? slice_out * spec.activation_precision_bits / 8 : 0;
  return p;
}

void LengthDistribution::validate() const {
  auto check_len = [](int v, const char* what) {
    if (v < 1) throw Error(ErrorKind::Config, std::string(what) + " must be >= 1");
  };
  switch (kind) {
    case Kind::Fixed:
      check_len(prefill, "prefill");
      check_len(decode, "decode");
      break;
    case Kind::UniformRange:
      check_len(prefill_lo, "prefill_lo");
      check_len(decode_lo, "decode_lo");
      if (prefill_hi < prefill_lo || decode_hi < decode_lo) {
        throw Error(ErrorKind::Config, "uniform range bounds inverted");
      }
      break;
    case Kind::Mixture: {
      if (points.empty()) throw Error(ErrorKind::Config, "mixture distribution is empty");
      double total = 0;
      for (const auto& pt : points) {
        check_len(pt.prefill, "prefill");
        check_len(pt.decode, "decode");
        if (pt.weight <= 0) throw Error(ErrorKind::Config, "mixture weights must be positive");
        total += pt.weight;
      }
      if (total <= 0) throw Error(ErrorKind::Config, "mixture weights sum to zero");
      break;
    }
  }
}

RequestTrace generate_trace(const LengthDistribution& dist, int n_requests, uint64_t seed,
                            int64_t inter_arrival_ticks) {
  dist.validate();
  if (n_requests < 1) throw Error(ErrorKind::Config, "n_requests must be >= 1");
  RequestTrace trace;
  trace.seed = seed;
  trace.requests.reserve(size_t(n_requests));
  std::mt19937_64 rng(seed);
  // Hand-rolled bounded draws keep traces identical across standard libraries.
  auto bounded = [&](int lo, int hi) { return lo + int(rng() % uint64_t(hi - lo + 1)); };
  double total_weight = 0;
  for (const auto& pt : dist.points) total_weight += pt.weight;
  for (int i = 0; i < n_requests; ++i) {
    Request r;
    r.arrival_tick = inter_arrival_ticks * i;
    switch (dist.kind) {
      case LengthDistribution::Kind::Fixed:
        r.prefill_len = dist.prefill;
        r.decode_len = dist.decode;
        break;
      case LengthDistribution::Kind::UniformRange:
        r.prefill_len = bounded(dist.prefill_lo, dist.prefill_hi);
        r.decode_len = bounded(dist.decode_lo, dist.decode_hi);
        break;
      case LengthDistribution::Kind::Mixture: {
        double u = double(rng() >> 11) * 0x1.0p-53 * total_weight;
        double acc = 0;
        const LengthDistribution::Point* chosen = &dist.points.back();
        for (const auto& pt : dist.points) {
          acc += pt.weight;
          if (u < acc) {
            chosen = &pt;
            break;
          }
        }
        r.prefill_len = chosen->prefill;
        r.decode_len = chosen->decode;
        break;
      }
    }
    trace.requests.push_back(r);
  }
  return trace;
}

}  // namespace wscim
