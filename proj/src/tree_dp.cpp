#include <algorithm>
#include <limits>
#include <map>
#include <set>

#include "wscim/mapping.hpp"

namespace wscim {

namespace {

constexpr int64_t kInf = std::numeric_limits<int64_t>::max() / 4;

// Subtree contents are abstracted as a sorted multiset of per-output-group
// slice counts; group identity does not affect cost, only whether the two
// children cover the same groups. A node reduces exactly when every group is
// split strictly across both children.
using Counts = std::vector<int>;

Counts canonical(const std::map<int, int>& by_group) {
  Counts c;
  for (const auto& [g, n] : by_group) {
    if (n > 0) c.push_back(n);
  }
  std::sort(c.begin(), c.end());
  return c;
}

struct SplitEnum {
  // All canonical ways to pick k_j in [0, c_j] from the sorted count vector,
  // treating equal counts as interchangeable (non-increasing k within runs).
  std::vector<std::vector<int>> result;

  void run(const Counts& c) {
    std::vector<int> k(c.size(), 0);
    rec(c, 0, k);
  }

  void rec(const Counts& c, size_t pos, std::vector<int>& k) {
    if (pos == c.size()) {
      result.push_back(k);
      return;
    }
    int hi = c[pos];
    if (pos > 0 && c[pos] == c[pos - 1]) hi = std::min(hi, k[pos - 1]);  // break symmetry
    for (int v = 0; v <= hi; ++v) {
      k[pos] = v;
      rec(c, pos + 1, k);
    }
    k[pos] = 0;
  }
};

struct DpKey {
  int depth_left;
  Counts counts;
  friend bool operator<(const DpKey& a, const DpKey& b) {
    if (a.depth_left != b.depth_left) return a.depth_left < b.depth_left;
    return a.counts < b.counts;
  }
};

struct DpVal {
  int64_t cost = kInf;
  std::vector<int> best_k;  // aligned with the sorted counts
};

struct TreeDp {
  int total_depth;
  std::map<DpKey, DpVal> memo;

  int64_t solve(int depth_left, const Counts& counts) {
    int total = 0;
    for (int v : counts) total += v;
    if (total == 0 || total == 1) return 0;
    if (total > (1 << depth_left)) return kInf;
    DpKey key{depth_left, counts};
    auto it = memo.find(key);
    if (it != memo.end()) return it->second.cost;
    DpVal val;

    int node_depth = total_depth - depth_left;
    int half = 1 << (depth_left - 1);
    SplitEnum splits;
    splits.run(counts);
    for (const auto& k : splits.result) {
      int left_n = 0, right_n = 0;
      bool all_strict = true;
      std::map<int, int> lg, rg;
      for (size_t j = 0; j < counts.size(); ++j) {
        left_n += k[j];
        right_n += counts[j] - k[j];
        if (k[j] == 0 || k[j] == counts[j]) all_strict = false;
        lg[int(j)] = k[j];
        rg[int(j)] = counts[j] - k[j];
      }
      if (left_n > half || right_n > half) continue;
      int64_t weight = 0;
      if (left_n > 0 && right_n > 0) weight = all_strict ? 0 : 1;
      int64_t cost = weight * node_depth;
      int64_t cl = solve(depth_left - 1, canonical(lg));
      if (cl >= kInf) continue;
      int64_t cr = solve(depth_left - 1, canonical(rg));
      if (cr >= kInf) continue;
      cost += cl + cr;
      if (cost < val.cost) {
        val.cost = cost;
        val.best_k = k;
      }
    }
    memo[key] = val;
    return val.cost;
  }
};

int heap_left(int node) { return 2 * node + 1; }
int heap_right(int node) { return 2 * node + 2; }

}  // namespace

TreePlan intra_core_dp(const std::vector<SliceTag>& slices, int depth) {
  if (depth < 0 || depth > 8) throw Error(ErrorKind::Config, "tree depth out of range");
  int leaves = 1 << depth;
  if (int(slices.size()) > leaves) {
    throw Error(ErrorKind::TooLarge, "more slices than crossbar leaves");
  }
  {
    std::set<SliceTag> uniq(slices.begin(), slices.end());
    if (uniq.size() != slices.size()) {
      throw Error(ErrorKind::Invalid, "duplicate (input,output) slice tags");
    }
  }

  TreePlan plan;
  plan.depth = depth;
  plan.leaf_slice.assign(size_t(leaves), -1);
  plan.node_ops.assign(size_t(leaves) - 1, TreeNodeOp::Pass);
  if (slices.size() <= 1) {
    if (!slices.empty()) plan.leaf_slice[0] = 0;
    plan.objective = 0;
    return plan;
  }

  // Group slices by output split; queue of concrete slice indices per group.
  std::map<int, std::vector<int>> group_slices;
  for (size_t s = 0; s < slices.size(); ++s) {
    group_slices[slices[s].out_split].push_back(int(s));
  }
  std::map<int, int> concrete;  // group id -> remaining count
  for (const auto& [g, v] : group_slices) concrete[g] = int(v.size());

  TreeDp dp;
  dp.total_depth = depth;
  int64_t best = dp.solve(depth, canonical(concrete));
  if (best >= kInf) throw Error(ErrorKind::Infeasible, "slices do not fit the tree");
  plan.objective = best;

  // Reconstruct: walk down re-deriving each node's chosen split; concrete
  // groups align with the canonical counts by (count, group id).
  struct Frame {
    int node;
    int depth_left;
    std::map<int, int> groups;
  };
  std::vector<Frame> stack;
  stack.push_back({0, depth, concrete});
  while (!stack.empty()) {
    Frame fr = std::move(stack.back());
    stack.pop_back();
    int total = 0;
    for (const auto& [g, n] : fr.groups) total += n;
    if (total == 0) continue;
    if (total == 1) {
      // Descend left to a leaf.
      int leaf_pos = 0;
      int node = fr.node;
      for (int d = fr.depth_left; d > 0; --d) node = heap_left(node);
      leaf_pos = node - (leaves - 1);
      int g = -1;
      for (const auto& [gid, n] : fr.groups) {
        if (n > 0) g = gid;
      }
      plan.leaf_slice[size_t(leaf_pos)] = group_slices[g].back();
      group_slices[g].pop_back();
      continue;
    }
    Counts counts = canonical(fr.groups);
    DpKey key{fr.depth_left, counts};
    const DpVal& val = dp.memo.at(key);
    // Align concrete groups with sorted counts: stable order by (count, id).
    std::vector<std::pair<int, int>> ordered;  // (count, group id)
    for (const auto& [g, n] : fr.groups) {
      if (n > 0) ordered.emplace_back(n, g);
    }
    std::sort(ordered.begin(), ordered.end());
    std::map<int, int> lg, rg;
    bool all_strict = true;
    int left_n = 0, right_n = 0;
    for (size_t j = 0; j < ordered.size(); ++j) {
      int g = ordered[j].second;
      int kl = val.best_k[j];
      lg[g] = kl;
      rg[g] = ordered[j].first - kl;
      if (kl == 0 || kl == ordered[j].first) all_strict = false;
      left_n += kl;
      right_n += ordered[j].first - kl;
    }
    if (left_n > 0 && right_n > 0) {
      plan.node_ops[size_t(fr.node)] = all_strict ? TreeNodeOp::Reduction
                                                  : TreeNodeOp::Concatenation;
    }
    stack.push_back({heap_right(fr.node), fr.depth_left - 1, rg});
    stack.push_back({heap_left(fr.node), fr.depth_left - 1, lg});
  }
  return plan;
}

int64_t tree_plan_cost(const TreePlan& plan, const std::vector<SliceTag>& slices) {
  int leaves = 1 << plan.depth;
  if (int(plan.leaf_slice.size()) != leaves) {
    throw Error(ErrorKind::Invalid, "plan leaf count does not match depth");
  }
  std::vector<int> seen(slices.size(), 0);
  for (int l = 0; l < leaves; ++l) {
    int s = plan.leaf_slice[size_t(l)];
    if (s < 0) continue;
    if (s >= int(slices.size()) || seen[size_t(s)]++) {
      throw Error(ErrorKind::Invalid, "plan leaves are not a permutation of slices");
    }
  }
  for (int used : seen) {
    if (!used) throw Error(ErrorKind::Invalid, "plan omits a slice");
  }

  // Bottom-up: per node, the output-group set and slice count of its subtree.
  size_t n_nodes = size_t(2 * leaves - 1);
  std::vector<std::set<int>> groups;
  groups.resize(n_nodes);
  std::vector<int> count(n_nodes, 0);
  int64_t cost = 0;
  for (int node = int(n_nodes) - 1; node >= 0; --node) {
    if (node >= leaves - 1) {
      int s = plan.leaf_slice[size_t(node - (leaves - 1))];
      if (s >= 0) {
        groups[size_t(node)].insert(slices[size_t(s)].out_split);
        count[size_t(node)] = 1;
      }
      continue;
    }
    int l = heap_left(node), r = heap_right(node);
    count[size_t(node)] = count[size_t(l)] + count[size_t(r)];
    groups[size_t(node)] = groups[size_t(l)];
    groups[size_t(node)].insert(groups[size_t(r)].begin(), groups[size_t(r)].end());
    if (count[size_t(l)] > 0 && count[size_t(r)] > 0) {
      bool reduction = groups[size_t(l)] == groups[size_t(r)];
      if (!reduction) {
        int node_depth = 0;
        for (int x = node + 1; x > 1; x /= 2) node_depth++;
        cost += node_depth;
      }
    }
  }
  return cost;
}

}  // namespace wscim
