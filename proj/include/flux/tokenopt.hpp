#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flux/fluxvit.hpp"
#include "flux/sampling.hpp"

namespace flux {

// Multiply-accumulate counts (1 MAC = 1 FLOP, the convention that matches
// the reported transformer GFLOP tables).
struct FlopReport {
  std::int64_t n_tokens = 0;
  std::int64_t patch_embed = 0;
  std::int64_t qkv_out_proj = 0;
  std::int64_t attn_scores = 0;
  std::int64_t attn_apply = 0;
  std::int64_t mlp = 0;
  std::int64_t head = 0;
  std::int64_t total = 0;

  std::string to_json() const;
};

FlopReport flops(const FluxViTConfig& cfg, std::int64_t n_tokens);

struct PlanEntry {
  int frames = 0;
  int resolution = 0;
  std::int64_t pool = 0;
  double score = 0.0;
  bool visited = false;
  bool chosen = false;
};

struct BudgetPlan {
  std::int64_t budget = 0;
  std::vector<PlanEntry> entries;  // full lattice, F ascending then R
  int chosen_frames = 0;
  int chosen_resolution = 0;
  double chosen_score = 0.0;

  std::string to_csv(std::int64_t flops_at_budget) const;
};

using Evaluator = std::function<double(int frames, int resolution)>;

// Two-phase plateau search: sweep F upward at the start resolution until the
// gain drops below plateau_eps, then trade resolution for frames while the
// score keeps improving. Never evaluates a candidate with pool < budget;
// visits at most |F-lattice| + |R-lattice| candidates.
BudgetPlan heuristic_search(const Evaluator& evaluator, std::int64_t k_budget,
                            const SamplerConfig& cfg, double plateau_eps);

// maximal points under (lower flops, higher score); sorted by flops ascending
std::vector<std::pair<double, double>> pareto(
    std::vector<std::pair<double, double>> points);

}  // namespace flux
