#include "flux/tokenopt.hpp"

#include <algorithm>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace flux {

std::string FlopReport::to_json() const {
  nlohmann::json j;
  j["n_tokens"] = n_tokens;
  j["patch_embed"] = patch_embed;
  j["qkv_out_proj"] = qkv_out_proj;
  j["attn_scores"] = attn_scores;
  j["attn_apply"] = attn_apply;
  j["mlp"] = mlp;
  j["head"] = head;
  j["total"] = total;
  j["gflops"] = static_cast<double>(total) / 1e9;
  return j.dump(2);
}

FlopReport flops(const FluxViTConfig& cfg, std::int64_t n_tokens) {
  if (n_tokens < 0) throw std::invalid_argument("flops: negative token count");
  const std::int64_t n = n_tokens + 1;  // CLS
  const std::int64_t d = cfg.d_model;
  FlopReport r;
  r.n_tokens = n_tokens;
  r.patch_embed = n * cfg.c_patch() * d;
  r.qkv_out_proj = cfg.depth * 4 * n * d * d;
  r.attn_scores = cfg.depth * n * n * d;
  r.attn_apply = cfg.depth * n * n * d;
  r.mlp = cfg.depth * 2 * cfg.mlp_ratio * n * d * d;
  r.head = d * cfg.num_classes;
  r.total = r.patch_embed + r.qkv_out_proj + r.attn_scores + r.attn_apply +
            r.mlp + r.head;
  return r;
}

std::string BudgetPlan::to_csv(std::int64_t flops_at_budget) const {
  std::ostringstream os;
  os << "frames,resolution,pool,flops,score,visited,chosen\n";
  for (const auto& e : entries)
    os << e.frames << "," << e.resolution << "," << e.pool << ","
       << flops_at_budget << "," << e.score << "," << (e.visited ? 1 : 0)
       << "," << (e.chosen ? 1 : 0) << "\n";
  return os.str();
}

namespace {

std::int64_t pool_of(int f, int r, const SamplerConfig& cfg) {
  return static_cast<std::int64_t>(f / cfg.patch_t) * (r / cfg.patch_h) *
         (r / cfg.patch_w);
}

}  // namespace

BudgetPlan heuristic_search(const Evaluator& evaluator, std::int64_t k_budget,
                            const SamplerConfig& cfg, double plateau_eps) {
  std::vector<int> f_lattice, r_lattice;
  for (int f = cfg.f_min; f <= cfg.f_max; f += cfg.t_step) f_lattice.push_back(f);
  for (int r = cfg.r_min; r <= cfg.r_max; r += cfg.r_step) r_lattice.push_back(r);

  BudgetPlan plan;
  plan.budget = k_budget;
  for (int f : f_lattice)
    for (int r : r_lattice)
      plan.entries.push_back({f, r, pool_of(f, r, cfg), 0.0, false, false});

  auto eligible = [&](int f, int r) { return pool_of(f, r, cfg) >= k_budget; };
  auto entry = [&](int f, int r) -> PlanEntry& {
    for (auto& e : plan.entries)
      if (e.frames == f && e.resolution == r) return e;
    throw std::logic_error("heuristic_search: candidate outside lattice");
  };
  auto visit = [&](int f, int r) {
    PlanEntry& e = entry(f, r);
    if (!e.visited) {
      e.score = evaluator(f, r);
      e.visited = true;
    }
    return e.score;
  };

  // start at the 224-equivalent resolution when it is in the lattice and
  // eligible, else the largest eligible one
  int r_start = -1;
  auto column_eligible = [&](int r) {
    for (int f : f_lattice)
      if (eligible(f, r)) return true;
    return false;
  };
  for (int r : r_lattice)
    if (r == 224 && column_eligible(r)) r_start = r;
  if (r_start < 0)
    for (int r : r_lattice)
      if (column_eligible(r)) r_start = r;
  if (r_start < 0)
    throw std::invalid_argument(
        "heuristic_search: no lattice candidate satisfies the token budget");

  // phase 1: frame sweep at fixed resolution until the gain plateaus
  double best_score = 0.0, prev_score = 0.0, first_score = 0.0;
  int best_f = -1;
  bool have_first = false;
  std::size_t best_f_pos = 0;
  for (std::size_t i = 0; i < f_lattice.size(); ++i) {
    int f = f_lattice[i];
    if (!eligible(f, r_start)) continue;
    double s = visit(f, r_start);
    if (!have_first) {
      have_first = true;
      first_score = prev_score = best_score = s;
      best_f = f;
      best_f_pos = i;
      continue;
    }
    double gain = s - prev_score;
    prev_score = s;
    if (s > best_score) {
      best_score = s;
      best_f = f;
      best_f_pos = i;
    }
    if (gain < plateau_eps) break;
  }

  int chosen_f = best_f, chosen_r = r_start;
  double chosen_score = best_score;

  // phase 2: trade resolution for frames while the score improves; skipped
  // when phase 1 plateaued immediately
  if (best_score > first_score) {
    std::size_t fi = best_f_pos;
    auto r_it = std::find(r_lattice.begin(), r_lattice.end(), r_start);
    std::size_t ri = static_cast<std::size_t>(r_it - r_lattice.begin());
    double cur = best_score;
    while (fi + 1 < f_lattice.size() && ri > 0) {
      int f = f_lattice[fi + 1];
      int r = r_lattice[ri - 1];
      if (!eligible(f, r)) break;
      double s = visit(f, r);
      if (s > cur) {
        cur = s;
        fi += 1;
        ri -= 1;
        if (s > chosen_score) {
          chosen_score = s;
          chosen_f = f;
          chosen_r = r;
        }
      } else {
        break;
      }
    }
  }

  plan.chosen_frames = chosen_f;
  plan.chosen_resolution = chosen_r;
  plan.chosen_score = chosen_score;
  entry(chosen_f, chosen_r).chosen = true;
  return plan;
}

std::vector<std::pair<double, double>> pareto(
    std::vector<std::pair<double, double>> points) {
  std::sort(points.begin(), points.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second > b.second;
  });
  std::vector<std::pair<double, double>> frontier;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& p : points) {
    if (p.second > best || (!frontier.empty() && p == frontier.back())) {
      frontier.push_back(p);
      best = p.second;
    }
  }
  return frontier;
}

}  // namespace flux
