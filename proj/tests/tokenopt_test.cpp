#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "flux/rng.hpp"
#include "flux/tokenopt.hpp"

using namespace flux;

namespace {

FluxViTConfig vit_s() {
  FluxViTConfig c;
  c.d_model = 384;
  c.heads = 6;
  c.depth = 12;
  c.mlp_ratio = 4;
  c.patch_t = 1;
  c.patch_h = 14;
  c.patch_w = 14;
  c.channels = 3;
  c.num_classes = 400;
  return c;
}

SamplerConfig wide_lattice() {
  SamplerConfig c;
  c.f_min = 4;
  c.f_max = 24;  // 11 frame counts
  c.t_step = 2;
  c.r_min = 168;
  c.r_max = 280;  // 5 resolutions: 168..280
  c.r_step = 28;
  c.pool_min = 0;
  c.pool_max = 1 << 30;
  return c;
}

}  // namespace

TEST_CASE("the cost model reproduces the reference GFLOP figures") {
  FluxViTConfig s = vit_s();
  const std::pair<std::int64_t, double> expect[] = {
      {3072, 154.0}, {2048, 83.0}, {1024, 32.0}, {512, 13.0}};
  for (const auto& [n, gf] : expect) {
    double got = static_cast<double>(flops(s, n).total) / 1e9;
    CHECK(std::abs(got - gf) / gf < 0.05);
  }
  FluxViTConfig b = vit_s();
  b.d_model = 768;
  b.heads = 12;
  double got_b = static_cast<double>(flops(b, 3072).total) / 1e9;
  CHECK(std::abs(got_b - 440.0) / 440.0 < 0.05);

  // the 2048 / 512 cost ratio matches 83/13 within 10%
  double ratio = static_cast<double>(flops(s, 2048).total) /
                 static_cast<double>(flops(s, 512).total);
  CHECK(std::abs(ratio - 83.0 / 13.0) / (83.0 / 13.0) < 0.10);
}

TEST_CASE("block MACs match the hand-computed tiny case") {
  FluxViTConfig c;
  c.d_model = 8;
  c.heads = 1;
  c.depth = 1;
  c.mlp_ratio = 4;
  // N = 4 including CLS, so n_tokens = 3
  FlopReport r = flops(c, 3);
  std::int64_t block = r.qkv_out_proj + r.attn_scores + r.attn_apply + r.mlp;
  CHECK(block == 12 * 4 * 64 + 2 * 16 * 8);  // 3328
  CHECK(r.total == r.patch_embed + block + r.head);
}

TEST_CASE("cost is strictly increasing and exactly quadratic in N") {
  FluxViTConfig s = vit_s();
  std::int64_t prev = -1;
  for (std::int64_t n : {0, 1, 7, 64, 512, 2048}) {
    std::int64_t t = flops(s, n).total;
    CHECK(t > prev);
    prev = t;
  }
  // quadratic fit through three points has zero residual on a fourth
  auto attn = [&](std::int64_t n) {
    FlopReport r = flops(s, n);
    return r.attn_scores + r.attn_apply;
  };
  // attn(n) = 2 D (n+1)^2 per block; check the second difference is constant
  std::int64_t d2a = attn(12) - 2 * attn(11) + attn(10);
  std::int64_t d2b = attn(102) - 2 * attn(101) + attn(100);
  CHECK(d2a == d2b);
  CHECK(flops(s, 0).total > 0);
  CHECK_THROWS_AS(flops(s, -1), std::invalid_argument);
}

TEST_CASE("report serializes with per-component counts") {
  std::string j = flops(vit_s(), 64).to_json();
  for (const char* key : {"patch_embed", "qkv_out_proj", "attn_scores",
                          "attn_apply", "mlp", "head", "total", "gflops"})
    CHECK(j.find(key) != std::string::npos);
}

TEST_CASE("a constant evaluator stops after the first plateau") {
  int calls = 0;
  Evaluator ev = [&](int, int) {
    ++calls;
    return 0.5;
  };
  BudgetPlan plan = heuristic_search(ev, 2048, wide_lattice(), 0.002);
  CHECK(calls == 2);  // first candidate plus the immediate-plateau probe
  CHECK(plan.chosen_score == 0.5);
  CHECK(plan.chosen_resolution == 224);  // default start column
  int visited = 0;
  for (const auto& e : plan.entries) {
    if (e.visited) ++visited;
    if (e.chosen) CHECK(e.visited);
  }
  CHECK(visited == calls);
}

TEST_CASE("a frame-unimodal evaluator finds its peak") {
  Evaluator ev = [](int f, int) { return -std::abs(f - 12.0); };
  BudgetPlan plan = heuristic_search(ev, 0, wide_lattice(), 0.002);
  CHECK(plan.chosen_frames == 12);
  CHECK(plan.chosen_score == 0.0);
}

TEST_CASE("the search respects the budget and the visit bound") {
  SamplerConfig lat = wide_lattice();
  const std::int64_t budget = 2048;
  std::set<std::pair<int, int>> seen;
  Evaluator ev = [&](int f, int r) {
    seen.insert({f, r});
    std::int64_t pool = static_cast<std::int64_t>(f) * (r / 14) * (r / 14);
    REQUIRE(pool >= budget);
    return static_cast<double>(f) * 0.01;
  };
  BudgetPlan plan = heuristic_search(ev, budget, lat, 0.002);
  CHECK(static_cast<int>(seen.size()) <= 11 + 5);
  for (const auto& e : plan.entries)
    if (e.pool < budget) CHECK_FALSE(e.visited);
  (void)plan;
}

TEST_CASE("no eligible candidate is a validation error") {
  Evaluator ev = [](int, int) { return 0.0; };
  CHECK_THROWS_AS(heuristic_search(ev, 1 << 25, wide_lattice(), 0.002),
                  std::invalid_argument);
}

TEST_CASE("concave surfaces are solved to within the plateau epsilon") {
  SamplerConfig lat = wide_lattice();
  std::vector<int> fs, rs;
  for (int f = lat.f_min; f <= lat.f_max; f += lat.t_step) fs.push_back(f);
  for (int r = lat.r_min; r <= lat.r_max; r += lat.r_step) rs.push_back(r);
  const double eps = 0.002;

  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    Evaluator ev;
    if (seed % 2 == 0) {
      // concave in F along the start column, peak on the column
      double f0 = static_cast<double>(fs[rng.uniform_int(fs.size())]);
      double a = 0.05 + 0.45 * rng.uniform();
      ev = [f0, a](int f, int) {
        double d = (f - f0) / 2.0;
        return 1.0 - a * d * d;
      };
    } else {
      // concave in a mixed frame/resolution index with the peak reachable
      // from the start column
      double d0 = 1.0 + static_cast<double>(rng.uniform_int(6));
      double a = 0.05 + 0.45 * rng.uniform();
      ev = [d0, a, &lat](int f, int r) {
        double df = (f - lat.f_min) / 2.0;
        double dr = (280.0 - r) / 28.0;
        double d = 0.5 * (df + dr);
        return 1.0 - a * (d - d0) * (d - d0);
      };
    }
    double best = -1e30;
    for (int f : fs)
      for (int r : rs) best = std::max(best, ev(f, r));
    BudgetPlan plan = heuristic_search(ev, 0, lat, eps);
    CHECK(plan.chosen_score >= best - eps);
    int visited = 0;
    for (const auto& e : plan.entries) visited += e.visited ? 1 : 0;
    CHECK(visited <= static_cast<int>(fs.size() + rs.size()));
  }
}

TEST_CASE("plan CSV lists the full lattice with flags") {
  Evaluator ev = [](int f, int) { return f * 0.01; };
  BudgetPlan plan = heuristic_search(ev, 0, wide_lattice(), 0.002);
  std::string csv = plan.to_csv(12345);
  CHECK(csv.find("frames,resolution,pool,flops,score,visited,chosen") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 11 * 5);
}

TEST_CASE("pareto keeps exactly the non-dominated points") {
  using P = std::pair<double, double>;
  CHECK(pareto({{3, 1}}) == std::vector<P>{{3, 1}});
  CHECK(pareto({{2, 5}, {2, 7}}) == std::vector<P>{{2, 7}});

  Rng rng(77);
  std::vector<P> pts;
  for (int i = 0; i < 1000; ++i)
    pts.push_back({std::floor(rng.uniform() * 50), std::floor(rng.uniform() * 50)});
  auto frontier = pareto(pts);

  // O(n^2) dominance oracle: keep p if nothing is strictly better
  auto dominated = [&](const P& p) {
    for (const auto& q : pts)
      if ((q.first <= p.first && q.second > p.second) ||
          (q.first < p.first && q.second >= p.second))
        return true;
    return false;
  };
  for (const auto& p : frontier) CHECK_FALSE(dominated(p));
  std::multiset<P> in_frontier(frontier.begin(), frontier.end());
  for (const auto& p : pts)
    if (!dominated(p)) CHECK(in_frontier.count(p) > 0);

  // global extremes survive
  double min_flops = 1e18, max_score = -1e18;
  for (const auto& p : pts) {
    min_flops = std::min(min_flops, p.first);
    max_score = std::max(max_score, p.second);
  }
  bool has_min = false, has_max = false;
  for (const auto& p : frontier) {
    if (p.first == min_flops) has_min = true;
    if (p.second == max_score) has_max = true;
  }
  CHECK(has_min);
  CHECK(has_max);
}
