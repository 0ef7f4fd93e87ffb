#include "flux/selector.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "flux/rng.hpp"

namespace flux {

std::string SelectionMask::to_json() const {
  nlohmann::json j;
  j["indices"] = indices;
  j["groups"] = group_of;
  j["quota"] = quota;
  j["n_groups"] = groups;
  return j.dump();
}

std::vector<Segment> group_partition(int t_frames, int n_groups) {
  if (n_groups < 1 || n_groups > t_frames)
    throw std::invalid_argument("group_partition: need 1 <= N <= T, got N=" +
                                std::to_string(n_groups) + " T=" +
                                std::to_string(t_frames));
  std::vector<Segment> segs;
  int base = t_frames / n_groups;
  int rem = t_frames % n_groups;
  int pos = 0;
  for (int g = 0; g < n_groups; ++g) {
    int len = base + (g < rem ? 1 : 0);
    segs.push_back({pos, pos + len});
    pos += len;
  }
  return segs;
}

DynamicScores dynamic_scores(const Eigen::MatrixXd& embedded,
                             const std::vector<std::array<int, 3>>& coords,
                             const SamplingGrid& grid, int p) {
  if (p != 1 && p != 2)
    throw std::invalid_argument("dynamic_scores: p must be 1 or 2");
  if (embedded.rows() != static_cast<Eigen::Index>(coords.size()) ||
      embedded.rows() != grid.pool())
    throw std::invalid_argument("dynamic_scores: tokens must carry full-grid coords");
  const Eigen::Index spatial = static_cast<Eigen::Index>(grid.gh) * grid.gw;
  DynamicScores out;
  out.p = p;
  out.scores.resize(embedded.rows());
  for (Eigen::Index i = 0; i < embedded.rows(); ++i) {
    const int t = coords[static_cast<std::size_t>(i)][0];
    Eigen::Index other;
    if (grid.gt == 1) {
      out.scores[i] = 0.0;
      continue;
    }
    // backward difference; the first frame falls back to a forward one
    other = t >= 1 ? i - spatial : i + spatial;
    Eigen::VectorXd d = embedded.row(i) - embedded.row(other);
    out.scores[i] = p == 2 ? d.norm() : d.lpNorm<1>();
  }
  return out;
}

namespace {

// token indices sorted by (score desc, index asc)
std::vector<Eigen::Index> rank_by_score(const std::vector<Eigen::Index>& members,
                                        const Eigen::VectorXd& scores) {
  std::vector<Eigen::Index> order = members;
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return order;
}

void finalize(SelectionMask& m, const std::vector<Segment>& segs,
              const std::vector<std::array<int, 3>>& coords) {
  std::sort(m.indices.begin(), m.indices.end());
  m.group_of.resize(m.indices.size());
  m.quota.assign(segs.size(), 0);
  for (std::size_t i = 0; i < m.indices.size(); ++i) {
    int t = coords[static_cast<std::size_t>(m.indices[i])][0];
    for (std::size_t g = 0; g < segs.size(); ++g)
      if (t >= segs[g].begin && t < segs[g].end) {
        m.group_of[i] = static_cast<int>(g);
        m.quota[g]++;
        break;
      }
  }
}

}  // namespace

SelectionMask select_group_dynamic(const DynamicScores& scores,
                                   const std::vector<std::array<int, 3>>& coords,
                                   const SamplingGrid& grid, Eigen::Index k,
                                   int n_groups) {
  const Eigen::Index pool = grid.pool();
  if (k < 0 || k > pool)
    throw std::invalid_argument("select_group_dynamic: K=" + std::to_string(k) +
                                " exceeds pool " + std::to_string(pool));
  auto segs = group_partition(grid.gt, n_groups);
  const Eigen::Index spatial = static_cast<Eigen::Index>(grid.gh) * grid.gw;

  // ceil(K/N) for the first K mod N groups, floor otherwise
  std::vector<Eigen::Index> quotas(static_cast<std::size_t>(n_groups));
  for (int g = 0; g < n_groups; ++g)
    quotas[static_cast<std::size_t>(g)] =
        k / n_groups + (g < static_cast<int>(k % n_groups) ? 1 : 0);

  SelectionMask mask;
  mask.groups = n_groups;
  for (int g = 0; g < n_groups; ++g) {
    std::vector<Eigen::Index> members;
    for (int t = segs[static_cast<std::size_t>(g)].begin;
         t < segs[static_cast<std::size_t>(g)].end; ++t)
      for (Eigen::Index s = 0; s < spatial; ++s)
        members.push_back(static_cast<Eigen::Index>(t) * spatial + s);
    if (quotas[static_cast<std::size_t>(g)] >
        static_cast<Eigen::Index>(members.size()))
      throw std::invalid_argument(
          "select_group_dynamic: quota " +
          std::to_string(quotas[static_cast<std::size_t>(g)]) +
          " exceeds token count of group " + std::to_string(g));
    auto order = rank_by_score(members, scores.scores);
    for (Eigen::Index i = 0; i < quotas[static_cast<std::size_t>(g)]; ++i)
      mask.indices.push_back(order[static_cast<std::size_t>(i)]);
  }
  finalize(mask, segs, coords);
  return mask;
}

SelectionMask select_dynamic(const DynamicScores& scores, Eigen::Index k) {
  const Eigen::Index pool = scores.scores.size();
  if (k < 0 || k > pool)
    throw std::invalid_argument("select_dynamic: K exceeds pool size");
  std::vector<Eigen::Index> members(static_cast<std::size_t>(pool));
  std::iota(members.begin(), members.end(), 0);
  auto order = rank_by_score(members, scores.scores);
  SelectionMask mask;
  mask.groups = 1;
  mask.indices.assign(order.begin(), order.begin() + k);
  std::sort(mask.indices.begin(), mask.indices.end());
  mask.group_of.assign(static_cast<std::size_t>(k), 0);
  mask.quota = {k};
  return mask;
}

SelectionMask select_random(std::uint64_t seed, Eigen::Index pool_size,
                            Eigen::Index k) {
  if (k < 0 || k > pool_size)
    throw std::invalid_argument("select_random: K exceeds pool size");
  Rng rng(derive_seed(seed, "random-mask"));
  std::vector<Eigen::Index> all(static_cast<std::size_t>(pool_size));
  std::iota(all.begin(), all.end(), 0);
  for (Eigen::Index i = 0; i < k; ++i) {
    Eigen::Index j = i + static_cast<Eigen::Index>(
                             rng.uniform_int(static_cast<std::uint64_t>(pool_size - i)));
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
  }
  SelectionMask mask;
  mask.groups = 1;
  mask.indices.assign(all.begin(), all.begin() + k);
  std::sort(mask.indices.begin(), mask.indices.end());
  mask.group_of.assign(static_cast<std::size_t>(k), 0);
  mask.quota = {k};
  return mask;
}

SelectionMask select_tube(std::uint64_t seed, const SamplingGrid& grid,
                          Eigen::Index k) {
  const Eigen::Index pool = grid.pool();
  if (k < 0 || k > pool)
    throw std::invalid_argument("select_tube: K exceeds pool size");
  if (k % grid.gt != 0)
    throw std::invalid_argument("select_tube: K=" + std::to_string(k) +
                                " not divisible by temporal dim " +
                                std::to_string(grid.gt));
  const Eigen::Index spatial = static_cast<Eigen::Index>(grid.gh) * grid.gw;
  const Eigen::Index per_frame = k / grid.gt;
  Rng rng(derive_seed(seed, "tube-mask"));
  std::vector<Eigen::Index> pos(static_cast<std::size_t>(spatial));
  std::iota(pos.begin(), pos.end(), 0);
  for (Eigen::Index i = 0; i < per_frame; ++i) {
    Eigen::Index j = i + static_cast<Eigen::Index>(
                             rng.uniform_int(static_cast<std::uint64_t>(spatial - i)));
    std::swap(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(j)]);
  }
  SelectionMask mask;
  mask.groups = 1;
  for (int t = 0; t < grid.gt; ++t)
    for (Eigen::Index i = 0; i < per_frame; ++i)
      mask.indices.push_back(static_cast<Eigen::Index>(t) * spatial +
                             pos[static_cast<std::size_t>(i)]);
  std::sort(mask.indices.begin(), mask.indices.end());
  mask.group_of.assign(mask.indices.size(), 0);
  mask.quota = {k};
  return mask;
}

SelectionMask student_mask(const Eigen::VectorXd& cls_attention,
                           const SelectionMask& teacher,
                           Eigen::Index n_student) {
  const Eigen::Index k = teacher.k();
  if (cls_attention.size() != k)
    throw std::invalid_argument("student_mask: attention size " +
                                std::to_string(cls_attention.size()) +
                                " vs teacher mask size " + std::to_string(k));
  if (n_student > k)
    throw std::invalid_argument("student_mask: n_student exceeds teacher mask");
  std::vector<Eigen::Index> pos(static_cast<std::size_t>(k));
  std::iota(pos.begin(), pos.end(), 0);
  std::sort(pos.begin(), pos.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (cls_attention[a] != cls_attention[b])
      return cls_attention[a] > cls_attention[b];
    return a < b;
  });
  SelectionMask mask;
  mask.groups = teacher.groups;
  std::vector<std::pair<Eigen::Index, int>> chosen;
  for (Eigen::Index i = 0; i < n_student; ++i) {
    std::size_t p = static_cast<std::size_t>(pos[static_cast<std::size_t>(i)]);
    chosen.emplace_back(teacher.indices[p], teacher.group_of[p]);
  }
  std::sort(chosen.begin(), chosen.end());
  mask.quota.assign(static_cast<std::size_t>(teacher.groups), 0);
  for (auto& [idx, g] : chosen) {
    mask.indices.push_back(idx);
    mask.group_of.push_back(g);
    mask.quota[static_cast<std::size_t>(g)]++;
  }
  return mask;
}

}  // namespace flux
