#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "flux/sampling.hpp"

namespace flux {

// Ordered set of selected token indices with temporal-group bookkeeping.
struct SelectionMask {
  std::vector<Eigen::Index> indices;  // strictly increasing
  std::vector<int> group_of;          // group id per selected index
  std::vector<Eigen::Index> quota;    // selected count per group
  int groups = 1;

  Eigen::Index k() const { return static_cast<Eigen::Index>(indices.size()); }
  std::string to_json() const;
};

struct DynamicScores {
  Eigen::VectorXd scores;  // one per pool token, >= 0
  int p = 2;
};

struct Segment {
  int begin, end;  // [begin, end) over temporal grid indices
};

// N contiguous disjoint segments covering [0, t_frames); sizes differ by at
// most one, larger segments first.
std::vector<Segment> group_partition(int t_frames, int n_groups);

// p-norm feature difference with the same spatial position in the previous
// frame; the first frame uses a forward difference. Single-frame grids get
// all-zero scores.
DynamicScores dynamic_scores(const Eigen::MatrixXd& embedded,
                             const std::vector<std::array<int, 3>>& coords,
                             const SamplingGrid& grid, int p);

// top(quota) per temporal group by score, ties broken by lower token index;
// quotas are ceil(K/N) for the first K mod N groups.
SelectionMask select_group_dynamic(const DynamicScores& scores,
                                   const std::vector<std::array<int, 3>>& coords,
                                   const SamplingGrid& grid, Eigen::Index k,
                                   int n_groups);

// global top-K (the N=1 special case)
SelectionMask select_dynamic(const DynamicScores& scores, Eigen::Index k);

// uniform K-subset without replacement
SelectionMask select_random(std::uint64_t seed, Eigen::Index pool_size,
                            Eigen::Index k);

// K/T' spatial positions kept at every temporal index
SelectionMask select_tube(std::uint64_t seed, const SamplingGrid& grid,
                          Eigen::Index k);

// the n highest CLS-attention tokens among the teacher-visible set; returns
// indices into the same pool (a subset of the teacher mask)
SelectionMask student_mask(const Eigen::VectorXd& cls_attention,
                           const SelectionMask& teacher, Eigen::Index n_student);

}  // namespace flux
