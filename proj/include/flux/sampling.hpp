#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <vector>

#include "flux/videogen.hpp"

namespace flux {

// Lattice of candidate (frame count, resolution) pairs under a token-pool
// threshold.
struct SamplerConfig {
  int f_min = 4, f_max = 24;
  int t_step = 2;                 // step between candidate frame counts
  int r_min = 168, r_max = 252;
  int r_step = 28;                // step between candidate resolutions
  std::int64_t pool_min = 2048;   // inclusive token-pool bounds
  std::int64_t pool_max = 4096;
  int patch_t = 1, patch_h = 14, patch_w = 14;

  void validate() const;
};

struct SamplingGrid {
  int frames = 0;       // F
  int resolution = 0;   // R
  int gt = 0, gh = 0, gw = 0;  // token-grid dims F/p_t, R/p_h, R/p_w
  std::int64_t pool() const {
    return static_cast<std::int64_t>(gt) * gh * gw;
  }
};

struct TokenPool {
  // pool x C_patch; row i is the flattened (p_t,p_h,p_w,C) pixels of the
  // patch at coords[i]
  Eigen::MatrixXd features;
  std::vector<std::array<int, 3>> coords;  // (t,h,w), row-major enumeration
  SamplingGrid grid;
  int channels = 0;
};

// All lattice pairs with pool inside the threshold, F ascending then R
// ascending. Pure function of cfg.
std::vector<SamplingGrid> candidates(const SamplerConfig& cfg);

// Uniform choice over candidates(); deterministic per seed.
SamplingGrid sample_grid(std::uint64_t seed, const SamplerConfig& cfg);

// Uniform temporal selection (first frame at 0) + bilinear spatial resize to
// R x R (align-corners-true), then patchification.
TokenPool patchify(const VideoSample& video, const SamplingGrid& grid,
                   const SamplerConfig& cfg);

// Inverse rearrangement of patchify's features back to a (F,R,R,C) video.
Eigen::VectorXd unpatchify(const TokenPool& pool, const SamplerConfig& cfg);

// The resized video patchify operates on (exposed for round-trip checks).
Eigen::VectorXd resize_video(const VideoSample& video, const SamplingGrid& grid);

SamplingGrid make_grid(int frames, int resolution, const SamplerConfig& cfg);

}  // namespace flux
