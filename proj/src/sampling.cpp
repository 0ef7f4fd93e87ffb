#include "flux/sampling.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "flux/rng.hpp"

namespace flux {

void SamplerConfig::validate() const {
  if (f_min < 1 || f_min > f_max || t_step < 1)
    throw std::invalid_argument("sampler: invalid frame-count range");
  if (r_min < 1 || r_min > r_max || r_step < 1)
    throw std::invalid_argument("sampler: invalid resolution range");
  if (pool_min > pool_max)
    throw std::invalid_argument("sampler: pool_min > pool_max");
  if (patch_t < 1 || patch_h < 1 || patch_w < 1)
    throw std::invalid_argument("sampler: invalid patch dims");
  for (int f = f_min; f <= f_max; f += t_step)
    if (f % patch_t != 0)
      throw std::invalid_argument("sampler: frame count " + std::to_string(f) +
                                  " not divisible by patch_t " +
                                  std::to_string(patch_t));
  for (int r = r_min; r <= r_max; r += r_step)
    if (r % patch_h != 0 || r % patch_w != 0)
      throw std::invalid_argument("sampler: resolution " + std::to_string(r) +
                                  " not divisible by patch size");
  if (candidates(*this).empty())
    throw std::invalid_argument(
        "sampler: no (F,R) candidate has pool inside the threshold");
}

SamplingGrid make_grid(int frames, int resolution, const SamplerConfig& cfg) {
  SamplingGrid g;
  g.frames = frames;
  g.resolution = resolution;
  g.gt = frames / cfg.patch_t;
  g.gh = resolution / cfg.patch_h;
  g.gw = resolution / cfg.patch_w;
  return g;
}

std::vector<SamplingGrid> candidates(const SamplerConfig& cfg) {
  std::vector<SamplingGrid> out;
  for (int f = cfg.f_min; f <= cfg.f_max; f += cfg.t_step)
    for (int r = cfg.r_min; r <= cfg.r_max; r += cfg.r_step) {
      SamplingGrid g = make_grid(f, r, cfg);
      std::int64_t p = g.pool();
      if (p >= cfg.pool_min && p <= cfg.pool_max) out.push_back(g);
    }
  return out;
}

SamplingGrid sample_grid(std::uint64_t seed, const SamplerConfig& cfg) {
  auto cand = candidates(cfg);
  if (cand.empty())
    throw std::invalid_argument("sample_grid: empty candidate set");
  Rng rng(derive_seed(seed, "flexi-grid"));
  return cand[rng.uniform_int(cand.size())];
}

Eigen::VectorXd resize_video(const VideoSample& video,
                             const SamplingGrid& grid) {
  const int F = grid.frames, R = grid.resolution, C = video.c;
  if (video.t < F)
    throw std::invalid_argument("patchify: video has " +
                                std::to_string(video.t) +
                                " frames, grid needs " + std::to_string(F));
  Eigen::VectorXd out(static_cast<Eigen::Index>(F) * R * R * C);
  for (int fi = 0; fi < F; ++fi) {
    int src_t = F > 1 ? static_cast<int>(std::lround(
                            static_cast<double>(fi) * (video.t - 1) / (F - 1)))
                      : 0;
    // bilinear, align-corners-true
    for (int y = 0; y < R; ++y) {
      double sy = R > 1 ? static_cast<double>(y) * (video.h - 1) / (R - 1) : 0;
      int y0 = static_cast<int>(std::floor(sy));
      int y1 = std::min(y0 + 1, video.h - 1);
      double fy = sy - y0;
      for (int x = 0; x < R; ++x) {
        double sx = R > 1 ? static_cast<double>(x) * (video.w - 1) / (R - 1) : 0;
        int x0 = static_cast<int>(std::floor(sx));
        int x1 = std::min(x0 + 1, video.w - 1);
        double fx = sx - x0;
        for (int ci = 0; ci < C; ++ci) {
          double v = (1 - fy) * ((1 - fx) * video.pixel(src_t, y0, x0, ci) +
                                 fx * video.pixel(src_t, y0, x1, ci)) +
                     fy * ((1 - fx) * video.pixel(src_t, y1, x0, ci) +
                           fx * video.pixel(src_t, y1, x1, ci));
          out[((static_cast<Eigen::Index>(fi) * R + y) * R + x) * C + ci] = v;
        }
      }
    }
  }
  return out;
}

TokenPool patchify(const VideoSample& video, const SamplingGrid& grid,
                   const SamplerConfig& cfg) {
  const int C = video.c;
  Eigen::VectorXd resized = resize_video(video, grid);
  const int R = grid.resolution;
  const int pt = cfg.patch_t, ph = cfg.patch_h, pw = cfg.patch_w;
  const Eigen::Index c_patch = static_cast<Eigen::Index>(pt) * ph * pw * C;

  TokenPool pool;
  pool.grid = grid;
  pool.channels = C;
  const Eigen::Index P = grid.pool();
  pool.features.resize(P, c_patch);
  pool.coords.resize(static_cast<std::size_t>(P));

  Eigen::Index row = 0;
  for (int t = 0; t < grid.gt; ++t)
    for (int h = 0; h < grid.gh; ++h)
      for (int w = 0; w < grid.gw; ++w, ++row) {
        pool.coords[static_cast<std::size_t>(row)] = {t, h, w};
        Eigen::Index col = 0;
        for (int dt = 0; dt < pt; ++dt)
          for (int dh = 0; dh < ph; ++dh)
            for (int dw = 0; dw < pw; ++dw)
              for (int ci = 0; ci < C; ++ci, ++col)
                pool.features(row, col) =
                    resized[((static_cast<Eigen::Index>(t * pt + dt) * R +
                              (h * ph + dh)) * R + (w * pw + dw)) * C + ci];
      }
  return pool;
}

Eigen::VectorXd unpatchify(const TokenPool& pool, const SamplerConfig& cfg) {
  const SamplingGrid& grid = pool.grid;
  const int C = pool.channels, R = grid.resolution;
  const int pt = cfg.patch_t, ph = cfg.patch_h, pw = cfg.patch_w;
  Eigen::VectorXd out(static_cast<Eigen::Index>(grid.frames) * R * R * C);
  for (std::size_t i = 0; i < pool.coords.size(); ++i) {
    const auto& [t, h, w] = pool.coords[i];
    Eigen::Index col = 0;
    for (int dt = 0; dt < pt; ++dt)
      for (int dh = 0; dh < ph; ++dh)
        for (int dw = 0; dw < pw; ++dw)
          for (int ci = 0; ci < C; ++ci, ++col)
            out[((static_cast<Eigen::Index>(t * pt + dt) * R + (h * ph + dh)) *
                     R + (w * pw + dw)) * C + ci] =
                pool.features(static_cast<Eigen::Index>(i), col);
  }
  return out;
}

}  // namespace flux
