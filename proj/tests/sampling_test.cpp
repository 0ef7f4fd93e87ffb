#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "flux/rng.hpp"
#include "flux/sampling.hpp"

using namespace flux;

namespace {

SamplerConfig default_lattice() {
  SamplerConfig c;
  c.f_min = 4;
  c.f_max = 24;
  c.t_step = 2;
  c.r_min = 168;
  c.r_max = 252;
  c.r_step = 28;
  c.pool_min = 2048;
  c.pool_max = 4096;
  return c;
}

VideoSample random_video(std::uint64_t seed, int t, int h, int w, int c) {
  VideoSample v;
  v.t = t;
  v.h = h;
  v.w = w;
  v.c = c;
  v.frames.resize(static_cast<Eigen::Index>(t) * h * w * c);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < v.frames.size(); ++i)
    v.frames[i] = rng.uniform();
  v.motion_mask.assign(static_cast<std::size_t>(t) * h * w, 0);
  return v;
}

}  // namespace

TEST_CASE("candidate lattice includes (8,224) and excludes (4,168)") {
  auto cands = candidates(default_lattice());
  bool has_8_224 = false, has_4_168 = false;
  for (const auto& g : cands) {
    if (g.frames == 8 && g.resolution == 224) {
      has_8_224 = true;
      CHECK(g.pool() == 2048);
    }
    if (g.frames == 4 && g.resolution == 168) has_4_168 = true;
  }
  CHECK(has_8_224);
  CHECK_FALSE(has_4_168);
}

TEST_CASE("degenerate range yields exactly one candidate") {
  SamplerConfig c = default_lattice();
  c.f_min = c.f_max = 8;
  c.r_min = c.r_max = 224;
  c.pool_min = 0;
  c.pool_max = 1u << 30;
  auto cands = candidates(c);
  REQUIRE(cands.size() == 1);
  CHECK(cands[0].pool() == 2048);
  for (std::uint64_t s = 0; s < 16; ++s)
    CHECK(sample_grid(s, c).frames == 8);
}

TEST_CASE("candidate count matches brute-force lattice enumeration") {
  SamplerConfig c = default_lattice();
  int expected = 0;
  for (int f = c.f_min; f <= c.f_max; f += c.t_step)
    for (int r = c.r_min; r <= c.r_max; r += c.r_step) {
      std::int64_t pool = static_cast<std::int64_t>(f / c.patch_t) *
                          (r / c.patch_h) * (r / c.patch_w);
      if (pool >= c.pool_min && pool <= c.pool_max) ++expected;
    }
  CHECK(candidates(c).size() == static_cast<std::size_t>(expected));
  // ordering: F ascending then R ascending
  auto cands = candidates(c);
  for (std::size_t i = 1; i < cands.size(); ++i) {
    bool ordered = cands[i].frames > cands[i - 1].frames ||
                   (cands[i].frames == cands[i - 1].frames &&
                    cands[i].resolution > cands[i - 1].resolution);
    CHECK(ordered);
  }
}

TEST_CASE("sampled pools always respect the thresholds") {
  SamplerConfig c = default_lattice();
  for (std::uint64_t s = 0; s < 500; ++s) {
    auto g = sample_grid(s, c);
    CHECK(g.pool() >= 2048);
    CHECK(g.pool() <= 4096);
  }
  CHECK(sample_grid(42, c).frames == sample_grid(42, c).frames);
}

TEST_CASE("sample_grid is empirically uniform over candidates") {
  SamplerConfig c = default_lattice();
  auto cands = candidates(c);
  std::map<std::pair<int, int>, int> hits;
  const int n = 10000;
  for (int s = 0; s < n; ++s) {
    auto g = sample_grid(static_cast<std::uint64_t>(s), c);
    hits[{g.frames, g.resolution}]++;
  }
  const double p = 1.0 / static_cast<double>(cands.size());
  const double sigma = std::sqrt(n * p * (1 - p));
  for (const auto& g : cands) {
    double dev = std::abs(hits[{g.frames, g.resolution}] - n * p);
    CHECK(dev <= 3.0 * sigma);
  }
}

TEST_CASE("tiny patchify enumerates coords row-major") {
  SamplerConfig c;
  c.f_min = c.f_max = 2;
  c.t_step = 1;
  c.r_min = c.r_max = 28;
  c.r_step = 1;
  c.pool_min = 0;
  c.pool_max = 100;
  VideoSample v = random_video(1, 2, 28, 28, 3);
  SamplingGrid g = make_grid(2, 28, c);
  TokenPool pool = patchify(v, g, c);
  REQUIRE(pool.coords.size() == 8);
  std::size_t i = 0;
  for (int t = 0; t < 2; ++t)
    for (int h = 0; h < 2; ++h)
      for (int w = 0; w < 2; ++w) {
        CHECK(pool.coords[i] == std::array<int, 3>{t, h, w});
        ++i;
      }
}

TEST_CASE("constant video gives identical feature rows") {
  SamplerConfig c;
  c.f_min = c.f_max = 2;
  c.t_step = 1;
  c.r_min = c.r_max = 28;
  c.r_step = 1;
  c.pool_min = 0;
  c.pool_max = 100;
  VideoSample v = random_video(1, 4, 40, 40, 3);
  v.frames.setConstant(0.37);
  TokenPool pool = patchify(v, make_grid(2, 28, c), c);
  for (Eigen::Index r = 1; r < pool.features.rows(); ++r)
    CHECK(pool.features.row(r) == pool.features.row(0));
}

TEST_CASE("patchify round-trips to the resized video bit-exactly") {
  SamplerConfig c;
  c.f_min = 2;
  c.f_max = 4;
  c.t_step = 2;
  c.r_min = 28;
  c.r_max = 56;
  c.r_step = 28;
  c.pool_min = 0;
  c.pool_max = 10000;
  VideoSample v = random_video(77, 6, 50, 50, 3);
  SamplingGrid g = make_grid(4, 56, c);
  TokenPool pool = patchify(v, g, c);
  Eigen::VectorXd resized = resize_video(v, g);
  Eigen::VectorXd rebuilt = unpatchify(pool, c);
  REQUIRE(rebuilt.size() == resized.size());
  for (Eigen::Index i = 0; i < resized.size(); ++i)
    CHECK(rebuilt[i] == resized[i]);
  // energy preservation
  CHECK(std::abs(pool.features.squaredNorm() - resized.squaredNorm()) < 1e-9);
}

TEST_CASE("patchify rejects videos shorter than the frame count") {
  SamplerConfig c;
  c.f_min = c.f_max = 8;
  c.t_step = 1;
  c.r_min = c.r_max = 28;
  c.r_step = 1;
  c.pool_min = 0;
  c.pool_max = 1000;
  VideoSample v = random_video(5, 4, 28, 28, 3);
  CHECK_THROWS_AS(patchify(v, make_grid(8, 28, c), c), std::invalid_argument);
}

TEST_CASE("config validation rejects bad lattices") {
  SamplerConfig c = default_lattice();
  c.r_min = 170;  // not divisible by the patch size
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = default_lattice();
  c.pool_min = 100000;  // no candidate fits
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
