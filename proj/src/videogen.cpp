#include "flux/videogen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "flux/rng.hpp"

namespace flux {

namespace {

// saturated, mutually distant colors; distinct from the low-amplitude noise
constexpr double kPalette[8][3] = {
    {0.9, 0.2, 0.2}, {0.2, 0.8, 0.3}, {0.2, 0.3, 0.9}, {0.9, 0.8, 0.2},
    {0.8, 0.3, 0.8}, {0.3, 0.8, 0.8}, {0.95, 0.55, 0.2}, {0.85, 0.85, 0.85}};

struct Sprite {
  double x, y;    // top-left, continuous
  double vx, vy;  // pixels/frame
  int w, h;
  int color;
};

// direction classes: 0=up, 1=down, 2=left, 3=right, then diagonals
void class_direction(int cls, double& dx, double& dy) {
  switch (cls % 4) {
    case 0: dx = 0; dy = -1; break;
    case 1: dx = 0; dy = 1; break;
    case 2: dx = -1; dy = 0; break;
    default: dx = 1; dy = 0; break;
  }
}

int direction_class(double vx, double vy) {
  if (std::abs(vy) >= std::abs(vx)) return vy < 0 ? 0 : 1;
  return vx < 0 ? 2 : 3;
}

}  // namespace

void GenSpec::validate() const {
  if (frames < 1 || height < 1 || width < 1 || channels < 1)
    throw std::invalid_argument("gen: non-positive video dimensions");
  if (num_classes < 1 || num_classes > 8)
    throw std::invalid_argument("gen: num_classes must be in [1,8]");
  if (speed_min < 0 || speed_max < speed_min)
    throw std::invalid_argument("gen: invalid speed range");
  if (sprites_min > sprites_max || sprites_max < 0)
    throw std::invalid_argument("gen: invalid sprite count range");
  if (semantics == Semantics::kMotionDirection && sprites_min < 1)
    throw std::invalid_argument(
        "gen: motion-direction semantics with zero sprites (label undefined)");
  if (sprite_size_min < 1 || sprite_size_max < sprite_size_min ||
      sprite_size_max >= std::min(height, width))
    throw std::invalid_argument("gen: sprite sizes do not fit inside frame");
}

VideoSample gen_video(std::uint64_t seed, const GenSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(seed, "sprites"));
  Rng tex(derive_seed(seed, "texture"));

  const int cls = static_cast<int>(seed % static_cast<std::uint64_t>(spec.num_classes));
  const int n_sprites =
      spec.sprites_min +
      static_cast<int>(rng.uniform_int(
          static_cast<std::uint64_t>(spec.sprites_max - spec.sprites_min + 1)));

  std::vector<Sprite> sprites;
  for (int i = 0; i < n_sprites; ++i) {
    Sprite s;
    s.w = spec.sprite_size_min +
          static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
              spec.sprite_size_max - spec.sprite_size_min + 1)));
    s.h = spec.sprite_size_min +
          static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
              spec.sprite_size_max - spec.sprite_size_min + 1)));
    s.x = rng.uniform(0.0, static_cast<double>(spec.width - s.w));
    s.y = rng.uniform(0.0, static_cast<double>(spec.height - s.h));
    if (i == 0) {
      // the dominant sprite carries the class direction at the maximum speed
      double dx, dy;
      class_direction(cls, dx, dy);
      s.vx = dx * spec.speed_max;
      s.vy = dy * spec.speed_max;
      s.color = cls % 8;
    } else {
      // distractors: strictly slower, arbitrary direction
      double speed = rng.uniform(spec.speed_min, spec.speed_max) * 0.45;
      double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      s.vx = speed * std::cos(angle);
      s.vy = speed * std::sin(angle);
      s.color = (cls + 1 + i) % 8;
    }
    sprites.push_back(s);
  }

  VideoSample out;
  out.seed = seed;
  out.t = spec.frames;
  out.h = spec.height;
  out.w = spec.width;
  out.c = spec.channels;
  out.frames.resize(static_cast<Eigen::Index>(spec.frames) * spec.height *
                    spec.width * spec.channels);
  out.motion_mask.assign(
      static_cast<std::size_t>(spec.frames) * spec.height * spec.width, 0);

  // label from velocity of the dominant (fastest) sprite
  if (spec.semantics == GenSpec::Semantics::kMotionDirection) {
    out.label = direction_class(sprites[0].vx, sprites[0].vy);
  } else {
    out.label = cls;
  }

  const int C = spec.channels;
  double tint[3] = {0, 0, 0};
  if (spec.semantics == GenSpec::Semantics::kTexture) {
    for (int ci = 0; ci < 3; ++ci) tint[ci] = 0.25 * kPalette[cls % 8][ci];
  }

  for (int t = 0; t < spec.frames; ++t) {
    const Eigen::Index base =
        static_cast<Eigen::Index>(t) * spec.height * spec.width * C;
    // background: per-frame i.i.d. noise (plus class tint for texture labels)
    for (Eigen::Index i = 0;
         i < static_cast<Eigen::Index>(spec.height) * spec.width * C; ++i) {
      double v = tex.uniform() * spec.noise_amplitude + tint[(i % C) % 3];
      out.frames[base + i] = std::min(1.0, v);
    }
    // sprites, later ones on top
    for (const Sprite& s : sprites) {
      int x0 = static_cast<int>(std::lround(s.x));
      int y0 = static_cast<int>(std::lround(s.y));
      x0 = std::clamp(x0, 0, spec.width - s.w);
      y0 = std::clamp(y0, 0, spec.height - s.h);
      for (int yy = y0; yy < y0 + s.h; ++yy)
        for (int xx = x0; xx < x0 + s.w; ++xx) {
          for (int ci = 0; ci < C; ++ci)
            out.frames[base + (static_cast<Eigen::Index>(yy) * spec.width + xx) * C + ci] =
                kPalette[s.color][ci % 3];
          out.motion_mask[(static_cast<std::size_t>(t) * spec.height + yy) *
                              spec.width + xx] = 1;
        }
    }
    // advance with edge bouncing
    for (Sprite& s : sprites) {
      s.x += s.vx;
      s.y += s.vy;
      double xmax = static_cast<double>(spec.width - s.w);
      double ymax = static_cast<double>(spec.height - s.h);
      if (s.x < 0) { s.x = -s.x; s.vx = -s.vx; }
      if (s.x > xmax) { s.x = 2 * xmax - s.x; s.vx = -s.vx; }
      if (s.y < 0) { s.y = -s.y; s.vy = -s.vy; }
      if (s.y > ymax) { s.y = 2 * ymax - s.y; s.vy = -s.vy; }
    }
  }
  return out;
}

std::vector<VideoSample> gen_dataset(std::uint64_t seed, const GenSpec& spec,
                                     int count) {
  if (count <= 0) throw std::invalid_argument("gen_dataset: count must be > 0");
  std::vector<VideoSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out.push_back(gen_video(seed + static_cast<std::uint64_t>(i), spec));
  return out;
}

void export_dataset(const std::vector<VideoSample>& data, const GenSpec& spec,
                    const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["count"] = data.size();
  manifest["shape"] = {spec.frames, spec.height, spec.width, spec.channels};
  manifest["dtype"] = "float32_le";
  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    std::string name = "sample_" + std::to_string(i) + ".f32";
    std::ofstream f(fs::path(dir) / name, std::ios::binary);
    std::vector<float> buf(static_cast<std::size_t>(s.frames.size()));
    for (Eigen::Index j = 0; j < s.frames.size(); ++j)
      buf[static_cast<std::size_t>(j)] = static_cast<float>(s.frames[j]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    samples.push_back({{"file", name}, {"label", s.label}, {"seed", s.seed}});
  }
  manifest["samples"] = samples;
  std::ofstream mf(fs::path(dir) / "manifest.json");
  mf << manifest.dump(2) << "\n";
}

}  // namespace flux
