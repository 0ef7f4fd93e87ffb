#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace flux {

// Synthetic video spec. Sprites are axis-aligned rectangles with distinct
// constant colors bouncing off frame edges over an i.i.d. noise background.
struct GenSpec {
  enum class Semantics { kMotionDirection, kTexture };

  int num_classes = 4;
  int frames = 16;
  int height = 56;
  int width = 56;
  int channels = 3;
  int sprites_min = 1;
  int sprites_max = 3;
  int sprite_size_min = 8;
  int sprite_size_max = 14;
  double speed_min = 1.0;   // pixels/frame
  double speed_max = 4.0;
  double noise_amplitude = 0.1;
  Semantics semantics = Semantics::kMotionDirection;

  void validate() const;
};

struct VideoSample {
  // row-major (T,H,W,C), values in [0,1]
  Eigen::VectorXd frames;
  // row-major (T,H,W); true on pixels belonging to moving sprites
  std::vector<std::uint8_t> motion_mask;
  int label = 0;
  std::uint64_t seed = 0;
  int t = 0, h = 0, w = 0, c = 0;

  double pixel(int ti, int hi, int wi, int ci) const {
    return frames[((static_cast<Eigen::Index>(ti) * h + hi) * w + wi) * c + ci];
  }
  bool moving(int ti, int hi, int wi) const {
    return motion_mask[(static_cast<std::size_t>(ti) * h + hi) * w + wi] != 0;
  }
};

// Deterministic: identical (seed, spec) yields bit-identical samples.
// Motion-direction labels depend only on sprite velocity; the texture
// stream is seeded independently.
VideoSample gen_video(std::uint64_t seed, const GenSpec& spec);

// Per-sample seeds are seed + index; class distribution uniform within +-1.
std::vector<VideoSample> gen_dataset(std::uint64_t seed, const GenSpec& spec,
                                     int count);

// Raw little-endian float32 arrays plus a JSON manifest.
void export_dataset(const std::vector<VideoSample>& data, const GenSpec& spec,
                    const std::string& dir);

}  // namespace flux
