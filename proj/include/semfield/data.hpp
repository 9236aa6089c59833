#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "semfield/render.hpp"

namespace semfield {

/// Integer label map; 255 is the reserved void code for unlabeled pixels.
struct SemanticImage {
  static constexpr std::uint8_t kVoid = 255;

  int width = 0, height = 0;
  std::vector<std::uint8_t> labels;  // row-major

  SemanticImage() = default;
  SemanticImage(int w, int h, std::uint8_t fill = kVoid)
      : width(w), height(h), labels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t at(int x, int y) const {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t& at(int x, int y) {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
  std::size_t pixel_count() const { return labels.size(); }

  std::size_t count_non_void() const {
    std::size_t n = 0;
    for (auto v : labels) n += (v != kVoid);
    return n;
  }
};

struct FrameInfo {
  std::string file;  // label PNG path relative to the manifest
  Pose pose;         // camera-to-world, x-right y-down z-forward
};

struct DatasetManifest {
  int version = 1;
  int width = 0, height = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  double near = 0, far = 0;
  int num_classes = 0;
  std::vector<std::array<std::uint8_t, 3>> palette;  // optional, visualization only
  std::vector<FrameInfo> frames;

  CameraIntrinsics intrinsics() const { return {width, height, fx, fy, cx, cy}; }
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<SemanticImage> images;  // parallel to manifest.frames
  std::filesystem::path root;
};

struct LoadOptions {
  int downsample = 1;            // integer nearest-neighbor subsampling factor
  std::map<int, int> remap;      // label remap hook applied on load (old -> new)
};

Dataset load_dataset(const std::filesystem::path& manifest_path, const LoadOptions& = {});
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Frame split: training frames are indices 0, 5, 10, ...; test frames start
/// from the second frame: 1, 6, 11, ...
std::pair<std::vector<int>, std::vector<int>> split_train_test(int n_frames);

/// Evenly spaced subset of ceil(fraction * n) frames. Deterministic; the seed
/// is reserved for future sampling modes and unused by the even selection.
std::vector<int> select_keyframes(const std::vector<int>& train_indices, double fraction,
                                  std::uint64_t seed);

/// Replaces exactly round(ratio * non-void count) pixels, selected without
/// replacement, with a uniformly random different class. Void pixels are
/// never touched.
SemanticImage corrupt_pixel_noise(const SemanticImage& img, double ratio, int num_classes,
                                  std::uint64_t seed);

/// Subsamples at (x*factor, y*factor) grid points and scales back to full
/// size by nearest neighbor; output dimensions are unchanged and every pixel
/// stays supervised.
SemanticImage downscale_dense(const SemanticImage& img, int factor);

/// Keeps only pixels with x % factor == 0 and y % factor == 0; everything
/// else becomes void.
SemanticImage downscale_sparse(const SemanticImage& img, int factor);

/// Per class present in the image, grows a 4-connected region from a random
/// seed pixel until max(1, round(area_fraction * class count)) pixels are
/// retained (reseeding in untouched components when one is exhausted); all
/// unselected pixels become void.
SemanticImage region_mask_per_class(const SemanticImage& img, double area_fraction,
                                    std::uint64_t seed);

}  // namespace semfield
