#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "semfield/data.hpp"

namespace semfield {

// Synthetic stand-in scenes: an enclosed axis-aligned room (floor, ceiling and
// walls carry background classes) voxelized together with a set of interior
// primitives, rendered by exact grid traversal. World frame is z-up with the
// floor at room_min.z.

struct ScenePrimitive {
  enum class Type { kBox, kSphere };
  Type type = Type::kBox;
  int class_id = 0;
  Eigen::Vector3d box_min = Eigen::Vector3d::Zero();  // boxes
  Eigen::Vector3d box_max = Eigen::Vector3d::Zero();
  Eigen::Vector3d center = Eigen::Vector3d::Zero();   // spheres
  double radius = 0;
};

struct CameraTrajectory {
  int count = 100;
  double orbit_radius = 1.6;
  Eigen::Vector3d look_at = Eigen::Vector3d::Zero();
  double height_center = 1.5;
  double height_amplitude = 0.0;
  int height_periods = 2;
  double pitch_amplitude = 0.0;  // vertical sweep of the look-at target
  int pitch_periods = 3;
};

struct SceneSpec {
  Eigen::Vector3d room_min = Eigen::Vector3d::Zero();
  Eigen::Vector3d room_max = Eigen::Vector3d::Zero();
  std::array<int, 3> resolution = {64, 64, 64};
  int num_classes = 0;
  int floor_class = 0, ceiling_class = 0;
  std::vector<int> wall_classes;  // one shared class or four (x-, x+, y-, y+)
  std::vector<ScenePrimitive> primitives;
  CameraTrajectory trajectory;
  int image_width = 80, image_height = 60;
  double fx = 58.0, fy = 58.0;
  double cx = -1, cy = -1;  // negative: image center
  double near = 0.1, far = 10.0;
  std::vector<std::array<std::uint8_t, 3>> palette;

  void validate() const;
  CameraIntrinsics intrinsics() const;

  static SceneSpec from_json_text(const std::string& text);
  static SceneSpec from_json_file(const std::filesystem::path& path);
};

/// The bundled default scene.
const std::string& default_scene_spec_json();

class VoxelGrid {
 public:
  static constexpr std::uint8_t kEmpty = 255;

  explicit VoxelGrid(const SceneSpec& spec);

  std::uint8_t at(int ix, int iy, int iz) const {
    return vox_[(static_cast<std::size_t>(iz) * n_[1] + iy) * n_[0] + ix];
  }

  bool contains(const Eigen::Vector3d& p) const {
    return (p.array() >= min_.array()).all() && (p.array() <= max_.array()).all();
  }

  /// Class of the first non-empty voxel along the ray (integer grid
  /// traversal). The origin must lie inside the room; the enclosing shell
  /// guarantees a hit.
  std::uint8_t trace(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const;

  const std::array<int, 3>& dims() const { return n_; }
  const Eigen::Vector3d& room_min() const { return min_; }
  const Eigen::Vector3d& room_max() const { return max_; }
  Eigen::Vector3d voxel_size() const { return vsize_; }

 private:
  std::array<int, 3> n_;
  Eigen::Vector3d min_, max_, vsize_;
  std::vector<std::uint8_t> vox_;
};

/// Orbit poses (camera-to-world) with optional height and pitch sweeps.
std::vector<Pose> trajectory_poses(const SceneSpec& spec);

SemanticImage oracle_render(const SceneSpec& spec, const VoxelGrid& grid,
                            const CameraIntrinsics& intr, const Pose& pose);
SemanticImage oracle_render(const SceneSpec& spec, const Pose& pose);

/// Renders the trajectory and writes label PNGs plus a manifest under out_dir.
/// Deterministic for a fixed (spec, seed); the seed is reserved for future
/// randomized trajectories and does not affect the current generator.
Dataset generate_synthetic(const SceneSpec& spec, std::uint64_t seed,
                           const std::filesystem::path& out_dir);

/// Pixel counts per class index over a set of label maps (void excluded).
std::vector<std::size_t> class_census(const std::vector<SemanticImage>& images,
                                      int num_classes);

}  // namespace semfield
