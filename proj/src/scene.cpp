#include "semfield/scene.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "semfield/png_io.hpp"

namespace semfield {

namespace {

Eigen::Vector3d vec3_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3)
    throw ConfigError(std::string(what) + " must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

void SceneSpec::validate() const {
  if (!((room_max.array() > room_min.array()).all()))
    throw ConfigError("room extents must satisfy min < max");
  for (int a = 0; a < 3; ++a)
    if (resolution[a] < 3)
      throw ConfigError("voxel resolution must be >= 3 per axis (shell plus interior)");
  if (num_classes < 2 || num_classes > 254)
    throw ConfigError("num_classes must be in [2, 254]");
  auto check_class = [&](int c, const char* what) {
    if (c < 0 || c >= num_classes)
      throw ConfigError(std::string(what) + " class " + std::to_string(c) +
                        " out of range [0, " + std::to_string(num_classes) + ")");
  };
  check_class(floor_class, "floor");
  check_class(ceiling_class, "ceiling");
  if (wall_classes.size() != 1 && wall_classes.size() != 4)
    throw ConfigError("walls must list one shared class or four (x-, x+, y-, y+)");
  for (int c : wall_classes) check_class(c, "wall");
  for (const auto& p : primitives) {
    check_class(p.class_id, "primitive");
    if (p.type == ScenePrimitive::Type::kBox) {
      if (!((p.box_max.array() > p.box_min.array()).all()))
        throw ConfigError("box primitive must satisfy min < max");
      if (!((p.box_min.array() >= room_min.array()).all() &&
            (p.box_max.array() <= room_max.array()).all()))
        throw ConfigError("box primitive lies outside the room");
    } else {
      if (!(p.radius > 0)) throw ConfigError("sphere radius must be > 0");
      if (!(((p.center.array() - p.radius) >= room_min.array()).all() &&
            ((p.center.array() + p.radius) <= room_max.array()).all()))
        throw ConfigError("sphere primitive lies outside the room");
    }
  }
  if (trajectory.count < 1) throw ConfigError("camera count must be >= 1");
  if (!(trajectory.orbit_radius > 0)) throw ConfigError("orbit radius must be > 0");
  if (image_width < 1 || image_height < 1) throw ConfigError("image size must be >= 1");
  if (!(fx > 0) || !(fy > 0)) throw ConfigError("focal lengths must be > 0");
  if (!(near > 0) || !(far > near)) throw ConfigError("require 0 < near < far");
  if (!palette.empty() && static_cast<int>(palette.size()) != num_classes)
    throw ConfigError("palette must list one color per class");
}

CameraIntrinsics SceneSpec::intrinsics() const {
  CameraIntrinsics intr;
  intr.width = image_width;
  intr.height = image_height;
  intr.fx = fx;
  intr.fy = fy;
  intr.cx = cx >= 0 ? cx : image_width / 2.0;
  intr.cy = cy >= 0 ? cy : image_height / 2.0;
  return intr;
}

SceneSpec SceneSpec::from_json_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("scene spec is not valid JSON");
  SceneSpec s;
  try {
    s.room_min = vec3_from_json(j.at("room").at("min"), "room.min");
    s.room_max = vec3_from_json(j.at("room").at("max"), "room.max");
    const auto& res = j.at("resolution");
    for (int a = 0; a < 3; ++a) s.resolution[a] = res.at(a).get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    const auto& bg = j.at("background");
    s.floor_class = bg.at("floor").get<int>();
    s.ceiling_class = bg.at("ceiling").get<int>();
    if (bg.at("walls").is_array())
      s.wall_classes = bg.at("walls").get<std::vector<int>>();
    else
      s.wall_classes = {bg.at("walls").get<int>()};
    for (const auto& pj : j.value("primitives", nlohmann::json::array())) {
      ScenePrimitive p;
      p.class_id = pj.at("class").get<int>();
      const std::string type = pj.at("type").get<std::string>();
      if (type == "box") {
        p.type = ScenePrimitive::Type::kBox;
        p.box_min = vec3_from_json(pj.at("min"), "box.min");
        p.box_max = vec3_from_json(pj.at("max"), "box.max");
      } else if (type == "sphere") {
        p.type = ScenePrimitive::Type::kSphere;
        p.center = vec3_from_json(pj.at("center"), "sphere.center");
        p.radius = pj.at("radius").get<double>();
      } else {
        throw ConfigError("unknown primitive type '" + type + "'");
      }
      s.primitives.push_back(p);
    }
    const auto& cam = j.at("camera");
    s.trajectory.count = cam.at("count").get<int>();
    s.trajectory.orbit_radius = cam.at("orbit_radius").get<double>();
    s.trajectory.look_at = vec3_from_json(cam.at("look_at"), "camera.look_at");
    s.trajectory.height_center = cam.value("height_center", s.trajectory.look_at.z());
    s.trajectory.height_amplitude = cam.value("height_amplitude", 0.0);
    s.trajectory.height_periods = cam.value("height_periods", 2);
    s.trajectory.pitch_amplitude = cam.value("pitch_amplitude", 0.0);
    s.trajectory.pitch_periods = cam.value("pitch_periods", 3);
    const auto& img = j.at("image");
    s.image_width = img.at("width").get<int>();
    s.image_height = img.at("height").get<int>();
    s.fx = img.at("fx").get<double>();
    s.fy = img.at("fy").get<double>();
    s.cx = img.value("cx", -1.0);
    s.cy = img.value("cy", -1.0);
    s.near = j.value("near", 0.1);
    s.far = j.value("far", 10.0);
    for (const auto& c : j.value("palette", nlohmann::json::array()))
      s.palette.push_back({c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(),
                           c.at(2).get<std::uint8_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed scene spec: ") + e.what());
  }
  s.validate();
  return s;
}

SceneSpec SceneSpec::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scene spec: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

const std::string& default_scene_spec_json() {
  static const std::string spec = R"json({
  "room": {"min": [0.0, 0.0, 0.0], "max": [5.0, 5.0, 3.0]},
  "resolution": [96, 96, 64],
  "num_classes": 13,
  "background": {"floor": 0, "ceiling": 1, "walls": [2, 3, 4, 5]},
  "primitives": [
    {"type": "box",    "class": 6,  "min": [2.2, 2.2, 0.0], "max": [2.8, 2.8, 0.75]},
    {"type": "box",    "class": 7,  "min": [0.3, 0.3, 0.0], "max": [1.2, 1.2, 1.1]},
    {"type": "box",    "class": 8,  "min": [3.8, 0.4, 0.0], "max": [4.7, 1.3, 0.9]},
    {"type": "sphere", "class": 9,  "center": [1.0, 4.0, 0.5],  "radius": 0.5},
    {"type": "sphere", "class": 10, "center": [4.2, 4.2, 0.95], "radius": 0.45},
    {"type": "box",    "class": 11, "min": [1.6, 4.35, 0.0], "max": [2.3, 4.9, 1.6]},
    {"type": "sphere", "class": 12, "center": [2.5, 0.45, 2.5], "radius": 0.32}
  ],
  "camera": {
    "count": 100, "orbit_radius": 1.6, "look_at": [2.5, 2.5, 1.3],
    "height_center": 1.5, "height_amplitude": 0.65, "height_periods": 2,
    "pitch_amplitude": 1.0, "pitch_periods": 3
  },
  "image": {"width": 80, "height": 60, "fx": 58.0, "fy": 58.0},
  "near": 0.1, "far": 10.0,
  "palette": [
    [128, 128, 128], [220, 220, 220], [180, 50, 50], [50, 180, 50],
    [50, 50, 180], [180, 180, 50], [160, 80, 200], [255, 140, 0],
    [0, 160, 160], [200, 60, 120], [90, 200, 60], [70, 110, 180],
    [240, 220, 90]
  ]
})json";
  return spec;
}

// ---------------------------------------------------------------------------

VoxelGrid::VoxelGrid(const SceneSpec& spec) {
  spec.validate();
  n_ = spec.resolution;
  min_ = spec.room_min;
  max_ = spec.room_max;
  vsize_ = (max_ - min_).cwiseQuotient(
      Eigen::Vector3d(n_[0], n_[1], n_[2]));
  vox_.assign(static_cast<std::size_t>(n_[0]) * n_[1] * n_[2], kEmpty);

  auto wall = [&](int face) {
    return spec.wall_classes.size() == 1 ? spec.wall_classes[0] : spec.wall_classes[face];
  };
  auto set = [&](int ix, int iy, int iz, std::uint8_t c) {
    vox_[(static_cast<std::size_t>(iz) * n_[1] + iy) * n_[0] + ix] = c;
  };

  // enclosing shell; the z layers take precedence at edges
  for (int iz = 0; iz < n_[2]; ++iz) {
    for (int iy = 0; iy < n_[1]; ++iy) {
      for (int ix = 0; ix < n_[0]; ++ix) {
        if (iz == 0)
          set(ix, iy, iz, static_cast<std::uint8_t>(spec.floor_class));
        else if (iz == n_[2] - 1)
          set(ix, iy, iz, static_cast<std::uint8_t>(spec.ceiling_class));
        else if (ix == 0)
          set(ix, iy, iz, static_cast<std::uint8_t>(wall(0)));
        else if (ix == n_[0] - 1)
          set(ix, iy, iz, static_cast<std::uint8_t>(wall(1)));
        else if (iy == 0)
          set(ix, iy, iz, static_cast<std::uint8_t>(wall(2)));
        else if (iy == n_[1] - 1)
          set(ix, iy, iz, static_cast<std::uint8_t>(wall(3)));
      }
    }
  }

  // primitives paint over the shell and each other in list order
  for (const auto& p : spec.primitives) {
    for (int iz = 0; iz < n_[2]; ++iz) {
      for (int iy = 0; iy < n_[1]; ++iy) {
        for (int ix = 0; ix < n_[0]; ++ix) {
          const Eigen::Vector3d c =
              min_ + Eigen::Vector3d((ix + 0.5) * vsize_.x(), (iy + 0.5) * vsize_.y(),
                                     (iz + 0.5) * vsize_.z());
          bool inside = false;
          if (p.type == ScenePrimitive::Type::kBox)
            inside = (c.array() >= p.box_min.array()).all() &&
                     (c.array() <= p.box_max.array()).all();
          else
            inside = (c - p.center).squaredNorm() <= p.radius * p.radius;
          if (inside) set(ix, iy, iz, static_cast<std::uint8_t>(p.class_id));
        }
      }
    }
  }
}

std::uint8_t VoxelGrid::trace(const Eigen::Vector3d& origin,
                              const Eigen::Vector3d& dir) const {
  if (!contains(origin)) throw InvalidInput("oracle ray origin outside the room");

  int idx[3];
  int step[3];
  double tmax[3], tdelta[3];
  for (int a = 0; a < 3; ++a) {
    idx[a] = std::clamp(static_cast<int>(std::floor((origin(a) - min_(a)) / vsize_(a))), 0,
                        n_[a] - 1);
    if (dir(a) > 1e-15) {
      step[a] = 1;
      tmax[a] = (min_(a) + (idx[a] + 1) * vsize_(a) - origin(a)) / dir(a);
      tdelta[a] = vsize_(a) / dir(a);
    } else if (dir(a) < -1e-15) {
      step[a] = -1;
      tmax[a] = (min_(a) + idx[a] * vsize_(a) - origin(a)) / dir(a);
      tdelta[a] = -vsize_(a) / dir(a);
    } else {
      step[a] = 0;
      tmax[a] = tdelta[a] = std::numeric_limits<double>::infinity();
    }
  }

  const long max_steps = static_cast<long>(n_[0]) + n_[1] + n_[2] + 3;
  for (long it = 0; it < max_steps; ++it) {
    const std::uint8_t c = at(idx[0], idx[1], idx[2]);
    if (c != kEmpty) return c;
    const int a = (tmax[0] <= tmax[1] && tmax[0] <= tmax[2]) ? 0
                  : (tmax[1] <= tmax[2])                     ? 1
                                                             : 2;
    idx[a] += step[a];
    if (idx[a] < 0 || idx[a] >= n_[a])
      throw std::logic_error("ray left the grid without a hit; room is not enclosed");
    tmax[a] += tdelta[a];
  }
  throw std::logic_error("grid traversal exceeded its step bound");
}

// ---------------------------------------------------------------------------

std::vector<Pose> trajectory_poses(const SceneSpec& spec) {
  const CameraTrajectory& tr = spec.trajectory;
  std::vector<Pose> poses;
  poses.reserve(tr.count);
  for (int i = 0; i < tr.count; ++i) {
    const double phase = static_cast<double>(i) / tr.count;
    const double theta = 2.0 * M_PI * phase;
    Eigen::Vector3d eye(tr.look_at.x() + tr.orbit_radius * std::cos(theta),
                        tr.look_at.y() + tr.orbit_radius * std::sin(theta),
                        tr.height_center +
                            tr.height_amplitude *
                                std::sin(2.0 * M_PI * tr.height_periods * phase));
    Eigen::Vector3d target = tr.look_at;
    target.z() += tr.pitch_amplitude * std::sin(2.0 * M_PI * tr.pitch_periods * phase + 0.7);

    Eigen::Vector3d forward = (target - eye).normalized();
    Eigen::Vector3d up(0, 0, 1);
    if (forward.cross(up).norm() < 1e-9) up = Eigen::Vector3d(1, 0, 0);
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right).normalized();

    Pose p;
    p.rotation.col(0) = right;
    p.rotation.col(1) = down;
    p.rotation.col(2) = forward;
    p.translation = eye;
    poses.push_back(p);
  }
  return poses;
}

SemanticImage oracle_render(const SceneSpec& spec, const VoxelGrid& grid,
                            const CameraIntrinsics& intr, const Pose& pose) {
  SemanticImage img(intr.width, intr.height);
  for (int py = 0; py < intr.height; ++py) {
    for (int px = 0; px < intr.width; ++px) {
      const Ray<double> ray =
          generate_ray<double>(intr, pose, px, py, spec.near, spec.far);
      img.at(px, py) = grid.trace(ray.origin, ray.direction);
    }
  }
  return img;
}

SemanticImage oracle_render(const SceneSpec& spec, const Pose& pose) {
  const VoxelGrid grid(spec);
  return oracle_render(spec, grid, spec.intrinsics(), pose);
}

Dataset generate_synthetic(const SceneSpec& spec, std::uint64_t /*seed*/,
                           const std::filesystem::path& out_dir) {
  spec.validate();
  const VoxelGrid grid(spec);
  const CameraIntrinsics intr = spec.intrinsics();
  const std::vector<Pose> poses = trajectory_poses(spec);
  for (const auto& p : poses)
    if (!grid.contains(p.translation))
      throw ConfigError("camera trajectory leaves the room at position (" +
                        std::to_string(p.translation.x()) + ", " +
                        std::to_string(p.translation.y()) + ", " +
                        std::to_string(p.translation.z()) + ")");

  std::filesystem::create_directories(out_dir);
  Dataset ds;
  ds.root = out_dir;
  DatasetManifest& m = ds.manifest;
  m.width = intr.width;
  m.height = intr.height;
  m.fx = intr.fx;
  m.fy = intr.fy;
  m.cx = intr.cx;
  m.cy = intr.cy;
  m.near = spec.near;
  m.far = spec.far;
  m.num_classes = spec.num_classes;
  m.palette = spec.palette;

  for (std::size_t i = 0; i < poses.size(); ++i) {
    SemanticImage img = oracle_render(spec, grid, intr, poses[i]);
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%06zu.png", i);
    write_gray8_png(out_dir / name, img.width, img.height, img.labels.data());
    m.frames.push_back({name, poses[i]});
    ds.images.push_back(std::move(img));
  }
  save_manifest(out_dir / "manifest.json", m);
  return ds;
}

std::vector<std::size_t> class_census(const std::vector<SemanticImage>& images,
                                      int num_classes) {
  std::vector<std::size_t> census(num_classes, 0);
  for (const auto& img : images)
    for (auto v : img.labels)
      if (v != SemanticImage::kVoid && v < num_classes) ++census[v];
  return census;
}

}  // namespace semfield
