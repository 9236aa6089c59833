#include "semfield/presets.hpp"

#include <cmath>

namespace semfield {

namespace {

bool close_to_any(double v, std::initializer_list<double> allowed) {
  for (double a : allowed)
    if (std::abs(v - a) < 1e-9) return true;
  return false;
}

}  // namespace

std::string ExperimentPreset::name() const {
  switch (kind) {
    case PresetKind::kSynthesis: return "synthesis";
    case PresetKind::kSparseFrames: return "sparse-frames";
    case PresetKind::kNoise: return "noise";
    case PresetKind::kSrDense: return "sr-dense";
    case PresetKind::kSrSparse: return "sr-sparse";
    case PresetKind::kPropagation: return "propagation";
  }
  return "?";
}

ExperimentPreset ExperimentPreset::parse(const std::string& text, bool allow_unsafe) {
  ExperimentPreset p;
  std::string name = text;
  std::optional<double> param;
  if (const auto colon = text.find(':'); colon != std::string::npos) {
    name = text.substr(0, colon);
    try {
      param = std::stod(text.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("preset parameter in '" + text + "' is not a number");
    }
  }

  auto require_param = [&](const char* what) {
    if (!param) throw ConfigError("preset '" + name + "' needs a parameter (" + what + ")");
    p.param = *param;
  };

  if (name == "synthesis") {
    if (param) throw ConfigError("preset 'synthesis' takes no parameter");
    p.kind = PresetKind::kSynthesis;
    return p;
  }
  if (name == "sparse-frames") {
    p.kind = PresetKind::kSparseFrames;
    require_param("keyframe fraction");
    if (!(p.param > 0) || p.param > 1)
      throw ConfigError("sparse-frames fraction must be in (0, 1]");
    if (!allow_unsafe && !close_to_any(p.param, {0.10}))
      throw ConfigError("sparse-frames fraction " + std::to_string(p.param) +
                        " is outside the supported set {0.10}; pass --unsafe to widen");
    return p;
  }
  if (name == "noise") {
    p.kind = PresetKind::kNoise;
    require_param("noise ratio");
    if (p.param < 0 || p.param > 1) throw ConfigError("noise ratio must be in [0, 1]");
    if (!allow_unsafe && !close_to_any(p.param, {0.5, 0.9}))
      throw ConfigError("noise ratio " + std::to_string(p.param) +
                        " is outside the supported set {0.5, 0.9}; pass --unsafe to widen");
    return p;
  }
  if (name == "sr-dense" || name == "sr-sparse") {
    p.kind = name == "sr-dense" ? PresetKind::kSrDense : PresetKind::kSrSparse;
    require_param("downscale factor");
    if (p.param < 2 || p.param != std::floor(p.param))
      throw ConfigError("downscale factor must be an integer >= 2");
    if (!allow_unsafe && !close_to_any(p.param, {8, 16}))
      throw ConfigError("downscale factor " + std::to_string(static_cast<int>(p.param)) +
                        " is outside the supported set {8, 16}; pass --unsafe to widen");
    return p;
  }
  if (name == "propagation") {
    p.kind = PresetKind::kPropagation;
    require_param("area fraction");
    if (!(p.param > 0) || p.param > 1)
      throw ConfigError("propagation area fraction must be in (0, 1]");
    if (!allow_unsafe && !close_to_any(p.param, {0.01, 0.05, 0.10}))
      throw ConfigError("propagation area " + std::to_string(p.param) +
                        " is outside the supported set {0.01, 0.05, 0.10}; pass --unsafe "
                        "to widen");
    return p;
  }
  throw ConfigError("unknown preset '" + name +
                    "' (expected synthesis, sparse-frames, noise, sr-dense, sr-sparse or "
                    "propagation)");
}

std::uint64_t frame_corruption_seed(std::uint64_t seed, PresetKind kind, int frame_index) {
  return hash_u64(seed, 0xC0- static_cast<std::uint64_t>(kind), frame_index);
}

PresetApplication apply_preset(const Dataset& data, const std::vector<int>& train_frames,
                               const ExperimentPreset& preset, std::uint64_t seed) {
  PresetApplication out;
  out.train_frames = train_frames;
  if (preset.kind == PresetKind::kSparseFrames)
    out.train_frames = select_keyframes(train_frames, preset.param, seed);

  out.train_labels.reserve(out.train_frames.size());
  for (int f : out.train_frames) {
    const SemanticImage& src = data.images[f];
    switch (preset.kind) {
      case PresetKind::kSynthesis:
      case PresetKind::kSparseFrames:
        out.train_labels.push_back(src);
        break;
      case PresetKind::kNoise:
        out.train_labels.push_back(corrupt_pixel_noise(
            src, preset.param, data.manifest.num_classes,
            frame_corruption_seed(seed, preset.kind, f)));
        break;
      case PresetKind::kSrDense:
        out.train_labels.push_back(downscale_dense(src, static_cast<int>(preset.param)));
        break;
      case PresetKind::kSrSparse:
        out.train_labels.push_back(downscale_sparse(src, static_cast<int>(preset.param)));
        break;
      case PresetKind::kPropagation:
        out.train_labels.push_back(region_mask_per_class(
            src, preset.param, frame_corruption_seed(seed, preset.kind, f)));
        break;
    }
  }
  return out;
}

RunProfile desk_profile() {
  RunProfile p;
  p.name = "desk";
  p.train.learning_rate = 5e-4;
  p.train.ray_batch = 512;
  p.train.iterations = 20000;
  p.train.n_coarse = 32;
  p.train.n_fine = 64;
  p.field.trunk_depth = 4;
  p.field.trunk_width = 64;
  p.field.skip_layer = 3;
  p.field.semantic_hidden_width = 64;
  p.field.encoding_levels = 6;
  p.downsample = 1;
  p.chunk = 4096;
  return p;
}

RunProfile paper_profile() {
  RunProfile p;
  p.name = "paper";
  p.train = TrainConfig{};  // 5e-4 / 1024 / 200k / 64 / 128
  p.field = FieldConfig{};  // depth 8, width 256, skip 5, hidden 128, L=10
  p.downsample = 2;         // 640x480 -> 320x240
  p.chunk = 4096;
  return p;
}

RunProfile profile_by_name(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "paper") return paper_profile();
  throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
}

}  // namespace semfield
