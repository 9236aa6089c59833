#pragma once

#include <optional>
#include <string>

#include "semfield/data.hpp"
#include "semfield/train.hpp"

namespace semfield {

// Training-split corruption presets. The evaluation split is never corrupted;
// scoring always runs against clean ground truth.

enum class PresetKind { kSynthesis, kSparseFrames, kNoise, kSrDense, kSrSparse, kPropagation };

struct ExperimentPreset {
  PresetKind kind = PresetKind::kSynthesis;
  double param = 0;

  std::string name() const;

  /// Parses "name" or "name:param" (e.g. "noise:0.9", "sr-sparse:8").
  /// Parameters outside the supported sets (noise {0.5, 0.9}, factors {8, 16},
  /// areas {0.01, 0.05, 0.1}, frame fraction {0.1}) are rejected unless
  /// allow_unsafe widens them to basic range checks.
  static ExperimentPreset parse(const std::string& text, bool allow_unsafe = false);
};

/// Seed stream for corrupting one frame; shared by `train` and `corrupt` so a
/// materialized corrupted dataset matches what training consumed.
std::uint64_t frame_corruption_seed(std::uint64_t seed, PresetKind kind, int frame_index);

struct PresetApplication {
  std::vector<int> train_frames;             // possibly a keyframe subset
  std::vector<SemanticImage> train_labels;   // supervision labels, parallel
};

PresetApplication apply_preset(const Dataset& data, const std::vector<int>& train_frames,
                               const ExperimentPreset& preset, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Run profiles: bundles of training/field defaults.

struct RunProfile {
  std::string name;
  TrainConfig train;
  FieldConfig field;   // num_classes filled from the dataset at run time
  int downsample = 1;  // applied when loading the dataset
  int chunk = 4096;    // evaluation slab size
};

/// Workstation-scale defaults: 20k iterations, ray batch 512, 32/64 samples,
/// and a reduced network sized for CPU training on the bundled 80x60 scenes.
RunProfile desk_profile();

/// Full-scale defaults: 200k iterations, ray batch 1024, 64/128 samples, the
/// 8x256 network with 10 encoding levels, and 2x dataset downsampling
/// (640x480 -> 320x240).
RunProfile paper_profile();

RunProfile profile_by_name(const std::string& name);

}  // namespace semfield
