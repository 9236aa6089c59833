#pragma once

#include <filesystem>

#include "semfield/checkpoint.hpp"
#include "semfield/data.hpp"
#include "semfield/metrics.hpp"

namespace semfield {

// Rendering work is partitioned into fixed blocks of rays; the block size is
// part of the bitwise reproducibility contract (results are independent of
// thread count).
inline constexpr int kEvalRayBlock = 64;

struct RenderedImage {
  SemanticImage labels;   // argmax of the fine network's class probabilities
  MatrixX<float> probs;   // classes x (width*height); column index = y*width + x
};

/// Renders every pixel with perturbation off; rays are evaluated in slabs of
/// `chunk` rays, which never changes the labeling.
RenderedImage render_image(const FieldParams<float>& coarse, const FieldParams<float>& fine,
                           const CameraIntrinsics& intr, const Pose& pose, double near,
                           double far, const SamplingConfig& sampling, int chunk,
                           ThreadPool* pool = nullptr);

std::vector<std::uint8_t> colorize_labels(
    const SemanticImage& img, const std::vector<std::array<std::uint8_t, 3>>& palette);

struct EvalOptions {
  SamplingConfig sampling;
  int chunk = 4096;
  ThreadPool* pool = nullptr;
  std::filesystem::path save_renders_dir;  // empty: keep renders in memory only
  bool colorize = false;
};

struct EvalResult {
  ConfusionMatrix cm;
  Scores metric_scores;
  EvalResult(int num_classes) : cm(num_classes) {}
};

/// Renders the listed frames and scores them against the dataset's (clean)
/// ground truth.
EvalResult evaluate_frames(const FieldParams<float>& coarse, const FieldParams<float>& fine,
                           const Dataset& data, const std::vector<int>& frames,
                           const EvalOptions& opts);

struct TrainJob {
  TrainConfig train;
  FieldConfig field;
  const Dataset* data = nullptr;
  std::vector<int> train_frames;
  // Supervision labels parallel to train_frames (e.g. corrupted copies);
  // null trains on the dataset's own images.
  const std::vector<SemanticImage>* train_labels = nullptr;
  std::vector<int> eval_frames;  // scored every eval_every iterations
  std::filesystem::path run_dir;
  nlohmann::json meta;  // provenance recorded into checkpoints
  std::function<void(int iteration, double loss)> progress;  // called every iteration
};

struct TrainOutcome {
  std::filesystem::path final_checkpoint;
  double first_loss = 0, last_loss = 0;
};

/// Runs the optimization loop: each iteration samples ray_batch pixels uniformly
/// over the non-void training pool, renders coarse+fine, and applies one Adam
/// step to each network. Writes loss.csv, periodic checkpoints/evals, and the
/// final checkpoint into run_dir.
TrainOutcome train_run(const TrainJob& job);

}  // namespace semfield
