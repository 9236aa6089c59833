#include "semfield/trainer.hpp"

#include <cstdio>
#include <fstream>

#include "semfield/png_io.hpp"
#include "semfield/serialize.hpp"

namespace semfield {

namespace {

int argmax_lowest(const Eigen::Ref<const VectorX<float>>& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;  // ties keep the lowest index
  return best;
}

// Forward-only hierarchical rendering of a group of rays.
void render_block(const FieldParams<float>& coarse, const FieldParams<float>& fine,
                  std::span<const Ray<float>> rays, const SamplingConfig& cfg,
                  Eigen::Ref<MatrixX<float>> probs_out, std::uint8_t* labels_out) {
  const std::size_t nr = rays.size();
  TinyRng unused(0);  // sampling is deterministic with perturbation off
  std::vector<SampleSet<float>> coarse_sets(nr), fine_sets(nr);
  std::vector<const SampleSet<float>*> set_ptrs(nr);
  for (std::size_t i = 0; i < nr; ++i) {
    coarse_sets[i] = stratified_samples(rays[i], cfg.n_coarse, false, unused);
    set_ptrs[i] = &coarse_sets[i];
  }
  FieldForwardCache<float> cache;
  std::vector<RenderOutput<float>> outs;
  detail::eval_sets<float>(coarse, set_ptrs, cache, outs);
  for (std::size_t i = 0; i < nr; ++i) {
    fine_sets[i] =
        importance_samples<float>(coarse_sets[i], outs[i].weights, cfg.n_fine, unused, false);
    set_ptrs[i] = &fine_sets[i];
  }
  detail::eval_sets<float>(fine, set_ptrs, cache, outs);
  for (std::size_t i = 0; i < nr; ++i) {
    probs_out.col(i) = outs[i].class_probs;
    labels_out[i] = static_cast<std::uint8_t>(argmax_lowest(outs[i].class_probs));
  }
}

}  // namespace

RenderedImage render_image(const FieldParams<float>& coarse, const FieldParams<float>& fine,
                           const CameraIntrinsics& intr, const Pose& pose, double near,
                           double far, const SamplingConfig& sampling, int chunk,
                           ThreadPool* pool) {
  intr.validate();
  pose.validate();
  if (chunk < 1) throw InvalidInput("render chunk must be >= 1");
  SamplingConfig cfg = sampling;
  cfg.perturb = false;
  cfg.density_noise_std = 0;

  const std::size_t n_pixels = static_cast<std::size_t>(intr.width) * intr.height;
  RenderedImage out;
  out.labels = SemanticImage(intr.width, intr.height);
  out.probs.resize(coarse.config.num_classes, static_cast<Eigen::Index>(n_pixels));

  std::vector<Ray<float>> rays;
  for (std::size_t start = 0; start < n_pixels; start += chunk) {
    const std::size_t end = std::min(n_pixels, start + chunk);
    rays.resize(end - start);
    for (std::size_t i = start; i < end; ++i)
      rays[i - start] = generate_ray<float>(intr, pose, static_cast<int>(i % intr.width),
                                            static_cast<int>(i / intr.width), near, far);
    const std::size_t nblocks = (rays.size() + kEvalRayBlock - 1) / kEvalRayBlock;
    auto work = [&](std::size_t b) {
      const std::size_t r0 = b * kEvalRayBlock;
      const std::size_t r1 = std::min(rays.size(), r0 + kEvalRayBlock);
      render_block(coarse, fine, std::span(rays).subspan(r0, r1 - r0), cfg,
                   out.probs.middleCols(static_cast<Eigen::Index>(start + r0), r1 - r0),
                   out.labels.labels.data() + start + r0);
    };
    if (pool) {
      pool->parallel_for(nblocks, work);
    } else {
      for (std::size_t b = 0; b < nblocks; ++b) work(b);
    }
  }
  return out;
}

std::vector<std::uint8_t> colorize_labels(
    const SemanticImage& img, const std::vector<std::array<std::uint8_t, 3>>& palette) {
  std::vector<std::uint8_t> rgb(img.pixel_count() * 3, 0);
  for (std::size_t i = 0; i < img.labels.size(); ++i) {
    const int v = img.labels[i];
    std::array<std::uint8_t, 3> color{0, 0, 0};  // void stays black
    if (v != kVoidLabel) {
      if (v < static_cast<int>(palette.size())) {
        color = palette[v];
      } else {
        // fallback: spread hues over the label byte
        const std::uint8_t h = static_cast<std::uint8_t>(37 * (v + 1));
        color = {h, static_cast<std::uint8_t>(255 - h), static_cast<std::uint8_t>(96 + 2 * v)};
      }
    }
    rgb[3 * i] = color[0];
    rgb[3 * i + 1] = color[1];
    rgb[3 * i + 2] = color[2];
  }
  return rgb;
}

EvalResult evaluate_frames(const FieldParams<float>& coarse, const FieldParams<float>& fine,
                           const Dataset& data, const std::vector<int>& frames,
                           const EvalOptions& opts) {
  EvalResult result(data.manifest.num_classes);
  const CameraIntrinsics intr = data.manifest.intrinsics();
  if (!opts.save_renders_dir.empty())
    std::filesystem::create_directories(opts.save_renders_dir);
  for (int f : frames) {
    if (f < 0 || f >= static_cast<int>(data.images.size()))
      throw InvalidInput("evaluation frame index " + std::to_string(f) + " out of range");
    RenderedImage r = render_image(coarse, fine, intr, data.manifest.frames[f].pose,
                                   data.manifest.near, data.manifest.far, opts.sampling,
                                   opts.chunk, opts.pool);
    result.cm.accumulate(r.labels, data.images[f]);
    if (!opts.save_renders_dir.empty()) {
      char name[48];
      std::snprintf(name, sizeof(name), "render_%06d.png", f);
      write_gray8_png(opts.save_renders_dir / name, r.labels.width, r.labels.height,
                      r.labels.labels.data());
      if (opts.colorize) {
        std::snprintf(name, sizeof(name), "render_%06d_color.png", f);
        const auto rgb = colorize_labels(r.labels, data.manifest.palette);
        write_rgb8_png(opts.save_renders_dir / name, r.labels.width, r.labels.height,
                       rgb.data());
      }
    }
  }
  result.metric_scores = scores(result.cm);
  return result;
}

namespace {

struct PoolEntry {
  int frame_slot;  // index into job.train_frames
  std::uint16_t px, py;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, int iteration) {
  char name[48];
  std::snprintf(name, sizeof(name), "ckpt_%06d.semf", iteration);
  return run_dir / name;
}

}  // namespace

TrainOutcome train_run(const TrainJob& job) {
  job.train.validate();
  job.field.validate();
  if (!job.data) throw ConfigError("train_run: no dataset");
  if (job.train_frames.empty()) throw ConfigError("train_run: no training frames");
  if (job.train_labels && job.train_labels->size() != job.train_frames.size())
    throw ConfigError("train_run: training label list does not match frame list");
  if (job.field.num_classes != job.data->manifest.num_classes)
    throw ConfigError("train_run: field num_classes does not match the dataset");

  const Dataset& data = *job.data;
  const CameraIntrinsics intr = data.manifest.intrinsics();
  auto label_image = [&](int slot) -> const SemanticImage& {
    return job.train_labels ? (*job.train_labels)[slot]
                            : data.images[job.train_frames[slot]];
  };

  // global non-void pixel pool across all training frames
  std::vector<PoolEntry> pool_pixels;
  for (std::size_t slot = 0; slot < job.train_frames.size(); ++slot) {
    const SemanticImage& img = label_image(static_cast<int>(slot));
    if (img.width != intr.width || img.height != intr.height)
      throw ConfigError("train_run: label image size does not match the manifest");
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        if (img.at(x, y) != SemanticImage::kVoid)
          pool_pixels.push_back({static_cast<int>(slot), static_cast<std::uint16_t>(x),
                                 static_cast<std::uint16_t>(y)});
  }
  if (pool_pixels.empty())
    throw ConfigError("train_run: dataset has no non-void training pixels");

  std::filesystem::create_directories(job.run_dir);
  std::ofstream loss_csv(job.run_dir / "loss.csv", std::ios::trunc);
  if (!loss_csv) throw DataError("cannot write loss log in " + job.run_dir.string());
  loss_csv << "iter,loss,coarse,fine\n";

  ThreadPool pool(job.train.threads);
  ThreadPool* pool_ptr = pool.size() > 1 ? &pool : nullptr;

  FieldParams<float> coarse = init_field<float>(job.field, hash_u64(job.train.seed, 1));
  FieldParams<float> fine = init_field<float>(job.field, hash_u64(job.train.seed, 2));
  AdamState<float> adam_coarse = make_adam_state(coarse);
  AdamState<float> adam_fine = make_adam_state(fine);
  FieldParams<float> cg = zeros_like(coarse);
  FieldParams<float> fg = zeros_like(fine);

  const SamplingConfig sampling = job.train.sampling();
  std::vector<Ray<float>> rays(job.train.ray_batch);
  std::vector<int> labels(job.train.ray_batch);

  auto write_ckpt = [&](int iteration, const std::filesystem::path& path) {
    Checkpoint ckpt;
    ckpt.field = job.field;
    ckpt.train = job.train;
    ckpt.iteration = iteration;
    ckpt.coarse = coarse;
    ckpt.fine = fine;
    ckpt.adam_coarse = adam_coarse;
    ckpt.adam_fine = adam_fine;
    ckpt.meta = job.meta;
    save_checkpoint(path, ckpt);
  };

  TrainOutcome outcome;
  char line[160];
  for (int iter = 1; iter <= job.train.iterations; ++iter) {
    TinyRng batch_rng(hash_u64(job.train.seed, kRngBatchPixels, iter));
    for (int i = 0; i < job.train.ray_batch; ++i) {
      const PoolEntry& e = pool_pixels[batch_rng.below(pool_pixels.size())];
      rays[i] = generate_ray<float>(intr, data.manifest.frames[job.train_frames[e.frame_slot]].pose,
                                    e.px, e.py, data.manifest.near, data.manifest.far);
      labels[i] = label_image(e.frame_slot).at(e.px, e.py);
    }
    const std::uint64_t sample_seed = hash_u64(job.train.seed, 0x5a6d, iter);
    const LossReport rep = loss_and_gradients<float>(coarse, fine, rays, labels, sampling,
                                                     sample_seed, cg, fg, pool_ptr);
    adam_step(coarse, cg, adam_coarse, job.train.learning_rate);
    adam_step(fine, fg, adam_fine, job.train.learning_rate);

    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g\n", iter, rep.total, rep.coarse,
                  rep.fine);
    loss_csv << line;
    if (iter == 1) outcome.first_loss = rep.total;
    outcome.last_loss = rep.total;
    if (job.progress) job.progress(iter, rep.total);

    if (job.train.checkpoint_every > 0 && iter % job.train.checkpoint_every == 0 &&
        iter != job.train.iterations)
      write_ckpt(iter, checkpoint_path(job.run_dir, iter));

    if (job.train.eval_every > 0 && iter % job.train.eval_every == 0 &&
        !job.eval_frames.empty()) {
      EvalOptions eopts;
      eopts.sampling = sampling;
      eopts.pool = pool_ptr;
      const EvalResult er = evaluate_frames(coarse, fine, data, job.eval_frames, eopts);
      nlohmann::json j = scores_to_json(er.metric_scores);
      j["iteration"] = iter;
      char name[48];
      std::snprintf(name, sizeof(name), "eval_%06d.json", iter);
      std::ofstream out(job.run_dir / name, std::ios::trunc);
      out << j.dump(2) << "\n";
    }
  }

  outcome.final_checkpoint = checkpoint_path(job.run_dir, job.train.iterations);
  write_ckpt(job.train.iterations, outcome.final_checkpoint);
  loss_csv.flush();
  return outcome;
}

}  // namespace semfield
