#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "semfield/render.hpp"

namespace semfield {

struct TrainConfig {
  double learning_rate = 5e-4;
  int ray_batch = 1024;
  int iterations = 200000;
  int n_coarse = 64;
  int n_fine = 128;
  std::uint64_t seed = 0;
  int eval_every = 0;       // 0 disables periodic evaluation
  int checkpoint_every = 0; // 0 writes only the final checkpoint
  bool perturb = true;
  double density_noise_std = 0.0;
  int threads = 0;          // 0 uses all hardware threads

  SamplingConfig sampling() const {
    return SamplingConfig{n_coarse, n_fine, perturb, density_noise_std};
  }

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (ray_batch < 1) throw ConfigError("ray_batch must be >= 1");
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (n_coarse < 1 || n_fine < 1) throw ConfigError("sample counts must be >= 1");
    if (eval_every < 0 || checkpoint_every < 0)
      throw ConfigError("eval_every/checkpoint_every must be >= 0");
    if (density_noise_std < 0) throw ConfigError("density_noise_std must be >= 0");
  }
};

struct LossReport {
  double total = 0, coarse = 0, fine = 0;  // nats, batch mean over non-void rays
  int void_rays = 0;
};

// Per-ray cross entropy with the clamp guarding -log 0 on saturated softmax.
template <class S>
inline double cross_entropy_term(const Eigen::Ref<const VectorX<S>>& probs, int label) {
  return -std::log(std::max(static_cast<double>(probs(label)), 1e-12));
}

inline void validate_label(int label, int num_classes, long ray_index) {
  if (label != kVoidLabel && (label < 0 || label >= num_classes))
    throw InvalidInput("label " + std::to_string(label) + " out of range for " +
                       std::to_string(num_classes) + " classes (ray " +
                       std::to_string(ray_index) + ")");
}

/// Batch-mean cross entropy of both networks' per-ray class probabilities
/// against ground-truth labels; void-labeled rays contribute nothing.
template <class S>
LossReport semantic_loss(const MatrixX<S>& coarse_probs, const MatrixX<S>& fine_probs,
                         const std::vector<int>& labels) {
  const Eigen::Index r = static_cast<Eigen::Index>(labels.size());
  if (coarse_probs.cols() != r || fine_probs.cols() != r)
    throw InvalidInput("semantic_loss: probability/label count mismatch");
  const int c = static_cast<int>(coarse_probs.rows());
  LossReport rep;
  double coarse_sum = 0, fine_sum = 0;
  for (Eigen::Index i = 0; i < r; ++i) {
    validate_label(labels[i], c, i);
    if (labels[i] == kVoidLabel) {
      ++rep.void_rays;
      continue;
    }
    coarse_sum += cross_entropy_term<S>(coarse_probs.col(i), labels[i]);
    fine_sum += cross_entropy_term<S>(fine_probs.col(i), labels[i]);
  }
  const int n_valid = static_cast<int>(r) - rep.void_rays;
  if (n_valid > 0) {
    rep.coarse = coarse_sum / n_valid;
    rep.fine = fine_sum / n_valid;
    rep.total = rep.coarse + rep.fine;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Adam

template <class S>
struct AdamState {
  FieldParams<S> m, v;
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
};

template <class S>
AdamState<S> make_adam_state(const FieldParams<S>& params) {
  AdamState<S> st;
  st.m = zeros_like(params);
  st.v = zeros_like(params);
  return st;
}

template <class S>
std::vector<Eigen::Map<VectorX<S>>> flat_tensors(FieldParams<S>& p) {
  std::vector<Eigen::Map<VectorX<S>>> out;
  p.for_each_tensor([&](const std::string&, auto& t) {
    out.emplace_back(t.data(), t.size());
  });
  return out;
}

template <class S>
std::vector<Eigen::Map<const VectorX<S>>> flat_tensors(const FieldParams<S>& p) {
  std::vector<Eigen::Map<const VectorX<S>>> out;
  p.for_each_tensor([&](const std::string&, const auto& t) {
    out.emplace_back(t.data(), t.size());
  });
  return out;
}

/// Standard bias-corrected Adam update, in place.
template <class S>
void adam_step(FieldParams<S>& params, const FieldParams<S>& grads, AdamState<S>& st,
               double lr) {
  auto p = flat_tensors(params);
  auto g = flat_tensors(grads);
  auto m = flat_tensors(st.m);
  auto v = flat_tensors(st.v);
  if (p.size() != g.size()) throw InvalidInput("adam_step: tensor count mismatch");
  st.step += 1;
  const S b1 = static_cast<S>(st.beta1), b2 = static_cast<S>(st.beta2);
  const S bc1 = static_cast<S>(1.0 - std::pow(st.beta1, static_cast<double>(st.step)));
  const S bc2 = static_cast<S>(1.0 - std::pow(st.beta2, static_cast<double>(st.step)));
  const S eps = static_cast<S>(st.epsilon);
  const S rate = static_cast<S>(lr);
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k].size() != g[k].size()) throw InvalidInput("adam_step: tensor shape mismatch");
    m[k].array() = b1 * m[k].array() + (S(1) - b1) * g[k].array();
    v[k].array() = b2 * v[k].array() + (S(1) - b2) * g[k].array().square();
    p[k].array() -= rate * (m[k].array() / bc1) / ((v[k].array() / bc2).sqrt() + eps);
  }
}

// ---------------------------------------------------------------------------
// Batched loss and gradients
//
// Rays are processed in fixed-size blocks; per-block gradients are reduced in
// block order, so results do not depend on thread count or scheduling. The
// block size is part of the bitwise reproducibility contract.

inline constexpr int kTrainRayBlock = 32;

template <class S>
struct RaySampleSet {
  SampleSet<S> coarse;
  SampleSet<S> fine;  // importance-augmented, includes the coarse samples
};

namespace detail {

inline double normal_sample(TinyRng& rng) {
  const double u1 = std::max(rng.next_double(), 1e-300);
  const double u2 = rng.next_double();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template <class S>
VectorX<S> density_noise_vector(double std_dev, Eigen::Index n, std::uint64_t stream) {
  TinyRng rng(stream);
  VectorX<S> out(n);
  for (Eigen::Index i = 0; i < n; ++i)
    out(i) = static_cast<S>(std_dev * normal_sample(rng));
  return out;
}

/// Forward + composite for a group of rays' sample sets against one network.
/// All samples are packed into one matrix so each layer is a single product.
template <class S>
void eval_sets(const FieldParams<S>& net, std::span<const SampleSet<S>* const> sets,
               FieldForwardCache<S>& cache, std::vector<RenderOutput<S>>& outs,
               const VectorX<S>* density_noise = nullptr) {
  const FieldConfig& fc = net.config;
  Eigen::Index total = 0;
  for (const auto* s : sets) total += s->t.size();
  MatrixX<S> enc(fc.encoded_dim(), total);
  Eigen::Index off = 0;
  for (const auto* s : sets) {
    for (Eigen::Index i = 0; i < s->t.size(); ++i) {
      const double t = static_cast<double>(s->t(i));
      const double pt[3] = {
          static_cast<double>(s->ray.origin(0)) + t * static_cast<double>(s->ray.direction(0)),
          static_cast<double>(s->ray.origin(1)) + t * static_cast<double>(s->ray.direction(1)),
          static_cast<double>(s->ray.origin(2)) + t * static_cast<double>(s->ray.direction(2))};
      encode_point<S>(pt, fc.encoding_levels, fc.include_raw_input, enc.col(off + i).data());
    }
    off += s->t.size();
  }
  field_forward_batch<S>(net, std::move(enc), cache, density_noise);
  outs.resize(sets.size());
  off = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const Eigen::Index n = sets[i]->t.size();
    outs[i] = composite<S>(cache.sigma.segment(off, n), cache.logits.middleCols(off, n),
                           *sets[i]);
    off += n;
  }
}

/// Backpropagates per-ray rendered-logit gradients through compositing and the
/// network, accumulating parameter gradients.
template <class S>
void backward_sets(const FieldParams<S>& net, std::span<const SampleSet<S>* const> sets,
                   const FieldForwardCache<S>& cache, const std::vector<RenderOutput<S>>& outs,
                   const MatrixX<S>& d_rendered, FieldParams<S>& grad) {
  const Eigen::Index total = cache.sigma.size();
  VectorX<S> dsigma(total);
  MatrixX<S> dlogits(cache.logits.rows(), total);
  Eigen::Index off = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const Eigen::Index n = sets[i]->t.size();
    composite_backward<S>(cache.sigma.segment(off, n), cache.logits.middleCols(off, n),
                          *sets[i], outs[i], d_rendered.col(i),
                          dsigma.segment(off, n), dlogits.middleCols(off, n));
    off += n;
  }
  field_backward_batch(net, cache, dsigma, dlogits, grad);
}

template <class S>
struct BlockStats {
  double coarse_sum = 0, fine_sum = 0;
  int void_rays = 0;
  long bad_ray = -1;  // first ray slot with a non-finite loss term, if any
};

// One block of the fused pipeline. When `fixed` is non-null its sample sets
// are used verbatim; otherwise samples are drawn from per-slot streams.
template <class S>
void process_block(const FieldParams<S>& coarse_net, const FieldParams<S>& fine_net,
                   std::span<const Ray<S>> rays, const std::vector<int>& labels,
                   std::size_t r0, std::size_t r1, double inv_n_valid,
                   const SamplingConfig& cfg, std::uint64_t seed_base,
                   const std::vector<RaySampleSet<S>>* fixed, bool want_grads,
                   FieldParams<S>* cg, FieldParams<S>* fg, BlockStats<S>& stats,
                   std::vector<RaySampleSet<S>>* samples_out) {
  const std::size_t nr = r1 - r0;
  const int num_classes = coarse_net.config.num_classes;

  std::vector<RaySampleSet<S>> local(fixed ? 0 : nr);
  std::vector<const SampleSet<S>*> coarse_sets(nr);
  for (std::size_t i = 0; i < nr; ++i) {
    if (fixed) {
      coarse_sets[i] = &(*fixed)[r0 + i].coarse;
    } else {
      TinyRng strat(hash_u64(seed_base, r0 + i, kRngStratified));
      local[i].coarse = stratified_samples(rays[r0 + i], cfg.n_coarse, cfg.perturb, strat);
      coarse_sets[i] = &local[i].coarse;
    }
  }

  FieldForwardCache<S> cache;
  std::vector<RenderOutput<S>> outs;
  VectorX<S> noise;
  const VectorX<S>* noise_ptr = nullptr;
  if (cfg.density_noise_std > 0) {
    Eigen::Index total = 0;
    for (auto* s : coarse_sets) total += s->t.size();
    noise = density_noise_vector<S>(cfg.density_noise_std, total,
                                    hash_u64(seed_base, r0, kRngDensityNoiseCoarse));
    noise_ptr = &noise;
  }
  eval_sets<S>(coarse_net, coarse_sets, cache, outs, noise_ptr);

  MatrixX<S> d_rendered(num_classes, nr);
  for (std::size_t i = 0; i < nr; ++i) {
    const int label = labels[r0 + i];
    validate_label(label, num_classes, static_cast<long>(r0 + i));
    if (label == kVoidLabel) {
      ++stats.void_rays;
      d_rendered.col(i).setZero();
      continue;
    }
    const double ce = cross_entropy_term<S>(outs[i].class_probs, label);
    if (!std::isfinite(ce) && stats.bad_ray < 0) stats.bad_ray = static_cast<long>(r0 + i);
    stats.coarse_sum += ce;
    d_rendered.col(i) = outs[i].class_probs * static_cast<S>(inv_n_valid);
    d_rendered(label, i) -= static_cast<S>(inv_n_valid);
  }
  if (want_grads) backward_sets<S>(coarse_net, coarse_sets, cache, outs, d_rendered, *cg);

  std::vector<const SampleSet<S>*> fine_sets(nr);
  for (std::size_t i = 0; i < nr; ++i) {
    if (fixed) {
      fine_sets[i] = &(*fixed)[r0 + i].fine;
    } else {
      TinyRng imp(hash_u64(seed_base, r0 + i, kRngImportance));
      local[i].fine = importance_samples<S>(*coarse_sets[i], outs[i].weights, cfg.n_fine,
                                            imp, cfg.perturb);
      fine_sets[i] = &local[i].fine;
    }
  }
  noise_ptr = nullptr;
  if (cfg.density_noise_std > 0) {
    Eigen::Index total = 0;
    for (auto* s : fine_sets) total += s->t.size();
    noise = density_noise_vector<S>(cfg.density_noise_std, total,
                                    hash_u64(seed_base, r0, kRngDensityNoiseFine));
    noise_ptr = &noise;
  }
  eval_sets<S>(fine_net, fine_sets, cache, outs, noise_ptr);

  for (std::size_t i = 0; i < nr; ++i) {
    const int label = labels[r0 + i];
    if (label == kVoidLabel) {
      d_rendered.col(i).setZero();
      continue;
    }
    const double ce = cross_entropy_term<S>(outs[i].class_probs, label);
    if (!std::isfinite(ce) && stats.bad_ray < 0) stats.bad_ray = static_cast<long>(r0 + i);
    stats.fine_sum += ce;
    d_rendered.col(i) = outs[i].class_probs * static_cast<S>(inv_n_valid);
    d_rendered(label, i) -= static_cast<S>(inv_n_valid);
  }
  if (want_grads) backward_sets<S>(fine_net, fine_sets, cache, outs, d_rendered, *fg);

  if (samples_out && !fixed)
    for (std::size_t i = 0; i < nr; ++i) (*samples_out)[r0 + i] = std::move(local[i]);
}

template <class S>
LossReport run_batch(const FieldParams<S>& coarse_net, const FieldParams<S>& fine_net,
                     std::span<const Ray<S>> rays, const std::vector<int>& labels,
                     const SamplingConfig& cfg, std::uint64_t seed_base,
                     const std::vector<RaySampleSet<S>>* fixed, bool want_grads,
                     FieldParams<S>* cg, FieldParams<S>* fg, ThreadPool* pool,
                     std::vector<RaySampleSet<S>>* samples_out) {
  const std::size_t r = rays.size();
  if (r == 0) throw InvalidInput("ray batch must be non-empty");
  if (labels.size() != r) throw InvalidInput("ray/label count mismatch");

  int n_valid = 0;
  for (std::size_t i = 0; i < r; ++i) {
    validate_label(labels[i], coarse_net.config.num_classes, static_cast<long>(i));
    if (labels[i] != kVoidLabel) ++n_valid;
  }
  const double inv_n_valid = n_valid > 0 ? 1.0 / n_valid : 0.0;

  const std::size_t nblocks = (r + kTrainRayBlock - 1) / kTrainRayBlock;
  std::vector<detail::BlockStats<S>> stats(nblocks);
  std::vector<FieldParams<S>> cg_blocks, fg_blocks;
  if (want_grads) {
    cg_blocks.resize(nblocks);
    fg_blocks.resize(nblocks);
  }

  auto work = [&](std::size_t b) {
    const std::size_t r0 = b * kTrainRayBlock;
    const std::size_t r1 = std::min(r, r0 + kTrainRayBlock);
    if (want_grads) {
      cg_blocks[b] = zeros_like(coarse_net);
      fg_blocks[b] = zeros_like(fine_net);
    }
    process_block<S>(coarse_net, fine_net, rays, labels, r0, r1, inv_n_valid, cfg,
                     seed_base, fixed, want_grads,
                     want_grads ? &cg_blocks[b] : nullptr,
                     want_grads ? &fg_blocks[b] : nullptr, stats[b], samples_out);
  };
  if (pool) {
    pool->parallel_for(nblocks, work);
  } else {
    for (std::size_t b = 0; b < nblocks; ++b) work(b);
  }

  LossReport rep;
  double coarse_sum = 0, fine_sum = 0;
  long bad_ray = -1;
  for (std::size_t b = 0; b < nblocks; ++b) {
    coarse_sum += stats[b].coarse_sum;
    fine_sum += stats[b].fine_sum;
    rep.void_rays += stats[b].void_rays;
    if (bad_ray < 0) bad_ray = stats[b].bad_ray;
  }
  if (bad_ray >= 0) throw NumericError("non-finite loss term", bad_ray);
  if (n_valid > 0) {
    rep.coarse = coarse_sum * inv_n_valid;
    rep.fine = fine_sum * inv_n_valid;
    rep.total = rep.coarse + rep.fine;
  }
  if (!std::isfinite(rep.total)) throw NumericError("non-finite batch loss", -1);

  if (want_grads) {
    auto cdst = flat_tensors(*cg);
    auto fdst = flat_tensors(*fg);
    for (auto& m : cdst) m.setZero();
    for (auto& m : fdst) m.setZero();
    for (std::size_t b = 0; b < nblocks; ++b) {
      auto csrc = flat_tensors(cg_blocks[b]);
      auto fsrc = flat_tensors(fg_blocks[b]);
      for (std::size_t k = 0; k < cdst.size(); ++k) cdst[k] += csrc[k];
      for (std::size_t k = 0; k < fdst.size(); ++k) fdst[k] += fsrc[k];
    }
  }
  return rep;
}

}  // namespace detail

/// Draws the per-ray sample sets the training pipeline would use (stratified
/// coarse samples, importance-augmented fine samples guided by the coarse
/// network). Sample positions carry no gradients; freezing them via this
/// function makes the loss a smooth function of parameters.
template <class S>
std::vector<RaySampleSet<S>> sample_ray_batch(const FieldParams<S>& coarse_net,
                                              const FieldParams<S>& fine_net,
                                              std::span<const Ray<S>> rays,
                                              const SamplingConfig& cfg,
                                              std::uint64_t seed_base,
                                              ThreadPool* pool = nullptr) {
  std::vector<RaySampleSet<S>> samples(rays.size());
  std::vector<int> labels(rays.size(), kVoidLabel);
  detail::run_batch<S>(coarse_net, fine_net, rays, labels, cfg, seed_base, nullptr,
                       false, nullptr, nullptr, pool, &samples);
  return samples;
}

/// Loss at fixed sample positions (no gradients).
template <class S>
LossReport batch_loss_at(const FieldParams<S>& coarse_net, const FieldParams<S>& fine_net,
                         const std::vector<RaySampleSet<S>>& samples,
                         std::span<const Ray<S>> rays, const std::vector<int>& labels,
                         ThreadPool* pool = nullptr) {
  SamplingConfig cfg;  // sampling fields unused with fixed sample sets
  cfg.density_noise_std = 0;
  return detail::run_batch<S>(coarse_net, fine_net, rays, labels, cfg, 0, &samples,
                              false, nullptr, nullptr, pool, nullptr);
}

/// Loss and exact reverse-mode parameter gradients at fixed sample positions.
template <class S>
LossReport loss_and_gradients_at(const FieldParams<S>& coarse_net,
                                 const FieldParams<S>& fine_net,
                                 const std::vector<RaySampleSet<S>>& samples,
                                 std::span<const Ray<S>> rays, const std::vector<int>& labels,
                                 FieldParams<S>& coarse_grads, FieldParams<S>& fine_grads,
                                 ThreadPool* pool = nullptr) {
  SamplingConfig cfg;
  cfg.density_noise_std = 0;
  return detail::run_batch<S>(coarse_net, fine_net, rays, labels, cfg, 0, &samples, true,
                              &coarse_grads, &fine_grads, pool, nullptr);
}

/// Full pipeline: sample, render coarse+fine, and return the batch-mean loss
/// with exact gradients for both networks. Sample placement is stop-gradient.
template <class S>
LossReport loss_and_gradients(const FieldParams<S>& coarse_net, const FieldParams<S>& fine_net,
                              std::span<const Ray<S>> rays, const std::vector<int>& labels,
                              const SamplingConfig& cfg, std::uint64_t seed_base,
                              FieldParams<S>& coarse_grads, FieldParams<S>& fine_grads,
                              ThreadPool* pool = nullptr) {
  return detail::run_batch<S>(coarse_net, fine_net, rays, labels, cfg, seed_base, nullptr,
                              true, &coarse_grads, &fine_grads, pool, nullptr);
}

}  // namespace semfield
