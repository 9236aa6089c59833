#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>

#include "semfield/field.hpp"
#include "semfield/util.hpp"

namespace semfield {

// ---------------------------------------------------------------------------
// Cameras. Convention throughout: x right, y down, z forward (the camera
// looks along +z); pixel (px, py) maps through its center (px+0.5, py+0.5).

struct CameraIntrinsics {
  int width = 0, height = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;

  void validate() const {
    if (width < 1 || height < 1) throw InvalidInput("intrinsics: non-positive image size");
    if (!(fx > 0) || !(fy > 0)) throw InvalidInput("intrinsics: focal lengths must be > 0");
  }
};

struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // camera-to-world
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  void validate(double tol = 1e-6) const {
    const Eigen::Matrix3d err = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
    if (err.cwiseAbs().maxCoeff() > tol)
      throw InvalidInput("pose: rotation is not orthonormal");
    if (rotation.determinant() < 1.0 - tol)
      throw InvalidInput("pose: rotation determinant is not +1");
  }

  Eigen::Matrix4d to_c2w() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  static Pose from_c2w(const Eigen::Matrix4d& m) {
    Pose p;
    p.rotation = m.topLeftCorner<3, 3>();
    p.translation = m.topRightCorner<3, 1>();
    return p;
  }
};

template <class S>
struct Ray {
  Vector3<S> origin;
  Vector3<S> direction;  // unit
  S t_near = S(0), t_far = S(0);
};

template <class S>
Ray<S> generate_ray(const CameraIntrinsics& intr, const Pose& pose, int px, int py,
                    double near, double far) {
  intr.validate();
  if (px < 0 || px >= intr.width || py < 0 || py >= intr.height)
    throw InvalidInput("generate_ray: pixel (" + std::to_string(px) + ", " +
                       std::to_string(py) + ") outside image");
  if (!(near > 0) || !(far > near))
    throw InvalidInput("generate_ray: require 0 < near < far");
  Eigen::Vector3d cam_dir((px + 0.5 - intr.cx) / intr.fx,
                          (py + 0.5 - intr.cy) / intr.fy, 1.0);
  Eigen::Vector3d world_dir = (pose.rotation * cam_dir).normalized();
  Ray<S> ray;
  ray.origin = pose.translation.cast<S>();
  ray.direction = world_dir.cast<S>();
  ray.t_near = static_cast<S>(near);
  ray.t_far = static_cast<S>(far);
  return ray;
}

// ---------------------------------------------------------------------------
// Sampling

template <class S>
struct SampleSet {
  Ray<S> ray;
  VectorX<S> t;  // strictly ascending, within [t_near, t_far]

  int size() const { return static_cast<int>(t.size()); }

  Matrix3X<S> positions() const {
    Matrix3X<S> p(3, t.size());
    for (Eigen::Index i = 0; i < t.size(); ++i)
      p.col(i) = ray.origin + t(i) * ray.direction;
    return p;
  }
};

/// Splits [t_near, t_far] into n equal bins; midpoints when perturb is off,
/// one uniform draw per bin otherwise.
template <class S>
SampleSet<S> stratified_samples(const Ray<S>& ray, int n, bool perturb, TinyRng& rng) {
  if (n < 1) throw InvalidInput("stratified_samples: n must be >= 1");
  SampleSet<S> out;
  out.ray = ray;
  out.t.resize(n);
  const double near = static_cast<double>(ray.t_near);
  const double width = (static_cast<double>(ray.t_far) - near) / n;
  for (int i = 0; i < n; ++i) {
    const double u = perturb ? rng.next_double() : 0.5;
    out.t(i) = static_cast<S>(near + (i + u) * width);
  }
  return out;
}

/// Inverse-transform samples from the piecewise-constant distribution over the
/// coarse set's equal-width bins (mass per bin proportional to weight + 1e-5),
/// merged with the coarse samples and sorted ascending. With perturb off the
/// CDF is probed at deterministic midpoints.
template <class S>
SampleSet<S> importance_samples(const SampleSet<S>& coarse,
                                const Eigen::Ref<const VectorX<S>>& weights, int n_fine,
                                TinyRng& rng, bool perturb = true) {
  const int nb = static_cast<int>(weights.size());
  if (nb != coarse.size())
    throw InvalidInput("importance_samples: weight/sample count mismatch");
  if (n_fine < 1) throw InvalidInput("importance_samples: n_fine must be >= 1");

  const double near = static_cast<double>(coarse.ray.t_near);
  const double far = static_cast<double>(coarse.ray.t_far);
  const double bin_width = (far - near) / nb;

  constexpr double kStabilizer = 1e-5;
  std::vector<double> cdf(nb + 1, 0.0);
  for (int i = 0; i < nb; ++i)
    cdf[i + 1] = cdf[i] + std::max(0.0, static_cast<double>(weights(i))) + kStabilizer;
  const double total = cdf[nb];

  SampleSet<S> out;
  out.ray = coarse.ray;
  out.t.resize(nb + n_fine);
  for (int i = 0; i < nb; ++i) out.t(i) = coarse.t(i);
  for (int j = 0; j < n_fine; ++j) {
    const double u01 = perturb ? rng.next_double() : (j + 0.5) / n_fine;
    const double u = u01 * total;
    const int bin = static_cast<int>(std::upper_bound(cdf.begin(), cdf.end() - 1, u) -
                                     cdf.begin()) - 1;
    const int b = std::clamp(bin, 0, nb - 1);
    const double mass = cdf[b + 1] - cdf[b];
    const double frac = mass > 0 ? (u - cdf[b]) / mass : 0.5;
    out.t(nb + j) = static_cast<S>(near + (b + frac) * bin_width);
  }
  std::sort(out.t.data(), out.t.data() + out.t.size());
  // perturb duplicates upward by one ulp so the merged set is strictly sorted
  for (Eigen::Index i = 1; i < out.t.size(); ++i)
    if (out.t(i) <= out.t(i - 1))
      out.t(i) = std::nextafter(out.t(i - 1), std::numeric_limits<S>::infinity());
  return out;
}

// ---------------------------------------------------------------------------
// Compositing

template <class S>
struct RenderOutput {
  VectorX<S> class_probs;      // classes, sums to 1
  VectorX<S> rendered_logits;  // classes
  VectorX<S> weights;          // per sample, >= 0
  VectorX<S> transmittance;    // per sample, in (0, 1], first is 1
  S opacity = S(0);            // sum of weights
};

template <class S>
VectorX<S> softmax(const Eigen::Ref<const VectorX<S>>& v) {
  VectorX<S> e = (v.array() - v.maxCoeff()).exp();
  return e / e.sum();
}

/// Alpha-composites densities and per-sample logits along a ray:
/// delta_n = t_{n+1} - t_n (last interval ends at t_far), alpha_n =
/// 1 - exp(-sigma_n delta_n), T_n = prod_{m<n} (1 - alpha_m), w_n = T_n
/// alpha_n; rendered logits are the weight-blended sample logits, class
/// probabilities their softmax.
template <class S>
RenderOutput<S> composite(const Eigen::Ref<const VectorX<S>>& sigma,
                          const Eigen::Ref<const MatrixX<S>>& logits,
                          const SampleSet<S>& samples) {
  const Eigen::Index n = samples.t.size();
  if (n < 1) throw InvalidInput("composite: need at least one sample");
  if (sigma.size() != n || logits.cols() != n)
    throw InvalidInput("composite: sigma/logits/sample lengths differ");

  RenderOutput<S> out;
  out.weights.resize(n);
  out.transmittance.resize(n);
  S trans = S(1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S delta = (i + 1 < n) ? samples.t(i + 1) - samples.t(i)
                                : std::max(samples.ray.t_far - samples.t(i), S(0));
    const S alpha = S(1) - std::exp(-sigma(i) * delta);
    out.transmittance(i) = trans;
    out.weights(i) = trans * alpha;
    trans *= (S(1) - alpha);
  }
  out.opacity = out.weights.sum();
  out.rendered_logits.noalias() = logits * out.weights;
  out.class_probs = softmax<S>(out.rendered_logits);
  return out;
}

/// Reverse-mode of composite with respect to sigma and per-sample logits,
/// given the upstream gradient on rendered_logits. Uses T_n - w_n =
/// T_n exp(-sigma_n delta_n) and a suffix sum over downstream contributions.
template <class S>
void composite_backward(const Eigen::Ref<const VectorX<S>>& sigma,
                        const Eigen::Ref<const MatrixX<S>>& logits,
                        const SampleSet<S>& samples, const RenderOutput<S>& fwd,
                        const Eigen::Ref<const VectorX<S>>& d_rendered,
                        Eigen::Ref<VectorX<S>> dsigma, Eigen::Ref<MatrixX<S>> dlogits) {
  (void)sigma;
  const Eigen::Index n = samples.t.size();
  dlogits.noalias() = d_rendered * fwd.weights.transpose();
  VectorX<S> q = logits.transpose() * d_rendered;  // per-sample upstream dot
  S suffix = S(0);
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    const S delta = (i + 1 < n) ? samples.t(i + 1) - samples.t(i)
                                : std::max(samples.ray.t_far - samples.t(i), S(0));
    dsigma(i) = delta * (q(i) * (fwd.transmittance(i) - fwd.weights(i)) - suffix);
    suffix += q(i) * fwd.weights(i);
  }
}

// ---------------------------------------------------------------------------
// Per-ray hierarchical rendering

struct SamplingConfig {
  int n_coarse = 64;
  int n_fine = 128;
  bool perturb = true;
  double density_noise_std = 0.0;
};

template <class S>
struct RayRender {
  SampleSet<S> coarse_samples, fine_samples;
  RenderOutput<S> coarse, fine;
};

/// Coarse pass on stratified samples, fine pass on the importance-augmented
/// set evaluated with the fine network. Internal streams are derived from the
/// caller's rng so execution order cannot affect results.
template <class S>
RayRender<S> render_ray(const FieldParams<S>& coarse_net, const FieldParams<S>& fine_net,
                        const Ray<S>& ray, const SamplingConfig& cfg, TinyRng& rng) {
  const std::uint64_t base = rng.next_u64();
  TinyRng strat_rng(hash_u64(base, kRngStratified));
  TinyRng imp_rng(hash_u64(base, kRngImportance));

  RayRender<S> rr;
  rr.coarse_samples = stratified_samples(ray, cfg.n_coarse, cfg.perturb, strat_rng);
  FieldForwardCache<S> cache;
  const FieldConfig& fc = coarse_net.config;
  MatrixX<S> enc(fc.encoded_dim(), cfg.n_coarse);
  positional_encode_batch<S>(rr.coarse_samples.positions(), fc.encoding_levels,
                             fc.include_raw_input, enc);
  field_forward_batch<S>(coarse_net, std::move(enc), cache);
  rr.coarse = composite<S>(cache.sigma, cache.logits, rr.coarse_samples);

  rr.fine_samples =
      importance_samples<S>(rr.coarse_samples, rr.coarse.weights, cfg.n_fine, imp_rng,
                            cfg.perturb);
  MatrixX<S> enc_f(fc.encoded_dim(), rr.fine_samples.size());
  positional_encode_batch<S>(rr.fine_samples.positions(), fc.encoding_levels,
                             fc.include_raw_input, enc_f);
  field_forward_batch<S>(fine_net, std::move(enc_f), cache);
  rr.fine = composite<S>(cache.sigma, cache.logits, rr.fine_samples);
  return rr;
}

/// The two per-ray outputs (coarse, fine); both feed the training loss.
template <class S>
std::pair<RenderOutput<S>, RenderOutput<S>> render_pixel(const FieldParams<S>& coarse_net,
                                                         const FieldParams<S>& fine_net,
                                                         const Ray<S>& ray,
                                                         const SamplingConfig& cfg,
                                                         TinyRng& rng) {
  RayRender<S> rr = render_ray(coarse_net, fine_net, ray, cfg, rng);
  return {std::move(rr.coarse), std::move(rr.fine)};
}

}  // namespace semfield
