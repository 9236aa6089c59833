#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "semfield/util.hpp"

namespace semfield {

template <class S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using Matrix3X = Eigen::Matrix<S, 3, Eigen::Dynamic>;
template <class S>
using Vector3 = Eigen::Matrix<S, 3, 1>;

// ---------------------------------------------------------------------------
// Configuration

struct FieldConfig {
  int trunk_depth = 8;
  int trunk_width = 256;
  int skip_layer = 5;  // 1-based trunk layer whose input gets the encoding appended
  int semantic_hidden_width = 128;
  int num_classes = 0;
  int encoding_levels = 10;
  bool include_raw_input = false;

  int encoded_dim() const {
    return 6 * encoding_levels + (include_raw_input ? 3 : 0);
  }

  void validate() const {
    if (trunk_depth < 1) throw ConfigError("trunk_depth must be >= 1");
    if (trunk_width < 1) throw ConfigError("trunk_width must be >= 1");
    if (skip_layer < 1 || skip_layer > trunk_depth)
      throw ConfigError("skip_layer must be in [1, trunk_depth]");
    if (semantic_hidden_width < 1)
      throw ConfigError("semantic_hidden_width must be >= 1");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (encoding_levels < 1) throw ConfigError("encoding_levels must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Positional encoding
//
// Layout per frequency k = 0..L-1: (sin(2^k pi x), cos(2^k pi x),
// sin(2^k pi y), cos(2^k pi y), sin(2^k pi z), cos(2^k pi z)); the raw point
// is prepended when include_raw is set. Successive frequencies are produced
// by exact angle doubling from one sincos per coordinate, evaluated in double
// so that single- and batch-precision callers see the same feature values.

template <class S>
inline void encode_point(const double x[3], int levels, bool include_raw, S* out) {
  if (!(std::isfinite(x[0]) && std::isfinite(x[1]) && std::isfinite(x[2])))
    throw InvalidInput("positional_encode: non-finite input point");
  if (levels < 1) throw InvalidInput("positional_encode: levels must be >= 1");
  S* o = out;
  if (include_raw) {
    *o++ = static_cast<S>(x[0]);
    *o++ = static_cast<S>(x[1]);
    *o++ = static_cast<S>(x[2]);
  }
  double s[3], c[3];
  for (int i = 0; i < 3; ++i) {
    s[i] = std::sin(M_PI * x[i]);
    c[i] = std::cos(M_PI * x[i]);
  }
  for (int k = 0; k < levels; ++k) {
    for (int i = 0; i < 3; ++i) {
      *o++ = static_cast<S>(s[i]);
      *o++ = static_cast<S>(c[i]);
    }
    if (k + 1 < levels) {
      for (int i = 0; i < 3; ++i) {
        const double s2 = 2.0 * s[i] * c[i];
        const double c2 = c[i] * c[i] - s[i] * s[i];
        s[i] = s2;
        c[i] = c2;
      }
    }
  }
}

template <class S>
VectorX<S> positional_encode(const Vector3<double>& x, int levels, bool include_raw) {
  VectorX<S> out(6 * levels + (include_raw ? 3 : 0));
  encode_point<S>(x.data(), levels, include_raw, out.data());
  return out;
}

/// Encodes points (columns) into an encoded_dim x N matrix.
template <class S>
void positional_encode_batch(const Eigen::Ref<const Matrix3X<S>>& points, int levels,
                             bool include_raw, Eigen::Ref<MatrixX<S>> out) {
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    const double p[3] = {static_cast<double>(points(0, j)),
                         static_cast<double>(points(1, j)),
                         static_cast<double>(points(2, j))};
    encode_point<S>(p, levels, include_raw, out.col(j).data());
  }
}

// ---------------------------------------------------------------------------
// Parameters

template <class S>
struct DenseLayer {
  MatrixX<S> weight;  // out x in
  VectorX<S> bias;    // out
};

template <class S>
struct FieldParams {
  FieldConfig config;
  std::vector<DenseLayer<S>> trunk;
  DenseLayer<S> density_head;     // 1 x width
  DenseLayer<S> semantic_hidden;  // hidden x width
  DenseLayer<S> semantic_head;    // classes x hidden

  // Visits tensors in canonical order (trunk layers in depth order with weight
  // before bias, then density head, semantic hidden, semantic head); this order
  // is shared by the optimizer and checkpoint serialization.
  template <class F>
  void for_each_tensor(F&& f) {
    for (std::size_t i = 0; i < trunk.size(); ++i) {
      f("trunk." + std::to_string(i) + ".weight", trunk[i].weight);
      f("trunk." + std::to_string(i) + ".bias", trunk[i].bias);
    }
    f(std::string("density.weight"), density_head.weight);
    f(std::string("density.bias"), density_head.bias);
    f(std::string("semantic_hidden.weight"), semantic_hidden.weight);
    f(std::string("semantic_hidden.bias"), semantic_hidden.bias);
    f(std::string("semantic_head.weight"), semantic_head.weight);
    f(std::string("semantic_head.bias"), semantic_head.bias);
  }

  template <class F>
  void for_each_tensor(F&& f) const {
    const_cast<FieldParams*>(this)->for_each_tensor(
        [&](const std::string& name, auto& t) { f(name, std::as_const(t)); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, const auto& t) { n += t.size(); });
    return n;
  }

  void set_zero() {
    for_each_tensor([](const std::string&, auto& t) { t.setZero(); });
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const std::string&, const auto& t) {
      if (!t.allFinite()) ok = false;
    });
    return ok;
  }

  template <class T>
  FieldParams<T> cast() const {
    FieldParams<T> out;
    out.config = config;
    out.trunk.resize(trunk.size());
    for (std::size_t i = 0; i < trunk.size(); ++i) {
      out.trunk[i].weight = trunk[i].weight.template cast<T>();
      out.trunk[i].bias = trunk[i].bias.template cast<T>();
    }
    out.density_head.weight = density_head.weight.template cast<T>();
    out.density_head.bias = density_head.bias.template cast<T>();
    out.semantic_hidden.weight = semantic_hidden.weight.template cast<T>();
    out.semantic_hidden.bias = semantic_hidden.bias.template cast<T>();
    out.semantic_head.weight = semantic_head.weight.template cast<T>();
    out.semantic_head.bias = semantic_head.bias.template cast<T>();
    return out;
  }
};

/// Allocates zero-initialized parameters with shapes implied by config.
template <class S>
FieldParams<S> make_field_params(const FieldConfig& config) {
  config.validate();
  const int in = config.encoded_dim();
  const int w = config.trunk_width;
  FieldParams<S> p;
  p.config = config;
  p.trunk.resize(config.trunk_depth);
  for (int l = 0; l < config.trunk_depth; ++l) {
    int cols = (l == 0) ? in : w;
    if (l + 1 == config.skip_layer) cols += in;
    p.trunk[l].weight = MatrixX<S>::Zero(w, cols);
    p.trunk[l].bias = VectorX<S>::Zero(w);
  }
  p.density_head.weight = MatrixX<S>::Zero(1, w);
  p.density_head.bias = VectorX<S>::Zero(1);
  p.semantic_hidden.weight = MatrixX<S>::Zero(config.semantic_hidden_width, w);
  p.semantic_hidden.bias = VectorX<S>::Zero(config.semantic_hidden_width);
  p.semantic_head.weight = MatrixX<S>::Zero(config.num_classes, config.semantic_hidden_width);
  p.semantic_head.bias = VectorX<S>::Zero(config.num_classes);
  return p;
}

template <class S>
FieldParams<S> zeros_like(const FieldParams<S>& other) {
  return make_field_params<S>(other.config);
}

/// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
/// Deterministic for a fixed (config, seed).
template <class S>
FieldParams<S> init_field(const FieldConfig& config, std::uint64_t seed) {
  FieldParams<S> p = make_field_params<S>(config);
  TinyRng rng(hash_u64(seed, kRngInitField));
  p.for_each_tensor([&](const std::string& name, auto& t) {
    if (name.ends_with(".bias")) return;  // biases stay zero
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.cols()));
    S* data = t.data();
    for (Eigen::Index i = 0; i < t.size(); ++i)
      data[i] = static_cast<S>(rng.uniform(-bound, bound));
  });
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward
//
// The trunk applies affine + rectifier per layer; the layer at skip_layer
// consumes [previous activation; encoding]. Density is a rectified scalar off
// the trunk output; logits come off a rectified hidden layer with no output
// activation.

template <class S>
struct FieldBatchOutput {
  VectorX<S> sigma;   // N, >= 0
  MatrixX<S> logits;  // classes x N
};

template <class S>
struct FieldForwardCache {
  MatrixX<S> encoded;                   // in x N
  std::vector<MatrixX<S>> trunk_post;   // depth entries, width x N (post-relu)
  MatrixX<S> hidden_post;               // hidden x N
  MatrixX<S> logits;                    // classes x N
  VectorX<S> sigma;                     // N
};

namespace detail {
template <class S, class M>
inline void relu_inplace(M& m) {
  m = m.cwiseMax(S(0));
}

// bias gradient: sum of columns, accumulated without temporaries
template <class S>
inline void add_colsum(const MatrixX<S>& m, VectorX<S>& out) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) out += m.col(c);
}
}  // namespace detail

/// GEMM-batched forward over encoded points (columns); fills the cache needed
/// by field_backward_batch. Takes the encoding by value (callers move a
/// freshly built matrix). Optional additive noise on the density
/// pre-activation supports training-time density regularization.
template <class S>
void field_forward_batch(const FieldParams<S>& p, MatrixX<S> encoded,
                         FieldForwardCache<S>& cache,
                         const VectorX<S>* density_noise = nullptr) {
  const FieldConfig& cfg = p.config;
  const int in = cfg.encoded_dim();
  const int w = cfg.trunk_width;
  const Eigen::Index n = encoded.cols();
  if (encoded.rows() != in)
    throw InvalidInput("field_forward: encoded dimension " + std::to_string(encoded.rows()) +
                       " does not match config (" + std::to_string(in) + ")");
  cache.encoded = std::move(encoded);
  cache.trunk_post.resize(cfg.trunk_depth);
  const MatrixX<S>* prev = &cache.encoded;
  for (int l = 0; l < cfg.trunk_depth; ++l) {
    MatrixX<S>& h = cache.trunk_post[l];
    const MatrixX<S>& W = p.trunk[l].weight;
    if (l + 1 == cfg.skip_layer) {
      // W = [A | B] over [prev; encoding]; evaluated as two products.
      h.noalias() = W.leftCols(prev->rows()) * (*prev);
      h.noalias() += W.rightCols(in) * cache.encoded;
    } else {
      h.noalias() = W * (*prev);
    }
    h.colwise() += p.trunk[l].bias;
    detail::relu_inplace<S>(h);
    prev = &h;
  }
  const MatrixX<S>& tout = *prev;

  MatrixX<S> sig_pre = p.density_head.weight * tout;
  sig_pre.array() += p.density_head.bias(0);
  if (density_noise != nullptr) {
    if (density_noise->size() != n)
      throw InvalidInput("field_forward: density noise length mismatch");
    sig_pre.row(0) += density_noise->transpose();
  }
  cache.sigma = sig_pre.row(0).transpose().cwiseMax(S(0));

  cache.hidden_post.noalias() = p.semantic_hidden.weight * tout;
  cache.hidden_post.colwise() += p.semantic_hidden.bias;
  detail::relu_inplace<S>(cache.hidden_post);

  cache.logits.noalias() = p.semantic_head.weight * cache.hidden_post;
  cache.logits.colwise() += p.semantic_head.bias;
}

/// Maps encoded points (columns) to densities and logits. A pure map: the
/// batch result equals per-column evaluation exactly.
template <class S>
FieldBatchOutput<S> field_forward(const FieldParams<S>& p,
                                  const Eigen::Ref<const MatrixX<S>>& encoded) {
  FieldBatchOutput<S> out;
  out.sigma.resize(encoded.cols());
  out.logits.resize(p.config.num_classes, encoded.cols());
  FieldForwardCache<S> cache;
  for (Eigen::Index j = 0; j < encoded.cols(); ++j) {
    field_forward_batch<S>(p, encoded.col(j), cache);
    out.sigma(j) = cache.sigma(0);
    out.logits.col(j) = cache.logits.col(0);
  }
  return out;
}

/// Accumulates parameter gradients (grad += ...) for upstream gradients on
/// sigma and logits. Input-point gradients are not produced; sample positions
/// are constants in training.
template <class S>
void field_backward_batch(const FieldParams<S>& p, const FieldForwardCache<S>& cache,
                          const VectorX<S>& dsigma, const MatrixX<S>& dlogits,
                          FieldParams<S>& grad) {
  const FieldConfig& cfg = p.config;
  const int in = cfg.encoded_dim();
  const Eigen::Index n = cache.encoded.cols();
  if (dsigma.size() != n || dlogits.cols() != n)
    throw InvalidInput("field_backward: upstream gradient size mismatch");

  const MatrixX<S>& tout = cache.trunk_post.back();

  // semantic branch
  grad.semantic_head.weight.noalias() += dlogits * cache.hidden_post.transpose();
  detail::add_colsum(dlogits, grad.semantic_head.bias);
  MatrixX<S> dhid = p.semantic_head.weight.transpose() * dlogits;
  dhid.array() *= (cache.hidden_post.array() > S(0)).template cast<S>();
  grad.semantic_hidden.weight.noalias() += dhid * tout.transpose();
  detail::add_colsum(dhid, grad.semantic_hidden.bias);
  MatrixX<S> dtout = p.semantic_hidden.weight.transpose() * dhid;

  // density branch
  VectorX<S> dsig_pre =
      dsigma.cwiseProduct((cache.sigma.array() > S(0)).template cast<S>().matrix());
  grad.density_head.weight.row(0).noalias() += (tout * dsig_pre).transpose();
  grad.density_head.bias(0) += dsig_pre.sum();
  dtout.noalias() += p.density_head.weight.transpose() * dsig_pre.transpose();

  // trunk: dtout plays the role of the incoming activation gradient; it is
  // masked in place and ping-ponged with a scratch buffer
  MatrixX<S> dpost = std::move(dtout);
  MatrixX<S> scratch;
  for (int l = cfg.trunk_depth - 1; l >= 0; --l) {
    dpost.array() *= (cache.trunk_post[l].array() > S(0)).template cast<S>();
    const MatrixX<S>& input_prev = (l == 0) ? cache.encoded : cache.trunk_post[l - 1];
    const MatrixX<S>& W = p.trunk[l].weight;
    if (l + 1 == cfg.skip_layer) {
      const Eigen::Index pw = input_prev.rows();
      grad.trunk[l].weight.leftCols(pw).noalias() += dpost * input_prev.transpose();
      grad.trunk[l].weight.rightCols(in).noalias() += dpost * cache.encoded.transpose();
      detail::add_colsum(dpost, grad.trunk[l].bias);
      if (l > 0) {
        scratch.noalias() = W.leftCols(pw).transpose() * dpost;
        dpost.swap(scratch);
      }
    } else {
      grad.trunk[l].weight.noalias() += dpost * input_prev.transpose();
      detail::add_colsum(dpost, grad.trunk[l].bias);
      if (l > 0) {
        scratch.noalias() = W.transpose() * dpost;
        dpost.swap(scratch);
      }
    }
  }
}

}  // namespace semfield
