#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "gpvs/gp.hpp"
#include "gpvs/rng.hpp"
#include "gpvs/tensor.hpp"

namespace gpvs {

// Amortized inference: two single-hidden-layer feed-forward networks map each
// hidden state to the mean and log-variance of a per-position diagonal
// Gaussian. Log-variances are clamped to [-10, 10] before exponentiation.

inline constexpr double kLogVarClamp = 10.0;

struct LatentPosterior {
  ad::Tensor mu;     // n×D
  ad::Tensor s;      // n×D variances, strictly positive
  ad::Tensor log_s;  // clamped log-variances; log(s) without the round trip
  std::size_t n = 0;
  std::size_t dim = 0;
};

namespace detail_init {

inline ad::Tensor uniform_param(ad::Shape shape, std::string name, std::uint64_t seed,
                                double half_width = 0.08) {
  Rng rng(seed);
  std::vector<double> data(ad::shape_numel(shape));
  for (auto& v : data) v = rng.uniform(-half_width, half_width);
  return ad::Tensor::param(std::move(shape), std::move(data), std::move(name));
}

inline ad::Tensor zero_param(ad::Shape shape, std::string name) {
  std::vector<double> data(ad::shape_numel(shape), 0.0);
  return ad::Tensor::param(std::move(shape), std::move(data), std::move(name));
}

}  // namespace detail_init

/// f_mu and f_sigma2: hidden dim -> latent dim, one hidden tanh layer each.
struct PosteriorNet {
  ad::Tensor w1_mu, b1_mu, w2_mu, b2_mu;
  ad::Tensor w1_lv, b1_lv, w2_lv, b2_lv;
  std::size_t in_dim = 0, hidden_dim = 0, out_dim = 0;

  static PosteriorNet init(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim,
                           std::uint64_t seed, const std::string& prefix = "posterior") {
    using detail_init::uniform_param;
    using detail_init::zero_param;
    PosteriorNet net;
    net.in_dim = in_dim;
    net.hidden_dim = hidden_dim;
    net.out_dim = out_dim;
    auto s = [&](const std::string& n) { return derive_seed(seed, "init/" + prefix + n); };
    net.w1_mu = uniform_param({in_dim, hidden_dim}, prefix + ".mu.w1", s(".mu.w1"));
    net.b1_mu = zero_param({hidden_dim}, prefix + ".mu.b1");
    net.w2_mu = uniform_param({hidden_dim, out_dim}, prefix + ".mu.w2", s(".mu.w2"));
    net.b2_mu = zero_param({out_dim}, prefix + ".mu.b2");
    net.w1_lv = uniform_param({in_dim, hidden_dim}, prefix + ".lv.w1", s(".lv.w1"));
    net.b1_lv = zero_param({hidden_dim}, prefix + ".lv.b1");
    net.w2_lv = uniform_param({hidden_dim, out_dim}, prefix + ".lv.w2", s(".lv.w2"));
    net.b2_lv = zero_param({out_dim}, prefix + ".lv.b2");
    return net;
  }

  std::vector<ad::Tensor> params() const {
    return {w1_mu, b1_mu, w2_mu, b2_mu, w1_lv, b1_lv, w2_lv, b2_lv};
  }
};

/// Per-position diagonal Gaussian q(z_i | h_i); differentiable w.r.t. the net
/// weights and the hidden states.
inline LatentPosterior infer_posterior(ad::Tape& tape, const PosteriorNet& net,
                                       const ad::Tensor& hidden) {
  if (hidden.rank() != 2 || hidden.cols() != net.in_dim)
    throw std::invalid_argument("infer_posterior: hidden shape " +
                                ad::shape_str(hidden.shape()) + " does not match net input " +
                                std::to_string(net.in_dim));
  LatentPosterior post;
  post.n = hidden.rows();
  post.dim = net.out_dim;
  const ad::Tensor hid_mu =
      tape.tanh(tape.broadcast_add_rows(tape.matmul(hidden, net.w1_mu), net.b1_mu));
  post.mu = tape.broadcast_add_rows(tape.matmul(hid_mu, net.w2_mu), net.b2_mu);
  const ad::Tensor hid_lv =
      tape.tanh(tape.broadcast_add_rows(tape.matmul(hidden, net.w1_lv), net.b1_lv));
  const ad::Tensor lv =
      tape.broadcast_add_rows(tape.matmul(hid_lv, net.w2_lv), net.b2_lv);
  post.log_s = tape.clamp(lv, -kLogVarClamp, kLogVarClamp);
  post.s = tape.exp(post.log_s);
  return post;
}

/// z = mu + sqrt(tau·s) ∘ u with u ~ N(0, I). tau = 0 returns mu exactly
/// (mean decoding); tau = 1 is plain posterior sampling; tau > 1 scales up
/// the covariance to trade quality for diversity.
inline ad::Tensor reparam_sample(ad::Tape& tape, const LatentPosterior& post, double tau,
                                 Rng& rng) {
  if (tau < 0.0) throw std::invalid_argument("reparam_sample: tau must be >= 0");
  if (tau == 0.0) return post.mu;
  std::vector<double> noise(post.n * post.dim);
  for (auto& v : noise) v = rng.normal();
  const ad::Tensor u = ad::Tensor::constant({post.n, post.dim}, std::move(noise));
  return tape.add(post.mu, tape.mul(tape.sqrt(tape.scale(post.s, tau)), u));
}

/// Closed-form KL between the diagonal posterior and the GP prior, summed over
/// latent dimensions:
///   Σ_d ½[ logdet K − Σ_i log s_id − n + tr(K⁻¹ diag(s_d)) + (m_d−μ_d)ᵀK⁻¹(m_d−μ_d) ]
/// with K = Gram + σ²I held constant on the tape. Gradients reach μ and s,
/// and the encoder through `prior_mean` when it is a live tensor (identity
/// mean). Without `prior_mean` the joint's stored mean is used as a constant.
inline ad::Tensor kl_diag_vs_gp(ad::Tape& tape, const LatentPosterior& post,
                                const GpJoint& joint,
                                const ad::Tensor* prior_mean = nullptr) {
  const std::size_t n = post.n, dim = post.dim;
  if (n != joint.n || dim != joint.latent_dim)
    throw std::invalid_argument("kl_diag_vs_gp: posterior is " + std::to_string(n) + "x" +
                                std::to_string(dim) + ", prior is " +
                                std::to_string(joint.n) + "x" +
                                std::to_string(joint.latent_dim));
  ad::Tensor m;
  if (prior_mean) {
    if (prior_mean->rank() != 2 || prior_mean->rows() != n || prior_mean->cols() != dim)
      throw std::invalid_argument("kl_diag_vs_gp: prior mean shape mismatch");
    m = *prior_mean;
  } else {
    m = ad::Tensor::constant({n, dim}, joint.mean);
  }

  // trace term: Σ_{i,d} (K⁻¹)_{ii} s_{i,d}
  std::vector<double> kdiag_rep(n * dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) kdiag_rep[i * dim + d] = joint.kinv_diag[i];
  const ad::Tensor trace_term =
      tape.sum(tape.mul(post.s, ad::Tensor::constant({n, dim}, std::move(kdiag_rep))));

  // quadratic term: Σ_d (m_d − μ_d)ᵀ K⁻¹ (m_d − μ_d), all dimensions at once
  const ad::Tensor diff = tape.sub(m, post.mu);
  const ad::Tensor quad = tape.sum(tape.mul(diff, tape.spd_solve(joint.chol, diff)));

  const double constant =
      static_cast<double>(dim) * joint.logdet() - static_cast<double>(n * dim);
  ad::Tensor acc = tape.sub(trace_term, tape.sum(post.log_s));
  acc = tape.add(acc, quad);
  acc = tape.shift(acc, constant);
  return tape.scale(acc, 0.5);
}

/// KL against N(0, I): Σ ½(μ² + s − log s − 1). Equals the GP form with zero
/// mean, identity Gram and σ² = 0.
inline ad::Tensor kl_diag_vs_standard_normal(ad::Tape& tape, const LatentPosterior& post) {
  ad::Tensor acc = tape.add(tape.sum(tape.square(post.mu)), tape.sum(post.s));
  acc = tape.sub(acc, tape.sum(post.log_s));
  acc = tape.shift(acc, -static_cast<double>(post.n * post.dim));
  return tape.scale(acc, 0.5);
}

}  // namespace gpvs
