#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gpvs/linalg.hpp"
#include "gpvs/rng.hpp"

namespace gpvs {

// Gaussian-process machinery over encoder hidden states: squared-exponential
// kernel, joint prior with identity or zero mean, prior function sampling and
// exact posterior prediction. Latent dimensions are independent GPs sharing
// one Gram matrix.

enum class MeanMode { identity, zero };

inline std::string to_string(MeanMode m) {
  return m == MeanMode::identity ? "identity" : "zero";
}

inline MeanMode mean_mode_from_string(const std::string& s) {
  if (s == "identity") return MeanMode::identity;
  if (s == "zero") return MeanMode::zero;
  throw std::invalid_argument("unknown mean mode: " + s);
}

/// Kernel hyperparameters and mean mode of the prior over latent context.
/// The config-facing constructor enforces the grid-search bounds
/// v ∈ [0.01, 100], r ∈ [0.0001, 10]; pass allow_out_of_range to bypass.
struct GpPriorSpec {
  double v = 1.0;       // signal scale
  double r = 1.0;       // length scale
  double sigma2 = 0.1;  // observation-noise variance
  MeanMode mean_mode = MeanMode::identity;

  static GpPriorSpec checked(double v, double r, double sigma2, MeanMode mean_mode,
                             bool allow_out_of_range = false) {
    if (!(v > 0.0) || !(r > 0.0) || sigma2 < 0.0)
      throw std::invalid_argument("GpPriorSpec: v and r must be positive, sigma2 >= 0");
    if (!allow_out_of_range) {
      if (v < 0.01 || v > 100.0)
        throw std::invalid_argument("GpPriorSpec: v=" + std::to_string(v) +
                                    " outside [0.01, 100]");
      if (r < 0.0001 || r > 10.0)
        throw std::invalid_argument("GpPriorSpec: r=" + std::to_string(r) +
                                    " outside [0.0001, 10]");
    }
    return GpPriorSpec{v, r, sigma2, mean_mode};
  }
};

/// k(h, h') = v² exp(−‖h−h'‖² / (2r²)).
inline double kernel(const GpPriorSpec& spec, const std::vector<double>& h,
                     const std::vector<double>& h2) {
  if (h.size() != h2.size())
    throw std::invalid_argument("kernel: dimension mismatch " + std::to_string(h.size()) +
                                " vs " + std::to_string(h2.size()));
  double d2 = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double d = h[i] - h2[i];
    d2 += d * d;
  }
  return spec.v * spec.v * std::exp(-d2 / (2.0 * spec.r * spec.r));
}

/// Per-coordinate affine map applied to kernel inputs. Recurrent hidden
/// states drift in scale across training, which drives the Gram toward
/// identity; standardizing each coordinate across positions keeps the length
/// scale meaningful. Identity when disabled or when n == 1 leaves std at the
/// epsilon floor.
struct Standardizer {
  std::vector<double> center;   // per coordinate
  std::vector<double> inv_std;  // per coordinate
  bool enabled = false;

  static Standardizer fit(const std::vector<double>& rows, std::size_t n, std::size_t d) {
    Standardizer s;
    s.enabled = true;
    s.center.assign(d, 0.0);
    s.inv_std.assign(d, 1.0);
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += rows[i * d + j];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double c = rows[i * d + j] - mean;
        var += c * c;
      }
      var /= static_cast<double>(n);
      s.center[j] = mean;
      s.inv_std[j] = 1.0 / (std::sqrt(var) + 1e-8);
    }
    return s;
  }

  std::vector<double> apply(const std::vector<double>& rows, std::size_t n,
                            std::size_t d) const {
    if (!enabled) return rows;
    std::vector<double> out(rows.size());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        out[i * d + j] = (rows[i * d + j] - center[j]) * inv_std[j];
    return out;
  }
};

/// Joint prior over the latent context of one sequence: Gram matrix over all
/// hidden-state pairs (shared by every latent dimension), prior mean, and the
/// cached Cholesky of Gram + σ²I together with diag((Gram+σ²I)⁻¹).
struct GpJoint {
  GpPriorSpec spec;
  std::size_t n = 0;          // positions
  std::size_t input_dim = 0;  // hidden dimensionality fed to the kernel
  std::size_t latent_dim = 0; // dimensionality of the mean / latent draws
  std::vector<double> kernel_inputs;  // n×input_dim, standardized when enabled
  Standardizer standardizer;
  std::vector<double> mean;   // n×latent_dim
  std::vector<double> gram;   // n×n, no noise term
  linalg::CholeskyFactor chol;       // of gram + σ²I
  std::vector<double> kinv_diag;     // diag((gram + σ²I)⁻¹), via unit-vector solves

  double logdet() const { return chol.logdet; }

  std::vector<double> kernel_row(const std::vector<double>& query_std) const {
    std::vector<double> out(n);
    std::vector<double> xi(input_dim);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < input_dim; ++j) xi[j] = kernel_inputs[i * input_dim + j];
      out[i] = kernel(spec, query_std, xi);
    }
    return out;
  }
};

/// Build the joint prior over `hidden` (n×d row-major). The kernel sees the
/// standardized rows when standardize_kernel_inputs is set; the mean always
/// uses the raw rows (identity mode) or zeros. `mean_override`, when given,
/// replaces the derived mean (used with a learned projection ahead of the GP
/// layer when latent and hidden sizes differ).
inline GpJoint build_joint(const GpPriorSpec& spec, const std::vector<double>& hidden,
                           std::size_t n, std::size_t d,
                           bool standardize_kernel_inputs = true,
                           const std::vector<double>* mean_override = nullptr,
                           std::size_t override_dim = 0) {
  if (hidden.size() != n * d)
    throw std::invalid_argument("build_joint: hidden size does not match n*d");
  GpJoint joint;
  joint.spec = spec;
  joint.n = n;
  joint.input_dim = d;
  if (standardize_kernel_inputs && n >= 1)
    joint.standardizer = Standardizer::fit(hidden, n, d);
  joint.kernel_inputs = joint.standardizer.apply(hidden, n, d);

  if (mean_override) {
    if (override_dim == 0 || mean_override->size() != n * override_dim)
      throw std::invalid_argument("build_joint: mean override size mismatch");
    joint.latent_dim = override_dim;
    joint.mean = *mean_override;
  } else {
    joint.latent_dim = d;
    if (spec.mean_mode == MeanMode::identity)
      joint.mean = hidden;
    else
      joint.mean.assign(n * d, 0.0);
  }

  joint.gram.assign(n * n, 0.0);
  std::vector<double> xi(d), xj(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      for (std::size_t k = 0; k < d; ++k) {
        xi[k] = joint.kernel_inputs[i * d + k];
        xj[k] = joint.kernel_inputs[j * d + k];
      }
      const double kij = kernel(spec, xi, xj);
      joint.gram[i * n + j] = kij;
      joint.gram[j * n + i] = kij;
    }
  }

  std::vector<double> noisy = joint.gram;
  for (std::size_t i = 0; i < n; ++i) noisy[i * n + i] += spec.sigma2;
  joint.chol = linalg::cholesky(linalg::SpdMatrix(n, std::move(noisy)));

  joint.kinv_diag.assign(n, 0.0);
  std::vector<double> e(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    e[i] = 1.0;
    const std::vector<double> col = joint.chol.solve(e, 1);
    joint.kinv_diag[i] = col[i];
    e[i] = 0.0;
  }
  return joint;
}

/// One draw of the prior function values plus observation noise: for each
/// latent dimension d independently, z_d = mean_d + L·u_d with L the factor
/// of Gram + σ²I. Returns n×latent_dim row-major; deterministic per seed.
inline std::vector<double> sample_prior_function(const GpJoint& joint, Rng& rng) {
  const std::size_t n = joint.n, dim = joint.latent_dim;
  std::vector<double> out(n * dim);
  std::vector<double> u(n);
  for (std::size_t d = 0; d < dim; ++d) {
    for (auto& v : u) v = rng.normal();
    const std::vector<double> lu = joint.chol.apply_lower(u);
    for (std::size_t i = 0; i < n; ++i) out[i * dim + d] = joint.mean[i * dim + d] + lu[i];
  }
  return out;
}

struct PosteriorPrediction {
  std::size_t m = 0;
  std::size_t latent_dim = 0;
  std::vector<double> mean;      // m×latent_dim
  std::vector<double> cov;       // m×m, shared across latent dimensions
  double variance(std::size_t i) const { return cov[i * m + i]; }
};

/// Exact GP posterior over query points given observed latent values:
///   μ* = m(q) + k(q,H) K⁻¹ (z − m(H)),   Σ* = k(q,q) − k(q,H) K⁻¹ k(H,q)
/// with K = Gram + σ²I. Queries are mapped through the joint's standardizer
/// before kernel evaluation. `query_mean` overrides the derived m(q).
inline PosteriorPrediction posterior_predict(const GpJoint& joint,
                                             const std::vector<double>& observed_z,
                                             const std::vector<double>& query,
                                             std::size_t m,
                                             const std::vector<double>* query_mean = nullptr) {
  const std::size_t n = joint.n, d = joint.input_dim, dim = joint.latent_dim;
  if (observed_z.size() != n * dim)
    throw std::invalid_argument("posterior_predict: observed values have wrong size");
  if (query.size() != m * d)
    throw std::invalid_argument("posterior_predict: query dimension " +
                                std::to_string(query.size() / std::max<std::size_t>(m, 1)) +
                                " does not match hidden dimension " + std::to_string(d));
  PosteriorPrediction pred;
  pred.m = m;
  pred.latent_dim = dim;

  const std::vector<double> qstd = joint.standardizer.apply(query, m, d);

  // base mean at the queries
  pred.mean.assign(m * dim, 0.0);
  if (query_mean) {
    if (query_mean->size() != m * dim)
      throw std::invalid_argument("posterior_predict: query mean size mismatch");
    pred.mean = *query_mean;
  } else if (joint.spec.mean_mode == MeanMode::identity) {
    if (dim != d)
      throw std::invalid_argument(
          "posterior_predict: identity mean needs latent dim == hidden dim");
    pred.mean = query;
  }

  // k(q,q) before conditioning
  pred.cov.assign(m * m, 0.0);
  std::vector<double> qi(d), qj(d);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      for (std::size_t k = 0; k < d; ++k) {
        qi[k] = qstd[i * d + k];
        qj[k] = qstd[j * d + k];
      }
      const double kij = kernel(joint.spec, qi, qj);
      pred.cov[i * m + j] = kij;
      pred.cov[j * m + i] = kij;
    }
  if (n == 0) return pred;  // no observations: posterior equals the prior

  // cross kernel block k(q, H), m×n
  std::vector<double> kqh(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < d; ++k) qi[k] = qstd[i * d + k];
    const std::vector<double> row = joint.kernel_row(qi);
    std::copy(row.begin(), row.end(), kqh.begin() + i * n);
  }

  // residual solve: alpha = K⁻¹ (z − m(H)), n×dim
  std::vector<double> resid(n * dim);
  for (std::size_t i = 0; i < n * dim; ++i) resid[i] = observed_z[i] - joint.mean[i];
  const std::vector<double> alpha = joint.chol.solve(resid, dim);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t dd = 0; dd < dim; ++dd) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += kqh[i * n + j] * alpha[j * dim + dd];
      pred.mean[i * dim + dd] += acc;
    }

  // covariance reduction: k(q,q) − k(q,H) K⁻¹ k(H,q)
  std::vector<double> khq(n * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) khq[j * m + i] = kqh[i * n + j];
  const std::vector<double> v = joint.chol.solve(khq, m);  // n×m
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += kqh[i * n + k] * v[k * m + j];
      pred.cov[i * m + j] -= acc;
    }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      const double s = 0.5 * (pred.cov[i * m + j] + pred.cov[j * m + i]);
      pred.cov[i * m + j] = s;
      pred.cov[j * m + i] = s;
    }
  for (std::size_t i = 0; i < m; ++i)
    if (pred.cov[i * m + i] < 0.0) pred.cov[i * m + i] = 0.0;
  return pred;
}

}  // namespace gpvs
