#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gpvs/rng.hpp"

namespace gpvs::linalg {

/// Thrown when a matrix cannot be Cholesky-factored even after the full
/// jitter schedule. Carries the jitters that were attempted.
class NotPositiveDefinite : public std::runtime_error {
 public:
  NotPositiveDefinite(std::size_t order, std::vector<double> jitters)
      : std::runtime_error(format(order, jitters)),
        attempted_jitters(std::move(jitters)) {}

  std::vector<double> attempted_jitters;

 private:
  static std::string format(std::size_t order, const std::vector<double>& js) {
    std::ostringstream os;
    os << "matrix of order " << order
       << " is not positive definite; attempted jitters:";
    for (double j : js) os << ' ' << j;
    return os.str();
  }
};

/// Dense symmetric matrix, symmetrized on construction.
class SpdMatrix {
 public:
  SpdMatrix(std::size_t n, std::vector<double> data) : n_(n), data_(std::move(data)) {
    if (data_.size() != n_ * n_)
      throw std::invalid_argument("SpdMatrix: data size does not match order");
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i + 1; j < n_; ++j) {
        const double s = 0.5 * (data_[i * n_ + j] + data_[j * n_ + i]);
        data_[i * n_ + j] = s;
        data_[j * n_ + i] = s;
      }
  }

  static SpdMatrix identity(std::size_t n) {
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return SpdMatrix(n, std::move(d));
  }

  std::size_t order() const { return n_; }
  double at(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }
  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t n_;
  std::vector<double> data_;
};

/// Lower-triangular Cholesky factor of an SPD matrix (plus any jitter that
/// had to be added to the diagonal to make the factorization succeed).
struct CholeskyFactor {
  std::size_t n = 0;
  std::vector<double> lower;  // row-major n×n, strictly upper part zero
  double logdet = 0.0;        // 2·Σ log L_ii
  double applied_jitter = 0.0;

  /// x = (L Lᵀ)⁻¹ b for a column-major set of right-hand sides held as a
  /// row-major n×cols matrix.
  std::vector<double> solve(const std::vector<double>& b, std::size_t cols) const {
    if (b.size() != n * cols)
      throw std::invalid_argument("CholeskyFactor::solve: rhs has " +
                                  std::to_string(b.size()) + " entries, expected " +
                                  std::to_string(n * cols));
    std::vector<double> x = b;
    // forward substitution L y = b
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < i; ++k) {
        const double lik = lower[i * n + k];
        if (lik == 0.0) continue;
        for (std::size_t c = 0; c < cols; ++c) x[i * cols + c] -= lik * x[k * cols + c];
      }
      const double d = lower[i * n + i];
      for (std::size_t c = 0; c < cols; ++c) x[i * cols + c] /= d;
    }
    // back substitution Lᵀ x = y
    for (std::size_t ii = n; ii-- > 0;) {
      for (std::size_t k = ii + 1; k < n; ++k) {
        const double lki = lower[k * n + ii];
        if (lki == 0.0) continue;
        for (std::size_t c = 0; c < cols; ++c) x[ii * cols + c] -= lki * x[k * cols + c];
      }
      const double d = lower[ii * n + ii];
      for (std::size_t c = 0; c < cols; ++c) x[ii * cols + c] /= d;
    }
    return x;
  }

  /// L·u for a length-n vector u.
  std::vector<double> apply_lower(const std::vector<double>& u) const {
    if (u.size() != n)
      throw std::invalid_argument("CholeskyFactor::apply_lower: dimension mismatch");
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k <= i; ++k) acc += lower[i * n + k] * u[k];
      out[i] = acc;
    }
    return out;
  }
};

namespace detail {

inline bool try_cholesky(const std::vector<double>& a, std::size_t n,
                         std::vector<double>& l_out, double& logdet_out) {
  std::vector<double> l(n * n, 0.0);
  double logdet = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) acc -= l[i * n + k] * l[j * n + k];
      if (i == j) {
        if (!(acc > 0.0) || !std::isfinite(acc)) return false;
        const double d = std::sqrt(acc);
        l[i * n + i] = d;
        logdet += 2.0 * std::log(d);
      } else {
        l[i * n + j] = acc / l[j * n + j];
      }
    }
  }
  l_out = std::move(l);
  logdet_out = logdet;
  return true;
}

}  // namespace detail

/// Cholesky factorization with a fixed jitter schedule: on failure, retries
/// with {1e-10, 1e-8, 1e-6, 1e-4}·mean(diag) added to the diagonal, in order.
inline CholeskyFactor cholesky(const SpdMatrix& m) {
  const std::size_t n = m.order();
  CholeskyFactor f;
  f.n = n;
  if (n == 0) return f;

  double mean_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean_diag += m.at(i, i);
  mean_diag /= static_cast<double>(n);

  static constexpr double kJitterScales[] = {0.0, 1e-10, 1e-8, 1e-6, 1e-4};
  std::vector<double> attempted;
  for (double scale : kJitterScales) {
    const double jitter = scale * mean_diag;
    attempted.push_back(jitter);
    std::vector<double> a = m.data();
    for (std::size_t i = 0; i < n; ++i) a[i * n + i] += jitter;
    if (detail::try_cholesky(a, n, f.lower, f.logdet)) {
      f.applied_jitter = jitter;
      return f;
    }
  }
  throw NotPositiveDefinite(n, std::move(attempted));
}

/// Solve (L Lᵀ) X = B where B is row-major n×cols.
inline std::vector<double> solve_spd(const CholeskyFactor& f,
                                     const std::vector<double>& b,
                                     std::size_t cols = 1) {
  return f.solve(b, cols);
}

/// mean + L·u with u i.i.d. standard normal; deterministic given the seed.
inline std::vector<double> sample_mvn(const std::vector<double>& mean,
                                      const CholeskyFactor& f, Rng& rng) {
  if (mean.size() != f.n)
    throw std::invalid_argument("sample_mvn: mean length " + std::to_string(mean.size()) +
                                " does not match factor order " + std::to_string(f.n));
  std::vector<double> u(f.n);
  for (auto& v : u) v = rng.normal();
  std::vector<double> x = f.apply_lower(u);
  for (std::size_t i = 0; i < f.n; ++i) x[i] += mean[i];
  return x;
}

}  // namespace gpvs::linalg
