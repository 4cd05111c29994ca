#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gpvs/gp.hpp"
#include "gpvs/linalg.hpp"
#include "gpvs/rng.hpp"

namespace gpvs {

// 1-D demonstration of the prior and posterior over functions: five samples
// from the prior over a query grid, then five samples from the posterior after
// conditioning on synthetic observations, with mean ± 2·std bands.

struct GpDemoRow {
  double x = 0.0;
  std::string sample_id;  // "prior_k" or "post_k"
  double value = 0.0;
  double band_lo = 0.0;
  double band_hi = 0.0;
};

struct GpDemoResult {
  std::vector<GpDemoRow> rows;
  std::vector<double> train_x;
  std::vector<double> train_z;
};

namespace detail_demo {

inline double demo_signal(double x) { return std::sin(1.5 * x); }

}  // namespace detail_demo

/// Samples the prior over a grid, conditions on n synthetic observations of a
/// fixed smooth signal, and samples the posterior. Kernel inputs are used raw
/// (no standardization): the demo grid is already unit scale.
inline GpDemoResult run_gp_demo(const GpPriorSpec& spec, std::size_t n_train,
                                std::uint64_t seed, std::size_t grid_points = 101,
                                double x_lo = -5.0, double x_hi = 5.0) {
  if (n_train < 1) throw std::invalid_argument("gp demo: need at least one training point");
  if (grid_points < 2) throw std::invalid_argument("gp demo: need at least two grid points");
  GpDemoResult out;

  std::vector<double> grid(grid_points);
  for (std::size_t i = 0; i < grid_points; ++i)
    grid[i] = x_lo + (x_hi - x_lo) * static_cast<double>(i) /
                         static_cast<double>(grid_points - 1);

  // training inputs sit strictly inside the grid range
  out.train_x.resize(n_train);
  for (std::size_t i = 0; i < n_train; ++i)
    out.train_x[i] = n_train == 1
                         ? 0.5 * (x_lo + x_hi)
                         : (x_lo + 1.0) + (x_hi - x_lo - 2.0) * static_cast<double>(i) /
                                              static_cast<double>(n_train - 1);
  out.train_z.resize(n_train);
  for (std::size_t i = 0; i < n_train; ++i)
    out.train_z[i] = detail_demo::demo_signal(out.train_x[i]);

  // prior over the grid
  const GpJoint prior = build_joint(spec, grid, grid_points, 1, false);
  const double prior_sd = std::sqrt(spec.v * spec.v + spec.sigma2);
  for (std::size_t k = 0; k < 5; ++k) {
    Rng rng(derive_seed(seed, "prior_sample", k));
    const std::vector<double> sample = sample_prior_function(prior, rng);
    for (std::size_t i = 0; i < grid_points; ++i) {
      GpDemoRow row;
      row.x = grid[i];
      row.sample_id = "prior_" + std::to_string(k);
      row.value = sample[i];
      row.band_lo = prior.mean[i] - 2.0 * prior_sd;
      row.band_hi = prior.mean[i] + 2.0 * prior_sd;
      out.rows.push_back(row);
    }
  }

  // posterior conditioned on the observations
  const GpJoint joint = build_joint(spec, out.train_x, n_train, 1, false);
  const PosteriorPrediction post = posterior_predict(joint, out.train_z, grid, grid_points);
  linalg::SpdMatrix post_cov(grid_points, post.cov);
  const linalg::CholeskyFactor post_chol = linalg::cholesky(post_cov);
  for (std::size_t k = 0; k < 5; ++k) {
    Rng rng(derive_seed(seed, "post_sample", k));
    const std::vector<double> sample = linalg::sample_mvn(post.mean, post_chol, rng);
    for (std::size_t i = 0; i < grid_points; ++i) {
      const double sd = std::sqrt(std::max(post.variance(i), 0.0));
      GpDemoRow row;
      row.x = grid[i];
      row.sample_id = "post_" + std::to_string(k);
      row.value = sample[i];
      row.band_lo = post.mean[i] - 2.0 * sd;
      row.band_hi = post.mean[i] + 2.0 * sd;
      out.rows.push_back(row);
    }
  }
  return out;
}

inline void write_gp_demo_csv(const GpDemoResult& demo, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write demo csv: " + path);
  f << "x,sample_id,value,band_lo,band_hi\n";
  char buf[160];
  for (const GpDemoRow& row : demo.rows) {
    std::snprintf(buf, sizeof(buf), "%.9g,%s,%.9g,%.9g,%.9g\n", row.x,
                  row.sample_id.c_str(), row.value, row.band_lo, row.band_hi);
    f << buf;
  }
}

}  // namespace gpvs
