// Test-only oracles, independent of the implementation paths they check.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fedstage/model.hpp"

namespace oracles {

// Central finite differences of a scalar functional of the parameter vector.
inline std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> params, double h = 1e-5) {
  std::vector<double> grad(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + h;
    const double fp = f(params);
    params[i] = orig - h;
    const double fm = f(params);
    params[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

inline double max_relative_error(const std::vector<double>& a,
                                 const std::vector<double>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::fabs(a[i]), std::fabs(b[i])});
    if (scale < 1e-10) continue;  // both effectively zero
    worst = std::max(worst, std::fabs(a[i] - b[i]) / scale);
  }
  return worst;
}

// Adaptive Simpson quadrature.
inline double adaptive_simpson(const std::function<double(double)>& f, double a,
                               double b, double tol, int depth = 40) {
  const double c = (a + b) / 2.0;
  const double fa = f(a), fb = f(b), fc = f(c);
  std::function<double(double, double, double, double, double, double, double, int)>
      rec = [&](double lo, double hi, double flo, double fhi, double fmid,
                double whole, double eps, int d) -> double {
    const double mid = (lo + hi) / 2.0;
    const double lm = (lo + mid) / 2.0, rm = (mid + hi) / 2.0;
    const double flm = f(lm), frm = f(rm);
    const double left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid);
    const double right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi);
    if (d <= 0 || std::fabs(left + right - whole) < 15.0 * eps) {
      return left + right + (left + right - whole) / 15.0;
    }
    return rec(lo, mid, flo, fmid, flm, left, eps / 2.0, d - 1) +
           rec(mid, hi, fmid, fhi, frm, right, eps / 2.0, d - 1);
  };
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
  return rec(a, b, fa, fb, fc, whole, tol, depth);
}

inline double student_t_pdf(double x, int dof) {
  const double nu = static_cast<double>(dof);
  const double log_c = std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0) -
                       0.5 * std::log(nu * M_PI);
  return std::exp(log_c - (nu + 1.0) / 2.0 * std::log1p(x * x / nu));
}

// Two-tailed p via quadrature of the Student-t density: p = 1 - 2*F0(|t|).
inline double student_t_p_two_tailed_quadrature(double t, int dof,
                                                double tol = 1e-10) {
  const double at = std::fabs(t);
  if (at == 0.0) return 1.0;
  const double body = adaptive_simpson(
      [dof](double x) { return student_t_pdf(x, dof); }, 0.0, at, tol);
  return 1.0 - 2.0 * body;
}

// Nearest-centroid classifier: train centroids per class, classify by
// Euclidean distance.
inline double nearest_centroid_accuracy(const fedstage::LabeledDataset& train,
                                        const fedstage::LabeledDataset& test) {
  const size_t dim = train.images.front().size();
  std::vector<std::vector<double>> centroids(
      static_cast<size_t>(train.num_classes), std::vector<double>(dim, 0.0));
  std::vector<size_t> counts(static_cast<size_t>(train.num_classes), 0);
  for (size_t i = 0; i < train.size(); ++i) {
    const auto label = static_cast<size_t>(train.labels[i]);
    for (size_t j = 0; j < dim; ++j) centroids[label][j] += train.images[i][j];
    ++counts[label];
  }
  for (size_t k = 0; k < centroids.size(); ++k) {
    for (double& v : centroids[k]) v /= static_cast<double>(counts[k]);
  }
  size_t correct = 0;
  for (size_t i = 0; i < test.size(); ++i) {
    int best = -1;
    double best_dist = 0.0;
    for (size_t k = 0; k < centroids.size(); ++k) {
      double dist = 0.0;
      for (size_t j = 0; j < dim; ++j) {
        const double d = test.images[i][j] - centroids[k][j];
        dist += d * d;
      }
      if (best < 0 || dist < best_dist) {
        best = static_cast<int>(k);
        best_dist = dist;
      }
    }
    if (best == test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

// Plain unweighted per-coordinate mean, accumulated in reverse order so it
// shares no code path or summation order with the implementation.
inline std::vector<double> mean_oracle(
    const std::vector<std::vector<double>>& vectors) {
  std::vector<double> mean(vectors.front().size(), 0.0);
  for (auto it = vectors.rbegin(); it != vectors.rend(); ++it) {
    for (size_t j = 0; j < mean.size(); ++j) mean[j] += (*it)[j];
  }
  for (double& v : mean) v /= static_cast<double>(vectors.size());
  return mean;
}

}  // namespace oracles
