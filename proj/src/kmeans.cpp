#include <algorithm>
#include <limits>

#include <fmt/format.h>

#include "dncbm/error.hpp"
#include "dncbm/numerics.hpp"

namespace dncbm {

namespace {

std::size_t nearest(const Matrix& centroids, std::span<const double> p) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double d = squared_distance(p, centroids.row(c));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

double wcss_of(const Matrix& points, const Matrix& centroids, std::span<const std::size_t> assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i)
    total += squared_distance(points.row(i), centroids.row(assignment[i]));
  return total;
}

Matrix seed_plus_plus(const Matrix& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows();
  Matrix centroids(k, points.cols());
  std::vector<bool> chosen(n, false);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());

  std::size_t pick = rng.below(n);
  for (std::size_t c = 0; c < k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (double x : d2) total += x;
      if (total > 0.0) {
        pick = rng.weighted(d2);
      } else {
        // Every remaining point coincides with a centroid.
        pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), false) - chosen.begin());
      }
    }
    chosen[pick] = true;
    auto src = points.row(pick);
    std::copy(src.begin(), src.end(), centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], squared_distance(points.row(i), centroids.row(c)));
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans_fit(const Matrix& points, std::size_t k, RngSeed seed, std::size_t max_iters) {
  const std::size_t n = points.rows();
  if (k == 0) throw Error(ErrorKind::InvalidArgument, "kmeans: k must be at least 1");
  if (k > n) {
    throw Error(ErrorKind::InvalidArgument, fmt::format("kmeans: k={} exceeds point count {}", k, n));
  }
  if (max_iters == 0) throw Error(ErrorKind::InvalidArgument, "kmeans: max_iters must be at least 1");
  if (!points.all_finite()) throw Error(ErrorKind::NonFinite, "kmeans: non-finite input point");

  Rng rng(seed);
  KMeansResult res;
  res.centroids = seed_plus_plus(points, k, rng);
  res.assignment.resize(n);
  for (std::size_t i = 0; i < n; ++i) res.assignment[i] = nearest(res.centroids, points.row(i));
  res.wcss_history.push_back(wcss_of(points, res.centroids, res.assignment));

  const std::size_t dim = points.cols();
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    // Update step.
    Matrix sums(k, dim);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = sums.row(res.assignment[i]);
      auto src = points.row(i);
      for (std::size_t j = 0; j < dim; ++j) dst[j] += src[j];
      ++counts[res.assignment[i]];
    }
    std::vector<bool> relocated(n, false);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        auto dst = res.centroids.row(c);
        auto src = sums.row(c);
        for (std::size_t j = 0; j < dim; ++j) dst[j] = src[j] / static_cast<double>(counts[c]);
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (relocated[i] || counts[res.assignment[i]] <= 1) continue;
        const double d = squared_distance(points.row(i), res.centroids.row(res.assignment[i]));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far == n) continue;
      relocated[far] = true;
      --counts[res.assignment[far]];
      res.assignment[far] = c;
      counts[c] = 1;
      auto src = points.row(far);
      std::copy(src.begin(), src.end(), res.centroids.row(c).begin());
    }

    // Assignment step.
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = nearest(res.centroids, points.row(i));
      // Keep the current cluster on exact distance ties so WCSS cannot rise.
      if (a != res.assignment[i] &&
          squared_distance(points.row(i), res.centroids.row(a)) <
              squared_distance(points.row(i), res.centroids.row(res.assignment[i]))) {
        res.assignment[i] = a;
        changed = true;
      }
    }
    res.wcss_history.push_back(wcss_of(points, res.centroids, res.assignment));
    res.iterations = iter + 1;
    if (!changed) break;
  }
  return res;
}

}  // namespace dncbm
