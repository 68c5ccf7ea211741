#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dncbm/matrix.hpp"
#include "dncbm/rng.hpp"

namespace dncbm {

/// a × b. Throws DimensionMismatch naming both shapes.
Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ × b without materialising the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a × bᵀ without materialising the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::size_t step = 0;
  Matrix m;
  Matrix v;
  AdamHyper hyper;

  static AdamState zeros_like(const Matrix& param, AdamHyper hyper);
};

struct AdamResult {
  Matrix param;
  AdamState state;
};

/// One bias-corrected Adam update. Pure: inputs are not modified.
AdamResult adam_step(const Matrix& param, const Matrix& grad, const AdamState& state);
/// In-place variant used by the training loops.
void adam_update(Matrix& param, const Matrix& grad, AdamState& state);

double cosine_sim(std::span<const double> u, std::span<const double> v);

/// Mean over rows of -log softmax(logits)[label].
double cross_entropy(const Matrix& logits, std::span<const std::size_t> labels);
/// Row-wise softmax, max-shifted.
Matrix softmax_rows(const Matrix& logits);

/// Index of the largest element; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

struct KMeansResult {
  Matrix centroids;
  std::vector<std::size_t> assignment;
  // WCSS after seeding, then after every Lloyd iteration.
  std::vector<double> wcss_history;
  std::size_t iterations = 0;

  double wcss() const { return wcss_history.empty() ? 0.0 : wcss_history.back(); }
};

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are moved to the
/// point farthest from its current centroid.
KMeansResult kmeans_fit(const Matrix& points, std::size_t k, RngSeed seed, std::size_t max_iters);

double squared_distance(std::span<const double> a, std::span<const double> b);

}  // namespace dncbm
