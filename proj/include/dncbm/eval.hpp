#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dncbm/cbm.hpp"
#include "dncbm/matrix.hpp"
#include "dncbm/naming.hpp"
#include "dncbm/rng.hpp"

namespace dncbm {

struct JaccardCounts {
  std::size_t m11 = 0;  // true positives
  std::size_t m10 = 0;  // false negatives
  std::size_t m01 = 0;  // false positives
};

/// m11 / (m11 + m10 + m01); an empty union counts as perfect agreement.
double jaccard(const JaccardCounts& counts);

struct AttributeMatchReport {
  double mean_jaccard = 0.0;
  // A concept is predicted on a sample iff strength > threshold. Concepts with
  // no held-out positives get +inf and are listed in `never_positive`.
  std::vector<double> thresholds;
  std::vector<std::size_t> never_positive;
  std::vector<double> per_image;
};

/// Picks, per concept, the held-out F1-maximising cut among midpoints of the
/// sorted unique held-out strengths (ties to the lowest cut), binarises the
/// evaluation rows and averages per-image Jaccard against `ground_truth`.
AttributeMatchReport attribute_match_eval(const Matrix& strengths, const Matrix& ground_truth,
                                          std::span<const std::size_t> heldout,
                                          std::span<const std::size_t> evaluation);

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

struct GroupAccuracy {
  std::vector<double> per_group;
  std::vector<std::size_t> group_sizes;
  double overall = 0.0;

  double worst() const;
};

GroupAccuracy group_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                             std::span<const std::size_t> groups, std::size_t num_groups);

struct ClusterTopConcept {
  std::size_t index = 0;
  std::string name;
  double strength = 0.0;
};

struct ClusterReport {
  std::size_t k = 0;
  Matrix centroids;  // k × h
  std::vector<std::vector<ClusterTopConcept>> top_concepts;
  std::vector<std::vector<std::size_t>> members;
};

ClusterReport cluster_concepts(const Matrix& activations, const NamedConceptSpace& space, std::size_t k,
                               RngSeed seed, std::size_t top, std::size_t max_iters = 300);

}  // namespace dncbm
