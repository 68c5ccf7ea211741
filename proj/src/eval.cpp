#include "dncbm/eval.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "dncbm/error.hpp"
#include "dncbm/numerics.hpp"

namespace dncbm {

double jaccard(const JaccardCounts& counts) {
  const std::size_t denom = counts.m11 + counts.m10 + counts.m01;
  if (denom == 0) return 1.0;
  return static_cast<double>(counts.m11) / static_cast<double>(denom);
}

namespace {

constexpr double kNever = std::numeric_limits<double>::infinity();

double f1_at(const std::vector<std::pair<double, bool>>& samples, double cut) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& [s, gt] : samples) {
    const bool pred = s > cut;
    tp += pred && gt;
    fp += pred && !gt;
    fn += !pred && gt;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

void check_split(std::span<const std::size_t> idx, std::size_t n, const char* what) {
  for (std::size_t i : idx) {
    if (i >= n) throw Error(ErrorKind::OutOfRange, fmt::format("{} index {} out of range [0, {})", what, i, n));
  }
}

}  // namespace

AttributeMatchReport attribute_match_eval(const Matrix& strengths, const Matrix& ground_truth,
                                          std::span<const std::size_t> heldout,
                                          std::span<const std::size_t> evaluation) {
  if (strengths.rows() != ground_truth.rows() || strengths.cols() != ground_truth.cols()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("strengths {} and ground truth {} differ in shape", strengths.shape_string(),
                            ground_truth.shape_string()));
  }
  for (double v : ground_truth.data()) {
    if (v != 0.0 && v != 1.0) throw Error(ErrorKind::InvalidArgument, "ground truth must be 0/1 valued");
  }
  const std::size_t n = strengths.rows();
  check_split(heldout, n, "held-out");
  check_split(evaluation, n, "evaluation");
  {
    std::vector<bool> in_heldout(n, false);
    for (std::size_t i : heldout) in_heldout[i] = true;
    for (std::size_t i : evaluation) {
      if (in_heldout[i]) {
        throw Error(ErrorKind::InvalidArgument, fmt::format("sample {} is in both held-out and evaluation splits", i));
      }
    }
  }
  if (evaluation.empty()) throw Error(ErrorKind::InvalidArgument, "evaluation split is empty");

  AttributeMatchReport rep;
  const std::size_t concepts = strengths.cols();
  rep.thresholds.assign(concepts, kNever);
  for (std::size_t c = 0; c < concepts; ++c) {
    std::vector<std::pair<double, bool>> samples;
    samples.reserve(heldout.size());
    bool any_positive = false;
    for (std::size_t i : heldout) {
      samples.emplace_back(strengths(i, c), ground_truth(i, c) == 1.0);
      any_positive = any_positive || ground_truth(i, c) == 1.0;
    }
    if (!any_positive) {
      rep.never_positive.push_back(c);
      continue;
    }
    std::vector<double> uniq;
    for (const auto& s : samples) uniq.push_back(s.first);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    double best_f1 = 0.0;
    for (std::size_t u = 0; u + 1 < uniq.size(); ++u) {
      const double cut = 0.5 * (uniq[u] + uniq[u + 1]);
      const double f1 = f1_at(samples, cut);
      if (f1 > best_f1) {
        best_f1 = f1;
        rep.thresholds[c] = cut;
      }
    }
  }

  double total = 0.0;
  for (std::size_t i : evaluation) {
    JaccardCounts counts;
    for (std::size_t c = 0; c < concepts; ++c) {
      const bool pred = strengths(i, c) > rep.thresholds[c];
      const bool gt = ground_truth(i, c) == 1.0;
      counts.m11 += pred && gt;
      counts.m10 += !pred && gt;
      counts.m01 += pred && !gt;
    }
    rep.per_image.push_back(jaccard(counts));
    total += rep.per_image.back();
  }
  rep.mean_jaccard = total / static_cast<double>(evaluation.size());
  return rep;
}

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  if (predictions.size() != labels.size()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("accuracy: {} predictions for {} labels", predictions.size(), labels.size()));
  }
  if (labels.empty()) throw Error(ErrorKind::InvalidArgument, "accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double GroupAccuracy::worst() const {
  return per_group.empty() ? 0.0 : *std::min_element(per_group.begin(), per_group.end());
}

GroupAccuracy group_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                             std::span<const std::size_t> groups, std::size_t num_groups) {
  if (groups.size() != labels.size()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("group_accuracy: {} group ids for {} labels", groups.size(), labels.size()));
  }
  GroupAccuracy out;
  out.overall = accuracy(predictions, labels);
  std::vector<std::size_t> hits(num_groups, 0);
  out.group_sizes.assign(num_groups, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (groups[i] >= num_groups) {
      throw Error(ErrorKind::OutOfRange, fmt::format("group {} outside [0, {})", groups[i], num_groups));
    }
    ++out.group_sizes[groups[i]];
    hits[groups[i]] += predictions[i] == labels[i];
  }
  for (std::size_t g = 0; g < num_groups; ++g) {
    if (out.group_sizes[g] == 0) throw Error(ErrorKind::InvalidArgument, fmt::format("group {} is empty", g));
    out.per_group.push_back(static_cast<double>(hits[g]) / static_cast<double>(out.group_sizes[g]));
  }
  return out;
}

ClusterReport cluster_concepts(const Matrix& activations, const NamedConceptSpace& space, std::size_t k,
                               RngSeed seed, std::size_t top, std::size_t max_iters) {
  if (activations.cols() != space.size()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("activations {} do not match {} named concepts", activations.shape_string(), space.size()));
  }
  KMeansResult km = kmeans_fit(activations, k, seed, max_iters);
  ClusterReport rep;
  rep.k = k;
  rep.members.resize(k);
  for (std::size_t i = 0; i < km.assignment.size(); ++i) rep.members[km.assignment[i]].push_back(i);
  rep.centroids = std::move(km.centroids);
  const std::size_t keep = std::min(top, space.size());
  for (std::size_t c = 0; c < k; ++c) {
    auto row = rep.centroids.row(c);
    std::vector<std::size_t> order(row.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    std::vector<ClusterTopConcept> tops;
    for (std::size_t r = 0; r < keep; ++r) tops.push_back({order[r], space[order[r]].name, row[order[r]]});
    rep.top_concepts.push_back(std::move(tops));
  }
  return rep;
}

}  // namespace dncbm
