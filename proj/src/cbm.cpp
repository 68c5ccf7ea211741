#include "dncbm/cbm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>

#include "dncbm/error.hpp"
#include "dncbm/numerics.hpp"

namespace dncbm {

namespace {

void check_concepts(const CbmProbe& probe, std::size_t width, const char* what) {
  if (width != probe.concepts()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("{}: activation width {} does not match probe concept count {}", what, width,
                            probe.concepts()));
  }
}

void check_space(const CbmProbe& probe, const NamedConceptSpace& space) {
  if (space.size() != probe.concepts()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("named concept space has {} concepts, probe has {}", space.size(), probe.concepts()));
  }
}

// Indices sorted by value descending, ties to the lower index.
std::vector<std::size_t> descending_order(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  return order;
}

Explanation ranked(std::size_t prediction, std::span<const double> contrib, const NamedConceptSpace& space,
                   std::size_t top) {
  Explanation ex;
  ex.prediction = prediction;
  for (double c : contrib) ex.logit += c;
  const auto order = descending_order(contrib);
  top = std::min(top, order.size());
  for (std::size_t r = 0; r < top; ++r) {
    const std::size_t c = order[r];
    ex.entries.push_back({c, space[c].name, contrib[c]});
  }
  return ex;
}

}  // namespace

CbmProbe train_probe(const LabeledActivations& data, std::size_t num_classes, const ProbeConfig& config,
                     std::vector<std::string> class_names) {
  const std::size_t n = data.activations.rows();
  const std::size_t h = data.activations.cols();
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "train_probe: empty dataset");
  if (num_classes < 2) throw Error(ErrorKind::InvalidArgument, "train_probe: need at least 2 classes");
  if (data.labels.size() != n) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("train_probe: {} labels for {} samples", data.labels.size(), n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (data.labels[i] >= num_classes) {
      throw Error(ErrorKind::OutOfRange,
                  fmt::format("train_probe: label {} at row {} outside [0, {})", data.labels[i], i, num_classes));
    }
  }
  if (std::all_of(data.labels.begin(), data.labels.end(), [&](std::size_t y) { return y == data.labels[0]; })) {
    throw Error(ErrorKind::InvalidArgument, "train_probe: every sample has the same label");
  }
  if (!(config.lambda2 >= 0.0) || !(config.lr > 0.0) || config.epochs == 0 || config.batch_size == 0) {
    throw Error(ErrorKind::InvalidConfig, "train_probe: lambda2 >= 0, lr > 0, epochs >= 1, batch_size >= 1 required");
  }
  if (class_names.empty()) {
    for (std::size_t k = 0; k < num_classes; ++k) class_names.push_back(fmt::format("class_{}", k));
  } else if (class_names.size() != num_classes) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("train_probe: {} class names for {} classes", class_names.size(), num_classes));
  }

  CbmProbe probe{Matrix(h, num_classes), std::move(class_names), config.lambda2};
  AdamState adam = AdamState::zeros_like(probe.weights, AdamHyper{config.lr, 0.9, 0.999, 1e-8});

  const bool full_batch = n <= config.full_batch_limit;
  const std::size_t batch = full_batch ? n : config.batch_size;
  Rng shuffler(derive_seed(config.seed, "probe/shuffle"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (!full_batch) shuffler.shuffle(order);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      std::span<const std::size_t> idx(order.data() + start, stop - start);
      Matrix x = full_batch ? data.activations : data.activations.select_rows(idx);
      Matrix probs = softmax_rows(matmul(x, probe.weights));
      const double inv_n = 1.0 / static_cast<double>(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        auto row = probs.row(i);
        row[data.labels[idx[i]]] -= 1.0;
        for (double& v : row) v *= inv_n;
      }
      Matrix grad = matmul_tn(x, probs);
      if (config.lambda2 > 0.0) {
        auto g = grad.data();
        auto w = probe.weights.data();
        for (std::size_t j = 0; j < g.size(); ++j) {
          if (w[j] > 0.0) g[j] += config.lambda2;
          else if (w[j] < 0.0) g[j] -= config.lambda2;
        }
      }
      adam_update(probe.weights, grad, adam);
    }
  }
  return probe;
}

Prediction predict(const CbmProbe& probe, const Matrix& activations) {
  check_concepts(probe, activations.cols(), "predict");
  Prediction out{matmul(activations, probe.weights), {}};
  out.classes.reserve(activations.rows());
  for (std::size_t i = 0; i < activations.rows(); ++i) out.classes.push_back(argmax(out.logits.row(i)));
  return out;
}

CbmProbe prune_topk(const CbmProbe& probe, std::size_t k) {
  if (k == 0) throw Error(ErrorKind::InvalidArgument, "prune_topk: k must be at least 1");
  if (k > probe.concepts()) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("prune_topk: k={} exceeds concept count {}", k, probe.concepts()));
  }
  CbmProbe out = probe;
  for (std::size_t cls = 0; cls < probe.classes(); ++cls) {
    std::vector<double> mag = probe.weights.column(cls);
    for (double& m : mag) m = std::abs(m);
    const auto order = descending_order(mag);
    for (std::size_t r = k; r < order.size(); ++r) out.weights(order[r], cls) = 0.0;
  }
  return out;
}

std::vector<double> contributions(const CbmProbe& probe, std::span<const double> activation, std::size_t cls) {
  check_concepts(probe, activation.size(), "contributions");
  if (cls >= probe.classes()) {
    throw Error(ErrorKind::OutOfRange, fmt::format("class {} out of range [0, {})", cls, probe.classes()));
  }
  std::vector<double> out(activation.size());
  for (std::size_t c = 0; c < activation.size(); ++c) out[c] = probe.weights(c, cls) * activation[c];
  return out;
}

Explanation explain_local(const CbmProbe& probe, const NamedConceptSpace& space, std::span<const double> activation,
                          std::size_t top) {
  check_concepts(probe, activation.size(), "explain_local");
  check_space(probe, space);
  std::vector<double> logits(probe.classes(), 0.0);
  for (std::size_t c = 0; c < activation.size(); ++c) {
    if (activation[c] == 0.0) continue;
    for (std::size_t k = 0; k < logits.size(); ++k) logits[k] += activation[c] * probe.weights(c, k);
  }
  const std::size_t pred = argmax(logits);
  return ranked(pred, contributions(probe, activation, pred), space, top);
}

Explanation explain_global(const CbmProbe& probe, const NamedConceptSpace& space, const LabeledActivations& data,
                           std::size_t cls, std::size_t top) {
  check_concepts(probe, data.activations.cols(), "explain_global");
  check_space(probe, space);
  if (cls >= probe.classes()) {
    throw Error(ErrorKind::OutOfRange, fmt::format("class {} out of range [0, {})", cls, probe.classes()));
  }
  std::vector<double> mean(probe.concepts(), 0.0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < data.activations.rows(); ++i) {
    if (data.labels.at(i) != cls) continue;
    auto row = data.activations.row(i);
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += probe.weights(c, cls) * row[c];
    ++count;
  }
  if (count == 0) throw Error(ErrorKind::InvalidArgument, fmt::format("class {} has no samples", cls));
  for (double& m : mean) m /= static_cast<double>(count);
  return ranked(cls, mean, space, top);
}

CbmProbe intervene(const CbmProbe& probe, const InterventionSpec& spec) {
  std::unordered_set<std::size_t> selected;
  for (std::size_t c : spec.concepts) {
    if (c >= probe.concepts()) {
      throw Error(ErrorKind::OutOfRange,
                  fmt::format("intervention concept {} out of range [0, {})", c, probe.concepts()));
    }
    selected.insert(c);
  }
  CbmProbe out = probe;
  for (std::size_t c = 0; c < probe.concepts(); ++c) {
    const bool in_set = selected.contains(c);
    const bool zero = spec.mode == InterventionMode::KeepOnly ? !in_set : in_set;
    if (zero)
      for (double& w : out.weights.row(c)) w = 0.0;
  }
  return out;
}

std::size_t decision_support_size(std::span<const double> contrib, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, fmt::format("fraction {} outside (0, 1]", fraction));
  }
  std::vector<double> sorted(contrib.begin(), contrib.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double total = 0.0;
  for (double c : sorted) total += c;
  if (!(total > 0.0)) throw Error(ErrorKind::InvalidArgument, "decision support of a non-positive logit");
  const double target = fraction * total;
  double prefix = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    prefix += sorted[i];
    if (prefix >= target) return i + 1;
  }
  return sorted.size();
}

DecisionSparsity sparsity_of_decision(const CbmProbe& probe, const Matrix& activations, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, fmt::format("fraction {} outside (0, 1]", fraction));
  }
  const Prediction pred = predict(probe, activations);
  DecisionSparsity out;
  double sum = 0.0;
  for (std::size_t i = 0; i < activations.rows(); ++i) {
    const std::size_t cls = pred.classes[i];
    const auto contrib = contributions(probe, activations.row(i), cls);
    double total = 0.0;
    for (double c : contrib) total += c;
    if (!(pred.logits(i, cls) > 0.0) || !(total > 0.0)) {
      ++out.excluded;
      continue;
    }
    sum += static_cast<double>(decision_support_size(contrib, fraction));
    ++out.counted;
  }
  out.mean = out.counted > 0 ? sum / static_cast<double>(out.counted) : 0.0;
  return out;
}

}  // namespace dncbm
