#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dncbm/matrix.hpp"
#include "dncbm/naming.hpp"
#include "dncbm/rng.hpp"

namespace dncbm {

/// Bias-free linear probe over concept activations: logits = activations × weights.
struct CbmProbe {
  Matrix weights;  // h × K
  std::vector<std::string> class_names;
  double lambda2 = 0.0;

  std::size_t concepts() const { return weights.rows(); }
  std::size_t classes() const { return weights.cols(); }

  friend bool operator==(const CbmProbe&, const CbmProbe&) = default;
};

struct LabeledActivations {
  Matrix activations;  // N × h, non-negative
  std::vector<std::size_t> labels;
};

struct ProbeConfig {
  double lambda2 = 0.0;
  double lr = 1e-3;
  std::size_t epochs = 200;
  RngSeed seed{};
  // Full-batch up to this many samples, minibatches of `batch_size` beyond.
  std::size_t full_batch_limit = 65536;
  std::size_t batch_size = 4096;
};

struct Prediction {
  Matrix logits;
  std::vector<std::size_t> classes;
};

struct ExplanationEntry {
  std::size_t index = 0;
  std::string name;
  double contribution = 0.0;
};

struct Explanation {
  std::size_t prediction = 0;
  double logit = 0.0;
  std::vector<ExplanationEntry> entries;  // contribution descending
};

enum class InterventionMode { KeepOnly, Remove };

struct InterventionSpec {
  InterventionMode mode = InterventionMode::Remove;
  std::vector<std::size_t> concepts;
};

struct DecisionSparsity {
  double mean = 0.0;          // mean concepts needed over counted samples
  std::size_t counted = 0;
  std::size_t excluded = 0;   // samples whose predicted logit is not positive
};

/// Minimises CE + λ₂‖ω‖₁ with Adam from zero weights. The L1 term uses the
/// subgradient sign(ω), zero at zero.
CbmProbe train_probe(const LabeledActivations& data, std::size_t num_classes, const ProbeConfig& config,
                     std::vector<std::string> class_names = {});

Prediction predict(const CbmProbe& probe, const Matrix& activations);

/// Keeps the k largest-magnitude weights of every class column.
CbmProbe prune_topk(const CbmProbe& probe, std::size_t k);

/// Per-concept contributions ω[c, cls] · activation[c].
std::vector<double> contributions(const CbmProbe& probe, std::span<const double> activation, std::size_t cls);

Explanation explain_local(const CbmProbe& probe, const NamedConceptSpace& space, std::span<const double> activation,
                          std::size_t top);

/// Mean contribution to `cls` over the samples labelled `cls`.
Explanation explain_global(const CbmProbe& probe, const NamedConceptSpace& space, const LabeledActivations& data,
                           std::size_t cls, std::size_t top);

CbmProbe intervene(const CbmProbe& probe, const InterventionSpec& spec);

/// Smallest number of largest contributions whose sum reaches
/// fraction × (sum of all contributions).
std::size_t decision_support_size(std::span<const double> contributions, double fraction);

DecisionSparsity sparsity_of_decision(const CbmProbe& probe, const Matrix& activations, double fraction);

}  // namespace dncbm
