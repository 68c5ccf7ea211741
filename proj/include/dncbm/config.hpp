#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dncbm/cbm.hpp"
#include "dncbm/rng.hpp"
#include "dncbm/sae.hpp"

namespace dncbm {

struct ProbeSettings {
  ProbeConfig train;          // seed is derived from RunConfig::seed
  std::size_t prune_topk = 0; // 0 keeps every weight
};

struct VocabSettings {
  std::string path;
};

struct EvalSettings {
  std::optional<double> min_alignment;  // selected on the held-out split when absent
  double heldout_fraction = 0.2;
  std::size_t explain_top = 5;
  std::size_t clusters = 10;
  std::size_t cluster_top = 5;
  std::size_t kmeans_max_iters = 300;
  double sparsity_fraction = 0.9;
};

struct SweepSettings {
  std::vector<double> lr{1e-5, 5e-5, 1e-4, 5e-4, 1e-3};
  std::vector<double> lambda1{3e-5, 1.5e-4, 3e-4, 1.5e-3, 3e-3};
  std::vector<std::size_t> expansion{2, 4, 8};
  double heldout_fraction = 0.1;
};

/// Sectioned key = value text:
///
///   seed = 0
///   [sae]    expansion_factor, lambda1, lr, epochs, batch_size, resample_every,
///            unit_norm_decoder, adam_beta1, adam_beta2, adam_eps
///   [probe]  lambda2, lr, epochs, prune_topk, full_batch_limit, batch_size
///   [vocab]  path
///   [eval]   min_alignment, heldout_fraction, explain_top, clusters,
///            cluster_top, kmeans_max_iters, sparsity_fraction
///   [sweep]  lr, lambda1, expansion (comma-separated lists), heldout_fraction
///
/// Unknown sections or keys are errors.
struct RunConfig {
  RngSeed seed{};
  SaeConfig sae;
  ProbeSettings probe;
  VocabSettings vocab;
  EvalSettings eval;
  SweepSettings sweep;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);

  /// Propagates `seed` into module configs via labelled derivation.
  void apply_seed(RngSeed s);
  void validate() const;

  SaeConfig sae_config() const;
  ProbeConfig probe_config() const;
  RngSeed split_seed() const { return derive_seed(seed, "split"); }
  RngSeed cluster_seed() const { return derive_seed(seed, "cluster"); }
};

}  // namespace dncbm
