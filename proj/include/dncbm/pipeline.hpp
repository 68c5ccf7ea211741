#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dncbm/cbm.hpp"
#include "dncbm/config.hpp"
#include "dncbm/naming.hpp"

namespace dncbm::pipeline {

namespace fs = std::filesystem;

struct Options {
  std::optional<fs::path> config;
  std::optional<fs::path> features;
  std::optional<fs::path> vocab;
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> probe;
  std::optional<fs::path> out;
  std::optional<fs::path> text_embeddings;
  std::optional<fs::path> spec;        // intervention spec
  std::optional<fs::path> split;       // held-out indices
  std::optional<fs::path> groups;      // per-sample group ids
  std::optional<fs::path> attributes;  // ground-truth attribute matrix
  std::optional<fs::path> classes;     // class names, one per line
  std::optional<std::uint64_t> seed;
};

/// Each command reads its inputs, validates shapes against the checkpoint and
/// writes its artifacts into `opts.out`. Human-readable progress goes to `log`.
void train_sae(const Options& opts, std::ostream& log);
void name(const Options& opts, std::ostream& log);
void train_probe(const Options& opts, std::ostream& log);
void explain(const Options& opts, std::ostream& log);
void intervene(const Options& opts, std::ostream& log);
void eval_accuracy(const Options& opts, std::ostream& log);
void eval_jaccard(const Options& opts, std::ostream& log);
void cluster(const Options& opts, std::ostream& log);
void sweep(const Options& opts, std::ostream& log);

/// Parses an intervention spec:
///
///   mode = keep-only        # or remove
///   concepts = 3, 17, sparrow
///
/// Names select every concept carrying that name in `space`.
InterventionSpec parse_intervention_spec(std::string_view text, const NamedConceptSpace* space);

/// Deterministic held-out / evaluation partition of [0, n).
struct Split {
  std::vector<std::size_t> heldout;
  std::vector<std::size_t> evaluation;
};
Split seeded_split(std::size_t n, double heldout_fraction, RngSeed seed);
Split split_from_indices(std::size_t n, std::vector<std::size_t> heldout);

/// Entry point shared by the executable and the integration tests.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dncbm::pipeline
