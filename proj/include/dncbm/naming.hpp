#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dncbm/matrix.hpp"
#include "dncbm/sae.hpp"

namespace dncbm {

/// Word list with unit-normalised text embeddings, one row per word.
class Vocabulary {
 public:
  Vocabulary() = default;
  /// Rows are normalised to unit length; rows already unit-norm to 1e-12 are
  /// kept bit-for-bit. Throws on duplicate words or zero rows.
  Vocabulary(std::vector<std::string> words, Matrix embeddings);

  std::size_t size() const { return words_.size(); }
  std::size_t dim() const { return embeddings_.cols(); }
  const std::vector<std::string>& words() const { return words_; }
  const Matrix& embeddings() const { return embeddings_; }
  const std::string& word(std::size_t i) const { return words_.at(i); }
  std::span<const double> embedding(std::size_t i) const { return embeddings_.row(i); }
  /// Index of `word`, or size() when absent.
  std::size_t find(const std::string& word) const;

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::vector<std::string> words_;
  Matrix embeddings_;
};

struct NamedConcept {
  std::string name;
  std::size_t name_index = 0;
  double alignment = 0.0;           // cosine between dictionary vector and name embedding
  std::vector<double> dictionary;   // row c of W_D

  friend bool operator==(const NamedConcept&, const NamedConcept&) = default;
};

struct NamedConceptSpace {
  std::vector<NamedConcept> concepts;

  std::size_t size() const { return concepts.size(); }
  const NamedConcept& operator[](std::size_t c) const { return concepts.at(c); }
};

struct CompoundNode {
  std::string name;
  std::vector<std::size_t> members;
};

struct CompoundNodes {
  std::vector<CompoundNode> nodes;
  Matrix strengths;  // N × |nodes|, max over member activations
};

struct AlignmentBins {
  std::vector<std::size_t> high;
  std::vector<std::size_t> mid;
  std::vector<std::size_t> low;
};

std::span<const double> dictionary_vector(const SaeModel& model, std::size_t index);

/// Names every concept by the vocabulary word of highest cosine similarity to
/// its dictionary vector; ties go to the lower vocabulary index.
NamedConceptSpace assign_names(const SaeModel& model, const Vocabulary& vocab);

/// Concepts sorted by alignment descending (ties by index); top `hi` and
/// bottom `lo` form the outer bins.
AlignmentBins alignment_partition(const NamedConceptSpace& space, std::size_t hi, std::size_t lo);

struct VocabularyAddition {
  std::vector<std::string> words;
  Matrix embeddings;
};

/// Removes `remove` and then appends `add` (normalised like the constructor).
Vocabulary vocabulary_edit(const Vocabulary& vocab, const VocabularyAddition& add,
                           std::span<const std::string> remove);

/// Drops concepts below `min_alignment` or never active, then merges the
/// survivors by name. Nodes are ordered by their lowest member index.
CompoundNodes merge_compound_nodes(const NamedConceptSpace& space, const Matrix& activations,
                                   double min_alignment);

}  // namespace dncbm
