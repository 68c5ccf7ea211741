#include "dncbm/naming.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>

#include "dncbm/error.hpp"
#include "dncbm/numerics.hpp"

namespace dncbm {

namespace {

void normalize_row(std::span<double> row, std::size_t index) {
  const double n = norm2(row);
  if (n == 0.0 || !std::isfinite(n)) {
    throw Error(ErrorKind::ZeroNorm, fmt::format("vocabulary embedding {} has zero or non-finite norm", index));
  }
  if (std::abs(n - 1.0) <= 1e-12) return;
  for (double& x : row) x /= n;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> words, Matrix embeddings)
    : words_(std::move(words)), embeddings_(std::move(embeddings)) {
  if (words_.size() != embeddings_.rows()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("vocabulary has {} words but {} embedding rows", words_.size(), embeddings_.rows()));
  }
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!seen.insert(words_[i]).second) {
      throw Error(ErrorKind::InvalidArgument, fmt::format("duplicate vocabulary word '{}'", words_[i]));
    }
    normalize_row(embeddings_.row(i), i);
  }
}

std::size_t Vocabulary::find(const std::string& word) const {
  return static_cast<std::size_t>(std::find(words_.begin(), words_.end(), word) - words_.begin());
}

std::span<const double> dictionary_vector(const SaeModel& model, std::size_t index) {
  if (index >= model.latent_dim()) {
    throw Error(ErrorKind::OutOfRange,
                fmt::format("concept {} out of range [0, {})", index, model.latent_dim()));
  }
  return model.decoder.row(index);
}

NamedConceptSpace assign_names(const SaeModel& model, const Vocabulary& vocab) {
  if (vocab.dim() != model.input_dim()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("vocabulary width {} does not match SAE input dimension {}", vocab.dim(),
                            model.input_dim()));
  }
  if (vocab.size() == 0) throw Error(ErrorKind::InvalidArgument, "assign_names: empty vocabulary");
  NamedConceptSpace space;
  space.concepts.reserve(model.latent_dim());
  for (std::size_t c = 0; c < model.latent_dim(); ++c) {
    auto p = dictionary_vector(model, c);
    if (norm2(p) == 0.0) {
      throw Error(ErrorKind::ZeroNorm, fmt::format("dictionary vector of concept {} has zero norm", c));
    }
    std::size_t best = 0;
    double best_cos = cosine_sim(p, vocab.embedding(0));
    for (std::size_t w = 1; w < vocab.size(); ++w) {
      const double cs = cosine_sim(p, vocab.embedding(w));
      if (cs > best_cos) {
        best_cos = cs;
        best = w;
      }
    }
    space.concepts.push_back({vocab.word(best), best, best_cos, std::vector<double>(p.begin(), p.end())});
  }
  return space;
}

AlignmentBins alignment_partition(const NamedConceptSpace& space, std::size_t hi, std::size_t lo) {
  const std::size_t h = space.size();
  if (hi + lo > h) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("alignment bins {} + {} exceed concept count {}", hi, lo, h));
  }
  std::vector<std::size_t> order(h);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return space[a].alignment > space[b].alignment;
  });
  AlignmentBins bins;
  bins.high.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(hi));
  bins.mid.assign(order.begin() + static_cast<std::ptrdiff_t>(hi), order.end() - static_cast<std::ptrdiff_t>(lo));
  bins.low.assign(order.end() - static_cast<std::ptrdiff_t>(lo), order.end());
  return bins;
}

Vocabulary vocabulary_edit(const Vocabulary& vocab, const VocabularyAddition& add,
                           std::span<const std::string> remove) {
  if (add.words.size() != add.embeddings.rows()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("{} added words but {} added embeddings", add.words.size(), add.embeddings.rows()));
  }
  if (!add.words.empty() && add.embeddings.cols() != vocab.dim()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("added embeddings have width {}, vocabulary has {}", add.embeddings.cols(), vocab.dim()));
  }
  std::unordered_set<std::string> removed;
  for (const auto& w : remove) {
    if (vocab.find(w) == vocab.size()) {
      throw Error(ErrorKind::InvalidArgument, fmt::format("cannot remove unknown word '{}'", w));
    }
    removed.insert(w);
  }
  std::vector<std::string> words;
  std::vector<double> data;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (removed.contains(vocab.word(i))) continue;
    words.push_back(vocab.word(i));
    auto e = vocab.embedding(i);
    data.insert(data.end(), e.begin(), e.end());
  }
  for (std::size_t i = 0; i < add.words.size(); ++i) {
    if (std::find(words.begin(), words.end(), add.words[i]) != words.end()) {
      throw Error(ErrorKind::InvalidArgument, fmt::format("word '{}' is already in the vocabulary", add.words[i]));
    }
    words.push_back(add.words[i]);
    auto e = add.embeddings.row(i);
    data.insert(data.end(), e.begin(), e.end());
  }
  const std::size_t n = words.size();
  return Vocabulary(std::move(words), Matrix(n, vocab.dim(), std::move(data)));
}

CompoundNodes merge_compound_nodes(const NamedConceptSpace& space, const Matrix& activations,
                                   double min_alignment) {
  if (activations.cols() != space.size()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("activations {} do not have one column per concept ({})", activations.shape_string(),
                            space.size()));
  }
  std::vector<bool> active(space.size(), false);
  for (std::size_t i = 0; i < activations.rows(); ++i) {
    auto row = activations.row(i);
    for (std::size_t c = 0; c < row.size(); ++c)
      if (row[c] > 0.0) active[c] = true;
  }

  CompoundNodes out;
  std::map<std::string, std::size_t> by_name;
  for (std::size_t c = 0; c < space.size(); ++c) {
    if (!active[c] || space[c].alignment < min_alignment) continue;
    auto [it, inserted] = by_name.try_emplace(space[c].name, out.nodes.size());
    if (inserted) out.nodes.push_back({space[c].name, {}});
    out.nodes[it->second].members.push_back(c);
  }

  out.strengths = Matrix(activations.rows(), out.nodes.size());
  for (std::size_t i = 0; i < activations.rows(); ++i) {
    auto row = activations.row(i);
    for (std::size_t k = 0; k < out.nodes.size(); ++k) {
      const auto& members = out.nodes[k].members;
      double m = row[members.front()];
      for (std::size_t c : members) m = std::max(m, row[c]);
      out.strengths(i, k) = m;
    }
  }
  return out;
}

}  // namespace dncbm
