#pragma once

// Brute-force reference implementations. Each one is written from the
// definition and shares no code with the library beyond Matrix.

#include <cmath>
#include <limits>
#include <vector>

#include "dncbm/matrix.hpp"

namespace dncbm::testing {

struct NameOracle {
  std::size_t index = 0;
  double alignment = 0.0;
};

// Exhaustive max-cosine scan in long double; strict > keeps the lowest index.
inline NameOracle oracle_name(std::span<const double> p, const Matrix& vocab) {
  NameOracle best{0, -std::numeric_limits<double>::infinity()};
  long double best_cos = -2.0L;
  for (std::size_t w = 0; w < vocab.rows(); ++w) {
    long double dp = 0.0L, np = 0.0L, nw = 0.0L;
    for (std::size_t j = 0; j < p.size(); ++j) {
      dp += static_cast<long double>(p[j]) * vocab(w, j);
      np += static_cast<long double>(p[j]) * p[j];
      nw += static_cast<long double>(vocab(w, j)) * vocab(w, j);
    }
    const long double cs = dp / (std::sqrt(np) * std::sqrt(nw));
    if (cs > best_cos) {
      best_cos = cs;
      best = {w, static_cast<double>(cs)};
    }
  }
  return best;
}

// Smallest subset size whose best achievable sum reaches fraction × total,
// found by enumerating every subset.
inline std::size_t oracle_support_size(const std::vector<double>& contrib, double fraction) {
  const std::size_t n = contrib.size();
  double total = 0.0;
  for (double c : contrib) total += c;
  const double target = fraction * total;
  std::size_t best = n;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double s = 0.0;
    std::size_t size = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) {
        s += contrib[i];
        ++size;
      }
    if (s >= target && size < best) best = size;
  }
  return best;
}

struct ThresholdOracle {
  std::vector<double> thresholds;
  double mean_jaccard = 0.0;
};

// For every distinct held-out value v, try the cut halfway to the next larger
// distinct value, scoring F1 by direct counting. Best F1 wins, ties go to the
// smaller cut; zero F1 everywhere leaves +inf.
inline ThresholdOracle oracle_attribute_match(const Matrix& s, const Matrix& gt, const std::vector<std::size_t>& held,
                                              const std::vector<std::size_t>& eval) {
  const double inf = std::numeric_limits<double>::infinity();
  ThresholdOracle out;
  for (std::size_t c = 0; c < s.cols(); ++c) {
    double best_f1 = 0.0, best_cut = inf;
    for (std::size_t a : held) {
      const double v = s(a, c);
      double next = inf;
      for (std::size_t b : held)
        if (s(b, c) > v && s(b, c) < next) next = s(b, c);
      if (next == inf) continue;
      const double cut = (v + next) / 2.0;
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i : held) {
        const bool pred = s(i, c) > cut, pos = gt(i, c) == 1.0;
        tp += pred && pos;
        fp += pred && !pos;
        fn += !pred && pos;
      }
      const double f1 = tp > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
      if (f1 > best_f1 || (f1 == best_f1 && f1 > 0 && cut < best_cut)) {
        best_f1 = f1;
        best_cut = cut;
      }
    }
    out.thresholds.push_back(best_cut);
  }
  double sum = 0.0;
  for (std::size_t i : eval) {
    double inter = 0, uni = 0;
    for (std::size_t c = 0; c < s.cols(); ++c) {
      const bool pred = s(i, c) > out.thresholds[c], pos = gt(i, c) == 1.0;
      inter += pred && pos;
      uni += pred || pos;
    }
    sum += uni == 0 ? 1.0 : inter / uni;
  }
  out.mean_jaccard = sum / static_cast<double>(eval.size());
  return out;
}

}  // namespace dncbm::testing
