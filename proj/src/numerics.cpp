#include "dncbm/numerics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "dncbm/error.hpp"

namespace dncbm {

namespace {

void require_finite(const Matrix& m, const char* what) {
  if (!m.all_finite()) {
    throw Error(ErrorKind::NonFinite, fmt::format("{} produced a non-finite entry", what));
  }
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("{}: shapes {} and {} differ", what, a.shape_string(), b.shape_string()));
  }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("matmul: {} x {} (inner dimensions differ)", a.shape_string(), b.shape_string()));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    auto src = a.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = src[k];
      if (aik == 0.0) continue;
      auto bk = b.row(k);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += aik * bk[j];
    }
  }
  require_finite(out, "matmul");
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("matmul_tn: {}ᵀ x {} (row counts differ)", a.shape_string(), b.shape_string()));
  }
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto ak = a.row(k);
    auto bk = b.row(k);
    for (std::size_t i = 0; i < ak.size(); ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      auto dst = out.row(i);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += aki * bk[j];
    }
  }
  require_finite(out, "matmul_tn");
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("matmul_nt: {} x {}ᵀ (column counts differ)", a.shape_string(), b.shape_string()));
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ai.size(); ++k) s += ai[k] * bj[k];
      out(i, j) = s;
    }
  }
  require_finite(out, "matmul_nt");
  return out;
}

AdamState AdamState::zeros_like(const Matrix& param, AdamHyper hyper) {
  return AdamState{0, Matrix(param.rows(), param.cols()), Matrix(param.rows(), param.cols()), hyper};
}

void adam_update(Matrix& param, const Matrix& grad, AdamState& state) {
  require_same_shape(param, grad, "adam_step(param, grad)");
  require_same_shape(param, state.m, "adam_step(param, m)");
  require_same_shape(param, state.v, "adam_step(param, v)");
  const auto& hp = state.hyper;
  if (!(hp.beta1 >= 0.0 && hp.beta1 < 1.0 && hp.beta2 >= 0.0 && hp.beta2 < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "adam betas must lie in [0, 1)");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(hp.beta1, t);
  const double bc2 = 1.0 - std::pow(hp.beta2, t);
  auto p = param.data();
  auto g = grad.data();
  auto m = state.m.data();
  auto v = state.v.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
    v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    p[i] -= hp.lr * m_hat / (std::sqrt(v_hat) + hp.eps);
  }
  require_finite(param, "adam_step");
}

AdamResult adam_step(const Matrix& param, const Matrix& grad, const AdamState& state) {
  AdamResult out{param, state};
  adam_update(out.param, grad, out.state);
  return out;
}

double cosine_sim(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("cosine_sim of vectors with lengths {} and {}", u.size(), v.size()));
  }
  const double nu = norm2(u);
  const double nv = norm2(v);
  if (nu == 0.0 || nv == 0.0) {
    throw Error(ErrorKind::ZeroNorm, "cosine_sim of a zero-norm vector");
  }
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

namespace {

double log_sum_exp(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double x : row) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

double cross_entropy(const Matrix& logits, std::span<const std::size_t> labels) {
  if (labels.size() != logits.rows()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("cross_entropy: {} labels for {} logits", labels.size(), logits.shape_string()));
  }
  if (logits.rows() == 0) throw Error(ErrorKind::InvalidArgument, "cross_entropy of an empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (labels[i] >= logits.cols()) {
      throw Error(ErrorKind::OutOfRange,
                  fmt::format("label {} at row {} outside [0, {})", labels[i], i, logits.cols()));
    }
    auto row = logits.row(i);
    total += log_sum_exp(row) - row[labels[i]];
  }
  return total / static_cast<double>(logits.rows());
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto src = logits.row(i);
    auto dst = out.row(i);
    const double mx = *std::max_element(src.begin(), src.end());
    double s = 0.0;
    for (std::size_t j = 0; j < src.size(); ++j) {
      dst[j] = std::exp(src[j] - mx);
      s += dst[j];
    }
    for (double& x : dst) x /= s;
  }
  return out;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorKind::InvalidArgument, "argmax of an empty range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace dncbm
