#include "dncbm/matrix.hpp"

#include <cmath>

#include <fmt/format.h>

#include "dncbm/error.hpp"

namespace dncbm {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "dimension_mismatch";
    case ErrorKind::OutOfRange: return "out_of_range";
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::NonFinite: return "non_finite";
    case ErrorKind::ZeroNorm: return "zero_norm";
    case ErrorKind::BadMagic: return "bad_magic";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::VersionMismatch: return "version_mismatch";
    case ErrorKind::TrailingBytes: return "trailing_bytes";
    case ErrorKind::ChecksumMismatch: return "checksum_mismatch";
    case ErrorKind::InvalidFile: return "invalid_file";
    case ErrorKind::Io: return "io";
    case ErrorKind::InvalidConfig: return "invalid_config";
  }
  return "unknown";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("matrix data length {} does not match {}x{}", data_.size(), rows, cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) {
      throw Error(ErrorKind::DimensionMismatch, "ragged matrix literal");
    }
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

std::vector<double> Matrix::column(std::size_t c) const {
  if (c >= cols_) {
    throw Error(ErrorKind::OutOfRange, fmt::format("column {} out of range for {}", c, shape_string()));
  }
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) {
      throw Error(ErrorKind::OutOfRange,
                  fmt::format("row {} out of range for {}", indices[i], shape_string()));
    }
    auto src = row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

bool Matrix::all_finite() const noexcept {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Matrix::shape_string() const { return fmt::format("{}x{}", rows_, cols_); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("dot of vectors with lengths {} and {}", a.size(), b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace dncbm
