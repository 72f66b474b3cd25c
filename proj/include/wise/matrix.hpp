#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "wise/errors.hpp"

namespace wise {

// Dense row-major matrix. Rows are instances (or classes), columns concepts.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix payload has " + std::to_string(data_.size()) +
                       " entries, expected " + std::to_string(rows_ * cols_));
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// Real-valued matrices are stored as f32 on disk and in memory; arithmetic on
// them is carried out in double.
using RealMatrix = Matrix<float>;
using BinaryMatrix = Matrix<std::uint8_t>;

using ScoreMatrix = RealMatrix;
using ProbabilityMatrix = RealMatrix;
using PriorMatrix = RealMatrix;
using AnnotationMatrix = BinaryMatrix;

enum class EmbeddingKind { unspecified, image, concept_text };

struct EmbeddingMatrix {
  RealMatrix values;
  bool normalized = false;
  EmbeddingKind kind = EmbeddingKind::unspecified;

  std::size_t rows() const { return values.rows(); }
  std::size_t dim() const { return values.cols(); }
};

}  // namespace wise
