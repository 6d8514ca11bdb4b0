#pragma once

#include <cstddef>
#include <span>
#include <tuple>
#include <vector>

#include "resgcn/tape.hpp"
#include "resgcn/tensor.hpp"

namespace resgcn {

/// Compressed sparse row matrix of doubles. Column indices are strictly
/// increasing within a row.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr,
               std::vector<std::size_t> col_idx, std::vector<double> values);

  /// Builds from (row, col, value) triplets; duplicates are summed.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                    std::vector<std::tuple<std::size_t, std::size_t, double>> triplets);
  static SparseMatrix from_dense(const Tensor& dense);
  static SparseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }
  const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
  const std::vector<std::size_t>& col_idx() const { return col_idx_; }
  const std::vector<double>& values() const { return values_; }

  /// Entry (r, c), zero when not stored.
  double at(std::size_t r, std::size_t c) const;
  Tensor to_dense() const;
  SparseMatrix transpose() const;

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;

 private:
  void validate() const;

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_idx_;
  std::vector<double> values_;
};

enum class Normalization { Row, Symmetric };

/// A + I. Existing diagonal entries become 1, so the operation is idempotent.
SparseMatrix add_self_loops(const SparseMatrix& a);

/// Row mode: D^-1 A. Symmetric mode: D^-1/2 A D^-1/2, with D the row sums.
SparseMatrix degree_normalize(const SparseMatrix& a, Normalization mode);

/// Self-loops followed by degree normalization.
SparseMatrix propagation_operator(const SparseMatrix& adjacency, Normalization mode);

/// Plain sparse-dense product.
Tensor spmm(const SparseMatrix& a, const Tensor& h);

/// Sparse-dense product recorded on h's tape. The operator is a constant and
/// must outlive the tape's backward sweep.
Var spmm(const SparseMatrix& a, const Var& h);

}  // namespace resgcn
