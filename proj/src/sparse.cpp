#include "resgcn/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "resgcn/errors.hpp"

namespace resgcn {

SparseMatrix::SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr,
                           std::vector<std::size_t> col_idx, std::vector<double> values)
    : rows_(rows), cols_(cols), row_ptr_(std::move(row_ptr)), col_idx_(std::move(col_idx)), values_(std::move(values)) {
  validate();
}

void SparseMatrix::validate() const {
  if (row_ptr_.size() != rows_ + 1) throw ContractError("CSR row_ptr must have rows+1 entries");
  if (row_ptr_.front() != 0 || row_ptr_.back() != values_.size() || col_idx_.size() != values_.size()) {
    throw ContractError("CSR row_ptr does not bracket the stored entries");
  }
  for (std::size_t r = 0; r < rows_; ++r) {
    if (row_ptr_[r] > row_ptr_[r + 1]) throw ContractError("CSR row_ptr decreases at row " + std::to_string(r));
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      if (col_idx_[k] >= cols_) throw ContractError("CSR column index out of range in row " + std::to_string(r));
      if (k > row_ptr_[r] && col_idx_[k] <= col_idx_[k - 1]) {
        throw ContractError("CSR columns not strictly increasing in row " + std::to_string(r));
      }
    }
  }
}

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                         std::vector<std::tuple<std::size_t, std::size_t, double>> triplets) {
  std::sort(triplets.begin(), triplets.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });
  std::vector<std::size_t> row_ptr(rows + 1, 0);
  std::vector<std::size_t> col_idx;
  std::vector<double> values;
  col_idx.reserve(triplets.size());
  values.reserve(triplets.size());
  std::size_t last_r = rows, last_c = cols;
  for (const auto& [r, c, v] : triplets) {
    if (r >= rows || c >= cols) {
      throw DimensionError("triplet (" + std::to_string(r) + ", " + std::to_string(c) + ") outside " +
                           std::to_string(rows) + "x" + std::to_string(cols));
    }
    if (r == last_r && c == last_c) {
      values.back() += v;
      continue;
    }
    col_idx.push_back(c);
    values.push_back(v);
    ++row_ptr[r + 1];
    last_r = r;
    last_c = c;
  }
  for (std::size_t r = 0; r < rows; ++r) row_ptr[r + 1] += row_ptr[r];
  return SparseMatrix(rows, cols, std::move(row_ptr), std::move(col_idx), std::move(values));
}

SparseMatrix SparseMatrix::from_dense(const Tensor& dense) {
  std::vector<std::tuple<std::size_t, std::size_t, double>> triplets;
  for (std::size_t r = 0; r < dense.rows(); ++r) {
    for (std::size_t c = 0; c < dense.cols(); ++c) {
      if (dense(r, c) != 0.0) triplets.emplace_back(r, c, dense(r, c));
    }
  }
  return from_triplets(dense.rows(), dense.cols(), std::move(triplets));
}

SparseMatrix SparseMatrix::identity(std::size_t n) {
  std::vector<std::size_t> row_ptr(n + 1), col_idx(n);
  for (std::size_t i = 0; i <= n; ++i) row_ptr[i] = i;
  for (std::size_t i = 0; i < n; ++i) col_idx[i] = i;
  return SparseMatrix(n, n, std::move(row_ptr), std::move(col_idx), std::vector<double>(n, 1.0));
}

double SparseMatrix::at(std::size_t r, std::size_t c) const {
  const auto first = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r]);
  const auto last = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r + 1]);
  const auto it = std::lower_bound(first, last, c);
  if (it == last || *it != c) return 0.0;
  return values_[static_cast<std::size_t>(it - col_idx_.begin())];
}

Tensor SparseMatrix::to_dense() const {
  Tensor dense({rows_, cols_}, 0.0);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) dense(r, col_idx_[k]) = values_[k];
  }
  return dense;
}

SparseMatrix SparseMatrix::transpose() const {
  std::vector<std::tuple<std::size_t, std::size_t, double>> triplets;
  triplets.reserve(nnz());
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) triplets.emplace_back(col_idx_[k], r, values_[k]);
  }
  return from_triplets(cols_, rows_, std::move(triplets));
}

SparseMatrix add_self_loops(const SparseMatrix& a) {
  if (a.rows() != a.cols()) {
    throw ContractError("add_self_loops needs a square matrix, got " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()));
  }
  std::vector<std::tuple<std::size_t, std::size_t, double>> triplets;
  triplets.reserve(a.nnz() + a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    bool has_diagonal = false;
    for (std::size_t k = a.row_ptr()[r]; k < a.row_ptr()[r + 1]; ++k) {
      const std::size_t c = a.col_idx()[k];
      if (c == r) {
        has_diagonal = true;
        triplets.emplace_back(r, c, 1.0);
      } else {
        triplets.emplace_back(r, c, a.values()[k]);
      }
    }
    if (!has_diagonal) triplets.emplace_back(r, r, 1.0);
  }
  return SparseMatrix::from_triplets(a.rows(), a.cols(), std::move(triplets));
}

SparseMatrix degree_normalize(const SparseMatrix& a, Normalization mode) {
  if (mode == Normalization::Symmetric && a.rows() != a.cols()) {
    throw ContractError("symmetric normalization needs a square matrix");
  }
  std::vector<double> degree(a.rows(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t k = a.row_ptr()[r]; k < a.row_ptr()[r + 1]; ++k) {
      if (a.values()[k] < 0.0) throw ContractError("degree_normalize needs nonnegative entries");
      degree[r] += a.values()[k];
    }
    if (degree[r] <= 0.0) throw DegenerateGraphError("row " + std::to_string(r) + " has zero degree");
  }
  std::vector<double> values = a.values();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t k = a.row_ptr()[r]; k < a.row_ptr()[r + 1]; ++k) {
      if (mode == Normalization::Row) {
        values[k] /= degree[r];
      } else {
        values[k] /= std::sqrt(degree[r] * degree[a.col_idx()[k]]);
      }
    }
  }
  return SparseMatrix(a.rows(), a.cols(), a.row_ptr(), a.col_idx(), std::move(values));
}

SparseMatrix propagation_operator(const SparseMatrix& adjacency, Normalization mode) {
  return degree_normalize(add_self_loops(adjacency), mode);
}

Tensor spmm(const SparseMatrix& a, const Tensor& h) {
  if (h.rank() != 2 || a.cols() != h.rows()) {
    throw DimensionError("spmm: operator " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " cannot multiply " + to_string(h.shape()));
  }
  const std::size_t d = h.cols();
  Tensor out({a.rows(), d}, 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double* orow = &out(r, 0);
    for (std::size_t k = a.row_ptr()[r]; k < a.row_ptr()[r + 1]; ++k) {
      const double w = a.values()[k];
      const double* hrow = &h(a.col_idx()[k], 0);
      for (std::size_t j = 0; j < d; ++j) orow[j] += w * hrow[j];
    }
  }
  return out;
}

Var spmm(const SparseMatrix& a, const Var& h) {
  Tensor out = spmm(a, h.value());
  const SparseMatrix* op = &a;
  return h.tape().record(std::move(out), {h}, [op](const Tensor& g, std::span<Tensor* const> pg) {
    if (!pg[0]) return;
    // dH = A^T G, scattered row by row.
    Tensor& gh = *pg[0];
    const std::size_t d = g.cols();
    for (std::size_t r = 0; r < op->rows(); ++r) {
      const double* grow = &g(r, 0);
      for (std::size_t k = op->row_ptr()[r]; k < op->row_ptr()[r + 1]; ++k) {
        const double w = op->values()[k];
        double* hrow = &gh(op->col_idx()[k], 0);
        for (std::size_t j = 0; j < d; ++j) hrow[j] += w * grow[j];
      }
    }
  });
}

}  // namespace resgcn
