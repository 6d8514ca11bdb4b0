#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <utility>

#include "resgcn/tape.hpp"

namespace resgcn {

using Rng = std::mt19937_64;

// Differentiable operations. Every op records its result on the operands'
// tape; operands must share a tape.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double alpha);
Var sum(const Var& a);

/// base + sum_i coeff_i * terms_i as one node (used by the Runge-Kutta stages).
Var linear_combination(const Var& base, std::span<const std::pair<double, Var>> terms);

/// Dense [n x k] * [k x m]. Zero entries of `a` are skipped, which keeps
/// sparse bag-of-words feature matrices cheap.
Var matmul(const Var& a, const Var& b);

/// x[n x d] + bias[d], bias broadcast over rows.
Var add_row_vector(const Var& x, const Var& bias);

/// max(0, x); the subgradient at 0 is 0.
Var relu(const Var& x);

/// Inverted dropout: zero with probability p and scale survivors by 1/(1-p).
/// Eval mode returns `x` itself.
Var dropout(const Var& x, double p, bool training, Rng& rng);

/// Per-row group normalization over `groups` contiguous channel blocks.
Var group_norm(const Var& x, std::size_t groups, const Var& gamma, const Var& beta, double eps = 1e-5);

Var log_softmax(const Var& x);

/// -mean_{i in mask} logp[i, labels[i]].
Var nll_loss(const Var& logp, std::span<const std::size_t> labels, std::span<const std::size_t> mask);

/// Appends a constant column holding `t`. The time value is not differentiated.
Var concat_time_column(const Var& x, double t);

/// Columns [begin, end) of a matrix.
Var slice_columns(const Var& x, std::size_t begin, std::size_t end);

}  // namespace resgcn
