#include "resgcn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "resgcn/errors.hpp"

namespace resgcn {

namespace {

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

void require_matrix(const char* op, const Var& x) {
  if (x.value().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + to_string(x.shape()));
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  out.axpy(1.0, b.value());
  return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> pg) {
    if (pg[0]) pg[0]->axpy(1.0, g);
    if (pg[1]) pg[1]->axpy(1.0, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  out.axpy(-1.0, b.value());
  return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> pg) {
    if (pg[0]) pg[0]->axpy(1.0, g);
    if (pg[1]) pg[1]->axpy(-1.0, g);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor& g, std::span<Tensor* const> pg) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (pg[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * bv[i];
    }
    if (pg[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, double alpha) {
  Tensor out(a.shape());
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * av[i];
  return a.tape().record(std::move(out), {a}, [alpha](const Tensor& g, std::span<Tensor* const> pg) {
    if (pg[0]) pg[0]->axpy(alpha, g);
  });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.tape().record(Tensor::scalar(total), {a}, [](const Tensor& g, std::span<Tensor* const> pg) {
    if (!pg[0]) return;
    const double s = g.item();
    for (double& v : pg[0]->data()) v += s;
  });
}

Var linear_combination(const Var& base, std::span<const std::pair<double, Var>> terms) {
  Tensor out = base.value();
  std::vector<Var> parents{base};
  std::vector<double> coeffs;
  for (const auto& [c, v] : terms) {
    if (v.shape() != base.shape()) {
      throw DimensionError("linear_combination: term shape " + to_string(v.shape()) + " vs base " +
                           to_string(base.shape()));
    }
    if (c == 0.0) continue;
    out.axpy(c, v.value());
    parents.push_back(v);
    coeffs.push_back(c);
  }
  return base.tape().record(std::move(out), parents,
                            [coeffs](const Tensor& g, std::span<Tensor* const> pg) {
                              if (pg[0]) pg[0]->axpy(1.0, g);
                              for (std::size_t k = 0; k < coeffs.size(); ++k) {
                                if (pg[k + 1]) pg[k + 1]->axpy(coeffs[k], g);
                              }
                            });
}

Var matmul(const Var& a, const Var& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  if (bv.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + to_string(av.shape()) + " x " +
                         to_string(bv.shape()));
  }
  Tensor out({n, m}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = &out(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av(i, p);
      if (aip == 0.0) continue;
      const double* brow = &bv(p, 0);
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor& g, std::span<Tensor* const> pg) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
    if (pg[0]) {
      // dA = G * B^T
      Tensor& ga = *pg[0];
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = &g(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = &bv(p, 0);
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
          ga(i, p) += acc;
        }
      }
    }
    if (pg[1]) {
      // dB = A^T * G
      Tensor& gb = *pg[1];
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = &g(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av(i, p);
          if (aip == 0.0) continue;
          double* gbrow = &gb(p, 0);
          for (std::size_t j = 0; j < m; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

Var add_row_vector(const Var& x, const Var& bias) {
  require_matrix("add_row_vector", x);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (bv.size() != d) {
    throw DimensionError("add_row_vector: bias " + to_string(bv.shape()) + " vs input " + to_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out(i, j) += bv[j];
  }
  return x.tape().record(std::move(out), {x, bias}, [n, d](const Tensor& g, std::span<Tensor* const> pg) {
    if (pg[0]) pg[0]->axpy(1.0, g);
    if (pg[1]) {
      Tensor& gb = *pg[1];
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) gb[j] += g(i, j);
      }
    }
  });
}

Var relu(const Var& x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return x.tape().record(std::move(out), {x}, [x](const Tensor& g, std::span<Tensor* const> pg) {
    if (!pg[0]) return;
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) (*pg[0])[i] += g[i];
    }
  });
}

Var dropout(const Var& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double survivor_scale = 1.0 / (1.0 - p);
  Tensor mask(x.shape());
  for (double& m : mask.data()) m = keep(rng) ? survivor_scale : 0.0;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.tape().record(std::move(out), {x}, [mask = std::move(mask)](const Tensor& g, std::span<Tensor* const> pg) {
    if (!pg[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * mask[i];
  });
}

Var group_norm(const Var& x, std::size_t groups, const Var& gamma, const Var& beta, double eps) {
  require_matrix("group_norm", x);
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (groups == 0 || d % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(groups) + " groups do not divide " + std::to_string(d) +
                      " channels");
  }
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw DimensionError("group_norm: gamma/beta must have " + std::to_string(d) + " entries");
  }
  const std::size_t width = d / groups;
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();

  Tensor normalized({n, d});
  Tensor inv_std({n, groups});
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t grp = 0; grp < groups; ++grp) {
      const std::size_t lo = grp * width;
      double mean = 0.0;
      for (std::size_t j = lo; j < lo + width; ++j) mean += xv(i, j);
      mean /= static_cast<double>(width);
      double var = 0.0;
      for (std::size_t j = lo; j < lo + width; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
      var /= static_cast<double>(width);
      const double rstd = 1.0 / std::sqrt(var + eps);
      inv_std(i, grp) = rstd;
      for (std::size_t j = lo; j < lo + width; ++j) {
        normalized(i, j) = (xv(i, j) - mean) * rstd;
        out(i, j) = gv[j] * normalized(i, j) + bv[j];
      }
    }
  }

  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [gamma, n, d, groups, width, normalized = std::move(normalized), inv_std = std::move(inv_std)](
          const Tensor& g, std::span<Tensor* const> pg) {
        const Tensor& gv = gamma.value();
        if (pg[1]) {
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) (*pg[1])[j] += g(i, j) * normalized(i, j);
          }
        }
        if (pg[2]) {
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) (*pg[2])[j] += g(i, j);
          }
        }
        if (!pg[0]) return;
        Tensor& gx = *pg[0];
        const double inv_w = 1.0 / static_cast<double>(width);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t grp = 0; grp < groups; ++grp) {
            const std::size_t lo = grp * width;
            double mean_dy = 0.0, mean_dy_xhat = 0.0;
            for (std::size_t j = lo; j < lo + width; ++j) {
              const double dy = g(i, j) * gv[j];
              mean_dy += dy;
              mean_dy_xhat += dy * normalized(i, j);
            }
            mean_dy *= inv_w;
            mean_dy_xhat *= inv_w;
            const double rstd = inv_std(i, grp);
            for (std::size_t j = lo; j < lo + width; ++j) {
              const double dy = g(i, j) * gv[j];
              gx(i, j) += rstd * (dy - mean_dy - normalized(i, j) * mean_dy_xhat);
            }
          }
        }
      });
}

Var log_softmax(const Var& x) {
  require_matrix("log_softmax", x);
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), c = xv.cols();
  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, xv(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(xv(i, j) - mx);
    const double log_s = std::log(s);
    for (std::size_t j = 0; j < c; ++j) out(i, j) = (xv(i, j) - mx) - log_s;
  }
  Tensor probs(out.shape());
  for (std::size_t i = 0; i < out.size(); ++i) probs[i] = std::exp(out[i]);
  return x.tape().record(std::move(out), {x},
                         [n, c, probs = std::move(probs)](const Tensor& g, std::span<Tensor* const> pg) {
                           if (!pg[0]) return;
                           for (std::size_t i = 0; i < n; ++i) {
                             double row_sum = 0.0;
                             for (std::size_t j = 0; j < c; ++j) row_sum += g(i, j);
                             for (std::size_t j = 0; j < c; ++j) (*pg[0])(i, j) += g(i, j) - probs(i, j) * row_sum;
                           }
                         });
}

Var nll_loss(const Var& logp, std::span<const std::size_t> labels, std::span<const std::size_t> mask) {
  require_matrix("nll_loss", logp);
  if (mask.empty()) throw ConfigError("nll_loss: empty node mask");
  const Tensor& lv = logp.value();
  const std::size_t n = lv.rows(), c = lv.cols();
  if (labels.size() != n) {
    throw DimensionError("nll_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  double total = 0.0;
  for (std::size_t node : mask) {
    if (node >= n) throw ContractError("nll_loss: mask index " + std::to_string(node) + " out of range");
    if (labels[node] >= c) {
      throw ContractError("nll_loss: label " + std::to_string(labels[node]) + " outside [0, " + std::to_string(c) + ")");
    }
    total += lv(node, labels[node]);
  }
  const double inv_m = 1.0 / static_cast<double>(mask.size());
  std::vector<std::size_t> picked;
  picked.reserve(mask.size());
  for (std::size_t node : mask) picked.push_back(node * c + labels[node]);
  return logp.tape().record(Tensor::scalar(-total * inv_m), {logp},
                            [inv_m, picked = std::move(picked)](const Tensor& g, std::span<Tensor* const> pg) {
                              if (!pg[0]) return;
                              const double s = -g.item() * inv_m;
                              for (std::size_t flat : picked) (*pg[0])[flat] += s;
                            });
}

Var concat_time_column(const Var& x, double t) {
  require_matrix("concat_time_column", x);
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  Tensor out({n, d + 1});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out(i, j) = xv(i, j);
    out(i, d) = t;
  }
  return x.tape().record(std::move(out), {x}, [n, d](const Tensor& g, std::span<Tensor* const> pg) {
    if (!pg[0]) return;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) (*pg[0])(i, j) += g(i, j);
    }
  });
}

Var slice_columns(const Var& x, std::size_t begin, std::size_t end) {
  require_matrix("slice_columns", x);
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (begin > end || end > d) {
    throw DimensionError("slice_columns: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + to_string(xv.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out({n, w});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < w; ++j) out(i, j) = xv(i, begin + j);
  }
  return x.tape().record(std::move(out), {x}, [n, w, begin](const Tensor& g, std::span<Tensor* const> pg) {
    if (!pg[0]) return;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < w; ++j) (*pg[0])(i, begin + j) += g(i, j);
    }
  });
}

}  // namespace resgcn
