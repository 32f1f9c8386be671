// SPDX-License-Identifier: Apache-2.0
#include "chela/ssm.hpp"

#include <cmath>
#include <numeric>

#include "chela/conv.hpp"

namespace chela {
namespace {

Tensord matmul(const Tensord& a, const Tensord& b) {
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensord c({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.at(i, p);
      for (std::size_t j = 0; j < m; ++j) c.at(i, j) += aip * b.at(p, j);
    }
  return c;
}

double frobenius(const Tensord& a) {
  double s = 0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

double norm1(const Tensord& a) {
  double best = 0;
  for (std::size_t j = 0; j < a.dim(1); ++j) {
    double s = 0;
    for (std::size_t i = 0; i < a.dim(0); ++i) s += std::abs(a.at(i, j));
    best = std::max(best, s);
  }
  return best;
}

}  // namespace

Tensord lu_solve(const Tensord& M, const Tensord& R) {
  if (M.rank() != 2 || M.dim(0) != M.dim(1) || R.rank() != 2 || R.dim(0) != M.dim(0)) {
    throw ShapeError("lu_solve: expected square [n,n] and [n,m]");
  }
  const std::size_t n = M.dim(0), m = R.dim(1);
  Tensord lu = M;
  Tensord x = R;
  const double scale = norm1(M);
  double min_pivot = std::numeric_limits<double>::infinity();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(lu.at(r, col)) > std::abs(lu.at(piv, col))) piv = r;
    const double p = lu.at(piv, col);
    min_pivot = std::min(min_pivot, std::abs(p));
    if (std::abs(p) <= double(n) * 1e-15 * scale) {
      throw SingularMatrixError("lu_solve: singular matrix", std::abs(p) > 0 ? scale / std::abs(p) : INFINITY);
    }
    if (piv != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu.at(col, j), lu.at(piv, j));
      for (std::size_t j = 0; j < m; ++j) std::swap(x.at(col, j), x.at(piv, j));
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = lu.at(r, col) / p;
      lu.at(r, col) = f;
      for (std::size_t j = col + 1; j < n; ++j) lu.at(r, j) -= f * lu.at(col, j);
      for (std::size_t j = 0; j < m; ++j) x.at(r, j) -= f * x.at(col, j);
    }
  }
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = x.at(ii, j);
      for (std::size_t c = ii + 1; c < n; ++c) s -= lu.at(ii, c) * x.at(c, j);
      x.at(ii, j) = s / lu.at(ii, ii);
    }
  }
  return x;
}

Tensord hippo_structured(std::size_t n) {
  if (n == 0) throw ConfigError("hippo: state dimension must be >= 1");
  Tensord a({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double pq = std::sqrt((double(i) + 0.5) * (double(j) + 0.5));
      if (i > j) {
        a.at(i, j) = -pq;
      } else if (i == j) {
        a.at(i, j) = -0.5;
      } else {
        a.at(i, j) = pq;
      }
    }
  }
  return a;
}

std::vector<double> hippo_p(std::size_t n) {
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = std::sqrt(double(i) + 0.5);
  return p;
}

ContinuousSsm hippo_s4_init(std::size_t state_dim, Rng& rng, double delta) {
  if (!(delta > 0)) throw ConfigError("hippo_s4_init: delta must be positive");
  ContinuousSsm s;
  s.A = hippo_structured(state_dim);
  const auto p = hippo_p(state_dim);
  for (std::size_t i = 0; i < state_dim; ++i)
    for (std::size_t j = 0; j < state_dim; ++j) s.A.at(i, j) -= p[i] * p[j];
  s.B.resize(state_dim);
  for (std::size_t i = 0; i < state_dim; ++i) s.B[i] = std::sqrt(2.0 * double(i) + 1.0);
  s.C.resize(state_dim);
  for (double& c : s.C) c = rng.normal();
  s.delta = delta;
  return s;
}

DiscreteSsm bilinear_discretize(const ContinuousSsm& ssm) {
  const std::size_t n = ssm.state_dim();
  if (ssm.A.rank() != 2 || ssm.A.dim(0) != n || ssm.A.dim(1) != n || ssm.C.size() != n) {
    throw ShapeError("bilinear_discretize: inconsistent A/B/C sizes");
  }
  const double h = ssm.delta / 2;
  Tensord lhs({n, n});
  Tensord rhs({n, n + 1});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double eye = i == j ? 1.0 : 0.0;
      lhs.at(i, j) = eye - h * ssm.A.at(i, j);
      rhs.at(i, j) = eye + h * ssm.A.at(i, j);
    }
    rhs.at(i, n) = ssm.delta * ssm.B[i];
  }
  const Tensord sol = lu_solve(lhs, rhs);
  DiscreteSsm d;
  d.A_bar = Tensord({n, n});
  d.B_bar.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) d.A_bar.at(i, j) = sol.at(i, j);
    d.B_bar[i] = sol.at(i, n);
  }
  d.C_bar = ssm.C;
  return d;
}

Tensord ssm_basis(const DiscreteSsm& d, std::size_t L) {
  const std::size_t n = d.state_dim();
  if (L == 0) throw ConfigError("ssm_basis: L must be >= 1");
  Tensord basis({L, n});
  std::vector<double> state = d.B_bar, next(n);
  for (std::size_t t = 0; t < L; ++t) {
    std::copy(state.begin(), state.end(), basis.ptr() + t * n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < n; ++j) s += d.A_bar.at(i, j) * state[j];
      next[i] = s;
    }
    state.swap(next);
  }
  return basis;
}

std::vector<double> materialize_kernel(const DiscreteSsm& d, std::size_t L) {
  const Tensord basis = ssm_basis(d, L);
  const std::size_t n = d.state_dim();
  std::vector<double> k(L);
  for (std::size_t t = 0; t < L; ++t)
    k[t] = std::inner_product(d.C_bar.begin(), d.C_bar.end(), basis.ptr() + t * n, 0.0);
  return k;
}

std::vector<double> recurrent_scan(const DiscreteSsm& d, std::span<const double> u) {
  const std::size_t n = d.state_dim();
  std::vector<double> x(n, 0.0), next(n), y(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = d.B_bar[i] * u[k];
      for (std::size_t j = 0; j < n; ++j) s += d.A_bar.at(i, j) * x[j];
      next[i] = s;
    }
    x.swap(next);
    y[k] = std::inner_product(d.C_bar.begin(), d.C_bar.end(), x.begin(), 0.0);
  }
  return y;
}

std::vector<double> ssm_forward(const DiscreteSsm& d, std::span<const double> u) {
  if (u.empty()) throw ShapeError("ssm_forward: empty input");
  const auto k = materialize_kernel(d, u.size());
  return causal_conv_fft<double>(k, u);
}

double spectral_radius_estimate(const Tensord& A, int squarings) {
  if (A.rank() != 2 || A.dim(0) != A.dim(1)) throw ShapeError("spectral_radius_estimate: square matrix required");
  // A^(2^s) = P * exp(log_scale); renormalize every squaring to avoid under/overflow.
  Tensord p = A;
  double log_scale = 0;
  for (int s = 0; s < squarings; ++s) {
    const double nrm = frobenius(p);
    if (nrm == 0) return 0;
    for (double& v : p.data()) v /= nrm;
    log_scale += std::log(nrm);
    p = matmul(p, p);
    log_scale *= 2;
  }
  const double nrm = frobenius(p);
  if (nrm == 0) return 0;
  return std::exp((log_scale + std::log(nrm)) / std::ldexp(1.0, squarings));
}

}  // namespace chela
