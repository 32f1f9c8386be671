// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "chela/conv.hpp"
#include "chela/error.hpp"
#include "chela/oracle.hpp"

namespace chela::oracle {

namespace {

ld sig(ld x) { return 1.0L / (1.0L + std::exp(-x)); }
ld silu(ld x) { return x * sig(x); }

Eigen::MatrixXd to_eigen(const Tensord& A) {
  const auto n = static_cast<Eigen::Index>(A.dim(0));
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = A.at(std::size_t(i), std::size_t(j));
  return m;
}

// Long double matrix product of row-major [n, m] x [m, p].
std::vector<ld> matmul(const std::vector<ld>& a, const std::vector<ld>& b, std::size_t n, std::size_t m,
                       std::size_t p) {
  std::vector<ld> c(n * p, 0.0L);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t j = 0; j < p; ++j) c[i * p + j] += a[i * m + k] * b[k * p + j];
  return c;
}

}  // namespace

std::vector<std::complex<ld>> naive_dft(const std::vector<std::complex<ld>>& x, bool inverse) {
  const std::size_t N = x.size();
  std::vector<std::complex<ld>> y(N);
  const ld sign = inverse ? 1.0L : -1.0L;
  for (std::size_t k = 0; k < N; ++k) {
    std::complex<ld> acc = 0;
    for (std::size_t n = 0; n < N; ++n) {
      const ld ang = sign * 2.0L * std::numbers::pi_v<ld> * ld((k * n) % N) / ld(N);
      acc += x[n] * std::complex<ld>(std::cos(ang), std::sin(ang));
    }
    y[k] = inverse ? acc / ld(N) : acc;
  }
  return y;
}

std::vector<ld> direct_conv(const std::vector<double>& kernel, const std::vector<double>& x) {
  std::vector<ld> y(x.size(), 0.0L);
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t j = 0; j < kernel.size() && j <= t; ++j) y[t] += ld(kernel[j]) * ld(x[t - j]);
  return y;
}

Tensord depthwise_conv(const Tensord& kernels, const Tensord& x) {
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2), k = kernels.dim(1);
  Tensord y(x.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t t = 0; t < L; ++t) {
        ld acc = 0;
        for (std::size_t j = 0; j < k && j <= t; ++j) acc += ld(kernels.at(c, j)) * ld(x.at(b, t - j, c));
        y.at(b, t, c) = double(acc);
      }
  return y;
}

std::vector<ld> rms_norm(const std::vector<double>& x, const std::vector<double>& gain, double eps) {
  ld ss = 0;
  for (double v : x) ss += ld(v) * ld(v);
  const ld denom = std::sqrt(ss / ld(x.size()) + ld(eps));
  std::vector<ld> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = denom > 0 ? ld(gain[i]) * ld(x[i]) / denom : 0.0L;
  return y;
}

std::vector<ld> layer_norm(const std::vector<double>& x, const std::vector<double>& gain,
                           const std::vector<double>& bias, double eps) {
  ld mean = 0;
  for (double v : x) mean += v;
  mean /= ld(x.size());
  ld var = 0;
  for (double v : x) var += (ld(v) - mean) * (ld(v) - mean);
  var /= ld(x.size());
  const ld denom = std::sqrt(var + ld(eps));
  std::vector<ld> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = ld(bias[i]) + (denom > 0 ? ld(gain[i]) * (ld(x[i]) - mean) / denom : 0.0L);
  return y;
}

Tensord softmax_attention(const Tensord& q, const Tensord& k, const Tensord& v, bool causal) {
  const std::size_t B = q.dim(0), L = q.dim(1), d = q.dim(2);
  Tensord out(q.shape());
  const ld scale = 1.0L / std::sqrt(ld(d));
  std::vector<ld> p(L);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < L; ++i) {
      const std::size_t n = causal ? i + 1 : L;
      ld mx = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        ld s = 0;
        for (std::size_t c = 0; c < d; ++c) s += ld(q.at(b, i, c)) * ld(k.at(b, j, c));
        p[j] = s * scale;
        mx = std::max(mx, p[j]);
      }
      ld z = 0;
      for (std::size_t j = 0; j < n; ++j) z += (p[j] = std::exp(p[j] - mx));
      for (std::size_t c = 0; c < d; ++c) {
        ld acc = 0;
        for (std::size_t j = 0; j < n; ++j) acc += p[j] * ld(v.at(b, j, c));
        out.at(b, i, c) = double(acc / z);
      }
    }
  return out;
}

Tensord linear_attention_dense(const Tensord& q, const Tensord& k, const Tensord& v, bool causal) {
  const std::size_t B = q.dim(0), L = q.dim(1), d = q.dim(2);
  Tensord out(q.shape());
  std::vector<ld> qb(L * d), kt(d * L), vb(L * d);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t c = 0; c < d; ++c) {
        qb[t * d + c] = q.at(b, t, c);
        kt[c * L + t] = k.at(b, t, c);
        vb[t * d + c] = v.at(b, t, c);
      }
    std::vector<ld> scores = matmul(qb, kt, L, d, L);
    if (causal)
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = i + 1; j < L; ++j) scores[i * L + j] = 0;
    const std::vector<ld> o = matmul(scores, vb, L, L, d);
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t c = 0; c < d; ++c) out.at(b, t, c) = double(o[t * d + c]);
  }
  return out;
}

Tensord rms_rows(const Tensord& x, const Tensord& gain, double eps) {
  const std::size_t d = x.dim(x.rank() - 1), rows = x.size() / d;
  std::vector<double> g = gain.empty() ? std::vector<double>(d, 1.0) : gain.storage();
  Tensord y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> row(x.ptr() + r * d, x.ptr() + (r + 1) * d);
    const auto n = rms_norm(row, g, eps);
    for (std::size_t c = 0; c < d; ++c) y[r * d + c] = double(n[c]);
  }
  return y;
}

ld ssm_kernel_entry(const Tensord& A, const std::vector<double>& Bv, const std::vector<double>& Cv, std::size_t t) {
  const std::size_t n = Bv.size();
  std::vector<ld> P(n * n, 0.0L), Am(A.storage().begin(), A.storage().end());
  for (std::size_t i = 0; i < n; ++i) P[i * n + i] = 1.0L;
  for (std::size_t s = 0; s < t; ++s) P = matmul(P, Am, n, n, n);
  ld acc = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) acc += ld(Cv[i]) * P[i * n + j] * ld(Bv[j]);
  return acc;
}

double spectral_radius(const Tensord& A) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(to_eigen(A), false);
  if (es.info() != Eigen::Success) throw NumericError("oracle: eigen decomposition failed");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

double max_symmetric_eigenvalue(const Tensord& A) {
  const Eigen::MatrixXd m = to_eigen(A);
  const Eigen::MatrixXd s = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

Tensord chela_layer(const ChelaLayerParams<double>& p, const Tensord& x) {
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
  auto tensor_map = [](const Tensord& t, auto f) {
    Tensord y(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) y[i] = double(f(ld(t[i])));
    return y;
  };

  // Z: the sequence mixer.
  Tensord z;
  if (p.mixer == MixerKind::ssm) {
    const std::size_t n = p.ssm.b_bar.size();
    std::vector<double> Bv(p.ssm.b_bar.storage());
    Tensord kern({d, L});
    // State propagation in long double: s_t = A^t B.
    std::vector<ld> s(Bv.begin(), Bv.end());
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t c = 0; c < d; ++c) {
        ld acc = 0;
        for (std::size_t i = 0; i < n; ++i) acc += ld(p.ssm.c.at(c, i)) * s[i];
        kern.at(c, t) = double(acc);
      }
      std::vector<ld> next(n, 0.0L);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) next[i] += ld(p.ssm.a_bar.at(i, j)) * s[j];
      s = std::move(next);
    }
    z = depthwise_conv(kern, x);
  } else {
    const auto& bank = p.conv.bank;
    Tensord pre = bank.include_identity ? x : Tensord(x.shape());
    for (const Tensord* k : {&bank.k3, &bank.kvar}) {
      if (k->empty()) continue;
      const Tensord y = depthwise_conv(*k, x);
      for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += y[i];
    }
    z = depthwise_conv(p.conv.long_kernel, tensor_map(pre, silu));
  }

  Tensord q(x.shape()), k(x.shape());
  for (std::size_t r = 0; r < B * L; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      q[r * d + c] = p.alpha_q[c] * z[r * d + c] + p.beta_q[c];
      k[r * d + c] = p.alpha_k[c] * z[r * d + c] + p.beta_k[c];
    }
  auto affine = [&](const Tensord& in, const Tensord& W, const Tensord& b) {
    Tensord out(in.shape());
    for (std::size_t r = 0; r < B * L; ++r)
      for (std::size_t j = 0; j < d; ++j) {
        ld acc = b[j];
        for (std::size_t i = 0; i < d; ++i) acc += ld(in[r * d + i]) * ld(W.at(i, j));
        out[r * d + j] = double(acc);
      }
    return out;
  };
  const Tensord v = tensor_map(affine(x, p.w_v, p.b_v), silu);
  const Tensord attn = rms_rows(linear_attention_dense(q, k, v, true), p.norm_gain, 1e-6);
  const Tensord ga = tensor_map(affine(z, p.w_g, p.b_g), silu);
  const Tensord go = tensor_map(affine(z, p.w_o, p.b_o), sig);
  Tensord u(x.shape());
  for (std::size_t i = 0; i < u.size(); ++i) {
    const ld m = ld(attn[i]) * ld(ga[i]);
    u[i] = double(m * ld(go[i]) + ld(x[i]) * (1.0L - ld(go[i])));
  }
  return u;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model, f = cfg.ffn_dim(), L = cfg.max_len;
  std::size_t mixer = 0;
  switch (cfg.mixer) {
    case MixerKind::shortlong:
      mixer = d * 3 + d * short_kernel_size(L) + d * L;
      break;
    case MixerKind::longconv:
      mixer = d * L;
      break;
    case MixerKind::ssm:
      mixer = d * cfg.ssm_state_dim;  // A_bar and B_bar are fixed buffers
      break;
  }
  const std::size_t gates = 3 * (d * d + d);
  const std::size_t scalers = 4 * d + d;  // alpha/beta for q and k, norm gain
  const std::size_t norms = 4 * d;
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t block = mixer + gates + scalers + norms + ffn;
  const std::size_t embed = cfg.vocab_size > 0 ? cfg.vocab_size * d : cfg.input_dim * d + d;
  const std::size_t head = d * cfg.output_dim() + cfg.output_dim();
  return embed + cfg.depth * block + head;
}

ld cross_entropy(const Tensord& logits, const std::vector<std::uint32_t>& targets,
                 const std::vector<std::uint8_t>& mask) {
  const std::size_t V = logits.dim(logits.rank() - 1), rows = logits.size() / V;
  ld total = 0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask.empty() && !mask[r]) continue;
    ld mx = -INFINITY;
    for (std::size_t j = 0; j < V; ++j) mx = std::max(mx, ld(logits[r * V + j]));
    ld s = 0;
    for (std::size_t j = 0; j < V; ++j) s += std::exp(ld(logits[r * V + j]) - mx);
    total += mx + std::log(s) - ld(logits[r * V + targets[r]]);
    ++n;
  }
  return total / ld(n);
}

}  // namespace chela::oracle
