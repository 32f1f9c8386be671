// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>

#include "chela/attention.hpp"
#include "chela/conv.hpp"
#include "chela/oracle.hpp"
#include "chela/ssm.hpp"
#include "chela/verify.hpp"

namespace chela::verify {

namespace {

// Tracks the worst error of one named check across many randomized cases.
class Check {
 public:
  Check(std::string suite, std::string name, double tol) : r_{std::move(suite), std::move(name), true, 0, tol, {}} {}

  void observe(double err, const std::string& where) {
    if (!(err <= r_.tolerance)) {
      if (r_.passed) r_.detail = "first failure: " + where;
      r_.passed = false;
    }
    if (!(err <= r_.error)) r_.error = err;  // NaN propagates as the worst
    ++cases_;
  }
  CheckResult result() const {
    CheckResult r = r_;
    if (r.detail.empty()) r.detail = std::to_string(cases_) + " cases";
    return r;
  }

 private:
  CheckResult r_;
  std::size_t cases_ = 0;
};

std::size_t scaled(double n, const SuiteOptions& opt) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(n * opt.scale)));
}

Tensord randn(Rng& rng, Shape s) { return prng_fill<double>(rng, std::move(s), NormalDist{0.0, 1.0}); }

std::vector<double> to_double(const std::vector<oracle::ld>& v) { return {v.begin(), v.end()}; }

double rel(std::span<const double> a, std::span<const double> b) { return rel_err(a, b); }

std::string where(const std::string& what, std::size_t L, std::size_t d, std::size_t extra) {
  return what + " L=" + std::to_string(L) + " d=" + std::to_string(d) + " k/C=" + std::to_string(extra);
}

}  // namespace

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

std::vector<CheckResult> attention_suite(const SuiteOptions& opt) {
  const char* S = "attention";
  Check chunk_dense(S, "chunked == dense masked (raw)", 1e-9), rec_dense(S, "recurrent == dense masked (raw)", 1e-9),
      chunk_rec(S, "chunked == recurrent (normalized)", 1e-9),
      norm_dense(S, "chunked normalized == dense oracle", 1e-9),
      state(S, "final chunk state == sum of K^T V", 1e-9), noncausal(S, "non-causal == (Q K^T) V", 1e-10),
      softmax(S, "softmax == dense oracle", 1e-10), rows(S, "softmax rows sum to 1", 1e-12);

  Rng rng(opt.seed);
  const std::size_t cases = scaled(200, opt);
  const std::size_t dims[] = {1, 2, 4, 8, 16, 32, 64};
  for (std::size_t c = 0; c < cases; ++c) {
    // Log-uniform lengths in [1, 1024], with every fourth case at the maximum.
    const std::size_t L = c % 4 == 3 ? 1024 : std::size_t(std::exp(rng.uniform(0.0, std::log(1024.0)))) + 1;
    const std::size_t d = dims[rng.below(std::size(dims))];
    const std::size_t B = 1 + rng.below(2);
    const std::size_t chunk_opts[] = {1, 7, 64, L};
    const std::size_t C = chunk_opts[c % 4];
    const AttentionInputs<double> in{randn(rng, {B, L, d}), randn(rng, {B, L, d}), randn(rng, {B, L, d})};
    OutputNorm<double> norm;
    norm.gain = prng_fill<double>(rng, {d}, UniformDist{0.5, 1.5});

    const Tensord dense = oracle::linear_attention_dense(in.q, in.k, in.v, true);
    ChunkState<double> st;
    const Tensord chunked = linear_attention_chunked_raw(in, C, &st);
    const Tensord rec = linear_attention_recurrent_raw(in);
    const std::string w = where("case", L, d, C);
    chunk_dense.observe(rel_err(chunked, dense), w);
    rec_dense.observe(rel_err(rec, dense), w);
    chunk_rec.observe(rel_err(linear_attention_chunked(in, C, norm), linear_attention_recurrent(in, norm)), w);
    norm_dense.observe(rel_err(linear_attention_chunked(in, C, norm), oracle::rms_rows(dense, norm.gain, norm.eps)), w);

    Tensord kv({B, d, d});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t)
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < d; ++j) kv.at(b, i, j) += in.k.at(b, t, i) * in.v.at(b, t, j);
    state.observe(rel_err(st.S, kv), w);

    if (L <= 256) {
      const Tensord dense_nc = oracle::linear_attention_dense(in.q, in.k, in.v, false);
      noncausal.observe(rel_err(linear_attention_noncausal_raw(in), dense_nc), w);
      const bool causal = c % 2 == 0;
      softmax.observe(rel_err(softmax_attention(in, causal), oracle::softmax_attention(in.q, in.k, in.v, causal)), w);
      const AttentionInputs<double> ones{in.q, in.k, Tensord(in.v.shape(), 1.0)};
      const Tensord o = softmax_attention(ones, causal);
      double dev = 0;
      for (std::size_t i = 0; i < o.size(); ++i) dev = std::max(dev, std::abs(o[i] - 1.0));
      rows.observe(dev, w);
    }
  }
  return {chunk_dense.result(), rec_dense.result(), chunk_rec.result(), norm_dense.result(),
          state.result(),       noncausal.result(), softmax.result(),   rows.result()};
}

std::vector<CheckResult> conv_suite(const SuiteOptions& opt) {
  const char* S = "conv";
  Check fft_direct(S, "FFT conv == direct conv", 1e-10),
      direct_oracle(S, "direct conv == extended-precision sum", 1e-12),
      depthwise(S, "depthwise FFT == depthwise oracle", 1e-10), linear(S, "FFT conv is linear", 1e-10),
      causal_direct(S, "causality, direct + partitioned + short-long (exact)", 0.0),
      causal_fft(S, "causality, single-FFT primitive (round-off only)", 1e-13);

  Rng rng(opt.seed + 1);
  const std::size_t lengths[] = {16, 37, 64, 100, 256, 1024, 4096};
  const std::size_t reps = scaled(3, opt);
  for (std::size_t L : lengths) {
    for (std::size_t k : {std::size_t{1}, std::size_t{3}, std::size_t{9}, L}) {
      for (std::size_t r = 0; r < reps; ++r) {
        const Tensord kern = randn(rng, {k}), x = randn(rng, {L}), z = randn(rng, {L});
        const auto direct = causal_conv_direct<double>(kern.data(), x.data());
        const auto fast = causal_conv_fft<double>(kern.data(), x.data());
        const std::string w = where("conv", L, 1, k);
        fft_direct.observe(rel(fast, direct), w);
        direct_oracle.observe(rel(direct, to_double(oracle::direct_conv(kern.storage(), x.storage()))), w);

        const double a = rng.normal(), b = rng.normal();
        std::vector<double> mix(L);
        for (std::size_t i = 0; i < L; ++i) mix[i] = a * x[i] + b * z[i];
        const auto lhs = causal_conv_fft<double>(kern.data(), mix);
        const auto fz = causal_conv_fft<double>(kern.data(), z.data());
        std::vector<double> rhs(L);
        for (std::size_t i = 0; i < L; ++i) rhs[i] = a * fast[i] + b * fz[i];
        linear.observe(rel(lhs, rhs), w);
      }
      if (L <= 1024) {
        const Tensord kd = randn(rng, {3, k}), xd = randn(rng, {2, L, 3});
        depthwise.observe(rel_err(depthwise_causal_conv(kd, xd, ConvPath::fft), oracle::depthwise_conv(kd, xd)),
                          where("depthwise", L, 3, k));
      }
    }
  }

  // Single-position perturbation sweep over every conv op.
  const std::size_t L = 160, d = 2;
  for (std::size_t k : {std::size_t{3}, std::size_t{9}, L}) {
    const Tensord kern = randn(rng, {d, k}), x = randn(rng, {1, L, d});
    const ShortLongConvParams<double> sl = init_short_long<double>(d, L, rng);
    const auto fused = fuse_short_branches(sl.bank, d);
    for (std::size_t t = 0; t < L; ++t) {
      Tensord xp = x;
      for (std::size_t c = 0; c < d; ++c) xp.at(0, t, c) += 1.0;
      auto leak = [&](const Tensord& y0, const Tensord& y1) {
        double m = 0;
        for (std::size_t s = 0; s < t; ++s)
          for (std::size_t c = 0; c < d; ++c) m = std::max(m, std::abs(y0.at(0, s, c) - y1.at(0, s, c)));
        return m / std::max(max_abs(y0), 1e-300);
      };
      const std::string w = where("perturb t=" + std::to_string(t), L, d, k);
      auto conv = [&](ConvPath path, const Tensord& in) { return depthwise_causal_conv(kern, in, path); };
      auto fused_path = [&](const Tensord& in) { return short_long_forward_fused(fused, sl.long_kernel, in); };
      causal_direct.observe(leak(conv(ConvPath::direct, x), conv(ConvPath::direct, xp)), w);
      causal_direct.observe(leak(short_branch_forward(sl.bank, x), short_branch_forward(sl.bank, xp)), w);
      causal_direct.observe(leak(conv(ConvPath::partitioned, x), conv(ConvPath::partitioned, xp)), w);
      causal_direct.observe(leak(short_long_forward(sl, x), short_long_forward(sl, xp)), w);
      causal_direct.observe(leak(fused_path(x), fused_path(xp)), w);
      causal_fft.observe(leak(conv(ConvPath::fft, x), conv(ConvPath::fft, xp)), w);
    }
  }
  return {fft_direct.result(), direct_oracle.result(), depthwise.result(), linear.result(), causal_direct.result(),
          causal_fft.result()};
}

std::vector<CheckResult> fusion_suite(const SuiteOptions& opt) {
  const char* S = "fusion";
  Check path(S, "fused inference path == multi-branch training path", 1e-9),
      branch(S, "conv(fused kernel) == short branches (abs / max|x|)", 1e-10);
  Rng rng(opt.seed + 2);
  const std::size_t draws = scaled(100, opt);
  for (std::size_t i = 0; i < draws; ++i) {
    const std::size_t d = 1 + rng.below(8), L = 4 + rng.below(509);
    ShortLongInit init;
    init.include_identity = rng.below(2) == 0;
    init.decay_envelope = rng.below(2) == 0;
    ShortLongConvParams<double> p = init_short_long<double>(d, L, rng, init);
    const std::size_t len = 1 + rng.below(L);
    const Tensord x = randn(rng, {2, len, d});
    const auto fused = fuse_short_branches(p.bank, d);
    const std::string w = where("draw", len, d, p.bank.kvar.dim(1));
    path.observe(rel_err(short_long_forward_fused(fused, p.long_kernel, x), short_long_forward(p, x)), w);
    const Tensord via_fused = depthwise_causal_conv(fused.kernel, x, ConvPath::direct);
    const Tensord via_branches = short_branch_forward(p.bank, x);
    branch.observe(max_abs_diff(via_fused.data(), via_branches.data()) / std::max(max_abs(x), 1e-300), w);
  }
  return {path.result(), branch.result()};
}

std::vector<CheckResult> ssm_suite(const SuiteOptions& opt) {
  const char* S = "ssm";
  Check conv_rec(S, "convolutional forward == recurrent scan", 1e-8),
      impulse(S, "impulse response == materialized kernel", 1e-10),
      power(S, "kernel entry == explicit matrix power", 1e-10),
      radius(S, "spectral radius of A_bar < 1 (eigenvalue oracle)", 1.0 - 1e-15),
      estimate(S, "spectral radius estimate matches eigenvalues", 1e-6),
      nsd(S, "symmetric part of HiPPO A is negative semidefinite", 1e-12);
  Rng rng(opt.seed + 3);
  const std::size_t reps = scaled(2, opt);
  for (std::size_t n : {1, 2, 4, 8, 16, 32}) {
    for (double delta : {0.001, 0.01, 0.1}) {
      for (std::size_t r = 0; r < reps; ++r) {
        const ContinuousSsm c = hippo_s4_init(n, rng, delta);
        const DiscreteSsm ds = bilinear_discretize(c);
        const std::string w = "d_s=" + std::to_string(n) + " delta=" + std::to_string(delta);
        for (std::size_t L : {1, 64, 1024}) {
          const Tensord u = randn(rng, {L});
          conv_rec.observe(rel(ssm_forward(ds, u.data()), recurrent_scan(ds, u.data())), w + " L=" + std::to_string(L));
        }
        std::vector<double> imp(128, 0.0);
        imp[0] = 1.0;
        const auto kernel = materialize_kernel(ds, 128);
        impulse.observe(rel(recurrent_scan(ds, imp), kernel), w);
        const double k5 = double(oracle::ssm_kernel_entry(ds.A_bar, ds.B_bar, ds.C_bar, 5));
        power.observe(std::abs(kernel[5] - k5) / std::max(max_abs(std::span<const double>(kernel)), 1e-300), w);
        const double rho = oracle::spectral_radius(ds.A_bar);
        radius.observe(rho, w);
        estimate.observe(std::abs(spectral_radius_estimate(ds.A_bar) - rho), w);
        nsd.observe(std::max(0.0, oracle::max_symmetric_eigenvalue(c.A)), w);
      }
    }
  }
  for (std::size_t n : {48, 64}) {
    const DiscreteSsm ds = bilinear_discretize(hippo_s4_init(n, rng, 0.1));
    radius.observe(oracle::spectral_radius(ds.A_bar), "d_s=" + std::to_string(n) + " delta=0.1");
  }
  return {conv_rec.result(), impulse.result(), power.result(), radius.result(), estimate.result(), nsd.result()};
}

std::vector<CheckResult> gradient_suite(const SuiteOptions& opt) {
  std::vector<CheckResult> out;
  for (const GradCase& c : gradient_cases(opt.seed + 4)) {
    Check check("gradient", "vjp " + c.op.name, 1e-4);
    VjpCheckResult r;
    try {
      r = vjp_check(c.op, c.inputs);
      check.observe(r.max_rel_error, "input " + std::to_string(r.worst_input));
    } catch (const Error& e) {
      check.observe(INFINITY, e.what());
    }
    CheckResult res = check.result();
    if (res.passed) res.detail = std::to_string(r.checked_entries) + " entries";
    out.push_back(res);
  }
  return out;
}

std::vector<CheckResult> run_all(const SuiteOptions& opt) {
  std::vector<CheckResult> all;
  for (auto suite : {attention_suite, conv_suite, fusion_suite, ssm_suite, gradient_suite}) {
    auto r = suite(opt);
    all.insert(all.end(), r.begin(), r.end());
  }
  return all;
}

}  // namespace chela::verify
