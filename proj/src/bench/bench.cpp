// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "chela/attention.hpp"
#include "chela/bench.hpp"
#include "chela/conv.hpp"
#include "chela/fft.hpp"
#include "chela/rng.hpp"

namespace chela {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// A forward and a backward closure over pre-built inputs; both report the
// auxiliary bytes they held.
struct Runner {
  std::function<std::size_t()> forward;
  std::function<std::size_t()> backward;
};

std::size_t fft_bytes(std::size_t L, std::size_t taps) {
  return 2 * next_pow2(L + taps - 1) * sizeof(std::complex<float>);
}

Runner make_runner(BenchOp op, std::size_t B, std::size_t L, std::size_t d, std::size_t chunk, Rng& rng) {
  auto randn = [&](Shape s) { return prng_fill<float>(rng, std::move(s), NormalDist{0.0, 1.0}); };
  switch (op) {
    case BenchOp::softmax:
    case BenchOp::linear_noncausal:
    case BenchOp::linear_recurrent:
    case BenchOp::linear_chunked: {
      auto in = std::make_shared<AttentionInputs<float>>(
          AttentionInputs<float>{randn({B, L, d}), randn({B, L, d}), randn({B, L, d})});
      const auto dout = std::make_shared<Tensorf>(randn({B, L, d}));
      if (op == BenchOp::softmax) {
        auto tape = std::make_shared<SoftmaxTape<float>>();
        return {[=] { AttentionStats s; softmax_attention(*in, true, tape.get(), &s); return s.aux_bytes; },
                [=] { AttentionStats s; softmax_attention_backward(*in, true, *tape, *dout, &s); return s.aux_bytes; }};
      }
      if (op == BenchOp::linear_noncausal) {
        return {[=] { AttentionStats s; linear_attention_noncausal_raw(*in, &s); return s.aux_bytes; },
                [=] {
                  linear_attention_noncausal_raw_backward(*in, *dout);
                  return std::size_t{2 * d * d * sizeof(float)};
                }};
      }
      if (op == BenchOp::linear_recurrent) {
        auto tape = std::make_shared<RecurrentTape<float>>();
        return {[=] { AttentionStats s; linear_attention_recurrent_raw(*in, tape.get(), &s); return s.aux_bytes; },
                [=] {
                  AttentionStats s;
                  linear_attention_recurrent_raw_backward(*in, *tape, *dout, &s);
                  return s.aux_bytes;
                }};
      }
      auto state = std::make_shared<ChunkState<float>>();
      return {[=] { AttentionStats s; linear_attention_chunked_raw(*in, chunk, state.get(), &s); return s.aux_bytes; },
              [=] {
                AttentionStats s;
                linear_attention_chunked_raw_backward(*in, chunk, *state, *dout, &s);
                return s.aux_bytes;
              }};
    }
    case BenchOp::fftconv:
    case BenchOp::directconv: {
      const ConvPath path = op == BenchOp::fftconv ? ConvPath::fft : ConvPath::direct;
      const auto x = std::make_shared<Tensorf>(randn({B, L, d}));
      const auto k = std::make_shared<Tensorf>(randn({d, L}));
      const auto dy = std::make_shared<Tensorf>(randn({B, L, d}));
      const std::size_t aux = path == ConvPath::fft ? fft_bytes(L, L) : 0;
      return {[=] { depthwise_causal_conv(*k, *x, path); return aux; },
              [=] { Tensorf dk(k->shape()); depthwise_causal_conv_backward(*k, *x, *dy, dk, path); return aux; }};
    }
    case BenchOp::shortlong: {
      auto p = std::make_shared<ShortLongConvParams<float>>(init_short_long<float>(d, L, rng));
      const auto x = std::make_shared<Tensorf>(randn({B, L, d}));
      const auto dz = std::make_shared<Tensorf>(randn({B, L, d}));
      auto tape = std::make_shared<ShortLongTape<float>>();
      const std::size_t aux = 2 * B * L * d * sizeof(float) + fft_bytes(L, L);
      return {[=] { short_long_forward(*p, *x, tape.get()); return aux; },
              [=] {
                ShortLongGrads<float> g{Tensorf(p->bank.k3.shape()), Tensorf(p->bank.kvar.shape()),
                                        Tensorf(p->long_kernel.shape())};
                short_long_backward(*p, *x, *tape, *dz, g);
                return aux;
              }};
    }
  }
  throw ConfigError("unknown benchmark op");
}

}  // namespace

std::string to_string(BenchOp op) {
  switch (op) {
    case BenchOp::softmax:
      return "softmax";
    case BenchOp::linear_noncausal:
      return "linear_noncausal";
    case BenchOp::linear_recurrent:
      return "linear_recurrent";
    case BenchOp::linear_chunked:
      return "linear_chunked";
    case BenchOp::fftconv:
      return "fftconv";
    case BenchOp::directconv:
      return "directconv";
    case BenchOp::shortlong:
      return "shortlong";
  }
  return "?";
}

BenchOp parse_bench_op(const std::string& s) {
  for (BenchOp op : all_bench_ops())
    if (s == to_string(op)) return op;
  if (s == "chunked") return BenchOp::linear_chunked;
  if (s == "recurrent") return BenchOp::linear_recurrent;
  if (s == "noncausal") return BenchOp::linear_noncausal;
  throw ConfigError("unknown benchmark op '" + s + "'");
}

std::vector<BenchOp> all_bench_ops() {
  return {BenchOp::softmax,    BenchOp::linear_noncausal, BenchOp::linear_recurrent, BenchOp::linear_chunked,
          BenchOp::fftconv,    BenchOp::directconv,       BenchOp::shortlong};
}

std::vector<BenchRow> bench_run(const BenchSpec& spec, const std::function<void(const BenchRow&)>& on_row) {
  if (spec.repeats < 3) throw ConfigError("bench: repeats must be >= 3");
  if (spec.dim == 0 || spec.chunk == 0 || spec.batch == 0) {
    throw ConfigError("bench: dim, chunk and batch must be positive");
  }
  for (std::size_t L : spec.lengths)
    if (L == 0) throw ConfigError("bench: lengths must be positive");

  std::vector<BenchRow> rows;
  Rng rng(spec.seed);
  for (BenchOp op : spec.ops) {
    for (std::size_t L : spec.lengths) {
      if (op == BenchOp::softmax && L * L > spec.softmax_budget) {
        throw BudgetError("bench: softmax at L=" + std::to_string(L) + " needs " + std::to_string(L * L) +
                          " score entries, over the budget of " + std::to_string(spec.softmax_budget));
      }
      const Runner run = make_runner(op, spec.batch, L, spec.dim, spec.chunk, rng);
      std::vector<double> fwd, bwd;
      std::size_t state = 0;
      for (std::size_t r = 0; r <= spec.repeats; ++r) {
        auto t0 = Clock::now();
        const std::size_t fa = run.forward();
        const double f = ms_since(t0);
        t0 = Clock::now();
        const std::size_t ba = run.backward();
        const double b = ms_since(t0);
        state = std::max(fa, ba);
        if (r == 0) continue;  // warm-up
        fwd.push_back(f);
        bwd.push_back(b);
      }
      BenchRow row{to_string(op), L, spec.dim, spec.chunk, spec.repeats, median(fwd), median(bwd), state};
      if (on_row) on_row(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

double fit_scaling_exponent(std::span<const std::pair<double, double>> pts) {
  std::set<double> distinct;
  for (const auto& [L, ms] : pts) {
    if (!(L > 0) || !(ms > 0)) throw ConfigError("fit_scaling_exponent: lengths and times must be positive");
    distinct.insert(L);
  }
  if (distinct.size() < 3) throw ConfigError("fit_scaling_exponent: need at least 3 distinct lengths");
  double sx = 0, sy = 0;
  for (const auto& [L, ms] : pts) {
    sx += std::log(L);
    sy += std::log(ms);
  }
  const double n = double(pts.size()), mx = sx / n, my = sy / n;
  double sxy = 0, sxx = 0;
  for (const auto& [L, ms] : pts) {
    sxy += (std::log(L) - mx) * (std::log(ms) - my);
    sxx += (std::log(L) - mx) * (std::log(L) - mx);
  }
  return sxy / sxx;
}

double fit_scaling_exponent(std::span<const BenchRow> rows) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : rows) pts.emplace_back(double(r.length), r.forward_ms + r.backward_ms);
  return fit_scaling_exponent(pts);
}

void emit_csv(std::span<const BenchRow> rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out.imbue(std::locale::classic());
  out.precision(9);
  out << "op,length,dim,chunk,forward_ms,backward_ms,state_bytes\n";
  for (const auto& r : rows) {
    out << r.op << ',' << r.length << ',' << r.dim << ',' << r.chunk << ',' << r.forward_ms << ',' << r.backward_ms
        << ',' << r.state_bytes << '\n';
  }
  out.flush();
  if (!out) throw Error("write failed for '" + path + "'");
}

std::vector<BenchRow> parse_bench_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "op,length,dim,chunk,forward_ms,backward_ms,state_bytes") {
    throw Error("'" + path + "' does not start with the benchmark CSV header");
  }
  std::vector<BenchRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw Error("'" + path + "': expected 7 columns, got " + std::to_string(f.size()));
    BenchRow r;
    r.op = f[0];
    r.length = std::stoull(f[1]);
    r.dim = std::stoull(f[2]);
    r.chunk = std::stoull(f[3]);
    std::istringstream fm(f[4]), bm(f[5]);
    fm.imbue(std::locale::classic());
    bm.imbue(std::locale::classic());
    fm >> r.forward_ms;
    bm >> r.backward_ms;
    r.state_bytes = std::stoull(f[6]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace chela
