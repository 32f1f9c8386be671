// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <fstream>
#include <iterator>

#include "chela/error.hpp"
#include "chela/tasks.hpp"

namespace chela {

TaskBatch gen_copy_task(Rng& rng, std::size_t L, std::size_t vocab, std::size_t B) {
  if (L < 2 || L % 2 != 0) throw ConfigError("copy task: L must be even and >= 2, got " + std::to_string(L));
  if (vocab < 3) throw ConfigError("copy task: vocab must be >= 3, got " + std::to_string(vocab));
  if (B == 0) throw ConfigError("copy task: batch must be positive");
  const std::size_t n = L / 2;
  TaskBatch b;
  b.batch = B;
  b.length = L;
  b.vocab = vocab;
  b.tokens.assign(B * L, 0);
  b.targets.assign(B * L, 0);
  b.loss_mask.assign(B * L, 0);
  std::vector<std::uint32_t> content(n);
  for (std::size_t s = 0; s < B; ++s) {
    for (auto& c : content) c = 1 + static_cast<std::uint32_t>(rng.below(vocab - 1));
    std::uint32_t* tok = b.tokens.data() + s * L;
    std::copy(content.begin(), content.end(), tok);
    tok[n] = kCopyDelimiter;
    std::copy(content.begin(), content.end() - 1, tok + n + 1);
    for (std::size_t j = 0; j < n; ++j) {
      b.targets[s * L + n + j] = content[j];
      b.loss_mask[s * L + n + j] = 1;
    }
  }
  return b;
}

TaskBatch gen_assoc_recall(Rng& rng, std::size_t n_pairs, std::size_t vocab, std::size_t B) {
  if (n_pairs == 0) throw ConfigError("associative recall: n_pairs must be positive");
  if (vocab < 2 * n_pairs) {
    throw ConfigError("associative recall: vocab " + std::to_string(vocab) + " < 2 * n_pairs (" +
                      std::to_string(2 * n_pairs) + ")");
  }
  if (B == 0) throw ConfigError("associative recall: batch must be positive");
  const std::size_t L = 2 * n_pairs + 1, half = vocab / 2;
  TaskBatch b;
  b.batch = B;
  b.length = L;
  b.vocab = vocab;
  b.tokens.assign(B * L, 0);
  b.targets.assign(B * L, 0);
  b.loss_mask.assign(B * L, 0);
  // Partial Fisher-Yates: the first n_pairs entries of pool are distinct
  // draws from [lo, lo + pool.size()).
  auto draw_distinct = [&](std::vector<std::uint32_t>& pool, std::size_t lo) {
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<std::uint32_t>(lo + i);
    for (std::size_t i = 0; i < n_pairs; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  };
  std::vector<std::uint32_t> keys(half), vals(vocab - half);
  for (std::size_t s = 0; s < B; ++s) {
    // Keys and values are both distinct, so guessing among the values shown
    // is right 1/n_pairs of the time.
    draw_distinct(keys, 0);
    draw_distinct(vals, half);
    std::uint32_t* tok = b.tokens.data() + s * L;
    for (std::size_t i = 0; i < n_pairs; ++i) {
      tok[2 * i] = keys[i];
      tok[2 * i + 1] = vals[i];
    }
    const std::size_t q = rng.below(n_pairs);
    tok[L - 1] = keys[q];
    b.targets[s * L + L - 1] = vals[q];
    b.loss_mask[s * L + L - 1] = 1;
  }
  return b;
}

TaskBatch gen_adding_problem(Rng& rng, std::size_t L, std::size_t B) {
  if (L < 2) throw ConfigError("adding problem: L must be >= 2");
  if (B == 0) throw ConfigError("adding problem: batch must be positive");
  TaskBatch b;
  b.batch = B;
  b.length = L;
  b.features = Tensord({B, L, 2});
  b.values.assign(B, 0.0);
  const std::size_t first_half = L / 2;
  for (std::size_t s = 0; s < B; ++s) {
    for (std::size_t t = 0; t < L; ++t) b.features.at(s, t, 0) = rng.uniform();
    const std::size_t i = rng.below(first_half);
    const std::size_t j = first_half + rng.below(L - first_half);
    b.features.at(s, i, 1) = 1.0;
    b.features.at(s, j, 1) = 1.0;
    b.values[s] = b.features.at(s, i, 0) + b.features.at(s, j, 0);
  }
  return b;
}

ByteCorpus ByteCorpus::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open byte corpus '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return ByteCorpus(std::move(bytes));
}

namespace {

TaskBatch byte_batch(std::size_t L, std::size_t B) {
  TaskBatch b;
  b.batch = B;
  b.length = L;
  b.vocab = 256;
  b.tokens.assign(B * L, 0);
  b.targets.assign(B * L, 0);
  b.loss_mask.assign(B * L, 1);
  return b;
}

void fill_window(TaskBatch& b, std::size_t s, const std::uint8_t* src) {
  for (std::size_t t = 0; t < b.length; ++t) {
    b.tokens[s * b.length + t] = src[t];
    b.targets[s * b.length + t] = src[t + 1];
  }
}

}  // namespace

TaskBatch ByteCorpus::sample(Rng& rng, std::size_t L, std::size_t B) const {
  if (bytes_.size() < B * (L + 1) || bytes_.size() < L + 1) {
    throw ConfigError("byte corpus of " + std::to_string(bytes_.size()) + " bytes is too small for " +
                      std::to_string(B) + " windows of " + std::to_string(L + 1));
  }
  TaskBatch b = byte_batch(L, B);
  const std::size_t span = bytes_.size() - L;  // valid start offsets
  for (std::size_t s = 0; s < B; ++s) fill_window(b, s, bytes_.data() + rng.below(span));
  return b;
}

TaskBatch ByteCorpus::windows(std::size_t first_window, std::size_t L, std::size_t B) const {
  if (first_window + B > window_count(L)) throw ConfigError("byte corpus: window range out of bounds");
  TaskBatch b = byte_batch(L, B);
  for (std::size_t s = 0; s < B; ++s) fill_window(b, s, bytes_.data() + (first_window + s) * L);
  return b;
}

std::pair<ByteCorpus, ByteCorpus> ByteCorpus::split(double fraction) const {
  if (!(fraction > 0 && fraction < 1)) throw ConfigError("byte corpus: split fraction must be in (0, 1)");
  const auto cut = static_cast<std::ptrdiff_t>(double(bytes_.size()) * (1.0 - fraction));
  return {ByteCorpus(std::vector<std::uint8_t>(bytes_.begin(), bytes_.begin() + cut)),
          ByteCorpus(std::vector<std::uint8_t>(bytes_.begin() + cut, bytes_.end()))};
}

ByteLmStream::ByteLmStream(const std::string& path, std::size_t L, std::size_t B, std::uint64_t seed)
    : corpus_(ByteCorpus::from_file(path)), L_(L), B_(B), rng_(seed) {
  if (corpus_.size() < B * (L + 1)) {
    throw ConfigError("byte corpus '" + path + "' has " + std::to_string(corpus_.size()) + " bytes, need at least " +
                      std::to_string(B * (L + 1)));
  }
}

TaskBatch ByteLmStream::next() { return corpus_.sample(rng_, L_, B_); }

template <class T>
ModelInput<T> to_model_input(const TaskBatch& b) {
  if (!b.tokens.empty()) return ModelInput<T>::from_tokens(b.tokens, b.batch, b.length);
  return ModelInput<T>::from_features(b.features.template cast<T>());
}

template ModelInput<float> to_model_input<float>(const TaskBatch&);
template ModelInput<double> to_model_input<double>(const TaskBatch&);

}  // namespace chela
