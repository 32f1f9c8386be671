// SPDX-License-Identifier: Apache-2.0
//
// Synthetic sequence tasks and the byte-level language-modeling stream.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "chela/layer.hpp"
#include "chela/rng.hpp"
#include "chela/tensor.hpp"

namespace chela {

struct TaskBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::size_t vocab = 0;             // 0 for feature tasks
  std::vector<std::uint32_t> tokens;  // [B, L] token inputs
  Tensord features;                   // [B, L, F] feature inputs
  std::vector<std::uint32_t> targets; // [B, L] class targets
  std::vector<std::uint8_t> loss_mask;  // [B, L]; 1 where the position is scored
  std::vector<double> values;         // [B] regression targets
};

inline constexpr std::uint32_t kCopyDelimiter = 0;

/// Input [c_0..c_{n-1}, DELIM, c_0..c_{n-2}] with n = L/2 and content symbols
/// in 1..vocab-1; positions n..L-1 are scored against c_0..c_{n-1}.
TaskBatch gen_copy_task(Rng& rng, std::size_t L, std::size_t vocab, std::size_t B);

/// k_1 v_1 ... k_n v_n q with distinct keys in [0, vocab/2) and values in
/// [vocab/2, vocab); only the last position (the query) is scored.
TaskBatch gen_assoc_recall(Rng& rng, std::size_t n_pairs, std::size_t vocab, std::size_t B);

/// Channel 0 ~ uniform(0,1); channel 1 marks one position in each half. The
/// target is the sum of the two marked values.
TaskBatch gen_adding_problem(Rng& rng, std::size_t L, std::size_t B);

/// Next-byte prediction windows over an in-memory corpus.
class ByteCorpus {
 public:
  static ByteCorpus from_file(const std::string& path);
  explicit ByteCorpus(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  std::size_t size() const noexcept { return bytes_.size(); }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

  /// B windows at seeded offsets; targets[t] == inputs[t+1].
  TaskBatch sample(Rng& rng, std::size_t L, std::size_t B) const;

  /// Non-overlapping consecutive windows starting at `first_window`.
  TaskBatch windows(std::size_t first_window, std::size_t L, std::size_t B) const;
  std::size_t window_count(std::size_t L) const { return bytes_.size() > L ? (bytes_.size() - 1) / L : 0; }

  /// Splits off the trailing `fraction` of the bytes as a held-out corpus.
  std::pair<ByteCorpus, ByteCorpus> split(double fraction) const;

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Seeded stream over a byte file; throws ConfigError if the file holds fewer
/// than B*(L+1) bytes.
class ByteLmStream {
 public:
  ByteLmStream(const std::string& path, std::size_t L, std::size_t B, std::uint64_t seed);
  TaskBatch next();

 private:
  ByteCorpus corpus_;
  std::size_t L_, B_;
  Rng rng_;
};

template <class T>
ModelInput<T> to_model_input(const TaskBatch& b);

}  // namespace chela
