#pragma once

#include <cstdint>
#include <random>

namespace heal {

using Rng = std::mt19937_64;

// Purpose tags for derived streams. Values are part of the reproducibility
// contract; append only.
enum class Stream : std::uint64_t {
  phase_matrix = 1,
  prior = 2,
  bootstrap = 3,
  shuffle = 4,
  regenerate = 5,
  initial_labeled = 6,
  random_scores = 7,
  synthetic_data = 8,
  dataset_split = 9,
  session_id = 10,
};

// Independent generator for (master seed, purpose, counter...). Streams never
// depend on how many draws another stream consumed, which is what keeps
// results identical across worker counts and across resumed runs.
inline Rng derive_stream(std::uint64_t master, Stream purpose, std::uint64_t a = 0,
                         std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(purpose),
                    static_cast<std::uint32_t>(a),      static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),      static_cast<std::uint32_t>(b >> 32)};
  return Rng(seq);
}

}  // namespace heal
