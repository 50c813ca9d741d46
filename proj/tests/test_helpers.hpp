#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "msptr/model.hpp"

namespace msptr::testing {

// Fills every parameter with U[-scale, scale], rounded to float32.
inline void randomize(ModelParams& model, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (std::size_t s = 0; s < model.params().size(); ++s) {
    Tensor& t = model.params()[s];
    for (double& v : t.values()) v = u(rng);
    t.round_to_float32();
  }
}

inline ModelConfig tiny_config(Mode mode, std::size_t vocab = 12, std::size_t embed = 4, std::size_t hidden = 6) {
  ModelConfig c;
  c.embed_dim = embed;
  c.hidden_dim = hidden;
  c.mode = mode;
  c.unk_pool_size = 2;
  c.vocab_size = vocab;
  return c;
}

inline std::vector<double> values(const Tape& tape, Var v) {
  const auto s = tape.value(v);
  return {s.begin(), s.end()};
}

}  // namespace msptr::testing
