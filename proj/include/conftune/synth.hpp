#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "conftune/dataset.hpp"
#include "conftune/errors.hpp"

namespace conftune {

// logits = overconfidence * (signal * onehot(y) + noise * z), z ~ N(0, I),
// y uniform over [0, K). Rows are i.i.d.
struct SynthSpec {
  std::size_t n = 1000;
  std::size_t k = 10;
  std::uint64_t seed = 0;
  double signal = 2.0;
  double noise = 1.0;
  double overconfidence = 1.0;
};

inline void validate(const SynthSpec& spec) {
  if (spec.n < 1) throw ValidationError("synth needs n >= 1");
  if (spec.k < 2) throw ValidationError("synth needs K >= 2");
  if (!(spec.signal > 0.0) || !(spec.noise > 0.0) || !(spec.overconfidence > 0.0)) {
    throw ValidationError("synth signal, noise and overconfidence must be positive");
  }
}

inline LogitsDataset generate(const SynthSpec& spec) {
  validate(spec);
  std::mt19937_64 engine(spec.seed);
  std::uniform_int_distribution<std::uint32_t> pick_label(0, static_cast<std::uint32_t>(spec.k - 1));
  std::normal_distribution<double> gaussian(0.0, 1.0);
  std::vector<double> logits(spec.n * spec.k);
  std::vector<std::uint32_t> labels(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    labels[i] = pick_label(engine);
    for (std::size_t j = 0; j < spec.k; ++j) {
      const double signal = j == labels[i] ? spec.signal : 0.0;
      logits[i * spec.k + j] = spec.overconfidence * (signal + spec.noise * gaussian(engine));
    }
  }
  return LogitsDataset(spec.k, std::move(logits), std::move(labels));
}

// Two datasets from independent streams; the second has its signal reduced by
// `shift`, making it a harder distribution.
inline std::pair<LogitsDataset, LogitsDataset> generate_paired_shifted(const SynthSpec& spec,
                                                                       double shift) {
  if (!(shift >= 0.0) || !(shift < spec.signal)) {
    throw ValidationError("shift must lie in [0, signal)");
  }
  SynthSpec shifted = spec;
  shifted.seed = spec.seed ^ 0xA5A5A5A5DEADBEEFULL;
  shifted.signal = spec.signal - shift;
  return {generate(spec), generate(shifted)};
}

} // namespace conftune
