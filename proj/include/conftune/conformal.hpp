#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "conftune/calibration_map.hpp"
#include "conftune/dataset.hpp"
#include "conftune/errors.hpp"
#include "conftune/nonconformity.hpp"
#include "conftune/random.hpp"

namespace conftune {

// Calibrated threshold. An empty `tau` is the include-all sentinel: the
// calibration set was too small for alpha, so every label is kept.
struct ConformalThreshold {
  std::optional<double> tau;
  double alpha = 0.1;
  std::size_t n_cal = 0;
  ScoreSpec score;
  CalibrationMap map;

  bool includes_all() const { return !tau.has_value(); }
};

struct PredictionSet {
  std::vector<std::uint32_t> members; // ascending class indices
  std::size_t sample_index = 0;

  bool contains(std::uint32_t k) const {
    return std::binary_search(members.begin(), members.end(), k);
  }
};

inline void validate_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ValidationError("alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
}

// ceil((n + 1)(1 - alpha)): 1-based order statistic that becomes tau.
// The 1e-9 slack keeps integral products such as 10 * 0.9 from rounding up
// past the integer.
inline std::size_t conformal_rank(std::size_t n, double alpha) {
  validate_alpha(alpha);
  const double level = (static_cast<double>(n) + 1.0) * (1.0 - alpha);
  return static_cast<std::size_t>(std::ceil(level - 1e-9));
}

inline ConformalThreshold calibrate_threshold(std::span<const double> scores, double alpha,
                                              ScoreSpec spec = {}, CalibrationMap map = {}) {
  if (scores.empty()) {
    throw ValidationError("cannot calibrate on an empty score list");
  }
  ConformalThreshold threshold{std::nullopt, alpha, scores.size(), std::move(spec), std::move(map)};
  const std::size_t rank = conformal_rank(scores.size(), alpha);
  if (rank <= scores.size()) {
    std::vector<double> sorted(scores.begin(), scores.end());
    auto nth = sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1);
    std::nth_element(sorted.begin(), nth, sorted.end());
    threshold.tau = *nth;
  }
  return threshold;
}

// Labels whose score is <= tau, given this sample's ranked probabilities.
template <std::floating_point Real>
PredictionSet predict_set(const ConformalThreshold& threshold, const RankedRow<Real>& ranked,
                          std::optional<double> u, std::size_t sample_index = 0) {
  PredictionSet set{{}, sample_index};
  const auto k = static_cast<std::uint32_t>(ranked.perm.size());
  if (threshold.includes_all()) {
    set.members.resize(k);
    std::iota(set.members.begin(), set.members.end(), std::uint32_t{0});
    return set;
  }
  const auto scores = score_all_classes(threshold.score, ranked, u);
  for (std::uint32_t cls = 0; cls < k; ++cls) {
    if (scores[cls] <= *threshold.tau) set.members.push_back(cls);
  }
  return set;
}

template <std::floating_point Real>
PredictionSet predict_set(const ConformalThreshold& threshold, std::span<const Real> probs,
                          std::optional<double> u, std::size_t sample_index = 0) {
  validate(threshold.score);
  return predict_set(threshold, rank_row(probs), u, sample_index);
}

// Uniform draw for the sample at global stream position `index`, or nullopt
// when the score is not randomized.
inline std::optional<double> sample_u(const ScoreSpec& spec, std::uint64_t index) {
  if (!spec.uses_u()) return std::nullopt;
  return draw_u(spec.rng_seed, index);
}

// Score of each row's true label. Row i draws u at stream index
// `index_offset + i`.
template <std::floating_point Real>
std::vector<double> true_label_scores(const ProbabilityMatrix<Real>& probs,
                                      std::span<const std::uint32_t> labels, const ScoreSpec& spec,
                                      std::uint64_t index_offset = 0) {
  validate(spec);
  std::vector<double> scores(probs.rows);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    scores[i] = score(spec, rank_row(probs.row(i)), labels[i], sample_u(spec, index_offset + i));
  }
  return scores;
}

template <std::floating_point Real>
std::vector<PredictionSet> predict_sets(const ConformalThreshold& threshold,
                                        const ProbabilityMatrix<Real>& probs,
                                        std::uint64_t index_offset) {
  validate(threshold.score);
  std::vector<PredictionSet> sets;
  sets.reserve(probs.rows);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    sets.push_back(predict_set(threshold, rank_row(probs.row(i)),
                               sample_u(threshold.score, index_offset + i), i));
  }
  return sets;
}

// Calibrate on the true labels of `cal` (u stream indices 0..n_cal-1), then
// build one set per test row (u stream indices n_cal..n_cal+n_test-1).
template <std::floating_point Real = double>
ConformalThreshold calibrate(const LogitsDataset& cal, const CalibrationMap& map,
                             const ScoreSpec& spec, double alpha) {
  validate_alpha(alpha);
  const auto probs = apply_map_dataset<Real>(map, cal);
  const auto scores = true_label_scores(probs, cal.labels(), spec, 0);
  return calibrate_threshold(scores, alpha, spec, map);
}

template <std::floating_point Real = double>
std::vector<PredictionSet> predict(const ConformalThreshold& threshold, const LogitsDataset& test) {
  const auto probs = apply_map_dataset<Real>(threshold.map, test);
  return predict_sets(threshold, probs, threshold.n_cal);
}

struct PipelineResult {
  ConformalThreshold threshold;
  std::vector<PredictionSet> sets;
};

template <std::floating_point Real = double>
PipelineResult run_pipeline(const LogitsDataset& cal, const LogitsDataset& test,
                            const CalibrationMap& map, const ScoreSpec& spec, double alpha) {
  if (cal.num_classes() != test.num_classes()) {
    throw ValidationError("calibration has " + std::to_string(cal.num_classes()) +
                          " classes but test has " + std::to_string(test.num_classes()));
  }
  auto threshold = calibrate<Real>(cal, map, spec, alpha);
  auto sets = predict<Real>(threshold, test);
  return {std::move(threshold), std::move(sets)};
}

} // namespace conftune
