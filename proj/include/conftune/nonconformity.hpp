#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "conftune/calibration_map.hpp"
#include "conftune/errors.hpp"

namespace conftune {

enum class ScoreKind { aps, raps, saps, lac };

inline std::string_view to_string(ScoreKind kind) {
  switch (kind) {
  case ScoreKind::aps: return "aps";
  case ScoreKind::raps: return "raps";
  case ScoreKind::saps: return "saps";
  case ScoreKind::lac: return "lac";
  }
  return "unknown";
}

inline ScoreKind parse_score_kind(std::string_view name) {
  if (name == "aps") return ScoreKind::aps;
  if (name == "raps") return ScoreKind::raps;
  if (name == "saps") return ScoreKind::saps;
  if (name == "lac") return ScoreKind::lac;
  throw ValidationError("unknown score kind '" + std::string(name) + "'");
}

// Which non-conformity score to compute. RAPS needs both raps_* fields, SAPS
// needs saps_lambda, and no other kind may carry them. LAC ignores
// `randomized`.
struct ScoreSpec {
  ScoreKind kind = ScoreKind::aps;
  bool randomized = true;
  std::optional<double> raps_lambda;
  std::optional<std::uint32_t> raps_kreg;
  std::optional<double> saps_lambda;
  std::uint64_t rng_seed = 0;

  static ScoreSpec aps(bool randomized, std::uint64_t seed = 0) {
    return ScoreSpec{ScoreKind::aps, randomized, {}, {}, {}, seed};
  }
  static ScoreSpec raps(double lambda, std::uint32_t kreg, bool randomized, std::uint64_t seed = 0) {
    return ScoreSpec{ScoreKind::raps, randomized, lambda, kreg, {}, seed};
  }
  static ScoreSpec saps(double lambda, bool randomized, std::uint64_t seed = 0) {
    return ScoreSpec{ScoreKind::saps, randomized, {}, {}, lambda, seed};
  }
  static ScoreSpec lac(std::uint64_t seed = 0) {
    return ScoreSpec{ScoreKind::lac, false, {}, {}, {}, seed};
  }

  // Whether scoring consumes a uniform draw per sample.
  bool uses_u() const { return randomized && kind != ScoreKind::lac; }

  friend bool operator==(const ScoreSpec&, const ScoreSpec&) = default;
};

inline void validate(const ScoreSpec& spec) {
  const bool raps = spec.kind == ScoreKind::raps;
  const bool saps = spec.kind == ScoreKind::saps;
  if (raps != spec.raps_lambda.has_value() || raps != spec.raps_kreg.has_value()) {
    throw ValidationError(raps ? "raps needs both lambda and kreg"
                               : "lambda/kreg are only valid for raps");
  }
  if (saps != spec.saps_lambda.has_value()) {
    throw ValidationError(saps ? "saps needs lambda" : "saps lambda is only valid for saps");
  }
  if (raps && (!(*spec.raps_lambda >= 0.0) || *spec.raps_kreg < 1)) {
    throw ValidationError("raps needs lambda >= 0 and kreg >= 1");
  }
  if (saps && !(*spec.saps_lambda >= 0.0)) {
    throw ValidationError("saps needs lambda >= 0");
  }
}

// Probabilities sorted in descending order. Ties are ordered by ascending
// class index. rank_of is 1-based: rank_of[perm[i]] == i + 1.
template <std::floating_point Real = double>
struct RankedRow {
  std::vector<Real> sorted_probs;
  std::vector<std::uint32_t> perm;
  std::vector<std::uint32_t> rank_of;
};

template <std::floating_point Real>
RankedRow<Real> rank_row(std::span<const Real> probs) {
  const std::size_t k = probs.size();
  RankedRow<Real> ranked;
  ranked.perm.resize(k);
  std::iota(ranked.perm.begin(), ranked.perm.end(), std::uint32_t{0});
  std::stable_sort(ranked.perm.begin(), ranked.perm.end(),
                   [&](std::uint32_t lhs, std::uint32_t rhs) { return probs[lhs] > probs[rhs]; });
  ranked.sorted_probs.resize(k);
  ranked.rank_of.resize(k);
  for (std::size_t pos = 0; pos < k; ++pos) {
    ranked.sorted_probs[pos] = probs[ranked.perm[pos]];
    ranked.rank_of[ranked.perm[pos]] = static_cast<std::uint32_t>(pos + 1);
  }
  return ranked;
}

template <std::floating_point Real>
RankedRow<Real> rank_row(const std::vector<Real>& probs) {
  return rank_row(std::span<const Real>(probs));
}

namespace detail {

inline void check_u(const ScoreSpec& spec, std::optional<double> u) {
  if (spec.uses_u()) {
    if (!u) throw ValidationError("randomized score needs a uniform draw u");
    if (!(*u >= 0.0 && *u <= 1.0)) {
      throw ValidationError("u must lie in [0, 1], got " + std::to_string(*u));
    }
  } else if (u && spec.kind != ScoreKind::lac) {
    throw ValidationError("non-randomized score takes no u");
  }
}

// Score of the class sitting at 1-based `rank`. `mass_before` is the sum of
// the sorted probabilities ahead of it, accumulated left to right in Real.
template <std::floating_point Real>
double score_at_rank(const ScoreSpec& spec, const RankedRow<Real>& ranked, std::uint32_t rank,
                     Real mass_before, double u) {
  const Real p = ranked.sorted_probs[rank - 1];
  switch (spec.kind) {
  case ScoreKind::aps:
  case ScoreKind::raps: {
    const Real aps = spec.randomized ? mass_before + static_cast<Real>(u) * p : mass_before + p;
    double value = static_cast<double>(aps);
    if (spec.kind == ScoreKind::raps) {
      const double excess = rank > *spec.raps_kreg ? static_cast<double>(rank - *spec.raps_kreg) : 0.0;
      value += *spec.raps_lambda * excess;
    }
    return value;
  }
  case ScoreKind::saps: {
    const double top = static_cast<double>(ranked.sorted_probs[0]);
    const double v = spec.randomized ? u : 1.0;
    if (rank == 1) return v * top;
    return top + (static_cast<double>(rank) - 2.0 + v) * *spec.saps_lambda;
  }
  case ScoreKind::lac:
    return static_cast<double>(Real(1) - p);
  }
  return 0.0;
}

} // namespace detail

// Non-conformity score of class k. `u` must be given exactly when the spec is
// randomized (LAC never uses it).
template <std::floating_point Real>
double score(const ScoreSpec& spec, const RankedRow<Real>& ranked, std::uint32_t k,
             std::optional<double> u) {
  detail::check_u(spec, u);
  const std::uint32_t rank = ranked.rank_of.at(k);
  Real mass = 0;
  for (std::uint32_t i = 0; i + 1 < rank; ++i) mass += ranked.sorted_probs[i];
  return detail::score_at_rank(spec, ranked, rank, mass, u.value_or(1.0));
}

template <std::floating_point Real>
double score(const ScoreSpec& spec, std::span<const Real> probs, std::uint32_t k,
             std::optional<double> u) {
  validate(spec);
  return score(spec, rank_row(probs), k, u);
}

// Scores of every class with one shared u; entry k belongs to class k.
template <std::floating_point Real>
std::vector<double> score_all_classes(const ScoreSpec& spec, const RankedRow<Real>& ranked,
                                      std::optional<double> u) {
  detail::check_u(spec, u);
  const std::size_t k = ranked.perm.size();
  std::vector<double> scores(k);
  Real mass = 0;
  for (std::uint32_t pos = 0; pos < k; ++pos) {
    scores[ranked.perm[pos]] = detail::score_at_rank(spec, ranked, pos + 1, mass, u.value_or(1.0));
    mass += ranked.sorted_probs[pos];
  }
  return scores;
}

template <std::floating_point Real>
std::vector<double> score_all_classes(const ScoreSpec& spec, std::span<const Real> probs,
                                      std::optional<double> u) {
  validate(spec);
  return score_all_classes(spec, rank_row(probs), u);
}

// Non-randomized APS score of class k under temperature t, for each t in an
// ascending grid of positive temperatures.
inline std::vector<double> score_temperature_curve(std::span<const double> logits, std::uint32_t k,
                                                   std::span<const double> t_grid) {
  if (k >= logits.size()) {
    throw ValidationError("class " + std::to_string(k) + " out of range");
  }
  for (std::size_t j = 0; j < t_grid.size(); ++j) {
    if (!(t_grid[j] > 0.0)) {
      throw ValidationError("temperatures must be positive");
    }
    if (j > 0 && !(t_grid[j] > t_grid[j - 1])) {
      throw ValidationError("temperature grid must be strictly ascending");
    }
  }
  const auto spec = ScoreSpec::aps(false);
  std::vector<double> curve;
  curve.reserve(t_grid.size());
  for (double t : t_grid) {
    const auto probs = apply_map(CalibrationMap::temperature(t), logits);
    curve.push_back(score(spec, rank_row(probs), k, std::nullopt));
  }
  return curve;
}

} // namespace conftune
