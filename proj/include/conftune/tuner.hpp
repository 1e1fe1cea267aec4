#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "conftune/calibration_map.hpp"
#include "conftune/conformal.hpp"
#include "conftune/dataset.hpp"
#include "conftune/errors.hpp"
#include "conftune/nonconformity.hpp"

namespace conftune {

struct TuneConfig {
  MapKind map_kind = MapKind::temperature;
  // Temperature search: log-uniform grid, then golden-section refinement.
  double t_min = 0.05;
  double t_max = 5.0;
  std::size_t grid_points = 64;
  double refine_tol = 1e-4;
  // Platt / vector search: finite-difference gradient descent.
  double gd_step = 0.1;
  std::size_t gd_max_iters = 500;
  double gd_grad_eps = 1e-4;
  double convergence = 1e-8;
  std::size_t gd_max_halvings = 20;
  // Parameters whose d_tau threshold lies within this distance of the total
  // probability mass are infeasible: every score has saturated and the loss
  // collapses towards 0 no matter how large the sets get.
  double saturation_margin = 1.4901161193847656e-8; // sqrt(DBL_EPSILON)
  std::uint64_t seed = 0;
};

inline void validate(const TuneConfig& cfg) {
  if (!(cfg.t_min > 0.0) || !(cfg.t_max > cfg.t_min)) {
    throw ValidationError("temperature bounds must satisfy 0 < t_min < t_max");
  }
  if (cfg.grid_points < 1 || cfg.gd_max_iters < 1) {
    throw ValidationError("grid_points and gd_max_iters must be >= 1");
  }
  if (!(cfg.refine_tol > 0.0) || !(cfg.gd_step > 0.0) || !(cfg.gd_grad_eps > 0.0)) {
    throw ValidationError("refine_tol, gd_step and gd_grad_eps must be positive");
  }
}

struct TuneReport {
  double alpha = 0.1;
  double final_loss = 0.0;
  std::size_t iterations = 0;
  bool stalled = false;
};

struct TuneResult {
  CalibrationMap map;
  TuneReport report;
};

// tau - S(x, y). Non-negative exactly when the true label is in the set.
inline double efficiency_gap(double tau, double score_true) { return tau - score_true; }

// Non-randomized APS score of the true label. Never draws u.
struct NonRandomizedAps {
  double operator()(const RankedRow<double>& ranked, std::uint32_t label,
                    std::uint64_t /*stream_index*/) const {
    return score(ScoreSpec::aps(false), ranked, label, std::nullopt);
  }
};

struct ObjectiveValue {
  double loss = std::numeric_limits<double>::infinity();
  double tau = 0.0;
  bool feasible = false;
};

// Mean squared efficiency gap on d_loss, with tau recalibrated on d_tau under
// the same map at every call. `scorer(ranked, label, stream_index)` scores a
// true label; d_tau rows use stream indices 0.., d_loss rows continue after.
template <class Scorer>
ObjectiveValue confts_objective(const CalibrationMap& map, const LogitsDataset& d_tau,
                                const LogitsDataset& d_loss, double alpha,
                                double saturation_margin, const Scorer& scorer) {
  if (d_tau.num_classes() != d_loss.num_classes()) {
    throw ValidationError("d_tau and d_loss have different class counts");
  }
  validate_alpha(alpha);
  std::vector<double> tau_scores(d_tau.size());
  std::vector<double> probs(d_tau.num_classes());
  auto score_row = [&](const LogitsDataset& ds, std::size_t i, std::uint64_t index) {
    softmax_mapped<double>(map, ds.row(i), probs);
    return scorer(rank_row(std::span<const double>(probs)), ds.label(i), index);
  };
  for (std::size_t i = 0; i < d_tau.size(); ++i) tau_scores[i] = score_row(d_tau, i, i);
  const auto threshold = calibrate_threshold(tau_scores, alpha);
  if (threshold.includes_all()) {
    throw ValidationError("threshold split has " + std::to_string(d_tau.size()) +
                          " rows, too few for alpha=" + std::to_string(alpha) +
                          "; use a larger validation split");
  }
  ObjectiveValue value;
  value.tau = *threshold.tau;
  if (1.0 - value.tau <= saturation_margin) return value;
  std::vector<double> squared(d_loss.size());
  for (std::size_t i = 0; i < d_loss.size(); ++i) {
    const double gap = efficiency_gap(value.tau, score_row(d_loss, i, d_tau.size() + i));
    squared[i] = gap * gap;
  }
  // Summed in sorted order so the loss depends only on the multiset of rows.
  std::sort(squared.begin(), squared.end());
  double total = 0.0;
  for (double v : squared) total += v;
  value.loss = total / static_cast<double>(d_loss.size());
  value.feasible = true;
  return value;
}

// ConfTS loss with non-randomized APS scores.
inline double confts_loss(const CalibrationMap& map, const LogitsDataset& d_tau,
                          const LogitsDataset& d_loss, double alpha) {
  validate(map, d_tau.num_classes());
  return confts_objective(map, d_tau, d_loss, alpha, -std::numeric_limits<double>::infinity(),
                          NonRandomizedAps{})
      .loss;
}

// Equal halves of the validation set: "tau" computes the threshold, "loss"
// evaluates the gaps.
inline std::pair<LogitsDataset, LogitsDataset> split_validation(const LogitsDataset& validation,
                                                                std::uint64_t seed) {
  auto parts = split_dataset(validation, SplitSpec{seed, {{"tau", 0.5}, {"loss", 0.5}}, true});
  return {std::move(parts.at("tau")), std::move(parts.at("loss"))};
}

struct GoldenSectionResult {
  double x = 0.0;
  double fx = 0.0;
  std::size_t evaluations = 0;
};

// Minimizes f on [lo, hi] until the bracket is narrower than tol. Returns the
// best point evaluated, which need not be the final midpoint when f is not
// unimodal.
inline GoldenSectionResult golden_section_minimize(const std::function<double(double)>& f,
                                                   double lo, double hi, double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  GoldenSectionResult best{lo, std::numeric_limits<double>::infinity(), 0};
  auto eval = [&](double x) {
    const double fx = f(x);
    ++best.evaluations;
    if (fx < best.fx) {
      best.x = x;
      best.fx = fx;
    }
    return fx;
  };
  double c = hi - inv_phi * (hi - lo);
  double d = lo + inv_phi * (hi - lo);
  double fc = eval(c);
  double fd = eval(d);
  while (hi - lo > tol) {
    if (fc <= fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - inv_phi * (hi - lo);
      fc = eval(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + inv_phi * (hi - lo);
      fd = eval(d);
    }
  }
  return best;
}

inline std::vector<double> temperature_grid(const TuneConfig& cfg) {
  std::vector<double> grid(cfg.grid_points);
  if (cfg.grid_points == 1) {
    grid[0] = cfg.t_min;
    return grid;
  }
  const double log_lo = std::log(cfg.t_min);
  const double log_hi = std::log(cfg.t_max);
  for (std::size_t j = 0; j < cfg.grid_points; ++j) {
    const double frac = static_cast<double>(j) / static_cast<double>(cfg.grid_points - 1);
    grid[j] = std::exp(log_lo + frac * (log_hi - log_lo));
  }
  grid.front() = cfg.t_min;
  grid.back() = cfg.t_max;
  return grid;
}

// Temperature search on an explicit (d_tau, d_loss) pair.
template <class Scorer = NonRandomizedAps>
TuneResult tune_temperature_split(const LogitsDataset& d_tau, const LogitsDataset& d_loss,
                                  double alpha, const TuneConfig& cfg, const Scorer& scorer = {}) {
  validate(cfg);
  std::size_t evaluations = 0;
  auto objective = [&](double t) {
    ++evaluations;
    return confts_objective(CalibrationMap::temperature(t), d_tau, d_loss, alpha,
                            cfg.saturation_margin, scorer)
        .loss;
  };

  const auto grid = temperature_grid(cfg);
  std::size_t best = 0;
  std::vector<double> losses(grid.size());
  for (std::size_t j = 0; j < grid.size(); ++j) {
    losses[j] = objective(grid[j]);
    if (losses[j] < losses[best]) best = j;
  }
  if (!std::isfinite(losses[best])) {
    throw ValidationError("no feasible temperature in [" + std::to_string(cfg.t_min) + ", " +
                          std::to_string(cfg.t_max) + "]: the threshold saturates everywhere");
  }

  double t_best = grid[best];
  double loss_best = losses[best];
  if (grid.size() > 1) {
    const double lo = grid[best == 0 ? 0 : best - 1];
    const double hi = grid[std::min(best + 1, grid.size() - 1)];
    const auto refined = golden_section_minimize(objective, lo, hi, cfg.refine_tol);
    if (refined.fx < loss_best) {
      t_best = refined.x;
      loss_best = refined.fx;
    }
  }
  return {CalibrationMap::temperature(t_best), TuneReport{alpha, loss_best, evaluations, false}};
}

// Splits `validation` into equal d_tau / d_loss halves (shuffled with
// cfg.seed) and tunes the temperature on them.
template <class Scorer = NonRandomizedAps>
TuneResult tune_temperature(const LogitsDataset& validation, double alpha, const TuneConfig& cfg,
                            const Scorer& scorer = {}) {
  validate(cfg);
  const auto [d_tau, d_loss] = split_validation(validation, cfg.seed);
  return tune_temperature_split(d_tau, d_loss, alpha, cfg, scorer);
}

namespace detail {

inline std::vector<double> map_parameters(const CalibrationMap& map) {
  switch (map.kind) {
  case MapKind::temperature: return {map.t};
  case MapKind::platt: return {map.a, map.b};
  case MapKind::vector: {
    std::vector<double> theta = map.w;
    theta.insert(theta.end(), map.c.begin(), map.c.end());
    return theta;
  }
  case MapKind::identity: return {};
  }
  return {};
}

inline CalibrationMap map_from_parameters(MapKind kind, std::span<const double> theta) {
  switch (kind) {
  case MapKind::temperature: return CalibrationMap::temperature(theta[0]);
  case MapKind::platt: return CalibrationMap::platt(theta[0], theta[1]);
  case MapKind::vector: {
    const std::size_t k = theta.size() / 2;
    return CalibrationMap::vector({theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(k)},
                                  {theta.begin() + static_cast<std::ptrdiff_t>(k), theta.end()});
  }
  case MapKind::identity: return CalibrationMap::identity();
  }
  return CalibrationMap::identity();
}

} // namespace detail

// Gradient descent on the map parameters with central-difference gradients
// and a halving line search. The first trial step is cfg.gd_step; each later
// search starts from twice the last accepted step. Stops after gd_max_iters
// steps, when the relative loss change drops below cfg.convergence, or when
// no step size decreases the loss (reported as stalled).
template <class Scorer = NonRandomizedAps>
TuneResult tune_map_split(const LogitsDataset& d_tau, const LogitsDataset& d_loss, double alpha,
                          const CalibrationMap& initial, const TuneConfig& cfg,
                          const Scorer& scorer = {}) {
  validate(cfg);
  validate(initial, d_tau.num_classes());
  if (initial.kind != MapKind::platt && initial.kind != MapKind::vector) {
    throw ValidationError("gradient tuning supports platt and vector maps");
  }
  const MapKind kind = initial.kind;
  auto objective = [&](std::span<const double> theta) {
    return confts_objective(detail::map_from_parameters(kind, theta), d_tau, d_loss, alpha,
                            cfg.saturation_margin, scorer)
        .loss;
  };

  std::vector<double> theta = detail::map_parameters(initial);
  double loss = objective(theta);
  if (!std::isfinite(loss)) {
    throw ValidationError("initial map saturates the threshold; cannot start descent");
  }

  TuneReport report{alpha, loss, 0, false};
  std::vector<double> grad(theta.size());
  std::vector<double> probe = theta;
  std::vector<double> candidate(theta.size());
  const double h = cfg.gd_grad_eps;
  double trial_step = cfg.gd_step;
  for (std::size_t iter = 0; iter < cfg.gd_max_iters; ++iter) {
    for (std::size_t j = 0; j < theta.size(); ++j) {
      probe[j] = theta[j] + h;
      const double up = objective(probe);
      probe[j] = theta[j] - h;
      const double down = objective(probe);
      probe[j] = theta[j];
      if (std::isfinite(up) && std::isfinite(down)) {
        grad[j] = (up - down) / (2.0 * h);
      } else if (std::isfinite(up)) {
        grad[j] = (up - loss) / h;
      } else if (std::isfinite(down)) {
        grad[j] = (loss - down) / h;
      } else {
        grad[j] = 0.0;
      }
    }

    double step = trial_step;
    bool accepted = false;
    double next_loss = loss;
    for (std::size_t halving = 0; halving <= cfg.gd_max_halvings; ++halving, step /= 2.0) {
      for (std::size_t j = 0; j < theta.size(); ++j) candidate[j] = theta[j] - step * grad[j];
      next_loss = objective(candidate);
      if (next_loss < loss) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      report.stalled = true;
      break;
    }
    trial_step = 2.0 * step;
    const double change = std::abs(loss - next_loss) / std::max(std::abs(loss), 1e-300);
    theta = candidate;
    probe = theta;
    loss = next_loss;
    report.iterations = iter + 1;
    if (change < cfg.convergence) break;
  }
  report.final_loss = loss;
  return {detail::map_from_parameters(kind, theta), report};
}

// Initial parameters: platt a=1, b=0; vector w=1, c=0 for every class.
template <class Scorer = NonRandomizedAps>
TuneResult tune_map(const LogitsDataset& validation, double alpha, MapKind kind,
                    const TuneConfig& cfg, const Scorer& scorer = {}) {
  validate(cfg);
  const std::size_t k = validation.num_classes();
  CalibrationMap initial;
  if (kind == MapKind::platt) {
    initial = CalibrationMap::platt(1.0, 0.0);
  } else if (kind == MapKind::vector) {
    initial = CalibrationMap::vector(std::vector<double>(k, 1.0), std::vector<double>(k, 0.0));
  } else {
    throw ValidationError("tune_map handles platt and vector maps; use tune_temperature");
  }
  const auto [d_tau, d_loss] = split_validation(validation, cfg.seed);
  return tune_map_split(d_tau, d_loss, alpha, initial, cfg, scorer);
}

// Dispatches on cfg.map_kind.
inline TuneResult tune(const LogitsDataset& validation, double alpha, const TuneConfig& cfg) {
  if (cfg.map_kind == MapKind::temperature) return tune_temperature(validation, alpha, cfg);
  return tune_map(validation, alpha, cfg.map_kind, cfg);
}

} // namespace conftune
