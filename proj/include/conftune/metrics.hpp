#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "conftune/calibration_map.hpp"
#include "conftune/conformal.hpp"
#include "conftune/dataset.hpp"
#include "conftune/errors.hpp"
#include "conftune/nonconformity.hpp"

namespace conftune {

struct CoverageSize {
  double coverage = 0.0;
  double average_size = 0.0;
};

inline CoverageSize coverage_and_size(std::span<const PredictionSet> sets,
                                      std::span<const std::uint32_t> labels) {
  if (sets.size() != labels.size()) {
    throw ValidationError("length mismatch: " + std::to_string(sets.size()) + " sets vs " +
                          std::to_string(labels.size()) + " labels");
  }
  if (sets.empty()) {
    throw ValidationError("no prediction sets to evaluate");
  }
  std::size_t covered = 0;
  std::size_t total_size = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    covered += sets[i].contains(labels[i]) ? 1 : 0;
    total_size += sets[i].members.size();
  }
  const auto n = static_cast<double>(sets.size());
  return {static_cast<double>(covered) / n, static_cast<double>(total_size) / n};
}

// Equal-width bins over top-1 confidence; bin m covers ((m-1)/M, m/M] and a
// confidence of exactly 0 goes to the first bin. Empty bins contribute 0.
template <std::floating_point Real>
double expected_calibration_error(const ProbabilityMatrix<Real>& probs,
                                  std::span<const std::uint32_t> labels, std::size_t num_bins = 15) {
  if (num_bins < 1) throw ValidationError("ECE needs at least one bin");
  if (probs.rows != labels.size()) {
    throw ValidationError("length mismatch: " + std::to_string(probs.rows) + " rows vs " +
                          std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> count(num_bins, 0);
  std::vector<std::size_t> correct(num_bins, 0);
  std::vector<double> confidence(num_bins, 0.0);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    auto row = probs.row(i);
    const auto top = std::max_element(row.begin(), row.end());
    const double conf = static_cast<double>(*top);
    const auto predicted = static_cast<std::uint32_t>(top - row.begin());
    auto m = static_cast<std::size_t>(std::ceil(conf * static_cast<double>(num_bins)));
    m = std::clamp<std::size_t>(m, 1, num_bins) - 1;
    ++count[m];
    correct[m] += predicted == labels[i] ? 1 : 0;
    confidence[m] += conf;
  }
  double ece = 0.0;
  const auto n = static_cast<double>(probs.rows);
  for (std::size_t m = 0; m < num_bins; ++m) {
    if (count[m] == 0) continue;
    const auto c = static_cast<double>(count[m]);
    ece += (c / n) * std::abs(static_cast<double>(correct[m]) / c - confidence[m] / c);
  }
  return ece;
}

// Closed interval of 1-based label ranks.
struct RankBin {
  std::size_t lo = 1;
  std::size_t hi = 1;

  std::string label() const {
    return lo == hi ? std::to_string(lo) : std::to_string(lo) + "-" + std::to_string(hi);
  }
  friend bool operator==(const RankBin&, const RankBin&) = default;
};

// {1}, {2-3}, {4-6}, {7-10}, {11-100}, {101-K}, clipped to K. Bins that start
// beyond K are dropped.
inline std::vector<RankBin> default_rank_bins(std::size_t num_classes) {
  const std::vector<RankBin> full = {{1, 1}, {2, 3}, {4, 6}, {7, 10}, {11, 100}, {101, num_classes}};
  std::vector<RankBin> bins;
  for (auto bin : full) {
    if (bin.lo > num_classes) break;
    bin.hi = std::min(bin.hi, num_classes);
    bins.push_back(bin);
  }
  return bins;
}

// Bins must be non-empty intervals that tile [1, K] exactly.
inline void validate_rank_bins(std::vector<RankBin> bins, std::size_t num_classes) {
  if (bins.empty()) throw ValidationError("no rank bins given");
  std::sort(bins.begin(), bins.end(), [](const RankBin& x, const RankBin& y) { return x.lo < y.lo; });
  std::size_t next = 1;
  for (const auto& bin : bins) {
    if (bin.lo > bin.hi) throw ValidationError("rank bin " + bin.label() + " is empty");
    if (bin.lo < next) throw ValidationError("overlapping rank bins at " + bin.label());
    if (bin.lo > next) {
      throw ValidationError("rank bins leave ranks " + std::to_string(next) + "-" +
                            std::to_string(bin.lo - 1) + " uncovered");
    }
    next = bin.hi + 1;
  }
  if (next != num_classes + 1) {
    throw ValidationError("rank bins must end at K = " + std::to_string(num_classes));
  }
}

// Parses "1,2-3,4-10,11-K"; the literal K stands for num_classes.
inline std::vector<RankBin> parse_rank_bins(std::string_view text, std::size_t num_classes) {
  auto parse_bound = [&](std::string_view s) -> std::size_t {
    if (s == "K") return num_classes;
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || v == 0) {
      throw ValidationError("bad rank bound '" + std::string(s) + "'");
    }
    return v;
  };
  std::vector<RankBin> bins;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto comma = text.find(',', start);
    auto item = text.substr(start, comma == std::string_view::npos ? comma : comma - start);
    auto dash = item.find('-');
    if (dash == std::string_view::npos) {
      const auto v = parse_bound(item);
      bins.push_back({v, v});
    } else {
      bins.push_back({parse_bound(item.substr(0, dash)), parse_bound(item.substr(dash + 1))});
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  validate_rank_bins(bins, num_classes);
  return bins;
}

struct RankBinStat {
  RankBin bin;
  std::size_t count = 0;
  double mean_size = 0.0; // 0 for empty bins
};

// Mean set size among samples whose true label has a rank inside each bin.
inline std::vector<RankBinStat> size_by_rank(std::span<const PredictionSet> sets,
                                             std::span<const std::uint32_t> true_ranks,
                                             std::span<const RankBin> bins, std::size_t num_classes) {
  if (sets.size() != true_ranks.size()) {
    throw ValidationError("length mismatch: " + std::to_string(sets.size()) + " sets vs " +
                          std::to_string(true_ranks.size()) + " ranks");
  }
  validate_rank_bins(std::vector<RankBin>(bins.begin(), bins.end()), num_classes);
  std::vector<RankBinStat> stats;
  std::vector<std::size_t> size_sums(bins.size(), 0);
  for (const auto& bin : bins) stats.push_back({bin, 0, 0.0});
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (std::size_t b = 0; b < bins.size(); ++b) {
      if (true_ranks[i] >= bins[b].lo && true_ranks[i] <= bins[b].hi) {
        ++stats[b].count;
        size_sums[b] += sets[i].members.size();
        break;
      }
    }
  }
  for (std::size_t b = 0; b < bins.size(); ++b) {
    if (stats[b].count > 0) {
      stats[b].mean_size = static_cast<double>(size_sums[b]) / static_cast<double>(stats[b].count);
    }
  }
  return stats;
}

template <std::floating_point Real>
std::vector<RankBinStat> size_by_rank(std::span<const PredictionSet> sets,
                                      std::span<const RankedRow<Real>> ranked,
                                      std::span<const std::uint32_t> labels,
                                      std::span<const RankBin> bins) {
  if (ranked.size() != labels.size()) {
    throw ValidationError("length mismatch: " + std::to_string(ranked.size()) + " rows vs " +
                          std::to_string(labels.size()) + " labels");
  }
  if (ranked.empty()) throw ValidationError("no rows to bin");
  std::vector<std::uint32_t> ranks(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) ranks[i] = ranked[i].rank_of.at(labels[i]);
  return size_by_rank(sets, ranks, bins, ranked.front().perm.size());
}

enum class Precision { f32, f64 };

inline Precision parse_precision(std::string_view name) {
  if (name == "f32") return Precision::f32;
  if (name == "f64") return Precision::f64;
  throw ValidationError("unknown precision '" + std::string(name) + "' (expected f32 or f64)");
}

inline std::string_view to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

struct TruncationReport {
  double truncated_row_fraction = 0.0;
  std::vector<std::size_t> zero_counts; // per row: classes whose probability is exactly 0
};

template <std::floating_point Real>
TruncationReport count_truncation(const ProbabilityMatrix<Real>& probs) {
  TruncationReport report;
  report.zero_counts.resize(probs.rows, 0);
  std::size_t truncated = 0;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    for (Real p : probs.row(i)) report.zero_counts[i] += p == Real(0) ? 1 : 0;
    truncated += report.zero_counts[i] > 0 ? 1 : 0;
  }
  report.truncated_row_fraction =
      probs.rows == 0 ? 0.0 : static_cast<double>(truncated) / static_cast<double>(probs.rows);
  return report;
}

// Rows where a finite logit ends up with probability exactly 0 after
// temperature scaling in the requested precision.
inline TruncationReport truncation_diagnostic(const CalibrationMap& map, const LogitsDataset& ds,
                                              Precision precision) {
  if (map.kind != MapKind::temperature) {
    throw ValidationError("truncation diagnostic needs a temperature map, got " +
                          std::string(to_string(map.kind)));
  }
  return precision == Precision::f32 ? count_truncation(apply_map_dataset<float>(map, ds))
                                     : count_truncation(apply_map_dataset<double>(map, ds));
}

struct EvaluationReport {
  double coverage = 0.0;
  double average_size = 0.0;
  double ece = 0.0;
  std::vector<RankBinStat> size_by_rank_bin;
  double truncated_row_fraction = 0.0;
  std::optional<double> alpha;
  std::size_t n_test = 0;
  std::optional<ScoreSpec> score;
  CalibrationMap map;
};

// Full report for sets built on `test` under `map`. `alpha`/`score` are
// descriptors only.
inline EvaluationReport evaluate(std::span<const PredictionSet> sets, const LogitsDataset& test,
                                 const CalibrationMap& map, std::span<const RankBin> bins,
                                 std::size_t ece_bins, std::optional<double> alpha = std::nullopt,
                                 std::optional<ScoreSpec> score = std::nullopt) {
  const auto cs = coverage_and_size(sets, test.labels());
  const auto probs = apply_map_dataset<double>(map, test);
  std::vector<std::uint32_t> ranks(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    ranks[i] = rank_row(probs.row(i)).rank_of[test.label(i)];
  }
  EvaluationReport report;
  report.coverage = cs.coverage;
  report.average_size = cs.average_size;
  report.ece = expected_calibration_error(probs, test.labels(), ece_bins);
  report.size_by_rank_bin = size_by_rank(sets, ranks, bins, test.num_classes());
  report.truncated_row_fraction = count_truncation(probs).truncated_row_fraction;
  report.alpha = alpha;
  report.n_test = test.size();
  report.score = std::move(score);
  report.map = map;
  return report;
}

} // namespace conftune
