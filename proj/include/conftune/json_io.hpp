#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "conftune/calibration_map.hpp"
#include "conftune/conformal.hpp"
#include "conftune/dataset.hpp"
#include "conftune/errors.hpp"
#include "conftune/metrics.hpp"
#include "conftune/nonconformity.hpp"
#include "conftune/tuner.hpp"

namespace conftune {

// Insertion-ordered so written files have a stable, readable key order.
using Json = nlohmann::ordered_json;

namespace detail {

inline const Json& require(const Json& obj, const char* key, const char* context) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ValidationError(std::string(context) + ": missing field '" + key + "'");
  }
  return obj.at(key);
}

inline double require_number(const Json& obj, const char* key, const char* context) {
  const auto& v = require(obj, key, context);
  if (!v.is_number()) {
    throw ValidationError(std::string(context) + ": field '" + key + "' must be a number");
  }
  return v.get<double>();
}

inline std::vector<double> require_numbers(const Json& obj, const char* key, const char* context) {
  const auto& v = require(obj, key, context);
  if (!v.is_array()) {
    throw ValidationError(std::string(context) + ": field '" + key + "' must be an array");
  }
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) {
      throw ValidationError(std::string(context) + ": field '" + key + "' must hold numbers");
    }
    out.push_back(x.get<double>());
  }
  return out;
}

} // namespace detail

inline Json map_to_json(const CalibrationMap& map) {
  Json params = Json::object();
  switch (map.kind) {
  case MapKind::identity: break;
  case MapKind::temperature: params["t"] = map.t; break;
  case MapKind::platt:
    params["a"] = map.a;
    params["b"] = map.b;
    break;
  case MapKind::vector:
    params["w"] = map.w;
    params["c"] = map.c;
    break;
  }
  return Json{{"kind", std::string(to_string(map.kind))}, {"params", params}};
}

inline CalibrationMap map_from_json(const Json& j) {
  constexpr const char* ctx = "map";
  const auto& kind_field = detail::require(j, "kind", ctx);
  if (!kind_field.is_string()) throw ValidationError("map: field 'kind' must be a string");
  const MapKind kind = parse_map_kind(kind_field.get<std::string>());
  const Json params = j.contains("params") ? j.at("params") : Json::object();
  if (!params.is_object()) throw ValidationError("map: field 'params' must be an object");
  switch (kind) {
  case MapKind::identity: return CalibrationMap::identity();
  case MapKind::temperature: {
    auto map = CalibrationMap::temperature(detail::require_number(params, "t", ctx));
    validate(map, 2);
    return map;
  }
  case MapKind::platt:
    return CalibrationMap::platt(detail::require_number(params, "a", ctx),
                                 detail::require_number(params, "b", ctx));
  case MapKind::vector: {
    auto w = detail::require_numbers(params, "w", ctx);
    auto c = detail::require_numbers(params, "c", ctx);
    if (w.size() != c.size()) throw ValidationError("map: 'w' and 'c' lengths differ");
    return CalibrationMap::vector(std::move(w), std::move(c));
  }
  }
  return CalibrationMap::identity();
}

inline Json score_to_json(const ScoreSpec& spec) {
  Json j{{"kind", std::string(to_string(spec.kind))}, {"randomized", spec.randomized}};
  if (spec.raps_lambda) j["raps_lambda"] = *spec.raps_lambda;
  if (spec.raps_kreg) j["raps_kreg"] = *spec.raps_kreg;
  if (spec.saps_lambda) j["saps_lambda"] = *spec.saps_lambda;
  j["rng_seed"] = spec.rng_seed;
  return j;
}

inline ScoreSpec score_from_json(const Json& j) {
  constexpr const char* ctx = "score";
  const auto& kind_field = detail::require(j, "kind", ctx);
  if (!kind_field.is_string()) throw ValidationError("score: field 'kind' must be a string");
  ScoreSpec spec;
  spec.kind = parse_score_kind(kind_field.get<std::string>());
  const auto& randomized = detail::require(j, "randomized", ctx);
  if (!randomized.is_boolean()) throw ValidationError("score: field 'randomized' must be a boolean");
  spec.randomized = randomized.get<bool>();
  if (j.contains("raps_lambda")) spec.raps_lambda = detail::require_number(j, "raps_lambda", ctx);
  if (j.contains("raps_kreg")) {
    const auto& kreg = j.at("raps_kreg");
    if (!kreg.is_number_unsigned()) throw ValidationError("score: 'raps_kreg' must be a positive integer");
    spec.raps_kreg = kreg.get<std::uint32_t>();
  }
  if (j.contains("saps_lambda")) spec.saps_lambda = detail::require_number(j, "saps_lambda", ctx);
  if (j.contains("rng_seed")) {
    const auto& seed = j.at("rng_seed");
    if (!seed.is_number_unsigned()) throw ValidationError("score: 'rng_seed' must be unsigned");
    spec.rng_seed = seed.get<std::uint64_t>();
  }
  validate(spec);
  return spec;
}

// `map_json` lets callers embed the map exactly as it was read from disk.
inline Json threshold_to_json(const ConformalThreshold& threshold,
                              std::optional<Json> map_json = std::nullopt) {
  Json j;
  if (threshold.includes_all()) {
    j["tau"] = "include_all";
  } else {
    j["tau"] = *threshold.tau;
  }
  j["alpha"] = threshold.alpha;
  j["n_cal"] = threshold.n_cal;
  j["score"] = score_to_json(threshold.score);
  j["map"] = map_json ? *map_json : map_to_json(threshold.map);
  return j;
}

inline ConformalThreshold threshold_from_json(const Json& j) {
  constexpr const char* ctx = "threshold";
  ConformalThreshold threshold;
  const auto& tau = detail::require(j, "tau", ctx);
  if (tau.is_string()) {
    if (tau.get<std::string>() != "include_all") {
      throw ValidationError("threshold: 'tau' must be a number or \"include_all\"");
    }
  } else if (tau.is_number()) {
    threshold.tau = tau.get<double>();
  } else {
    throw ValidationError("threshold: 'tau' must be a number or \"include_all\"");
  }
  threshold.alpha = detail::require_number(j, "alpha", ctx);
  validate_alpha(threshold.alpha);
  const auto& n_cal = detail::require(j, "n_cal", ctx);
  if (!n_cal.is_number_unsigned()) throw ValidationError("threshold: 'n_cal' must be unsigned");
  threshold.n_cal = n_cal.get<std::size_t>();
  threshold.score = score_from_json(detail::require(j, "score", ctx));
  threshold.map = map_from_json(detail::require(j, "map", ctx));
  return threshold;
}

inline std::string sets_to_jsonl(std::span<const PredictionSet> sets) {
  std::string out;
  for (const auto& set : sets) {
    out += Json{{"index", set.sample_index}, {"set", set.members}}.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<PredictionSet> sets_from_jsonl(std::string_view text, std::size_t num_classes) {
  std::vector<PredictionSet> sets;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    auto line = text.substr(start, nl == std::string_view::npos ? nl : nl - start);
    start = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError("sets line " + std::to_string(line_no) + ": " + e.what());
    }
    const auto& index = detail::require(j, "index", "sets");
    const auto& members = detail::require(j, "set", "sets");
    if (!index.is_number_unsigned() || !members.is_array()) {
      throw ValidationError("sets line " + std::to_string(line_no) + ": bad 'index' or 'set'");
    }
    PredictionSet set;
    set.sample_index = index.get<std::size_t>();
    for (const auto& m : members) {
      if (!m.is_number_unsigned() || m.get<std::uint64_t>() >= num_classes) {
        throw ValidationError("sets line " + std::to_string(line_no) + ": class out of range");
      }
      set.members.push_back(m.get<std::uint32_t>());
    }
    std::sort(set.members.begin(), set.members.end());
    sets.push_back(std::move(set));
  }
  return sets;
}

inline Json report_to_json(const EvaluationReport& report) {
  Json bins = Json::object();
  for (const auto& stat : report.size_by_rank_bin) {
    bins[stat.bin.label()] = Json{{"count", stat.count}, {"mean_size", stat.mean_size}};
  }
  Json j;
  j["coverage"] = report.coverage;
  j["average_size"] = report.average_size;
  j["ece"] = report.ece;
  j["size_by_rank_bin"] = bins;
  j["truncated_row_fraction"] = report.truncated_row_fraction;
  j["alpha"] = report.alpha ? Json(*report.alpha) : Json(nullptr);
  j["n_test"] = report.n_test;
  j["score"] = report.score ? score_to_json(*report.score) : Json(nullptr);
  j["map"] = map_to_json(report.map);
  return j;
}

inline Json tune_report_to_json(const TuneReport& report) {
  return Json{{"alpha", report.alpha},
              {"final_loss", report.final_loss},
              {"iterations", report.iterations},
              {"stalled", report.stalled}};
}

inline Json read_json_file(const std::filesystem::path& path) {
  const std::string text = detail::read_file(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  detail::write_file(path, j.dump(2) + "\n");
}

} // namespace conftune
