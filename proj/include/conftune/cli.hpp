#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <CLI11.hpp>

#include "conftune/calibration_map.hpp"
#include "conftune/conformal.hpp"
#include "conftune/dataset.hpp"
#include "conftune/errors.hpp"
#include "conftune/json_io.hpp"
#include "conftune/metrics.hpp"
#include "conftune/nonconformity.hpp"
#include "conftune/synth.hpp"
#include "conftune/tuner.hpp"

namespace conftune::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kSuccess = 0, kValidationError = 1, kIoError = 2 };

struct SynthArgs {
  SynthSpec spec;
  fs::path out;
};

inline void cmd_synth(const SynthArgs& args) {
  save_dataset(generate(args.spec), args.out);
}

struct SplitArgs {
  fs::path in;
  std::string parts; // "name:frac[,name:frac...]"
  bool shuffle = true;
  std::uint64_t seed = 0;
  fs::path out_dir;
};

inline std::vector<SplitPart> parse_parts(std::string_view text) {
  std::vector<SplitPart> parts;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto comma = text.find(',', start);
    auto item = text.substr(start, comma == std::string_view::npos ? comma : comma - start);
    auto colon = item.find(':');
    if (colon == std::string_view::npos || colon == 0) {
      throw ValidationError("--parts: expected name:fraction, got '" + std::string(item) + "'");
    }
    auto frac_text = item.substr(colon + 1);
    double frac = 0.0;
    auto [p, ec] = std::from_chars(frac_text.data(), frac_text.data() + frac_text.size(), frac);
    if (ec != std::errc() || p != frac_text.data() + frac_text.size()) {
      throw ValidationError("--parts: bad fraction '" + std::string(frac_text) + "'");
    }
    parts.push_back({std::string(item.substr(0, colon)), frac});
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return parts;
}

// Writes <out_dir>/<name><input extension> for each part.
inline std::vector<fs::path> cmd_split(const SplitArgs& args) {
  const auto ds = load_dataset(args.in);
  const SplitSpec spec{args.seed, parse_parts(args.parts), args.shuffle};
  const auto parts = split_dataset(ds, spec);
  std::error_code ec;
  fs::create_directories(args.out_dir, ec);
  if (ec) throw IoError("cannot create directory '" + args.out_dir.string() + "': " + ec.message());
  const auto ext = args.in.extension().empty() ? fs::path(".bin") : args.in.extension();
  std::vector<fs::path> written;
  for (const auto& part : spec.parts) {
    auto path = args.out_dir / (part.name + ext.string());
    save_dataset(parts.at(part.name), path);
    written.push_back(path);
  }
  return written;
}

struct TuneArgs {
  fs::path in;
  double alpha = 0.1;
  std::string map = "temperature";
  std::uint64_t seed = 0;
  fs::path out;
  std::optional<fs::path> report;
  std::size_t grid_points = 64;
  double t_min = 0.05;
  double t_max = 5.0;
};

inline fs::path default_report_path(const fs::path& out) {
  return out.parent_path() / (out.stem().string() + ".report.json");
}

inline TuneResult cmd_tune(const TuneArgs& args) {
  const auto validation = load_dataset(args.in);
  TuneConfig cfg;
  cfg.map_kind = parse_map_kind(args.map);
  if (cfg.map_kind == MapKind::identity) throw ValidationError("--map: identity has nothing to tune");
  cfg.seed = args.seed;
  cfg.grid_points = args.grid_points;
  cfg.t_min = args.t_min;
  cfg.t_max = args.t_max;
  auto result = tune(validation, args.alpha, cfg);
  write_json_file(args.out, map_to_json(result.map));
  write_json_file(args.report.value_or(default_report_path(args.out)),
                  tune_report_to_json(result.report));
  return result;
}

struct CalibrateArgs {
  fs::path in;
  double alpha = 0.1;
  std::string score = "aps";
  bool randomized = true;
  std::optional<double> lambda;
  std::optional<std::uint32_t> kreg;
  fs::path params;
  std::uint64_t seed = 0;
  fs::path out;
};

inline ScoreSpec score_spec_from_flags(std::string_view kind_name, bool randomized,
                                       std::optional<double> lambda,
                                       std::optional<std::uint32_t> kreg, std::uint64_t seed) {
  ScoreSpec spec;
  spec.kind = parse_score_kind(kind_name);
  spec.randomized = spec.kind == ScoreKind::lac ? false : randomized;
  spec.rng_seed = seed;
  switch (spec.kind) {
  case ScoreKind::raps:
    if (!lambda || !kreg) throw ValidationError("--score raps needs --lambda and --kreg");
    spec.raps_lambda = lambda;
    spec.raps_kreg = kreg;
    break;
  case ScoreKind::saps:
    if (!lambda) throw ValidationError("--score saps needs --lambda");
    if (kreg) throw ValidationError("--kreg only applies to --score raps");
    spec.saps_lambda = lambda;
    break;
  default:
    if (lambda || kreg) throw ValidationError("--lambda/--kreg only apply to raps and saps");
  }
  validate(spec);
  return spec;
}

inline ConformalThreshold cmd_calibrate(const CalibrateArgs& args) {
  const auto cal = load_dataset(args.in);
  const Json map_json = read_json_file(args.params);
  const auto map = map_from_json(map_json);
  const auto spec = score_spec_from_flags(args.score, args.randomized, args.lambda, args.kreg, args.seed);
  auto threshold = calibrate(cal, map, spec, args.alpha);
  write_json_file(args.out, threshold_to_json(threshold, map_json));
  return threshold;
}

struct PredictArgs {
  fs::path in;
  fs::path threshold;
  std::uint64_t seed = 0;
  fs::path out;
};

inline std::vector<PredictionSet> cmd_predict(const PredictArgs& args) {
  const auto test = load_dataset(args.in);
  auto threshold = threshold_from_json(read_json_file(args.threshold));
  threshold.score.rng_seed = args.seed;
  auto sets = predict(threshold, test);
  detail::write_file(args.out, sets_to_jsonl(sets));
  return sets;
}

struct EvaluateArgs {
  fs::path sets;
  fs::path in;
  std::string bins = "default";
  std::optional<std::string> rank_bins; // used with bins == "custom"
  std::size_t ece_bins = 15;
  std::optional<fs::path> threshold;    // supplies map, alpha, score descriptors
  fs::path out;
};

inline EvaluationReport cmd_evaluate(const EvaluateArgs& args) {
  const auto test = load_dataset(args.in);
  const auto sets = sets_from_jsonl(detail::read_file(args.sets), test.num_classes());
  if (sets.size() != test.size()) {
    throw ValidationError("length mismatch: " + std::to_string(sets.size()) + " sets vs " +
                          std::to_string(test.size()) + " labels");
  }
  std::vector<RankBin> bins;
  if (args.bins == "default") {
    bins = default_rank_bins(test.num_classes());
  } else if (args.bins == "custom") {
    if (!args.rank_bins) throw ValidationError("--bins custom needs --rank-bins");
    bins = parse_rank_bins(*args.rank_bins, test.num_classes());
  } else {
    throw ValidationError("--bins must be 'default' or 'custom'");
  }
  CalibrationMap map;
  std::optional<double> alpha;
  std::optional<ScoreSpec> score;
  if (args.threshold) {
    const auto threshold = threshold_from_json(read_json_file(*args.threshold));
    map = threshold.map;
    alpha = threshold.alpha;
    score = threshold.score;
  }
  auto report = evaluate(sets, test, map, bins, args.ece_bins, alpha, score);
  write_json_file(args.out, report_to_json(report));
  return report;
}

struct DemoPrecisionArgs {
  fs::path in;
  double alpha = 0.1;
  std::vector<double> t_grid;
  std::string precision = "f64";
  std::uint64_t seed = 0;
  fs::path out;
};

struct DemoRow {
  double t = 1.0;
  double average_size = 0.0;
  double coverage = 0.0;
  double truncated_row_fraction = 0.0;
  std::optional<double> tau;
};

namespace detail {

template <std::floating_point Real>
DemoRow demo_row(const LogitsDataset& cal, const LogitsDataset& test, double t,
                 const ScoreSpec& spec, double alpha) {
  const auto map = CalibrationMap::temperature(t);
  const auto result = run_pipeline<Real>(cal, test, map, spec, alpha);
  const auto cs = coverage_and_size(result.sets, test.labels());
  const auto trunc = count_truncation(apply_map_dataset<Real>(map, test));
  return {t, cs.average_size, cs.coverage, trunc.truncated_row_fraction, result.threshold.tau};
}

} // namespace detail

// Randomized APS over a descending temperature grid, with probabilities and
// score sums evaluated in the requested precision. The input is split 50/50
// (shuffled with the seed) into calibration and test halves.
inline std::vector<DemoRow> cmd_demo_precision(const DemoPrecisionArgs& args) {
  if (args.t_grid.empty()) throw ValidationError("--t-grid is empty");
  for (std::size_t j = 0; j < args.t_grid.size(); ++j) {
    if (!(args.t_grid[j] > 0.0)) throw ValidationError("--t-grid: temperatures must be positive");
    if (j > 0 && !(args.t_grid[j] < args.t_grid[j - 1])) {
      throw ValidationError("--t-grid must be strictly descending");
    }
  }
  const Precision precision = parse_precision(args.precision);
  validate_alpha(args.alpha);
  const auto ds = load_dataset(args.in);
  auto halves = split_dataset(ds, SplitSpec{args.seed, {{"cal", 0.5}, {"test", 0.5}}, true});
  const auto& cal = halves.at("cal");
  const auto& test = halves.at("test");
  const auto spec = ScoreSpec::aps(true, args.seed);

  std::vector<DemoRow> rows;
  Json json_rows = Json::array();
  for (double t : args.t_grid) {
    auto row = precision == Precision::f32 ? detail::demo_row<float>(cal, test, t, spec, args.alpha)
                                           : detail::demo_row<double>(cal, test, t, spec, args.alpha);
    json_rows.push_back(Json{{"t", row.t},
                             {"average_size", row.average_size},
                             {"coverage", row.coverage},
                             {"truncated_row_fraction", row.truncated_row_fraction},
                             {"tau", row.tau ? Json(*row.tau) : Json("include_all")}});
    rows.push_back(row);
  }
  write_json_file(args.out, Json{{"alpha", args.alpha},
                                 {"precision", std::string(to_string(precision))},
                                 {"n_cal", cal.size()},
                                 {"n_test", test.size()},
                                 {"score", score_to_json(spec)},
                                 {"rows", json_rows}});
  return rows;
}

// Parses argv and runs one subcommand. Returns the process exit code:
// 0 success, 1 validation error (including bad flags), 2 I/O error.
inline int run(int argc, const char* const* argv, std::ostream& err = std::cerr) {
  CLI::App app{"Conformal prediction sets with efficiency-tuned post-hoc calibration"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic logits dataset");
  synth_cmd->add_option("--n", synth.spec.n, "Number of samples")->required();
  synth_cmd->add_option("--k", synth.spec.k, "Number of classes")->required();
  synth_cmd->add_option("--signal", synth.spec.signal, "True-class logit margin")->required();
  synth_cmd->add_option("--noise", synth.spec.noise, "Per-class logit noise scale")->required();
  synth_cmd->add_option("--overconfidence", synth.spec.overconfidence, "Logit multiplier g")->required();
  synth_cmd->add_option("--seed", synth.spec.seed, "Random seed")->required();
  synth_cmd->add_option("--out", synth.out, "Output dataset (.csv or binary)")->required();

  SplitArgs split;
  auto* split_cmd = app.add_subcommand("split", "Split a dataset into named parts");
  split_cmd->add_option("--in", split.in, "Input dataset")->required();
  split_cmd->add_option("--parts", split.parts, "name:frac[,name:frac...]")->required();
  split_cmd->add_option("--shuffle", split.shuffle, "Shuffle rows before splitting")->required();
  split_cmd->add_option("--seed", split.seed, "Shuffle seed")->required();
  split_cmd->add_option("--out-dir", split.out_dir, "Directory for the parts")->required();

  TuneArgs tune_args;
  auto* tune_cmd = app.add_subcommand("tune", "Tune a calibration map with the ConfTS loss");
  tune_cmd->add_option("--in", tune_args.in, "Validation dataset")->required();
  tune_cmd->add_option("--alpha", tune_args.alpha, "Error rate")->required();
  tune_cmd->add_option("--map", tune_args.map, "temperature|platt|vector")->required();
  tune_cmd->add_option("--seed", tune_args.seed, "Seed for the d_tau/d_loss split")->required();
  tune_cmd->add_option("--out", tune_args.out, "Output map parameters (JSON)")->required();
  tune_cmd->add_option("--report", tune_args.report, "Tuning report (default <out>.report.json)");
  tune_cmd->add_option("--grid-points", tune_args.grid_points, "Temperature grid size");
  tune_cmd->add_option("--t-min", tune_args.t_min, "Lower temperature bound");
  tune_cmd->add_option("--t-max", tune_args.t_max, "Upper temperature bound");

  CalibrateArgs calib;
  auto* calib_cmd = app.add_subcommand("calibrate", "Calibrate the conformal threshold");
  calib_cmd->add_option("--in", calib.in, "Conformal (calibration) dataset")->required();
  calib_cmd->add_option("--alpha", calib.alpha, "Error rate")->required();
  calib_cmd->add_option("--score", calib.score, "aps|raps|saps|lac")->required();
  calib_cmd->add_option("--randomized", calib.randomized, "Use the uniform randomizer u");
  calib_cmd->add_option("--lambda", calib.lambda, "RAPS/SAPS penalty weight");
  calib_cmd->add_option("--kreg", calib.kreg, "RAPS penalty-free rank count");
  calib_cmd->add_option("--params", calib.params, "Calibration map JSON")->required();
  calib_cmd->add_option("--seed", calib.seed, "Seed for u draws")->required();
  calib_cmd->add_option("--out", calib.out, "Output threshold JSON")->required();

  PredictArgs pred;
  auto* pred_cmd = app.add_subcommand("predict", "Build prediction sets");
  pred_cmd->add_option("--in", pred.in, "Test dataset")->required();
  pred_cmd->add_option("--threshold", pred.threshold, "Threshold JSON")->required();
  pred_cmd->add_option("--seed", pred.seed, "Seed for u draws")->required();
  pred_cmd->add_option("--out", pred.out, "Output sets (JSON lines)")->required();

  EvaluateArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate prediction sets");
  eval_cmd->add_option("--sets", eval.sets, "Prediction sets (JSON lines)")->required();
  eval_cmd->add_option("--in", eval.in, "Test dataset with labels")->required();
  eval_cmd->add_option("--bins", eval.bins, "default|custom")->required();
  eval_cmd->add_option("--rank-bins", eval.rank_bins, "Custom rank bins, e.g. 1,2-3,4-K");
  eval_cmd->add_option("--ece-bins", eval.ece_bins, "ECE bin count")->required();
  eval_cmd->add_option("--threshold", eval.threshold, "Threshold JSON for map/alpha/score");
  eval_cmd->add_option("--out", eval.out, "Output report JSON")->required();

  DemoPrecisionArgs demo;
  auto* demo_cmd = app.add_subcommand("demo-precision", "Set size vs temperature in f32/f64");
  demo_cmd->add_option("--in", demo.in, "Dataset (split 50/50 into cal/test)")->required();
  demo_cmd->add_option("--alpha", demo.alpha, "Error rate")->required();
  demo_cmd->add_option("--t-grid", demo.t_grid, "Descending temperatures F,F,...")
      ->required()
      ->delimiter(',');
  demo_cmd->add_option("--precision", demo.precision, "f32|f64")->required();
  demo_cmd->add_option("--seed", demo.seed, "Seed for split and u draws")->required();
  demo_cmd->add_option("--out", demo.out, "Output report JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    err << app.help();
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kValidationError;
  }

  try {
    if (*synth_cmd) cmd_synth(synth);
    else if (*split_cmd) cmd_split(split);
    else if (*tune_cmd) cmd_tune(tune_args);
    else if (*calib_cmd) cmd_calibrate(calib);
    else if (*pred_cmd) cmd_predict(pred);
    else if (*eval_cmd) cmd_evaluate(eval);
    else if (*demo_cmd) cmd_demo_precision(demo);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kValidationError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kValidationError;
  }
  return kSuccess;
}

inline int run(const std::vector<std::string>& args, std::ostream& err = std::cerr) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("conftune");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), err);
}

} // namespace conftune::cli
