#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "conftune/cli.hpp"
#include "test_util.hpp"

using namespace conftune;
using testutil::TempDir;

namespace {

int run(std::vector<std::string> args, std::string* err = nullptr) {
  std::ostringstream sink;
  const int code = cli::run(args, sink);
  if (err) *err = sink.str();
  return code;
}

std::string slurp(const std::filesystem::path& p) { return detail::read_file(p); }

} // namespace

TEST(JsonIo, MapRoundTrip) {
  for (const auto& map : {CalibrationMap::identity(), CalibrationMap::temperature(0.37),
                          CalibrationMap::platt(1.5, -0.25),
                          CalibrationMap::vector({1.0, 2.0, 0.5}, {0.1, 0.0, -0.3})}) {
    EXPECT_EQ(map_from_json(map_to_json(map)), map);
  }
  EXPECT_EQ(map_to_json(CalibrationMap::temperature(2.0)).dump(), R"({"kind":"temperature","params":{"t":2.0}})");
  EXPECT_THROW(map_from_json(Json::parse(R"({"kind":"temperature","params":{}})")), ValidationError);
  EXPECT_THROW(map_from_json(Json::parse(R"({"kind":"temperature","params":{"t":-1}})")), ValidationError);
  EXPECT_THROW(map_from_json(Json::parse(R"({"kind":"vector","params":{"w":[1],"c":[0,0]}})")), ValidationError);
  EXPECT_THROW(map_from_json(Json::parse(R"({"params":{}})")), ValidationError);
}

TEST(JsonIo, ThresholdRoundTrip) {
  ConformalThreshold th{0.8125, 0.1, 2000, ScoreSpec::raps(0.1, 2, true, 9), CalibrationMap::temperature(0.5)};
  const auto back = threshold_from_json(threshold_to_json(th));
  EXPECT_EQ(back.tau, th.tau);
  EXPECT_EQ(back.n_cal, 2000u);
  EXPECT_EQ(back.score.raps_kreg, 2u);
  EXPECT_EQ(back.score.rng_seed, 9u);
  EXPECT_EQ(back.map, th.map);
  th.tau.reset();
  const auto j = threshold_to_json(th);
  EXPECT_EQ(j["tau"], "include_all");
  EXPECT_TRUE(threshold_from_json(j).includes_all());
}

TEST(JsonIo, SetsRoundTrip) {
  const std::vector<PredictionSet> sets = {{{0, 2}, 0}, {{}, 1}, {{1}, 2}};
  const auto text = sets_to_jsonl(sets);
  EXPECT_EQ(text, "{\"index\":0,\"set\":[0,2]}\n{\"index\":1,\"set\":[]}\n{\"index\":2,\"set\":[1]}\n");
  const auto back = sets_from_jsonl(text, 3);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].members, sets[0].members);
  EXPECT_THROW(sets_from_jsonl("{\"index\":0,\"set\":[5]}\n", 3), ValidationError);
  EXPECT_THROW(sets_from_jsonl("{\"index\":0\n", 3), ValidationError);
}

TEST(Cli, FullPipelineReachesTargetCoverage) {
  TempDir dir;
  const auto d = [&](const char* name) { return (dir / name).string(); };
  ASSERT_EQ(run({"synth", "--n", "12000", "--k", "20", "--signal", "2", "--noise", "1",
                 "--overconfidence", "2", "--seed", "1", "--out", d("all.bin")}), 0);
  ASSERT_EQ(run({"split", "--in", d("all.bin"), "--parts", "validation:0.25,conformal:0.25,test:0.5",
                 "--shuffle", "true", "--seed", "2", "--out-dir", d("parts")}), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "parts" / "test.bin"));
  ASSERT_EQ(run({"tune", "--in", d("parts/validation.bin"), "--alpha", "0.1", "--map", "temperature",
                 "--seed", "3", "--out", d("params.json")}), 0);
  const auto tune_report = read_json_file(dir / "params.report.json");
  EXPECT_EQ(tune_report["alpha"], 0.1);
  EXPECT_TRUE(tune_report.contains("stalled"));
  ASSERT_EQ(run({"calibrate", "--in", d("parts/conformal.bin"), "--alpha", "0.1", "--score", "aps",
                 "--params", d("params.json"), "--seed", "4", "--out", d("threshold.json")}), 0);
  EXPECT_EQ(read_json_file(dir / "threshold.json")["map"], read_json_file(dir / "params.json"));
  ASSERT_EQ(run({"predict", "--in", d("parts/test.bin"), "--threshold", d("threshold.json"),
                 "--seed", "4", "--out", d("sets.jsonl")}), 0);
  ASSERT_EQ(run({"evaluate", "--sets", d("sets.jsonl"), "--in", d("parts/test.bin"), "--bins", "default",
                 "--ece-bins", "15", "--threshold", d("threshold.json"), "--out", d("report.json")}), 0);
  const auto report = read_json_file(dir / "report.json");
  EXPECT_NEAR(report["coverage"].get<double>(), 0.9, 0.02);
  EXPECT_EQ(report["n_test"], 6000);
  for (const char* key : {"coverage", "average_size", "ece", "size_by_rank_bin", "truncated_row_fraction",
                          "alpha", "n_test", "score", "map"}) {
    EXPECT_TRUE(report.contains(key)) << key;
  }
}

TEST(Cli, CsvInputsKeepCsvParts) {
  TempDir dir;
  ASSERT_EQ(run({"synth", "--n", "100", "--k", "4", "--signal", "2", "--noise", "1", "--overconfidence", "1",
                 "--seed", "1", "--out", (dir / "all.csv").string()}), 0);
  ASSERT_EQ(run({"split", "--in", (dir / "all.csv").string(), "--parts", "a:0.5,b:0.5", "--shuffle", "false",
                 "--seed", "0", "--out-dir", dir.path().string()}), 0);
  EXPECT_EQ(load_dataset(dir / "a.csv").size(), 50u);
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  std::string err;
  EXPECT_EQ(run({"synth", "--n", "10", "--bogus"}, &err), 1);
  EXPECT_EQ(run({"frobnicate"}, &err), 1);
  EXPECT_EQ(run({"tune", "--in", (dir / "missing.bin").string(), "--alpha", "0.1", "--map", "temperature",
                 "--seed", "0", "--out", (dir / "p.json").string()}, &err), 2);
  EXPECT_NE(err.find("missing.bin"), std::string::npos);
  ASSERT_EQ(run({"synth", "--n", "50", "--k", "4", "--signal", "2", "--noise", "1", "--overconfidence", "1",
                 "--seed", "1", "--out", (dir / "d.bin").string()}), 0);
  std::ofstream(dir / "p.json") << R"({"kind":"identity","params":{}})";
  EXPECT_EQ(run({"calibrate", "--in", (dir / "d.bin").string(), "--alpha", "0.1", "--score", "raps",
                 "--lambda", "0.1", "--params", (dir / "p.json").string(), "--seed", "0", "--out",
                 (dir / "t.json").string()}, &err), 1);
  EXPECT_NE(err.find("--kreg"), std::string::npos);
  EXPECT_EQ(run({"calibrate", "--in", (dir / "d.bin").string(), "--alpha", "1.5", "--score", "aps",
                 "--params", (dir / "p.json").string(), "--seed", "0", "--out", (dir / "t.json").string()}), 1);
  EXPECT_EQ(run({"synth", "--n", "10", "--k", "1", "--signal", "2", "--noise", "1", "--overconfidence", "1",
                 "--seed", "1", "--out", (dir / "x.bin").string()}), 1);
}

TEST(Cli, EvaluateLengthMismatch) {
  TempDir dir;
  ASSERT_EQ(run({"synth", "--n", "20", "--k", "3", "--signal", "2", "--noise", "1", "--overconfidence", "1",
                 "--seed", "1", "--out", (dir / "d.bin").string()}), 0);
  std::ofstream(dir / "s.jsonl") << "{\"index\":0,\"set\":[0]}\n";
  std::string err;
  EXPECT_EQ(run({"evaluate", "--sets", (dir / "s.jsonl").string(), "--in", (dir / "d.bin").string(), "--bins",
                 "default", "--ece-bins", "15", "--out", (dir / "r.json").string()}, &err), 1);
  EXPECT_NE(err.find("length mismatch"), std::string::npos) << err;
}

TEST(Cli, EvaluateCustomBins) {
  TempDir dir;
  ASSERT_EQ(run({"synth", "--n", "2", "--k", "3", "--signal", "2", "--noise", "1", "--overconfidence", "1",
                 "--seed", "1", "--out", (dir / "d.bin").string()}), 0);
  std::ofstream(dir / "s.jsonl") << "{\"index\":0,\"set\":[0,1,2]}\n{\"index\":1,\"set\":[0,1,2]}\n";
  ASSERT_EQ(run({"evaluate", "--sets", (dir / "s.jsonl").string(), "--in", (dir / "d.bin").string(), "--bins",
                 "custom", "--rank-bins", "1-2,3", "--ece-bins", "10", "--out", (dir / "r.json").string()}), 0);
  const auto report = read_json_file(dir / "r.json");
  EXPECT_TRUE(report["size_by_rank_bin"].contains("1-2"));
  EXPECT_EQ(report["coverage"], 1.0);
  EXPECT_EQ(run({"evaluate", "--sets", (dir / "s.jsonl").string(), "--in", (dir / "d.bin").string(), "--bins",
                 "custom", "--ece-bins", "10", "--out", (dir / "r.json").string()}), 1);
}

TEST(Cli, DemoPrecisionSingleTemperature) {
  TempDir dir;
  ASSERT_EQ(run({"synth", "--n", "400", "--k", "10", "--signal", "2", "--noise", "1", "--overconfidence", "1",
                 "--seed", "1", "--out", (dir / "d.bin").string()}), 0);
  ASSERT_EQ(run({"demo-precision", "--in", (dir / "d.bin").string(), "--alpha", "0.1", "--t-grid", "1",
                 "--precision", "f32", "--seed", "2", "--out", (dir / "demo.json").string()}), 0);
  const auto report = read_json_file(dir / "demo.json");
  ASSERT_EQ(report["rows"].size(), 1u);
  EXPECT_EQ(report["rows"][0]["truncated_row_fraction"], 0.0);
  EXPECT_EQ(run({"demo-precision", "--in", (dir / "d.bin").string(), "--alpha", "0.1", "--t-grid", "0.5,1",
                 "--precision", "f32", "--seed", "2", "--out", (dir / "demo.json").string()}), 1);
  EXPECT_EQ(run({"demo-precision", "--in", (dir / "d.bin").string(), "--alpha", "0.1", "--t-grid", "1",
                 "--precision", "f16", "--seed", "2", "--out", (dir / "demo.json").string()}), 1);
}

TEST(Cli, RepeatedRunsAreByteIdentical) {
  TempDir dir;
  auto pipeline = [&](const std::string& tag) {
    const auto p = [&](const char* name) { return (dir / (tag + name)).string(); };
    run({"synth", "--n", "3000", "--k", "15", "--signal", "2", "--noise", "1", "--overconfidence", "2",
         "--seed", "7", "--out", p("all.bin")});
    run({"split", "--in", p("all.bin"), "--parts", "v:0.4,c:0.3,t:0.3", "--shuffle", "true", "--seed", "8",
         "--out-dir", p("parts")});
    run({"tune", "--in", p("parts/v.bin"), "--alpha", "0.1", "--map", "platt", "--seed", "9", "--out",
         p("params.json")});
    run({"calibrate", "--in", p("parts/c.bin"), "--alpha", "0.1", "--score", "saps", "--lambda", "0.05",
         "--params", p("params.json"), "--seed", "10", "--out", p("th.json")});
    run({"predict", "--in", p("parts/t.bin"), "--threshold", p("th.json"), "--seed", "10", "--out",
         p("sets.jsonl")});
    return slurp(p("all.bin")) + slurp(p("parts/t.bin")) + slurp(p("params.json")) +
           slurp(p("params.report.json")) + slurp(p("th.json")) + slurp(p("sets.jsonl"));
  };
  EXPECT_EQ(pipeline("a_"), pipeline("b_"));
}
