#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <gtest/gtest.h>

#include "conftune/dataset.hpp"
#include "conftune/synth.hpp"
#include "test_util.hpp"

using namespace conftune;
using testutil::TempDir;

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

} // namespace

TEST(DatasetConstruction, RejectsBrokenInvariants) {
  EXPECT_THROW(LogitsDataset(3, {}, {}), ValidationError);
  EXPECT_THROW(LogitsDataset(1, {0.0}, {0}), ValidationError);
  EXPECT_THROW(LogitsDataset(2, {0.0, 1.0}, {2}), ValidationError);
  EXPECT_THROW(LogitsDataset(2, {0.0, INFINITY}, {0}), ValidationError);
  EXPECT_THROW(LogitsDataset(2, {0.0, 1.0, 2.0}, {0}), ValidationError);
}

TEST(DatasetCsv, ParsesRowsAndLabels) {
  TempDir dir;
  write_text(dir / "d.csv", "label,logit_0,logit_1,logit_2\n0,2.0,1.0,0.0\n1,0.0,1.0,2.0\n");
  const auto ds = load_dataset(dir / "d.csv");
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.num_classes(), 3u);
  EXPECT_EQ(ds.label(0), 0u);
  EXPECT_EQ(ds.label(1), 1u);
  EXPECT_EQ(ds.row(0)[0], 2.0);
  EXPECT_EQ(ds.row(1)[2], 2.0);
}

TEST(DatasetCsv, NanIsReportedWithRow) {
  TempDir dir;
  write_text(dir / "d.csv", "label,logit_0,logit_1\n0,1.0,2.0\n1,nan,0.5\n");
  const auto msg = error_of([&] { load_dataset(dir / "d.csv"); });
  EXPECT_NE(msg.find("row 1"), std::string::npos) << msg;
}

TEST(DatasetCsv, MalformedInputIsRejected) {
  TempDir dir;
  write_text(dir / "a.csv", "lbl,logit_0,logit_1\n0,1,2\n");
  EXPECT_THROW(load_dataset(dir / "a.csv"), ValidationError);
  write_text(dir / "b.csv", "label,logit_0,logit_1\n0,1\n");
  EXPECT_THROW(load_dataset(dir / "b.csv"), ValidationError);
  write_text(dir / "c.csv", "label,logit_0,logit_1\n5,1,2\n");
  EXPECT_THROW(load_dataset(dir / "c.csv"), ValidationError);
  write_text(dir / "d.csv", "label,logit_0,logit_1\n0,1,abc\n");
  EXPECT_THROW(load_dataset(dir / "d.csv"), ValidationError);
  write_text(dir / "e.csv", "label,logit_0,logit_1\n");
  EXPECT_THROW(load_dataset(dir / "e.csv"), ValidationError);
}

TEST(DatasetBinary, EmptyDatasetIsAnError) {
  TempDir dir;
  std::string bytes = "CPLG";
  bytes.push_back('\x01');
  bytes.append(8, '\0');                 // n = 0
  bytes.append("\x03\x00\x00\x00", 4);   // K = 3
  write_text(dir / "d.bin", bytes);
  const auto msg = error_of([&] { load_dataset(dir / "d.bin"); });
  EXPECT_NE(msg.find("empty dataset"), std::string::npos) << msg;
}

TEST(DatasetBinary, RoundTripIsBitExact) {
  TempDir dir;
  const auto ds = generate({100, 7, 3, 2.0, 1.3, 2.5});
  save_dataset(ds, dir / "d.bin");
  EXPECT_EQ(load_dataset(dir / "d.bin"), ds);
}

TEST(DatasetBinary, LayoutMatchesFormat) {
  const LogitsDataset ds(2, {1.5, -2.0}, {1});
  const auto bytes = detail::format_binary(ds);
  ASSERT_EQ(bytes.size(), 4u + 1 + 8 + 4 + 4 + 16);
  EXPECT_EQ(bytes.substr(0, 4), "CPLG");
  EXPECT_EQ(bytes[4], '\x01');
  EXPECT_EQ(bytes[5], '\x01'); // n low byte
  EXPECT_EQ(bytes[13], '\x02'); // K low byte
  EXPECT_EQ(bytes[17], '\x01'); // label
  double first = 0;
  std::memcpy(&first, bytes.data() + 21, 8);
  EXPECT_EQ(first, 1.5);
}

TEST(DatasetBinary, DeviationsAreErrors) {
  const LogitsDataset ds(2, {1.5, -2.0, 0.25, 4.0}, {1, 0});
  const auto good = detail::format_binary(ds);
  EXPECT_EQ(detail::parse_binary(good), ds);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(detail::parse_binary(bad_magic), ValidationError);
  auto bad_version = good;
  bad_version[4] = '\x02';
  EXPECT_THROW(detail::parse_binary(bad_version), ValidationError);
  EXPECT_THROW(detail::parse_binary(good.substr(0, good.size() - 1)), ValidationError);
  EXPECT_THROW(detail::parse_binary(good + "x"), ValidationError);
  EXPECT_THROW(detail::parse_binary(good.substr(0, 10)), ValidationError);
}

TEST(DatasetCsv, RoundTripIsExact) {
  TempDir dir;
  const auto ds = generate({200, 5, 11, 2.0, 1.0, 3.0});
  save_dataset(ds, dir / "d.csv");
  EXPECT_EQ(load_dataset(dir / "d.csv"), ds);
}

TEST(DatasetIo, MissingFileAndUnwritablePathAreIoErrors) {
  TempDir dir;
  EXPECT_THROW(load_dataset(dir / "missing.bin"), IoError);
  const LogitsDataset ds(2, {0.0, 1.0}, {0});
  EXPECT_THROW(save_dataset(ds, dir / "no_such_dir" / "d.bin"), IoError);
}

TEST(DatasetSplit, NoShuffleKeepsOrder) {
  const auto ds = generate({10, 3, 1});
  const auto parts = split_dataset(ds, SplitSpec{0, {{"a", 0.5}, {"b", 0.5}}, false});
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(parts.at("a").label(i), ds.label(i));
    EXPECT_EQ(parts.at("b").label(i), ds.label(i + 5));
    EXPECT_EQ(parts.at("b").row(i)[0], ds.row(i + 5)[0]);
  }
}

TEST(DatasetSplit, SameSeedSamePartition) {
  const SplitSpec spec{42, {{"a", 0.5}, {"b", 0.5}}, true};
  EXPECT_EQ(split_indices(10, spec), split_indices(10, spec));
  EXPECT_NE(split_indices(1000, spec), split_indices(1000, SplitSpec{43, spec.parts, true}));
}

TEST(DatasetSplit, NestedSplitSizes) {
  const auto ds = generate({10000, 3, 5});
  auto outer = split_dataset(ds, SplitSpec{1, {{"conformal", 0.5}, {"validation", 0.5}}, true});
  auto inner = split_dataset(outer.at("validation"), SplitSpec{2, {{"tau", 0.5}, {"loss", 0.5}}, true});
  EXPECT_EQ(outer.at("conformal").size(), 5000u);
  EXPECT_EQ(inner.at("tau").size(), 2500u);
  EXPECT_EQ(inner.at("loss").size(), 2500u);
}

TEST(DatasetSplit, PartsAreDisjointAndExhaustive) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t n = 37 + seed * 13;
    const auto parts = split_indices(n, SplitSpec{seed, {{"a", 0.3}, {"b", 0.45}, {"c", 0.25}}, true});
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto& p : parts) {
      total += p.size();
      seen.insert(p.begin(), p.end());
    }
    EXPECT_EQ(total, n);
    EXPECT_EQ(seen.size(), n);
    EXPECT_EQ(parts[0].size(), static_cast<std::size_t>(0.3 * static_cast<double>(n)));
  }
}

TEST(DatasetSplit, InvalidSpecsAreRejected) {
  EXPECT_THROW(split_indices(10, SplitSpec{0, {{"a", 0.5}, {"b", 0.4}}, true}), ValidationError);
  EXPECT_THROW(split_indices(10, SplitSpec{0, {{"a", 0.0}, {"b", 1.0}}, true}), ValidationError);
  EXPECT_THROW(split_indices(10, SplitSpec{0, {{"a", 0.5}, {"a", 0.5}}, true}), ValidationError);
  EXPECT_THROW(split_indices(1, SplitSpec{0, {{"a", 0.5}, {"b", 0.5}}, true}), ValidationError);
  EXPECT_THROW(split_indices(3, SplitSpec{0, {{"a", 0.1}, {"b", 0.9}}, true}), ValidationError);
}
