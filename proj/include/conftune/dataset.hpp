#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "conftune/errors.hpp"

namespace conftune {

// n x K matrix of raw classifier logits (row-major) with one integer label
// per row. Invariants are checked on construction: n >= 1, K >= 2, every
// logit finite, every label in [0, K).
class LogitsDataset {
public:
  LogitsDataset(std::size_t num_classes, std::vector<double> logits,
                std::vector<std::uint32_t> labels)
      : k_(num_classes), logits_(std::move(logits)), labels_(std::move(labels)) {
    if (labels_.empty()) {
      throw ValidationError("empty dataset");
    }
    if (k_ < 2) {
      throw ValidationError("dataset needs at least 2 classes, got " + std::to_string(k_));
    }
    if (logits_.size() != labels_.size() * k_) {
      throw ValidationError("logit count " + std::to_string(logits_.size()) +
                            " does not match n*K = " + std::to_string(labels_.size() * k_));
    }
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i] >= k_) {
        throw ValidationError("row " + std::to_string(i) + ": label " +
                              std::to_string(labels_[i]) + " out of range [0, " +
                              std::to_string(k_) + ")");
      }
      for (std::size_t j = 0; j < k_; ++j) {
        if (!std::isfinite(logits_[i * k_ + j])) {
          throw ValidationError("row " + std::to_string(i) + ": non-finite logit in column " +
                                std::to_string(j));
        }
      }
    }
  }

  std::size_t size() const { return labels_.size(); }
  std::size_t num_classes() const { return k_; }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(logits_).subspan(i * k_, k_);
  }
  std::uint32_t label(std::size_t i) const { return labels_[i]; }

  std::span<const double> logits() const { return logits_; }
  std::span<const std::uint32_t> labels() const { return labels_; }

  // Rows in the given order (duplicates allowed).
  LogitsDataset subset(std::span<const std::size_t> rows) const {
    std::vector<double> logits;
    std::vector<std::uint32_t> labels;
    logits.reserve(rows.size() * k_);
    labels.reserve(rows.size());
    for (std::size_t r : rows) {
      if (r >= size()) {
        throw ValidationError("subset row " + std::to_string(r) + " out of range");
      }
      auto src = row(r);
      logits.insert(logits.end(), src.begin(), src.end());
      labels.push_back(labels_[r]);
    }
    return LogitsDataset(k_, std::move(logits), std::move(labels));
  }

  friend bool operator==(const LogitsDataset&, const LogitsDataset&) = default;

private:
  std::size_t k_;
  std::vector<double> logits_;
  std::vector<std::uint32_t> labels_;
};

enum class FileFormat { csv, binary };

// ".csv" selects CSV; anything else is the binary CPLG format.
inline FileFormat format_for_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? FileFormat::csv : FileFormat::binary;
}

namespace detail {

inline constexpr std::array<char, 4> kBinaryMagic = {'C', 'P', 'L', 'G'};
inline constexpr std::uint8_t kBinaryVersion = 0x01;

template <class UInt>
void put_le(std::string& out, UInt value) {
  for (std::size_t b = 0; b < sizeof(UInt); ++b) {
    out.push_back(static_cast<char>((value >> (8 * b)) & 0xFFu));
  }
}

template <class UInt>
UInt get_le(std::string_view bytes, std::size_t offset) {
  UInt value = 0;
  for (std::size_t b = 0; b < sizeof(UInt); ++b) {
    value |= static_cast<UInt>(static_cast<std::uint8_t>(bytes[offset + b])) << (8 * b);
  }
  return value;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open '" + path.string() + "' for reading");
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) {
    throw IoError("read failure on '" + path.string() + "'");
  }
  return std::move(buffer).str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open '" + path.string() + "' for writing");
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) {
    throw IoError("write failure on '" + path.string() + "'");
  }
}

// Shortest representation that parses back to the same double.
inline void append_double(std::string& out, double value) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  out.append(buf.data(), ptr);
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline LogitsDataset parse_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    auto line = trim(text.substr(start, nl == std::string_view::npos ? nl : nl - start));
    if (!line.empty()) lines.push_back(line);
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  if (lines.empty()) {
    throw ValidationError("malformed header: file is empty");
  }

  auto header = split_fields(lines.front());
  if (header.size() < 3 || trim(header[0]) != "label") {
    throw ValidationError("malformed header: expected 'label,logit_0,...,logit_{K-1}'");
  }
  const std::size_t k = header.size() - 1;
  for (std::size_t j = 0; j < k; ++j) {
    if (trim(header[j + 1]) != "logit_" + std::to_string(j)) {
      throw ValidationError("malformed header: column " + std::to_string(j + 1) +
                            " should be 'logit_" + std::to_string(j) + "'");
    }
  }
  if (lines.size() == 1) {
    throw ValidationError("empty dataset");
  }

  std::vector<double> logits;
  std::vector<std::uint32_t> labels;
  logits.reserve((lines.size() - 1) * k);
  labels.reserve(lines.size() - 1);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const std::size_t row = r - 1;
    auto fields = split_fields(lines[r]);
    if (fields.size() != k + 1) {
      throw ValidationError("row " + std::to_string(row) + ": expected " + std::to_string(k + 1) +
                            " fields, got " + std::to_string(fields.size()));
    }
    auto label_text = trim(fields[0]);
    std::uint32_t label = 0;
    auto [lp, lec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
    if (lec != std::errc() || lp != label_text.data() + label_text.size()) {
      throw ValidationError("row " + std::to_string(row) + ": invalid label '" +
                            std::string(label_text) + "'");
    }
    if (label >= k) {
      throw ValidationError("row " + std::to_string(row) + ": label " + std::to_string(label) +
                            " out of range [0, " + std::to_string(k) + ")");
    }
    labels.push_back(label);
    for (std::size_t j = 0; j < k; ++j) {
      auto field = trim(fields[j + 1]);
      double value = 0.0;
      auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
      if (ec != std::errc() || p != field.data() + field.size()) {
        throw ValidationError("row " + std::to_string(row) + ": cannot parse logit '" +
                              std::string(field) + "'");
      }
      if (!std::isfinite(value)) {
        throw ValidationError("row " + std::to_string(row) + ": non-finite logit in column " +
                              std::to_string(j));
      }
      logits.push_back(value);
    }
  }
  return LogitsDataset(k, std::move(logits), std::move(labels));
}

inline std::string format_csv(const LogitsDataset& ds) {
  std::string out = "label";
  for (std::size_t j = 0; j < ds.num_classes(); ++j) {
    out += ",logit_" + std::to_string(j);
  }
  out += '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out += std::to_string(ds.label(i));
    for (double v : ds.row(i)) {
      out += ',';
      append_double(out, v);
    }
    out += '\n';
  }
  return out;
}

inline LogitsDataset parse_binary(std::string_view bytes) {
  constexpr std::size_t header_size = 4 + 1 + 8 + 4;
  if (bytes.size() < header_size) {
    throw ValidationError("truncated file: header needs " + std::to_string(header_size) +
                          " bytes, got " + std::to_string(bytes.size()));
  }
  if (!std::equal(kBinaryMagic.begin(), kBinaryMagic.end(), bytes.begin())) {
    throw ValidationError("malformed header: bad magic (expected CPLG)");
  }
  if (static_cast<std::uint8_t>(bytes[4]) != kBinaryVersion) {
    throw ValidationError("malformed header: unsupported version " +
                          std::to_string(static_cast<std::uint8_t>(bytes[4])));
  }
  const auto n = get_le<std::uint64_t>(bytes, 5);
  const auto k = get_le<std::uint32_t>(bytes, 13);
  if (n == 0) {
    throw ValidationError("empty dataset");
  }
  if (k < 2) {
    throw ValidationError("malformed header: K = " + std::to_string(k) + " (need >= 2)");
  }
  // Guard the size arithmetic against absurd headers before multiplying.
  const std::size_t remaining = bytes.size() - header_size;
  if (n > remaining / 4 || n * k > remaining / 8) {
    throw ValidationError("truncated file: header declares n=" + std::to_string(n) +
                          ", K=" + std::to_string(k) + " but only " + std::to_string(remaining) +
                          " payload bytes follow");
  }
  const std::size_t expected = header_size + n * 4 + n * k * 8;
  if (bytes.size() < expected) {
    const std::size_t have_rows =
        bytes.size() < header_size + n * 4 ? 0 : (bytes.size() - header_size - n * 4) / (8 * k);
    throw ValidationError("truncated file: row " + std::to_string(have_rows) +
                          " incomplete (expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()) + ")");
  }
  if (bytes.size() > expected) {
    throw ValidationError("trailing bytes after payload (expected " + std::to_string(expected) +
                          " bytes, got " + std::to_string(bytes.size()) + ")");
  }

  std::vector<std::uint32_t> labels(n);
  std::size_t offset = header_size;
  for (std::size_t i = 0; i < n; ++i, offset += 4) {
    labels[i] = get_le<std::uint32_t>(bytes, offset);
    if (labels[i] >= k) {
      throw ValidationError("row " + std::to_string(i) + ": label " + std::to_string(labels[i]) +
                            " out of range [0, " + std::to_string(k) + ")");
    }
  }
  std::vector<double> logits(n * k);
  for (std::size_t idx = 0; idx < n * k; ++idx, offset += 8) {
    logits[idx] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, offset));
    if (!std::isfinite(logits[idx])) {
      throw ValidationError("row " + std::to_string(idx / k) + ": non-finite logit in column " +
                            std::to_string(idx % k));
    }
  }
  return LogitsDataset(k, std::move(logits), std::move(labels));
}

inline std::string format_binary(const LogitsDataset& ds) {
  std::string out(kBinaryMagic.begin(), kBinaryMagic.end());
  out.push_back(static_cast<char>(kBinaryVersion));
  put_le<std::uint64_t>(out, ds.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.num_classes()));
  for (auto label : ds.labels()) put_le<std::uint32_t>(out, label);
  for (double v : ds.logits()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

} // namespace detail

inline LogitsDataset load_dataset(const std::filesystem::path& path, FileFormat format) {
  const std::string bytes = detail::read_file(path);
  try {
    return format == FileFormat::csv ? detail::parse_csv(bytes) : detail::parse_binary(bytes);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline LogitsDataset load_dataset(const std::filesystem::path& path) {
  return load_dataset(path, format_for_path(path));
}

inline void save_dataset(const LogitsDataset& ds, const std::filesystem::path& path,
                         FileFormat format) {
  detail::write_file(path, format == FileFormat::csv ? detail::format_csv(ds)
                                                     : detail::format_binary(ds));
}

inline void save_dataset(const LogitsDataset& ds, const std::filesystem::path& path) {
  save_dataset(ds, path, format_for_path(path));
}

struct SplitPart {
  std::string name;
  double fraction = 0.0;
};

// Ordered named fractions. Part sizes are floor(fraction * n); the last part
// takes the remainder.
struct SplitSpec {
  std::uint64_t seed = 0;
  std::vector<SplitPart> parts;
  bool shuffle = true;
};

inline void validate(const SplitSpec& spec) {
  if (spec.parts.empty()) {
    throw ValidationError("split needs at least one part");
  }
  std::set<std::string> names;
  double total = 0.0;
  for (const auto& part : spec.parts) {
    if (part.name.empty()) {
      throw ValidationError("split part names must be non-empty");
    }
    if (!names.insert(part.name).second) {
      throw ValidationError("duplicate split part '" + part.name + "'");
    }
    if (!(part.fraction > 0.0 && part.fraction <= 1.0)) {
      throw ValidationError("split fraction for '" + part.name + "' must lie in (0, 1]");
    }
    total += part.fraction;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw ValidationError("split fractions sum to " + std::to_string(total) + ", expected 1");
  }
}

// Row indices assigned to each part, in part order.
inline std::vector<std::vector<std::size_t>> split_indices(std::size_t n, const SplitSpec& spec) {
  validate(spec);
  if (n < spec.parts.size()) {
    throw ValidationError("cannot split " + std::to_string(n) + " rows into " +
                          std::to_string(spec.parts.size()) + " parts");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (spec.shuffle) {
    std::mt19937_64 engine(spec.seed);
    std::shuffle(order.begin(), order.end(), engine);
  }

  std::vector<std::vector<std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t p = 0; p < spec.parts.size(); ++p) {
    std::size_t count = 0;
    if (p + 1 == spec.parts.size()) {
      count = n - begin;
    } else {
      // 1e-9 absorbs representation error, e.g. 0.29 * 100 = 28.999999999999996.
      count = static_cast<std::size_t>(std::floor(spec.parts[p].fraction * static_cast<double>(n) + 1e-9));
      count = std::min(count, n - begin);
    }
    if (count == 0) {
      throw ValidationError("split part '" + spec.parts[p].name + "' would be empty (n=" +
                            std::to_string(n) + ")");
    }
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                     order.begin() + static_cast<std::ptrdiff_t>(begin + count));
    begin += count;
  }
  return out;
}

inline std::map<std::string, LogitsDataset> split_dataset(const LogitsDataset& ds,
                                                          const SplitSpec& spec) {
  auto indices = split_indices(ds.size(), spec);
  std::map<std::string, LogitsDataset> parts;
  for (std::size_t p = 0; p < indices.size(); ++p) {
    parts.emplace(spec.parts[p].name, ds.subset(indices[p]));
  }
  return parts;
}

} // namespace conftune
