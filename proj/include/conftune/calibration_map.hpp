#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "conftune/dataset.hpp"
#include "conftune/errors.hpp"

namespace conftune {

enum class MapKind { identity, temperature, platt, vector };

inline std::string_view to_string(MapKind kind) {
  switch (kind) {
  case MapKind::identity: return "identity";
  case MapKind::temperature: return "temperature";
  case MapKind::platt: return "platt";
  case MapKind::vector: return "vector";
  }
  return "unknown";
}

inline MapKind parse_map_kind(std::string_view name) {
  if (name == "identity") return MapKind::identity;
  if (name == "temperature") return MapKind::temperature;
  if (name == "platt") return MapKind::platt;
  if (name == "vector") return MapKind::vector;
  throw ValidationError("unknown map kind '" + std::string(name) + "'");
}

// Post-hoc transform of a logit row before the softmax.
//   temperature: z / t
//   platt:       a * z + b
//   vector:      w_k * z_k + c_k   (diagonal; one scale and bias per class)
// Only the fields belonging to `kind` are meaningful.
struct CalibrationMap {
  MapKind kind = MapKind::identity;
  double t = 1.0;
  double a = 1.0;
  double b = 0.0;
  std::vector<double> w;
  std::vector<double> c;

  static CalibrationMap identity() { return {}; }
  static CalibrationMap temperature(double t) {
    CalibrationMap m;
    m.kind = MapKind::temperature;
    m.t = t;
    return m;
  }
  static CalibrationMap platt(double a, double b) {
    CalibrationMap m;
    m.kind = MapKind::platt;
    m.a = a;
    m.b = b;
    return m;
  }
  static CalibrationMap vector(std::vector<double> w, std::vector<double> c) {
    CalibrationMap m;
    m.kind = MapKind::vector;
    m.w = std::move(w);
    m.c = std::move(c);
    return m;
  }

  friend bool operator==(const CalibrationMap&, const CalibrationMap&) = default;
};

// Throws if the map is unusable on rows of `num_classes` logits.
inline void validate(const CalibrationMap& map, std::size_t num_classes) {
  switch (map.kind) {
  case MapKind::identity: return;
  case MapKind::temperature:
    if (!(map.t > 0.0) || !std::isfinite(map.t)) {
      throw ValidationError("temperature must be positive and finite, got " + std::to_string(map.t));
    }
    return;
  case MapKind::platt:
    if (!std::isfinite(map.a) || !std::isfinite(map.b)) {
      throw ValidationError("platt parameters must be finite");
    }
    return;
  case MapKind::vector:
    if (map.w.size() != num_classes || map.c.size() != num_classes) {
      throw ValidationError("vector map has " + std::to_string(map.w.size()) + " scales and " +
                            std::to_string(map.c.size()) + " biases, dataset has " +
                            std::to_string(num_classes) + " classes");
    }
    for (std::size_t j = 0; j < num_classes; ++j) {
      if (!std::isfinite(map.w[j]) || !std::isfinite(map.c[j])) {
        throw ValidationError("vector map parameters must be finite");
      }
    }
    return;
  }
}

// Transformed logits -> softmax, entirely in precision `Real`. The row max is
// subtracted before exponentiation. Does not validate; see apply_map.
template <std::floating_point Real>
void softmax_mapped(const CalibrationMap& map, std::span<const double> logits, std::span<Real> out) {
  const std::size_t k = logits.size();
  for (std::size_t j = 0; j < k; ++j) {
    const Real z = static_cast<Real>(logits[j]);
    switch (map.kind) {
    case MapKind::identity: out[j] = z; break;
    case MapKind::temperature: out[j] = z / static_cast<Real>(map.t); break;
    case MapKind::platt: out[j] = static_cast<Real>(map.a) * z + static_cast<Real>(map.b); break;
    case MapKind::vector:
      out[j] = static_cast<Real>(map.w[j]) * z + static_cast<Real>(map.c[j]);
      break;
    }
  }
  const Real top = *std::max_element(out.begin(), out.end());
  Real total = 0;
  for (auto& v : out) {
    v = std::exp(v - top);
    total += v;
  }
  for (auto& v : out) v /= total;
}

template <std::floating_point Real = double>
std::vector<Real> apply_map(const CalibrationMap& map, std::span<const double> logits) {
  validate(map, logits.size());
  for (double v : logits) {
    if (!std::isfinite(v)) throw ValidationError("non-finite logit");
  }
  std::vector<Real> out(logits.size());
  softmax_mapped<Real>(map, logits, out);
  return out;
}

// Row-major n x K probabilities.
template <std::floating_point Real = double>
struct ProbabilityMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Real> values;

  std::span<const Real> row(std::size_t i) const {
    return std::span<const Real>(values).subspan(i * cols, cols);
  }
};

template <std::floating_point Real = double>
ProbabilityMatrix<Real> apply_map_dataset(const CalibrationMap& map, const LogitsDataset& ds) {
  validate(map, ds.num_classes());
  ProbabilityMatrix<Real> probs{ds.size(), ds.num_classes(),
                                std::vector<Real>(ds.size() * ds.num_classes())};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    softmax_mapped<Real>(map, ds.row(i),
                         std::span<Real>(probs.values).subspan(i * probs.cols, probs.cols));
  }
  return probs;
}

} // namespace conftune
