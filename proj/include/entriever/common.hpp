// Copyright 2026 The Entriever Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ENTRIEVER_COMMON_HPP
#define ENTRIEVER_COMMON_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

/**
 * \file
 * \brief Error categories, random streams and numeric helpers shared by every module.
 */

namespace entriever {

/// Failure categories. The CLI maps each one to a distinct exit code.
enum class ErrorKind {
  kConfig,
  kData,
  kScale,
  kEstimator,
  kDimension,
  kMode,
  kWeightSource,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return "config";
    case ErrorKind::kData:
      return "data";
    case ErrorKind::kScale:
      return "scale";
    case ErrorKind::kEstimator:
      return "estimator";
    case ErrorKind::kDimension:
      return "dimension";
    case ErrorKind::kMode:
      return "mode";
    case ErrorKind::kWeightSource:
      return "weight-source";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

using Rng = std::mt19937_64;

/// Independent random stream derived from a run seed and any number of stream coordinates
/// (turn id, epoch, ...). Streams do not depend on scheduling order.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> coords = {}) {
  std::vector<std::uint32_t> material;
  material.reserve(2 + 2 * coords.size());
  auto push = [&material](std::uint64_t v) {
    material.push_back(static_cast<std::uint32_t>(v & 0xffffffffULL));
    material.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto c : coords) {
    push(c);
  }
  std::seed_seq seq(material.begin(), material.end());
  return Rng(seq);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline constexpr double kProbFloor = 1e-6;
inline constexpr double kProbCeil = 1.0 - 1e-6;

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double clamp_prob(double p) { return std::clamp(p, kProbFloor, kProbCeil); }

/// log(sum(exp(values))) with max subtraction. Returns -inf for an empty range.
inline double log_sum_exp(std::span<const double> values) {
  double max_value = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    max_value = std::max(max_value, v);
  }
  if (!std::isfinite(max_value)) {
    return max_value;
  }
  double total = 0.0;
  for (double v : values) {
    total += std::exp(v - max_value);
  }
  return max_value + std::log(total);
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] += alpha * x[i];
  }
}

inline double l2_norm(std::span<const double> x) {
  double total = 0.0;
  for (double v : x) {
    total += v * v;
  }
  return std::sqrt(total);
}

/// FNV-1a over raw bytes; used for checkpoint content hashes.
inline std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t hash = 14695981039346656037ULL) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 1099511628211ULL;
  }
  return hash;
}

}  // namespace entriever

#endif
