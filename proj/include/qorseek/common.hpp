#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace qorseek {

/// Malformed input text. Carries the 1-based line number of the offending line.
class ParseError : public std::runtime_error {
public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// A domain invariant does not hold. `field()` names the offending field.
class ValidationError : public std::runtime_error {
public:
  ValidationError(std::string field, const std::string& what);
  const std::string& field() const noexcept { return field_; }

private:
  std::string field_;
};

/// Design space too large to enumerate.
class SpaceOverflowError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a, continued from `basis` so that several strings can be chained.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

/// Uniform index in [0, n); n must be positive.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

double sigmoid(double x);

}  // namespace qorseek
