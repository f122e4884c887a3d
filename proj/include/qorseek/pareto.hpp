#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qorseek/design_space.hpp"
#include "qorseek/synth_oracle.hpp"

namespace qorseek {

/// a <= b everywhere and a < b somewhere (minimization).
bool dominates(const QorVector& a, const QorVector& b);
bool dominates(std::span<const double> a, std::span<const double> b);

struct EvaluatedDesign {
  DesignPoint design;
  QorVector qor;
};

/// Indices of the non-dominated points. A QoR repeated in the input is kept once
/// (its first occurrence). Order follows the input.
std::vector<std::size_t> pareto_front_indices(std::span<const QorVector> qors);
std::vector<EvaluatedDesign> pareto_front(std::span<const EvaluatedDesign> designs);

/// Per-metric extremes over the evaluated set.
struct NormalizationBounds {
  QorVector f_max;
  QorVector f_min;

  static NormalizationBounds from(std::span<const QorVector> qors);

  /// (a - b) / (f_max - f_min) per metric; 0 where the metric is constant.
  std::array<double, QorVector::kMetrics> scaled_difference(const QorVector& a, const QorVector& b) const;
  double distance(const QorVector& a, const QorVector& b) const;
};

/// Normalized Euclidean distance from `p` to the closest front member.
/// Throws std::invalid_argument for an empty front.
double pareto_distance(const QorVector& p, std::span<const QorVector> front, const NormalizationBounds& bounds);

struct QdSamplingConfig {
  std::size_t k_near = 8;
  double epsilon = 0.25;
};

/// Two-tier selection: the whole front, then up to k_near near-front designs
/// (d < epsilon) picked by greedy farthest-point sampling in normalized objective
/// space. Returns input indices: front members first, then picks in pick order.
std::vector<std::size_t> qd_sample(std::span<const QorVector> qors, const QdSamplingConfig& config,
                                   const NormalizationBounds& bounds);

using ObjectivePoint = std::vector<double>;

inline constexpr std::size_t kExactHypervolumeLimit = 12;
inline constexpr std::size_t kMonteCarloHypervolumeSamples = 100'000;

/// Measure of the union of boxes [p, ref]. Exact by inclusion-exclusion for up to
/// 12 points, otherwise a seeded Monte-Carlo estimate with 10^5 samples.
/// Every point must be strictly below `ref` in every coordinate (std::invalid_argument).
double hypervolume(std::span<const ObjectivePoint> front, std::span<const double> ref, std::uint64_t seed = 0);

double hypervolume_inclusion_exclusion(std::span<const ObjectivePoint> front, std::span<const double> ref);
double hypervolume_monte_carlo(std::span<const ObjectivePoint> front, std::span<const double> ref,
                               std::size_t samples, std::uint64_t seed);

/// Exact hypervolume for any number of points by recursive slicing along the last
/// objective. Points at or beyond `ref` in some coordinate contribute nothing.
double hypervolume_exact(std::span<const ObjectivePoint> points, std::span<const double> ref);

}  // namespace qorseek
