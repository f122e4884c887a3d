#include "qorseek/pareto.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "qorseek/common.hpp"

namespace qorseek {

bool dominates(const QorVector& a, const QorVector& b) {
  bool strictly = false;
  for (std::size_t i = 0; i < QorVector::kMetrics; ++i) {
    if (a.metric(i) > b.metric(i)) return false;
    if (a.metric(i) < b.metric(i)) strictly = true;
  }
  return strictly;
}

bool dominates(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dominates: dimension mismatch");
  bool strictly = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > b[i]) return false;
    if (a[i] < b[i]) strictly = true;
  }
  return strictly;
}

std::vector<std::size_t> pareto_front_indices(std::span<const QorVector> qors) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < qors.size(); ++i) {
    bool keep = true;
    for (std::size_t j = 0; j < qors.size() && keep; ++j) {
      if (dominates(qors[j], qors[i])) keep = false;
      if (j < i && qors[j] == qors[i]) keep = false;
    }
    if (keep) out.push_back(i);
  }
  return out;
}

std::vector<EvaluatedDesign> pareto_front(std::span<const EvaluatedDesign> designs) {
  std::vector<QorVector> qors;
  qors.reserve(designs.size());
  for (const auto& d : designs) qors.push_back(d.qor);
  std::vector<EvaluatedDesign> out;
  for (auto i : pareto_front_indices(qors)) out.push_back(designs[i]);
  return out;
}

NormalizationBounds NormalizationBounds::from(std::span<const QorVector> qors) {
  NormalizationBounds b;
  if (qors.empty()) return b;
  b.f_max = b.f_min = qors.front();
  for (const auto& q : qors) {
    b.f_max.latency_cycles = std::max(b.f_max.latency_cycles, q.latency_cycles);
    b.f_max.lut = std::max(b.f_max.lut, q.lut);
    b.f_max.dsp = std::max(b.f_max.dsp, q.dsp);
    b.f_max.bram = std::max(b.f_max.bram, q.bram);
    b.f_max.ff = std::max(b.f_max.ff, q.ff);
    b.f_min.latency_cycles = std::min(b.f_min.latency_cycles, q.latency_cycles);
    b.f_min.lut = std::min(b.f_min.lut, q.lut);
    b.f_min.dsp = std::min(b.f_min.dsp, q.dsp);
    b.f_min.bram = std::min(b.f_min.bram, q.bram);
    b.f_min.ff = std::min(b.f_min.ff, q.ff);
  }
  return b;
}

std::array<double, QorVector::kMetrics> NormalizationBounds::scaled_difference(const QorVector& a,
                                                                            const QorVector& b) const {
  std::array<double, QorVector::kMetrics> out{};
  for (std::size_t i = 0; i < QorVector::kMetrics; ++i) {
    const double range = static_cast<double>(f_max.metric(i) - f_min.metric(i));
    if (range <= 0.0) continue;
    out[i] = static_cast<double>(a.metric(i) - b.metric(i)) / range;
  }
  return out;
}

double NormalizationBounds::distance(const QorVector& a, const QorVector& b) const {
  double sq = 0.0;
  for (double v : scaled_difference(a, b)) sq += v * v;
  return std::sqrt(sq);
}

double pareto_distance(const QorVector& p, std::span<const QorVector> front, const NormalizationBounds& bounds) {
  if (front.empty()) throw std::invalid_argument("pareto_distance: empty front");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& f : front) best = std::min(best, bounds.distance(p, f));
  return best;
}

std::vector<std::size_t> qd_sample(std::span<const QorVector> qors, const QdSamplingConfig& config,
                                   const NormalizationBounds& bounds) {
  std::vector<std::size_t> selected = pareto_front_indices(qors);
  if (selected.empty() || config.k_near == 0) return selected;

  std::vector<QorVector> front;
  for (auto i : selected) front.push_back(qors[i]);
  std::vector<bool> taken(qors.size(), false);
  for (auto i : selected) taken[i] = true;

  // Tier-2 candidates ranked by distance to the front (stable on input order).
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < qors.size(); ++i) {
    if (taken[i]) continue;
    const double d = pareto_distance(qors[i], front, bounds);
    if (d < config.epsilon) ranked.emplace_back(d, i);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<std::size_t> candidates;
  for (const auto& r : ranked) candidates.push_back(r.second);

  // min distance from each candidate to the current selection
  std::vector<double> gap(candidates.size(), std::numeric_limits<double>::infinity());
  for (std::size_t c = 0; c < candidates.size(); ++c)
    for (auto s : selected) gap[c] = std::min(gap[c], bounds.distance(qors[candidates[c]], qors[s]));

  std::vector<bool> used(candidates.size(), false);
  for (std::size_t pick = 0; pick < config.k_near; ++pick) {
    std::ptrdiff_t best = -1;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (used[c]) continue;
      if (best < 0 || gap[c] > gap[best] || (gap[c] == gap[best] && candidates[c] < candidates[best]))
        best = static_cast<std::ptrdiff_t>(c);
    }
    if (best < 0) break;
    used[best] = true;
    const auto chosen = candidates[best];
    selected.push_back(chosen);
    for (std::size_t c = 0; c < candidates.size(); ++c)
      if (!used[c]) gap[c] = std::min(gap[c], bounds.distance(qors[candidates[c]], qors[chosen]));
  }
  return selected;
}

namespace {

void check_front(std::span<const ObjectivePoint> front, std::span<const double> ref) {
  for (const auto& p : front) {
    if (p.size() != ref.size()) throw std::invalid_argument("hypervolume: dimension mismatch");
    for (std::size_t k = 0; k < ref.size(); ++k)
      if (!(p[k] < ref[k])) throw std::invalid_argument("hypervolume: point does not dominate the reference point");
  }
}

void inclusion_exclusion(std::span<const ObjectivePoint> front, std::span<const double> ref, std::size_t next,
                         std::vector<double>& upper, int depth, double& total) {
  for (std::size_t i = next; i < front.size(); ++i) {
    std::vector<double> saved = upper;
    double vol = 1.0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
      upper[k] = std::max(upper[k], front[i][k]);
      vol *= ref[k] - upper[k];
    }
    if (vol > 0.0) {
      total += (depth % 2 == 0) ? vol : -vol;
      inclusion_exclusion(front, ref, i + 1, upper, depth + 1, total);
    }
    upper = std::move(saved);
  }
}

std::vector<ObjectivePoint> nondominated(std::vector<ObjectivePoint> pts) {
  std::vector<ObjectivePoint> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool keep = true;
    for (std::size_t j = 0; j < pts.size() && keep; ++j) {
      if (i == j) continue;
      if (dominates(pts[j], pts[i]) || (j < i && pts[j] == pts[i])) keep = false;
    }
    if (keep) out.push_back(pts[i]);
  }
  return out;
}

// Points are all strictly inside the reference box and mutually non-dominated.
double slice_volume(std::vector<ObjectivePoint> pts, std::span<const double> ref, std::size_t dims) {
  if (pts.empty()) return 0.0;
  const std::size_t last = dims - 1;
  if (dims == 1) {
    double lo = ref[0];
    for (const auto& p : pts) lo = std::min(lo, p[0]);
    return ref[0] - lo;
  }
  std::sort(pts.begin(), pts.end(), [last](const auto& a, const auto& b) { return a[last] < b[last]; });
  if (dims == 2) {
    // Sweep: ascending y, keep the running minimum x.
    double vol = 0.0;
    double best_x = ref[0];
    for (std::size_t i = 0; i < pts.size(); ++i) {
      best_x = std::min(best_x, pts[i][0]);
      const double top = (i + 1 < pts.size()) ? pts[i + 1][1] : ref[1];
      vol += (ref[0] - best_x) * (top - pts[i][1]);
    }
    return vol;
  }
  double vol = 0.0;
  std::vector<ObjectivePoint> active;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ObjectivePoint proj(pts[i].begin(), pts[i].begin() + static_cast<std::ptrdiff_t>(last));
    active.push_back(std::move(proj));
    const double top = (i + 1 < pts.size()) ? pts[i + 1][last] : ref[last];
    const double height = top - pts[i][last];
    if (height <= 0.0) continue;
    active = nondominated(std::move(active));
    vol += height * slice_volume(active, ref, last);
  }
  return vol;
}

}  // namespace

double hypervolume_inclusion_exclusion(std::span<const ObjectivePoint> front, std::span<const double> ref) {
  check_front(front, ref);
  std::vector<double> upper(ref.size(), -std::numeric_limits<double>::infinity());
  double total = 0.0;
  inclusion_exclusion(front, ref, 0, upper, 0, total);
  return total;
}

double hypervolume_monte_carlo(std::span<const ObjectivePoint> front, std::span<const double> ref,
                               std::size_t samples, std::uint64_t seed) {
  check_front(front, ref);
  if (front.empty() || samples == 0) return 0.0;
  const std::size_t dims = ref.size();
  std::vector<double> lo(ref.begin(), ref.end());
  for (const auto& p : front)
    for (std::size_t k = 0; k < dims; ++k) lo[k] = std::min(lo[k], p[k]);
  double box = 1.0;
  for (std::size_t k = 0; k < dims; ++k) box *= ref[k] - lo[k];

  Rng rng(seed);
  std::vector<double> z(dims);
  std::size_t hits = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t k = 0; k < dims; ++k) z[k] = lo[k] + (ref[k] - lo[k]) * uniform01(rng);
    for (const auto& p : front) {
      bool covered = true;
      for (std::size_t k = 0; k < dims && covered; ++k) covered = p[k] <= z[k];
      if (covered) {
        ++hits;
        break;
      }
    }
  }
  return box * static_cast<double>(hits) / static_cast<double>(samples);
}

double hypervolume(std::span<const ObjectivePoint> front, std::span<const double> ref, std::uint64_t seed) {
  if (front.size() <= kExactHypervolumeLimit) return hypervolume_inclusion_exclusion(front, ref);
  return hypervolume_monte_carlo(front, ref, kMonteCarloHypervolumeSamples, seed);
}

double hypervolume_exact(std::span<const ObjectivePoint> points, std::span<const double> ref) {
  std::vector<ObjectivePoint> inside;
  for (const auto& p : points) {
    if (p.size() != ref.size()) throw std::invalid_argument("hypervolume: dimension mismatch");
    bool ok = true;
    for (std::size_t k = 0; k < ref.size() && ok; ++k) ok = p[k] < ref[k];
    if (ok) inside.push_back(p);
  }
  if (inside.empty() || ref.empty()) return 0.0;
  return slice_volume(nondominated(std::move(inside)), ref, ref.size());
}

}  // namespace qorseek
