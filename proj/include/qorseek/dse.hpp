#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "qorseek/design_space.hpp"
#include "qorseek/pareto.hpp"
#include "qorseek/synth_oracle.hpp"

namespace qorseek {

/// One real in [0, 1] per pragma dimension: unroll on a log2 scale, pipeline
/// folded as off=0, II=4 -> 1/3, II=2 -> 2/3, II=1 -> 1, partition as its choice
/// position. Injective over the legal grid.
using ConfigEncoding = std::vector<double>;

ConfigEncoding encode_config(const DesignSpace& space, const PragmaConfig& config);

/// Zero-mean GP with a unit-variance RBF kernel on standardized targets.
class GaussianProcess {
public:
  GaussianProcess() = default;
  GaussianProcess(std::vector<ConfigEncoding> inputs, std::vector<double> targets, double length_scale,
                  double jitter);

  struct Posterior {
    double mean = 0.0;
    double variance = 0.0;
  };
  Posterior predict(const ConfigEncoding& x) const;

private:
  double kernel(const ConfigEncoding& a, const ConfigEncoding& b) const;

  std::vector<ConfigEncoding> inputs_;
  double length_scale_ = 0.5;
  double jitter_ = 1e-6;
  double target_mean_ = 0.0;
  double target_scale_ = 1.0;
  Eigen::LLT<Eigen::MatrixXd> chol_;
  Eigen::VectorXd alpha_;
};

inline constexpr double kSurrogateLengthScale = 0.5;
inline constexpr double kSurrogateJitter = 1e-6;

/// Five independent GPs, one per log1p-transformed objective.
struct SurrogateModel {
  std::array<GaussianProcess, QorVector::kMetrics> objectives;

  /// Posterior per objective in log1p space.
  std::array<GaussianProcess::Posterior, QorVector::kMetrics> predict(const ConfigEncoding& x) const;
};

struct Observation {
  ConfigEncoding x;
  QorVector qor;
};

/// Throws std::invalid_argument for fewer than two observations.
SurrogateModel fit_surrogate(std::span<const Observation> evaluated);

/// Normalized objective space used for hypervolume during DSE: each metric is
/// divided by its reference value, so the reference point becomes (1, ..., 1).
struct HvFrame {
  std::array<double, QorVector::kMetrics> ref{};

  /// ref = 1.1 * per-metric max; a metric that is 0 everywhere gets ref 1.
  static HvFrame from(std::span<const QorVector> evaluated);
  ObjectivePoint normalize(const QorVector& q) const;
  ObjectivePoint normalize(const std::array<double, QorVector::kMetrics>& q) const;
  std::vector<double> unit_ref() const { return std::vector<double>(QorVector::kMetrics, 1.0); }
};

/// Hypervolume of the non-dominated subset of `qors` in `frame`.
double front_hypervolume(std::span<const QorVector> qors, const HvFrame& frame);

inline constexpr std::size_t kDefaultEhviSamples = 64;

/// Monte-Carlo expected hypervolume improvement of `candidate` over `front`
/// (points already in frame-normalized space, reference (1, ..., 1)).
double ehvi(const ConfigEncoding& candidate, const SurrogateModel& model, std::span<const ObjectivePoint> front,
            const HvFrame& frame, std::size_t n_samples, std::uint64_t seed);

struct CorpusEntry {
  DesignPoint design;
  QorVector qor;
  bool functional = false;
  std::size_t step = 0;
};

struct DseLogRow {
  std::size_t step = 0;
  double ehvi = 0.0;  // 0 for the random initial evaluations
  double hv = 0.0;
};

struct DseCorpus {
  std::shared_ptr<const KernelDescriptor> kernel;
  std::vector<CorpusEntry> entries;
  std::vector<DseLogRow> log;

  std::vector<QorVector> functional_qors() const;
};

struct DseOptions {
  std::size_t initial_points = 4;
  std::size_t pool_size = 256;
  std::size_t ehvi_samples = kDefaultEhviSamples;
};

/// Multi-objective Bayesian optimization with MC-EHVI. `budget_k` counts all
/// evaluations including the random initial ones. Throws std::invalid_argument
/// when budget_k < 4.
DseCorpus run_dse(std::shared_ptr<const KernelDescriptor> kernel, const SynthesisBackend& backend,
                  std::size_t budget_k, std::uint64_t seed, const DseOptions& options = {});

/// Baseline: `budget_k` distinct uniformly random configs. The first four match
/// run_dse's initial points for the same seed.
DseCorpus run_random_search(std::shared_ptr<const KernelDescriptor> kernel, const SynthesisBackend& backend,
                            std::size_t budget_k, std::uint64_t seed);

}  // namespace qorseek
