#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <memory>
#include <optional>
#include <string_view>

#include "qorseek/design_space.hpp"

namespace qorseek {

/// Five-metric hardware cost. Every metric is minimized.
struct QorVector {
  std::int64_t latency_cycles = 0;
  std::int64_t lut = 0;
  std::int64_t dsp = 0;
  std::int64_t bram = 0;
  std::int64_t ff = 0;

  static constexpr std::size_t kMetrics = 5;

  auto operator<=>(const QorVector&) const = default;

  std::int64_t metric(std::size_t i) const;
  std::array<double, kMetrics> as_array() const;
};

struct SynthesisVerdict {
  bool compiled = false;
  bool functional = false;
  std::optional<QorVector> qor;  // present iff compiled
};

/// Something that can "synthesize" a design. The analytic backend below is the
/// only implementation here; a real tool would plug in behind the same interface.
class SynthesisBackend {
public:
  virtual ~SynthesisBackend() = default;
  virtual SynthesisVerdict evaluate(const DesignPoint& design) const = 0;
  /// Simulated wall-clock seconds charged per synthesis call.
  virtual double cost_model_seconds() const = 0;
};

inline constexpr double kDefaultSynthesisSeconds = 180.0;

/// Closed-form latency/resource model:
///
///   e_l      = min(u_l, min_{a in A(l)} 2 * pf(a))          (u_l if A(l) is empty)
///   c_l      = ceil(T_l / e_l) * II + 3                     innermost, pipelined
///            = ceil(T_l / e_l) * (1 + add_l + mul_l)        innermost, not pipelined
///   nest(l)  = ceil(T_l / e_l) * sum over children nest(c)  outer loops
///   latency  = sum over roots nest(r) + 10
///   dsp      = sum_l mul_l * e_l
///   lut      = 200 + sum_l (32 add_l + 16 mul_l) e_l + (pipelined ? 64 e_l : 0)
///   ff       = 100 + lut / 2
///   bram     = sum_a (complete ? 0 : pf(a) * ceil(words * bits / (pf(a) * 18432)))
QorVector analytic_qor(const KernelDescriptor& kernel, const PragmaConfig& config);

/// Effective parallelism of each loop under `config`.
std::vector<std::int64_t> effective_parallelism(const KernelDescriptor& kernel, const PragmaConfig& config);

/// Deterministic surrogate for testbench failure: a salted hash of (kernel name, config)
/// marks `hazard_fraction` of configs as functionally failing.
bool in_hazard_set(const KernelDescriptor& kernel, const PragmaConfig& config);

class AnalyticBackend final : public SynthesisBackend {
public:
  explicit AnalyticBackend(double cost_seconds = kDefaultSynthesisSeconds) : cost_seconds_(cost_seconds) {}

  SynthesisVerdict evaluate(const DesignPoint& design) const override;
  double cost_model_seconds() const override { return cost_seconds_; }

private:
  double cost_seconds_;
};

/// Backend by name ("analytic"). Throws std::invalid_argument for unknown names.
std::unique_ptr<SynthesisBackend> make_backend(std::string_view name, double cost_seconds);

}  // namespace qorseek
