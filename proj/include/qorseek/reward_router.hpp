#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qorseek/reward_model.hpp"
#include "qorseek/serialization.hpp"
#include "qorseek/synth_oracle.hpp"

namespace qorseek {

struct UncertaintyConfig {
  double tau_u = 0.1;
  std::size_t m_passes = 10;
  std::size_t k_update = 100;
  double online_lr = 2e-6;
  std::size_t online_steps = 50;
  std::size_t online_batch = 16;
  bool online_updates = true;
  bool escalate_pairs = false;  // also synthesize the partner of a flagged candidate
  bool force_real = false;      // synthesize every member of the correct set

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

struct ReplayEntry {
  DesignPoint design;
  QorVector qor;
  bool functional = true;
};

/// Ground-truth designs, unique by (kernel, config).
class ReplayBuffer {
public:
  const ReplayEntry* find(const std::string& kernel, const PragmaConfig& config) const;
  /// Returns false (and keeps the old entry) when the key is already present.
  bool add(ReplayEntry entry);
  std::size_t size() const { return entries_.size(); }
  const std::vector<ReplayEntry>& entries() const { return entries_; }

  /// JSON Lines: {"kernel", "config", "config_key", "functional", "qor"} per entry.
  void save_jsonl(std::ostream& out) const;
  static ReplayBuffer load_jsonl(std::istream& in, const KernelLookup& lookup);

private:
  std::vector<ReplayEntry> entries_;
  std::map<std::pair<std::string, std::string>, std::size_t> index_;
};

struct RouterStepStats {
  std::size_t step = 0;
  std::size_t group_size = 0;
  std::size_t n_correct = 0;
  std::size_t n_flagged = 0;
  double trigger_rate = 0.0;  // n_flagged / n_correct; 0 when fewer than two are correct
  std::size_t synth_calls_cum = 0;
  double synth_seconds_cum = 0.0;
};

struct RouterTelemetry {
  std::vector<RouterStepStats> rows;
  std::size_t synth_calls = 0;
  double synth_seconds = 0.0;

  static constexpr const char* kCsvHeader =
      "step,group_size,n_correct,n_flagged,trigger_rate,synth_calls_cum,synth_seconds_cum";
  void write_csv(std::ostream& out) const;
  static RouterTelemetry read_csv(std::istream& in);
};

struct RouterCandidate {
  DesignPoint design;
  TokenizedDesign tokens;
  bool functional = false;
};

struct RqResult {
  std::vector<double> r_q;
  std::vector<double> uncertainty;  // NaN for candidates that were not scored
  std::vector<bool> synthesized;    // real QoR used for this candidate
  RouterStepStats stats;
};

/// Real-QoR comparison on the two-tier scale: dominance, then strict latency, else 0.5.
double real_preference(const QorVector& a, const QorVector& b);

/// Proxy r_q assembly with uncertainty-gated fallback to synthesis, a replay
/// buffer of every synthesized design, and scheduled online fine-tuning.
class RewardRouter {
public:
  RewardRouter(RewardModelParams model, const SynthesisBackend& backend, UncertaintyConfig config,
               LossConfig loss = {});

  /// Round-robin r_q over the functionally correct members of the group.
  /// Non-members get 0; a sole correct candidate gets 1.
  RqResult compute_rq(std::span<const RouterCandidate> group, std::size_t step, std::uint64_t seed);

  /// Fine-tunes the model on buffer pairs when step is a positive multiple of
  /// k_update and online updates are enabled. Returns whether weights changed.
  bool maybe_online_update(std::size_t global_step, std::uint64_t seed);

  const RewardModelParams& model() const { return model_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  ReplayBuffer& buffer() { return buffer_; }
  const RouterTelemetry& telemetry() const { return telemetry_; }
  const UncertaintyConfig& config() const { return config_; }
  std::size_t online_update_count() const { return updates_; }

private:
  const QorVector& synthesize(const DesignPoint& design);

  RewardModelParams model_;
  const SynthesisBackend& backend_;
  UncertaintyConfig config_;
  LossConfig loss_;
  ReplayBuffer buffer_;
  RouterTelemetry telemetry_;
  std::size_t updates_ = 0;
};

struct TriggerWindow {
  std::size_t first_step = 0;
  std::size_t last_step = 0;
  double trigger_rate = 0.0;  // flagged / correct, pooled over the window
};

struct TriggerReport {
  std::vector<TriggerWindow> windows;
  std::size_t synth_calls = 0;
  double synth_seconds = 0.0;
};

/// Non-overlapping windows of `window` rows. Throws std::invalid_argument when
/// there are no rows or window is 0.
TriggerReport trigger_rate_report(const RouterTelemetry& telemetry, std::size_t window, double cost_seconds);

/// The `quantile` point of MC-dropout variance over `designs`. Score variance has
/// no natural scale, so a threshold expressed as a quantile transfers between models.
/// Throws std::invalid_argument for no designs or a quantile outside [0, 1].
double calibrate_tau(const RewardModelParams& params, std::span<const TokenizedDesign> designs, double quantile,
                     std::size_t m_passes, std::uint64_t seed);

}  // namespace qorseek
