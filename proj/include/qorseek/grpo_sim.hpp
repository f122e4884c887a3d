#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qorseek/common.hpp"
#include "qorseek/design_space.hpp"
#include "qorseek/reward_router.hpp"
#include "qorseek/synth_oracle.hpp"

namespace qorseek {

/// Factored policy: one categorical per pragma dimension of each kernel, plus two
/// Bernoulli logits shared by all kernels (well-formed response wrapping, dynamic
/// allocation in the emitted code).
struct SimPolicy {
  std::map<std::string, std::vector<std::vector<double>>> kernel_logits;
  double format_logit = 0.0;
  double alloc_logit = 0.0;

  /// All-zero logits over each kernel's design space.
  static SimPolicy uniform(std::span<const std::shared_ptr<const KernelDescriptor>> kernels);

  const std::vector<std::vector<double>>& logits_for(const std::string& kernel) const;  // throws std::out_of_range
  bool operator==(const SimPolicy&) const = default;
};

struct PolicyAction {
  std::vector<std::size_t> choices;  // one per design-space dimension
  bool well_formed = true;
  bool dynamic_alloc = false;

  bool operator==(const PolicyAction&) const = default;
};

std::vector<double> softmax(std::span<const double> logits);

PolicyAction sample_action(const SimPolicy& policy, const std::string& kernel, Rng& rng);
double log_prob(const SimPolicy& policy, const std::string& kernel, const PolicyAction& action);

/// Exact KL(policy || ref) summed over the kernel's categoricals and both Bernoullis.
double policy_kl(const SimPolicy& policy, const SimPolicy& ref, const std::string& kernel);

/// Response text for a sampled action. Malformed responses break the wrapping in
/// one of three ways chosen by `variant`.
std::string wrap_response(std::string_view code, bool well_formed, int variant);

/// Extracts the <final_code> body from a well-formed response, or nothing.
std::optional<std::string> extract_final_code(std::string_view text);

/// 1 iff text is: optional whitespace, a non-empty <think> block, optional
/// whitespace, a non-empty <final_code> block, optional whitespace.
int check_format(std::string_view text);

struct RewardWeights {
  double lambda_f = 0.1;
  double lambda_comp = 0.2;
  double lambda_c = 0.3;
  double lambda_q = 0.4;

  void validate() const;
};

struct RewardComponents {
  double r_f = 0.0;
  double r_comp = 0.0;
  double r_c = 0.0;
  double r_q = 0.0;
};

double total_reward(const RewardComponents& components, const RewardWeights& weights);

/// (r - mean) / (population std + adv_eps).
std::vector<double> group_advantages(std::span<const double> rewards, double adv_eps);

struct GrpoConfig {
  std::size_t group_size = 4;
  double clip_eps = 0.2;
  double kl_beta = 0.02;
  int ppo_epochs = 2;
  double adv_eps = 1e-4;
  double policy_lr = 0.05;
  std::size_t steps = 1000;

  void validate() const;
};

struct CandidateRecord {
  std::string text;
  PolicyAction action;
  double old_log_prob = 0.0;
  RewardComponents rewards;
  double total = 0.0;
  double advantage = 0.0;
};

struct GroupSample {
  std::string kernel;
  std::vector<CandidateRecord> candidates;
};

struct StepDiagnostics {
  double first_epoch_max_ratio_error = 0.0;  // max |rho - 1| over the first PPO epoch
  double kl = 0.0;                           // after the update
  RqResult rq;
};

/// Samples a group, scores it, and applies ppo_epochs clipped-surrogate ascent
/// steps with the KL penalty. Deterministic in (seed, step).
GroupSample grpo_step(SimPolicy& policy, const SimPolicy& ref_policy, const std::shared_ptr<const KernelDescriptor>& kernel,
                      const SynthesisBackend& backend, RewardRouter& router, const GrpoConfig& config,
                      const RewardWeights& weights, std::size_t step, std::uint64_t seed,
                      StepDiagnostics* diagnostics = nullptr);

struct TrainingRow {
  std::size_t step = 0;
  std::string kernel;
  double mean_r_f = 0.0;
  double mean_r_comp = 0.0;
  double mean_r_c = 0.0;
  double mean_r_q = 0.0;  // over the whole group; incorrect candidates count as 0
  double mean_total = 0.0;
  double trigger_rate = 0.0;
  double kl = 0.0;
  double synth_seconds_cum = 0.0;

  static constexpr const char* kCsvHeader =
      "step,kernel,mean_r_f,mean_r_comp,mean_r_c,mean_r_q,mean_total,trigger_rate,kl,synth_seconds_cum";
};

void write_training_csv(std::ostream& out, std::span<const TrainingRow> rows);
std::vector<TrainingRow> read_training_csv(std::istream& in);

struct TrainingRun {
  SimPolicy policy;
  std::vector<TrainingRow> rows;
  std::size_t candidates_generated = 0;
  std::size_t online_updates = 0;
};

/// Round-robin over kernels for config.steps steps, calling the router's online
/// update after every step. Throws std::invalid_argument for an empty kernel list.
TrainingRun run_training(std::span<const std::shared_ptr<const KernelDescriptor>> kernels,
                         const SynthesisBackend& backend, RewardRouter& router, const GrpoConfig& config,
                         const RewardWeights& weights, std::uint64_t seed);

struct CostReport {
  std::size_t synth_calls = 0;
  std::size_t candidates = 0;
  double cost_seconds = 0.0;
  double proxy_seconds = 0.0;     // synth_calls * cost_seconds
  double all_real_seconds = 0.0;  // candidates * cost_seconds
  double ratio() const { return all_real_seconds > 0.0 ? proxy_seconds / all_real_seconds : 0.0; }
};

CostReport make_cost_report(std::size_t synth_calls, std::size_t candidates, double cost_seconds);
void write_cost_report(std::ostream& out, const CostReport& report);

inline constexpr int kPolicyCheckpointVersion = 1;
void save_policy(const SimPolicy& policy, const std::filesystem::path& path);
SimPolicy load_policy(const std::filesystem::path& path);

}  // namespace qorseek
