#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qorseek/dse.hpp"
#include "qorseek/grpo_sim.hpp"
#include "qorseek/pareto.hpp"
#include "qorseek/reward_model.hpp"
#include "qorseek/reward_router.hpp"

namespace qorseek {

struct RewardModelTrainingConfig {
  ModelDims dims;
  double dropout_rate = 0.2;
  std::size_t max_len = 512;
  std::uint64_t vocab_salt = 0;
  double embed_scale = 1.0;
  OptimizerConfig optimizer;
};

/// Everything a subcommand needs. Files use `key = value` lines with dotted
/// section prefixes (`dse.budget = 40`); `#` starts a comment.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string kernels = "demo/*.kd";
  std::filesystem::path out = "out";
  std::optional<std::filesystem::path> corpus;         // default: <out>/corpus.jsonl
  std::optional<std::filesystem::path> rm_checkpoint;  // default: <out>/rm.json
  std::optional<std::filesystem::path> telemetry_dir;  // default: <out>/telemetry

  std::string backend = "analytic";
  double cost_seconds = kDefaultSynthesisSeconds;

  std::size_t dse_budget = 40;
  DseOptions dse;
  QdSamplingConfig qd;
  LossConfig loss;
  RewardModelTrainingConfig rm;
  UncertaintyConfig uncertainty;
  std::optional<double> tau_quantile;  // when set, tau_u is calibrated on the corpus
  GrpoConfig grpo;
  RewardWeights reward;

  std::filesystem::path corpus_path() const { return corpus.value_or(out / "corpus.jsonl"); }
  std::filesystem::path rm_checkpoint_path() const { return rm_checkpoint.value_or(out / "rm.json"); }
  std::filesystem::path telemetry_path() const { return telemetry_dir.value_or(out / "telemetry"); }

  /// Applies one `key = value` assignment. Throws ValidationError naming the key
  /// for unknown keys, unparsable values and out-of-range values.
  void set(std::string_view key, std::string_view value);

  /// Range checks across all sections. Throws ValidationError naming the key.
  void validate() const;

  static std::vector<std::string> known_keys();
};

/// Reads a config file into `config`. Throws ParseError for lines without `=`
/// and ValidationError for bad keys or values.
void load_run_config(const std::filesystem::path& path, RunConfig& config);

}  // namespace qorseek
