#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qorseek/dse.hpp"
#include "qorseek/synth_oracle.hpp"

namespace qorseek {

inline constexpr std::int32_t kPadToken = 0;
inline constexpr std::int32_t kPragmaToken = 1;

struct TokenizerConfig {
  std::size_t vocab_size = 4096;
  std::size_t max_len = 512;
  std::uint64_t salt = 0;

  bool operator==(const TokenizerConfig&) const = default;
};

struct TokenizedDesign {
  std::vector<std::int32_t> token_ids;
  std::vector<std::size_t> pragma_token_positions;

  bool operator==(const TokenizedDesign&) const = default;
};

/// Splits every line into identifier/number runs and single punctuation marks,
/// hashes each token into [2, vocab_size), and puts a [PRAGMA] token in front of
/// each `#pragma HLS` line. Output is truncated to max_len tokens.
TokenizedDesign tokenize(std::string_view design_text, const TokenizerConfig& config = {});

struct ModelDims {
  std::size_t vocab = 4096;
  std::size_t embed = 64;
  std::size_t hidden = 32;

  bool operator==(const ModelDims&) const = default;
};

/// Flat weight storage. Also used as the gradient container.
struct ModelWeights {
  std::vector<double> embedding;  // vocab x embed, row-major
  std::vector<double> w1;         // embed x hidden, row-major
  std::vector<double> b1;         // hidden
  std::vector<double> w2;         // hidden
  double b2 = 0.0;

  static ModelWeights zeros(const ModelDims& dims);
  bool operator==(const ModelWeights&) const = default;
};

struct RewardModelParams {
  ModelDims dims;
  double dropout_rate = 0.2;
  TokenizerConfig tokenizer;
  ModelWeights weights;

  bool operator==(const RewardModelParams&) const = default;
};

struct InitConfig {
  ModelDims dims;
  double dropout_rate = 0.2;
  std::size_t max_len = 512;
  std::uint64_t vocab_salt = 0;
  double embed_scale = 1.0;
};

RewardModelParams initialize_params(const InitConfig& config, std::uint64_t seed);

/// Per-site dropout multipliers (0 or 1/(1-rate)) for the three dropout sites:
/// after pooling, after the hidden activation, and on the input of the output layer.
struct DropoutMask {
  std::vector<double> pooled;
  std::vector<double> hidden;
  std::vector<double> output;

  static DropoutMask sample(const ModelDims& dims, double rate, std::uint64_t seed);
};

/// Shared-weight scorer: mean-pooled embeddings -> dropout -> tanh(W1 x + b1) ->
/// dropout -> dropout -> w2 . h + b2. Without a mask dropout is disabled. An empty
/// design scores head_b2.
double score(const RewardModelParams& params, const TokenizedDesign& design, const DropoutMask* mask = nullptr);

/// sigmoid(s(a) - s(b)) in deterministic evaluation.
double preference(const RewardModelParams& params, const TokenizedDesign& a, const TokenizedDesign& b);

enum class PairTier { dominance, latency, tie };
std::string_view to_string(PairTier tier);

struct PairExample {
  TokenizedDesign design_i;
  TokenizedDesign design_j;
  double label = 0.0;
  PairTier tier = PairTier::tie;
  std::string kernel;
  std::size_t index_i = 0;  // positions in the labeled-design input
  std::size_t index_j = 0;
};

struct LossConfig {
  double lambda_pair = 1.0;
  double lambda_cons = 0.5;
  double delta_gap = 0.10;
  bool keep_ties = false;  // keep tie-tier pairs with y = 0.0
};

/// max over metrics of |a - b| / max(a, b, 1).
double relative_gap(const QorVector& a, const QorVector& b);

/// Two-tier label for the ordered pair (i, j), or nothing when the pair is filtered.
std::optional<std::pair<PairTier, double>> label_pair(const QorVector& qi, const QorVector& qj,
                                                      const LossConfig& config);

struct LabeledDesign {
  std::string kernel;
  TokenizedDesign tokens;
  QorVector qor;
  bool functional = true;
};

/// All labeled ordered pairs of functional designs within each kernel.
std::vector<PairExample> build_pairs(std::span<const LabeledDesign> designs, const LossConfig& config);
std::vector<PairExample> build_pairs(std::span<const DseCorpus> corpora, const LossConfig& config,
                                     const TokenizerConfig& tokenizer);

struct LossResult {
  double loss = 0.0;
  ModelWeights grads;
};

/// Mean over the batch of
///   lambda_pair * BCE(sigmoid(l), y) + lambda_cons * (l - (s_i - s_j))^2
/// where l uses one dropout mask shared by both branches and s_i, s_j use
/// independent masks. Masks derive from mask_seed and the pair's batch position.
/// Throws std::invalid_argument for an empty batch.
LossResult loss_and_grads(const RewardModelParams& params, std::span<const PairExample> batch,
                          const LossConfig& config, std::uint64_t mask_seed);

/// Adaptive-moment optimizer over ModelWeights.
class AdamOptimizer {
public:
  struct Config {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamOptimizer(const ModelDims& dims, Config config);
  void step(ModelWeights& weights, const ModelWeights& grads);

private:
  Config config_;
  ModelWeights m_;
  ModelWeights v_;
  long t_ = 0;
};

struct OptimizerConfig {
  int epochs = 20;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double test_fraction = 0.1;
};

struct AccuracyRow {
  int epoch = 0;
  double train_acc_dom = 0.0;
  double test_acc_dom = 0.0;
  double train_acc_lat = 0.0;
  double test_acc_lat = 0.0;
  double loss = 0.0;
};

struct TierAccuracy {
  double dominance = 0.0;  // NaN when the tier has no pairs
  double latency = 0.0;
  std::size_t n_dominance = 0;
  std::size_t n_latency = 0;
};

/// A pair counts as correct when (p > 0.5) matches the label's favoured side (y > 0).
TierAccuracy evaluate_accuracy(const RewardModelParams& params, std::span<const PairExample> pairs);

struct TrainResult {
  RewardModelParams params;
  std::vector<AccuracyRow> log;
  std::vector<std::string> train_kernels;
  std::vector<std::string> test_kernels;
};

/// Splits by kernel (test_fraction of kernels held out, at least one when there are
/// two or more), then runs mini-batch Adam. Throws std::invalid_argument if the
/// train split is empty.
TrainResult train(RewardModelParams params, std::span<const PairExample> pairs, const OptimizerConfig& optimizer,
                  const LossConfig& loss, std::uint64_t seed);

/// `steps` Adam steps on random mini-batches drawn from `pairs` (fresh optimizer state).
void fine_tune(RewardModelParams& params, std::span<const PairExample> pairs, std::size_t steps, double lr,
               std::size_t batch_size, const LossConfig& loss, std::uint64_t seed);

struct McEstimate {
  double mean = 0.0;
  double variance = 0.0;   // population variance
  std::vector<double> scores;  // one per pass
};

/// M dropout-enabled passes; pass m uses the mask seeded by (seed, m).
/// Throws std::invalid_argument when M < 2.
McEstimate mc_uncertainty(const RewardModelParams& params, const TokenizedDesign& design, std::size_t m_passes,
                          std::uint64_t seed);

DropoutMask mc_pass_mask(const RewardModelParams& params, std::uint64_t seed, std::size_t pass);

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const RewardModelParams& params, const std::filesystem::path& path);
/// Throws std::runtime_error on unreadable files or an unsupported version.
RewardModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace qorseek
