#include "qorseek/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>

#include "qorseek/common.hpp"

namespace qorseek {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw ValidationError(std::string(key), "cannot parse '" + std::string(v) + "' as a number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError(std::string(key), "expected true or false, got '" + std::string(v) + "'");
}

using Setter = std::function<void(RunConfig&, std::string_view key, std::string_view value)>;

template <typename T>
Setter number(T RunConfig::*member) {
  return [member](RunConfig& c, std::string_view k, std::string_view v) { c.*member = parse_number<T>(k, v); };
}

template <typename T, typename F>
Setter field(F accessor) {
  return [accessor](RunConfig& c, std::string_view k, std::string_view v) { accessor(c) = parse_number<T>(k, v); };
}

template <typename F>
Setter flag(F accessor) {
  return [accessor](RunConfig& c, std::string_view k, std::string_view v) { accessor(c) = parse_bool(k, v); };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"seed", number(&RunConfig::seed)},
      {"kernels", [](RunConfig& c, auto, std::string_view v) { c.kernels = std::string(v); }},
      {"out", [](RunConfig& c, auto, std::string_view v) { c.out = std::string(v); }},
      {"paths.corpus", [](RunConfig& c, auto, std::string_view v) { c.corpus = std::string(v); }},
      {"paths.rm_checkpoint", [](RunConfig& c, auto, std::string_view v) { c.rm_checkpoint = std::string(v); }},
      {"paths.telemetry_dir", [](RunConfig& c, auto, std::string_view v) { c.telemetry_dir = std::string(v); }},
      {"oracle.backend", [](RunConfig& c, auto, std::string_view v) { c.backend = std::string(v); }},
      {"oracle.cost_seconds", number(&RunConfig::cost_seconds)},
      {"dse.budget", number(&RunConfig::dse_budget)},
      {"dse.initial_points", field<std::size_t>([](RunConfig& c) -> auto& { return c.dse.initial_points; })},
      {"dse.pool_size", field<std::size_t>([](RunConfig& c) -> auto& { return c.dse.pool_size; })},
      {"dse.ehvi_samples", field<std::size_t>([](RunConfig& c) -> auto& { return c.dse.ehvi_samples; })},
      {"qd.k_near", field<std::size_t>([](RunConfig& c) -> auto& { return c.qd.k_near; })},
      {"qd.epsilon", field<double>([](RunConfig& c) -> auto& { return c.qd.epsilon; })},
      {"loss.lambda_pair", field<double>([](RunConfig& c) -> auto& { return c.loss.lambda_pair; })},
      {"loss.lambda_cons", field<double>([](RunConfig& c) -> auto& { return c.loss.lambda_cons; })},
      {"loss.delta_gap", field<double>([](RunConfig& c) -> auto& { return c.loss.delta_gap; })},
      {"loss.keep_ties", flag([](RunConfig& c) -> auto& { return c.loss.keep_ties; })},
      {"rm.vocab", field<std::size_t>([](RunConfig& c) -> auto& { return c.rm.dims.vocab; })},
      {"rm.embed", field<std::size_t>([](RunConfig& c) -> auto& { return c.rm.dims.embed; })},
      {"rm.hidden", field<std::size_t>([](RunConfig& c) -> auto& { return c.rm.dims.hidden; })},
      {"rm.dropout", field<double>([](RunConfig& c) -> auto& { return c.rm.dropout_rate; })},
      {"rm.max_len", field<std::size_t>([](RunConfig& c) -> auto& { return c.rm.max_len; })},
      {"rm.vocab_salt", field<std::uint64_t>([](RunConfig& c) -> auto& { return c.rm.vocab_salt; })},
      {"rm.embed_scale", field<double>([](RunConfig& c) -> auto& { return c.rm.embed_scale; })},
      {"rm.epochs", field<int>([](RunConfig& c) -> auto& { return c.rm.optimizer.epochs; })},
      {"rm.batch_size", field<std::size_t>([](RunConfig& c) -> auto& { return c.rm.optimizer.batch_size; })},
      {"rm.lr", field<double>([](RunConfig& c) -> auto& { return c.rm.optimizer.lr; })},
      {"rm.beta1", field<double>([](RunConfig& c) -> auto& { return c.rm.optimizer.beta1; })},
      {"rm.beta2", field<double>([](RunConfig& c) -> auto& { return c.rm.optimizer.beta2; })},
      {"rm.eps", field<double>([](RunConfig& c) -> auto& { return c.rm.optimizer.eps; })},
      {"rm.test_fraction", field<double>([](RunConfig& c) -> auto& { return c.rm.optimizer.test_fraction; })},
      {"uncertainty.tau_u", field<double>([](RunConfig& c) -> auto& { return c.uncertainty.tau_u; })},
      {"uncertainty.tau_quantile",
       [](RunConfig& c, std::string_view k, std::string_view v) { c.tau_quantile = parse_number<double>(k, v); }},
      {"uncertainty.m_passes", field<std::size_t>([](RunConfig& c) -> auto& { return c.uncertainty.m_passes; })},
      {"uncertainty.k_update", field<std::size_t>([](RunConfig& c) -> auto& { return c.uncertainty.k_update; })},
      {"uncertainty.online_lr", field<double>([](RunConfig& c) -> auto& { return c.uncertainty.online_lr; })},
      {"uncertainty.online_steps", field<std::size_t>([](RunConfig& c) -> auto& { return c.uncertainty.online_steps; })},
      {"uncertainty.online_batch", field<std::size_t>([](RunConfig& c) -> auto& { return c.uncertainty.online_batch; })},
      {"uncertainty.online_updates", flag([](RunConfig& c) -> auto& { return c.uncertainty.online_updates; })},
      {"uncertainty.escalate_pairs", flag([](RunConfig& c) -> auto& { return c.uncertainty.escalate_pairs; })},
      {"uncertainty.force_real", flag([](RunConfig& c) -> auto& { return c.uncertainty.force_real; })},
      {"grpo.group_size", field<std::size_t>([](RunConfig& c) -> auto& { return c.grpo.group_size; })},
      {"grpo.clip_eps", field<double>([](RunConfig& c) -> auto& { return c.grpo.clip_eps; })},
      {"grpo.kl_beta", field<double>([](RunConfig& c) -> auto& { return c.grpo.kl_beta; })},
      {"grpo.ppo_epochs", field<int>([](RunConfig& c) -> auto& { return c.grpo.ppo_epochs; })},
      {"grpo.adv_eps", field<double>([](RunConfig& c) -> auto& { return c.grpo.adv_eps; })},
      {"grpo.policy_lr", field<double>([](RunConfig& c) -> auto& { return c.grpo.policy_lr; })},
      {"grpo.steps", field<std::size_t>([](RunConfig& c) -> auto& { return c.grpo.steps; })},
      {"reward.lambda_f", field<double>([](RunConfig& c) -> auto& { return c.reward.lambda_f; })},
      {"reward.lambda_comp", field<double>([](RunConfig& c) -> auto& { return c.reward.lambda_comp; })},
      {"reward.lambda_c", field<double>([](RunConfig& c) -> auto& { return c.reward.lambda_c; })},
      {"reward.lambda_q", field<double>([](RunConfig& c) -> auto& { return c.reward.lambda_q; })},
  };
  return table;
}

void require(bool ok, const char* key, const char* what) {
  if (!ok) throw ValidationError(key, what);
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto& table = setters();
  auto it = table.find(key);
  if (it == table.end()) throw ValidationError(std::string(key), "unknown configuration key");
  it->second(*this, key, trim(value));
}

std::vector<std::string> RunConfig::known_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

void RunConfig::validate() const {
  require(!kernels.empty(), "kernels", "must not be empty");
  require(cost_seconds >= 0.0, "oracle.cost_seconds", "must be >= 0");
  require(dse_budget >= dse.initial_points, "dse.budget", "must be >= dse.initial_points");
  require(dse.initial_points >= 2, "dse.initial_points", "must be >= 2");
  require(dse.pool_size >= 1, "dse.pool_size", "must be >= 1");
  require(dse.ehvi_samples >= 1, "dse.ehvi_samples", "must be >= 1");
  require(qd.epsilon > 0.0, "qd.epsilon", "must be > 0");
  require(loss.lambda_pair >= 0.0, "loss.lambda_pair", "must be >= 0");
  require(loss.lambda_cons >= 0.0, "loss.lambda_cons", "must be >= 0");
  require(loss.delta_gap >= 0.0, "loss.delta_gap", "must be >= 0");
  require(rm.dims.vocab >= 3, "rm.vocab", "must be >= 3");
  require(rm.dims.embed >= 1, "rm.embed", "must be >= 1");
  require(rm.dims.hidden >= 1, "rm.hidden", "must be >= 1");
  require(rm.dropout_rate >= 0.0 && rm.dropout_rate < 1.0, "rm.dropout", "must lie in [0, 1)");
  require(rm.max_len >= 1, "rm.max_len", "must be >= 1");
  require(rm.optimizer.epochs >= 0, "rm.epochs", "must be >= 0");
  require(rm.optimizer.batch_size >= 1, "rm.batch_size", "must be >= 1");
  require(rm.optimizer.lr >= 0.0, "rm.lr", "must be >= 0");
  require(rm.optimizer.beta1 >= 0.0 && rm.optimizer.beta1 < 1.0, "rm.beta1", "must lie in [0, 1)");
  require(rm.optimizer.beta2 >= 0.0 && rm.optimizer.beta2 < 1.0, "rm.beta2", "must lie in [0, 1)");
  require(rm.optimizer.eps > 0.0, "rm.eps", "must be > 0");
  require(rm.optimizer.test_fraction >= 0.0 && rm.optimizer.test_fraction < 1.0, "rm.test_fraction",
          "must lie in [0, 1)");
  if (tau_quantile)
    require(*tau_quantile >= 0.0 && *tau_quantile <= 1.0, "uncertainty.tau_quantile", "must lie in [0, 1]");
  uncertainty.validate();
  grpo.validate();
  reward.validate();
}

void load_run_config(const std::filesystem::path& path, RunConfig& config) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view s = line;
    if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected 'key = value'");
    config.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
}

}  // namespace qorseek
