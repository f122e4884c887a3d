#include "qorseek/grpo_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "qorseek/common.hpp"

namespace qorseek {

namespace {

double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

double bernoulli_log_prob(double logit, bool value) { return value ? log_sigmoid(logit) : log_sigmoid(-logit); }

double bernoulli_kl(double z, double z_ref) {
  const double p = sigmoid(z);
  return p * (log_sigmoid(z) - log_sigmoid(z_ref)) + (1.0 - p) * (log_sigmoid(-z) - log_sigmoid(-z_ref));
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lse;
  return out;
}

double categorical_kl(std::span<const double> logits, std::span<const double> ref) {
  const auto lp = log_softmax(logits);
  const auto lq = log_softmax(ref);
  double kl = 0.0;
  for (std::size_t k = 0; k < lp.size(); ++k) kl += std::exp(lp[k]) * (lp[k] - lq[k]);
  return kl;
}

std::string with_dynamic_alloc(std::string code) {
  const auto brace = code.find("{\n");
  const std::string line = "  int *scratch = (int *)malloc(64 * sizeof(int));\n";
  if (brace == std::string::npos) return code + line;
  code.insert(brace + 2, line);
  return code;
}

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

std::string_view skip_space(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

// Parses `<tag>body</tag>` at the start of s; returns the body and advances s.
std::optional<std::string_view> take_block(std::string_view& s, std::string_view tag) {
  const std::string open = "<" + std::string(tag) + ">";
  const std::string close = "</" + std::string(tag) + ">";
  if (!s.starts_with(open)) return std::nullopt;
  const auto end = s.find(close, open.size());
  if (end == std::string_view::npos) return std::nullopt;
  const auto body = s.substr(open.size(), end - open.size());
  s.remove_prefix(end + close.size());
  return body;
}

}  // namespace

SimPolicy SimPolicy::uniform(std::span<const std::shared_ptr<const KernelDescriptor>> kernels) {
  SimPolicy p;
  for (const auto& k : kernels) {
    const DesignSpace space(*k);
    std::vector<std::vector<double>> logits;
    for (const auto& d : space.dimensions()) logits.emplace_back(d.size(), 0.0);
    p.kernel_logits[k->name] = std::move(logits);
  }
  return p;
}

const std::vector<std::vector<double>>& SimPolicy::logits_for(const std::string& kernel) const {
  auto it = kernel_logits.find(kernel);
  if (it == kernel_logits.end()) throw std::out_of_range("policy has no logits for kernel '" + kernel + "'");
  return it->second;
}

std::vector<double> softmax(std::span<const double> logits) {
  auto out = log_softmax(logits);
  for (auto& v : out) v = std::exp(v);
  return out;
}

PolicyAction sample_action(const SimPolicy& policy, const std::string& kernel, Rng& rng) {
  PolicyAction a;
  for (const auto& logits : policy.logits_for(kernel)) {
    const auto probs = softmax(logits);
    a.choices.push_back(std::discrete_distribution<std::size_t>(probs.begin(), probs.end())(rng));
  }
  a.well_formed = uniform01(rng) < sigmoid(policy.format_logit);
  a.dynamic_alloc = uniform01(rng) < sigmoid(policy.alloc_logit);
  return a;
}

double log_prob(const SimPolicy& policy, const std::string& kernel, const PolicyAction& action) {
  const auto& dims = policy.logits_for(kernel);
  if (action.choices.size() != dims.size()) throw std::invalid_argument("log_prob: action arity mismatch");
  double lp = 0.0;
  for (std::size_t d = 0; d < dims.size(); ++d) lp += log_softmax(dims[d])[action.choices[d]];
  lp += bernoulli_log_prob(policy.format_logit, action.well_formed);
  lp += bernoulli_log_prob(policy.alloc_logit, action.dynamic_alloc);
  return lp;
}

double policy_kl(const SimPolicy& policy, const SimPolicy& ref, const std::string& kernel) {
  const auto& a = policy.logits_for(kernel);
  const auto& b = ref.logits_for(kernel);
  double kl = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) kl += categorical_kl(a[d], b[d]);
  kl += bernoulli_kl(policy.format_logit, ref.format_logit);
  kl += bernoulli_kl(policy.alloc_logit, ref.alloc_logit);
  return std::max(0.0, kl);
}

std::string wrap_response(std::string_view code, bool well_formed, int variant) {
  const std::string think = "<think>\nchoose unroll, pipeline and partition pragmas\n";
  const std::string body = "<final_code>\n" + std::string(code);
  if (well_formed) return think + "</think>\n" + body + "</final_code>\n";
  switch (variant % 3) {
    case 0: return think + body + "</final_code>\n";
    case 1: return body + "</final_code>\n" + think + "</think>\n";
    default: return think + "</think>\n" + body;
  }
}

std::optional<std::string> extract_final_code(std::string_view text) {
  std::string_view s = skip_space(text);
  const auto think = take_block(s, "think");
  if (!think || blank(*think)) return std::nullopt;
  s = skip_space(s);
  const auto code = take_block(s, "final_code");
  if (!code || blank(*code) || !blank(s)) return std::nullopt;
  return std::string(*code);
}

int check_format(std::string_view text) { return extract_final_code(text) ? 1 : 0; }

void RewardWeights::validate() const {
  for (auto [name, v] : {std::pair{"reward.lambda_f", lambda_f}, std::pair{"reward.lambda_comp", lambda_comp},
                         std::pair{"reward.lambda_c", lambda_c}, std::pair{"reward.lambda_q", lambda_q}})
    if (!(v >= 0.0)) throw ValidationError(name, "must be >= 0");
  if (lambda_f + lambda_comp + lambda_c + lambda_q <= 0.0) throw ValidationError("reward", "at least one weight must be > 0");
}

double total_reward(const RewardComponents& c, const RewardWeights& w) {
  return w.lambda_f * c.r_f + w.lambda_comp * c.r_comp + w.lambda_c * c.r_c + w.lambda_q * c.r_q;
}

std::vector<double> group_advantages(std::span<const double> rewards, double adv_eps) {
  if (rewards.empty()) return {};
  const double n = static_cast<double>(rewards.size());
  // Shifted by the first reward so an all-equal group centers to exactly zero.
  const double base = rewards.front();
  double shifted = 0.0;
  for (double r : rewards) shifted += r - base;
  const double mean = base + shifted / n;
  double sq = 0.0;
  for (double r : rewards) sq += (r - mean) * (r - mean);
  const double denom = std::sqrt(sq / n) + adv_eps;
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back((r - mean) / denom);
  return out;
}

void GrpoConfig::validate() const {
  if (group_size < 2) throw ValidationError("grpo.group_size", "must be >= 2");
  if (!(clip_eps > 0.0)) throw ValidationError("grpo.clip_eps", "must be > 0");
  if (!(kl_beta >= 0.0)) throw ValidationError("grpo.kl_beta", "must be >= 0");
  if (ppo_epochs < 1) throw ValidationError("grpo.ppo_epochs", "must be >= 1");
  if (!(adv_eps >= 0.0)) throw ValidationError("grpo.adv_eps", "must be >= 0");
  if (!(policy_lr >= 0.0)) throw ValidationError("grpo.policy_lr", "must be >= 0");
}

GroupSample grpo_step(SimPolicy& policy, const SimPolicy& ref_policy, const std::shared_ptr<const KernelDescriptor>& kernel,
                      const SynthesisBackend& backend, RewardRouter& router, const GrpoConfig& config,
                      const RewardWeights& weights, std::size_t step, std::uint64_t seed, StepDiagnostics* diagnostics) {
  const std::string& name = kernel->name;
  const DesignSpace space(*kernel);
  Rng rng(mix_seed(seed, step, 0x5a3b));

  GroupSample group;
  group.kernel = name;
  std::vector<RouterCandidate> routed;
  for (std::size_t i = 0; i < config.group_size; ++i) {
    CandidateRecord rec;
    rec.action = sample_action(policy, name, rng);
    const int variant = static_cast<int>(uniform_index(rng, 3));
    rec.old_log_prob = log_prob(policy, name, rec.action);

    DesignPoint design = render_design(kernel, space.decode(rec.action.choices));
    design.dynamic_alloc_flag = rec.action.dynamic_alloc;
    if (design.dynamic_alloc_flag) design.rendered_code = with_dynamic_alloc(design.rendered_code);
    rec.text = wrap_response(design.rendered_code, rec.action.well_formed, variant);
    rec.rewards.r_f = check_format(rec.text);

    // Code that cannot be extracted from the response never reaches the compiler.
    bool compiled = false, functional = false;
    if (extract_final_code(rec.text)) {
      const auto verdict = backend.evaluate(design);
      compiled = verdict.compiled;
      functional = verdict.functional;
    }
    rec.rewards.r_comp = compiled ? 1.0 : 0.0;
    rec.rewards.r_c = functional ? 1.0 : 0.0;
    routed.push_back(RouterCandidate{design, tokenize(design.rendered_code, router.model().tokenizer), functional});
    group.candidates.push_back(std::move(rec));
  }

  RqResult rq = router.compute_rq(routed, step, seed);
  std::vector<double> totals;
  for (std::size_t i = 0; i < group.candidates.size(); ++i) {
    auto& rec = group.candidates[i];
    rec.rewards.r_q = rq.r_q[i];
    rec.total = total_reward(rec.rewards, weights);
    totals.push_back(rec.total);
  }
  const auto adv = group_advantages(totals, config.adv_eps);
  for (std::size_t i = 0; i < adv.size(); ++i) group.candidates[i].advantage = adv[i];

  auto& logits = policy.kernel_logits.at(name);
  const auto& ref_logits = ref_policy.logits_for(name);
  const double inv_g = 1.0 / static_cast<double>(group.candidates.size());
  double max_ratio_error = 0.0;
  for (int epoch = 0; epoch < config.ppo_epochs; ++epoch) {
    std::vector<std::vector<double>> grad(logits.size());
    std::vector<std::vector<double>> probs(logits.size());
    for (std::size_t d = 0; d < logits.size(); ++d) {
      grad[d].assign(logits[d].size(), 0.0);
      probs[d] = softmax(logits[d]);
    }
    const double p_format = sigmoid(policy.format_logit);
    const double p_alloc = sigmoid(policy.alloc_logit);
    double g_format = 0.0, g_alloc = 0.0;

    for (const auto& rec : group.candidates) {
      const double ratio = std::exp(log_prob(policy, name, rec.action) - rec.old_log_prob);
      if (epoch == 0) max_ratio_error = std::max(max_ratio_error, std::abs(ratio - 1.0));
      const double unclipped = ratio * rec.advantage;
      const double clipped = std::clamp(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps) * rec.advantage;
      if (unclipped > clipped) continue;  // clipped branch is active: zero gradient
      const double coef = inv_g * unclipped;  // d(ratio * A) = ratio * A * d(log pi)
      for (std::size_t d = 0; d < logits.size(); ++d) {
        for (std::size_t k = 0; k < logits[d].size(); ++k) grad[d][k] -= coef * probs[d][k];
        grad[d][rec.action.choices[d]] += coef;
      }
      g_format += coef * ((rec.action.well_formed ? 1.0 : 0.0) - p_format);
      g_alloc += coef * ((rec.action.dynamic_alloc ? 1.0 : 0.0) - p_alloc);
    }

    if (config.kl_beta > 0.0) {
      for (std::size_t d = 0; d < logits.size(); ++d) {
        const auto lp = log_softmax(logits[d]);
        const auto lq = log_softmax(ref_logits[d]);
        double kl = 0.0;
        for (std::size_t k = 0; k < lp.size(); ++k) kl += probs[d][k] * (lp[k] - lq[k]);
        for (std::size_t k = 0; k < lp.size(); ++k) grad[d][k] -= config.kl_beta * probs[d][k] * (lp[k] - lq[k] - kl);
      }
      g_format -= config.kl_beta * p_format * (1.0 - p_format) * (policy.format_logit - ref_policy.format_logit);
      g_alloc -= config.kl_beta * p_alloc * (1.0 - p_alloc) * (policy.alloc_logit - ref_policy.alloc_logit);
    }

    for (std::size_t d = 0; d < logits.size(); ++d)
      for (std::size_t k = 0; k < logits[d].size(); ++k) logits[d][k] += config.policy_lr * grad[d][k];
    policy.format_logit += config.policy_lr * g_format;
    policy.alloc_logit += config.policy_lr * g_alloc;
  }

  if (diagnostics) {
    diagnostics->first_epoch_max_ratio_error = max_ratio_error;
    diagnostics->kl = policy_kl(policy, ref_policy, name);
    diagnostics->rq = std::move(rq);
  }
  return group;
}

void write_training_csv(std::ostream& out, std::span<const TrainingRow> rows) {
  out << TrainingRow::kCsvHeader << '\n';
  for (const auto& r : rows)
    out << r.step << ',' << r.kernel << ',' << format_double(r.mean_r_f) << ',' << format_double(r.mean_r_comp) << ','
        << format_double(r.mean_r_c) << ',' << format_double(r.mean_r_q) << ',' << format_double(r.mean_total) << ','
        << format_double(r.trigger_rate) << ',' << format_double(r.kl) << ',' << format_double(r.synth_seconds_cum)
        << '\n';
}

std::vector<TrainingRow> read_training_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != TrainingRow::kCsvHeader) throw ParseError(1, "unexpected training telemetry header");
  std::vector<TrainingRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw ParseError(line_no, "expected 10 columns");
    try {
      TrainingRow r;
      r.step = std::stoull(cells[0]);
      r.kernel = cells[1];
      r.mean_r_f = std::stod(cells[2]);
      r.mean_r_comp = std::stod(cells[3]);
      r.mean_r_c = std::stod(cells[4]);
      r.mean_r_q = std::stod(cells[5]);
      r.mean_total = std::stod(cells[6]);
      r.trigger_rate = std::stod(cells[7]);
      r.kl = std::stod(cells[8]);
      r.synth_seconds_cum = std::stod(cells[9]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw ParseError(line_no, "non-numeric cell");
    }
  }
  return rows;
}

TrainingRun run_training(std::span<const std::shared_ptr<const KernelDescriptor>> kernels,
                         const SynthesisBackend& backend, RewardRouter& router, const GrpoConfig& config,
                         const RewardWeights& weights, std::uint64_t seed) {
  if (kernels.empty()) throw std::invalid_argument("run_training: no kernels");
  config.validate();
  weights.validate();
  TrainingRun run;
  run.policy = SimPolicy::uniform(kernels);
  const SimPolicy ref = run.policy;
  const std::size_t updates_before = router.online_update_count();

  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto& kernel = kernels[step % kernels.size()];
    StepDiagnostics diag;
    const auto group = grpo_step(run.policy, ref, kernel, backend, router, config, weights, step, seed, &diag);
    run.candidates_generated += group.candidates.size();

    TrainingRow row;
    row.step = step;
    row.kernel = kernel->name;
    const double inv = 1.0 / static_cast<double>(group.candidates.size());
    for (const auto& c : group.candidates) {
      row.mean_r_f += c.rewards.r_f * inv;
      row.mean_r_comp += c.rewards.r_comp * inv;
      row.mean_r_c += c.rewards.r_c * inv;
      row.mean_r_q += c.rewards.r_q * inv;
      row.mean_total += c.total * inv;
    }
    row.trigger_rate = diag.rq.stats.trigger_rate;
    row.kl = diag.kl;
    row.synth_seconds_cum = router.telemetry().synth_seconds;
    run.rows.push_back(std::move(row));

    router.maybe_online_update(step + 1, seed);
  }
  run.online_updates = router.online_update_count() - updates_before;
  return run;
}

CostReport make_cost_report(std::size_t synth_calls, std::size_t candidates, double cost_seconds) {
  CostReport r;
  r.synth_calls = synth_calls;
  r.candidates = candidates;
  r.cost_seconds = cost_seconds;
  r.proxy_seconds = static_cast<double>(synth_calls) * cost_seconds;
  r.all_real_seconds = static_cast<double>(candidates) * cost_seconds;
  return r;
}

void write_cost_report(std::ostream& out, const CostReport& r) {
  out << "synthesis_seconds_per_call: " << format_double(r.cost_seconds) << '\n'
      << "proxy_path_synth_calls: " << r.synth_calls << '\n'
      << "proxy_path_seconds: " << format_double(r.proxy_seconds) << '\n'
      << "all_real_candidates: " << r.candidates << '\n'
      << "all_real_seconds: " << format_double(r.all_real_seconds) << '\n'
      << "proxy_vs_all_real_ratio: " << format_double(r.ratio()) << '\n';
}

void save_policy(const SimPolicy& policy, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["format"] = "qorseek-policy";
  j["version"] = kPolicyCheckpointVersion;
  j["format_logit"] = policy.format_logit;
  j["alloc_logit"] = policy.alloc_logit;
  nlohmann::ordered_json kernels = nlohmann::ordered_json::object();
  for (const auto& [name, logits] : policy.kernel_logits) kernels[name] = logits;
  j["kernels"] = std::move(kernels);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write policy " + path.string());
  out << j.dump() << '\n';
}

SimPolicy load_policy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open policy " + path.string());
  const auto j = nlohmann::json::parse(in);
  if (j.value("format", "") != "qorseek-policy") throw std::runtime_error("not a policy checkpoint");
  if (!j.contains("version") || j["version"].get<int>() != kPolicyCheckpointVersion)
    throw std::runtime_error("unsupported policy checkpoint version");
  SimPolicy p;
  p.format_logit = j.at("format_logit").get<double>();
  p.alloc_logit = j.at("alloc_logit").get<double>();
  for (const auto& [name, logits] : j.at("kernels").items())
    p.kernel_logits[name] = logits.get<std::vector<std::vector<double>>>();
  return p;
}

}  // namespace qorseek
