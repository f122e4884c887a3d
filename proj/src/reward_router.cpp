#include "qorseek/reward_router.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "qorseek/common.hpp"
#include "qorseek/pareto.hpp"

namespace qorseek {

void UncertaintyConfig::validate() const {
  if (!(tau_u > 0.0)) throw ValidationError("uncertainty.tau_u", "must be > 0");
  if (m_passes < 2) throw ValidationError("uncertainty.m_passes", "must be >= 2");
  if (!(online_lr >= 0.0)) throw ValidationError("uncertainty.online_lr", "must be >= 0");
  if (online_batch == 0) throw ValidationError("uncertainty.online_batch", "must be >= 1");
}

const ReplayEntry* ReplayBuffer::find(const std::string& kernel, const PragmaConfig& config) const {
  auto it = index_.find({kernel, config_key(config)});
  return it == index_.end() ? nullptr : &entries_[it->second];
}

bool ReplayBuffer::add(ReplayEntry entry) {
  auto key = std::pair{entry.design.kernel->name, config_key(entry.design.config)};
  if (index_.count(key)) return false;
  index_.emplace(std::move(key), entries_.size());
  entries_.push_back(std::move(entry));
  return true;
}

void ReplayBuffer::save_jsonl(std::ostream& out) const {
  for (const auto& e : entries_) {
    nlohmann::ordered_json line;
    line["kernel"] = e.design.kernel->name;
    line["config"] = nlohmann::ordered_json::parse(to_json(e.design.config).dump());
    line["config_key"] = config_key(e.design.config);
    line["functional"] = e.functional;
    line["qor"] = nlohmann::ordered_json::parse(to_json(e.qor).dump());
    out << line.dump() << '\n';
  }
}

ReplayBuffer ReplayBuffer::load_jsonl(std::istream& in, const KernelLookup& lookup) {
  ReplayBuffer buffer;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string kernel_name;
    PragmaConfig config;
    ReplayEntry entry;
    try {
      const Json j = Json::parse(text);
      kernel_name = j.at("kernel").get<std::string>();
      config = pragma_config_from_json(j.at("config"));
      entry.qor = qor_from_json(j.at("qor"));
      entry.functional = j.at("functional").get<bool>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    auto kernel = lookup(kernel_name);
    if (!kernel) throw ValidationError("kernel", "unknown kernel '" + kernel_name + "'");
    validate_config(*kernel, config);
    entry.design = render_design(kernel, config);
    buffer.add(std::move(entry));
  }
  return buffer;
}

void RouterTelemetry::write_csv(std::ostream& out) const {
  out << kCsvHeader << '\n';
  for (const auto& r : rows)
    out << r.step << ',' << r.group_size << ',' << r.n_correct << ',' << r.n_flagged << ','
        << format_double(r.trigger_rate) << ',' << r.synth_calls_cum << ',' << format_double(r.synth_seconds_cum)
        << '\n';
}

RouterTelemetry RouterTelemetry::read_csv(std::istream& in) {
  RouterTelemetry t;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line) || line != kCsvHeader) throw ParseError(1, "unexpected router telemetry header");
  ++line_no;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    RouterStepStats r;
    char c1, c2, c3, c4, c5, c6;
    if (!(ss >> r.step >> c1 >> r.group_size >> c2 >> r.n_correct >> c3 >> r.n_flagged >> c4 >> r.trigger_rate >> c5 >>
          r.synth_calls_cum >> c6 >> r.synth_seconds_cum))
      throw ParseError(line_no, "malformed router telemetry row");
    t.rows.push_back(r);
  }
  if (!t.rows.empty()) {
    t.synth_calls = t.rows.back().synth_calls_cum;
    t.synth_seconds = t.rows.back().synth_seconds_cum;
  }
  return t;
}

double real_preference(const QorVector& a, const QorVector& b) {
  if (dominates(a, b)) return 1.0;
  if (dominates(b, a)) return 0.0;
  if (a.latency_cycles < b.latency_cycles) return 1.0;
  if (b.latency_cycles < a.latency_cycles) return 0.0;
  return 0.5;
}

RewardRouter::RewardRouter(RewardModelParams model, const SynthesisBackend& backend, UncertaintyConfig config,
                           LossConfig loss)
    : model_(std::move(model)), backend_(backend), config_(config), loss_(loss) {
  config_.validate();
}

const QorVector& RewardRouter::synthesize(const DesignPoint& design) {
  if (const auto* hit = buffer_.find(design.kernel->name, design.config)) return hit->qor;
  const auto verdict = backend_.evaluate(design);
  ++telemetry_.synth_calls;
  telemetry_.synth_seconds += backend_.cost_model_seconds();
  if (!verdict.qor) throw std::logic_error("synthesis of a functional candidate produced no QoR");
  buffer_.add(ReplayEntry{design, *verdict.qor, verdict.functional});
  return buffer_.find(design.kernel->name, design.config)->qor;
}

RqResult RewardRouter::compute_rq(std::span<const RouterCandidate> group, std::size_t step, std::uint64_t seed) {
  const std::size_t g = group.size();
  RqResult res;
  res.r_q.assign(g, 0.0);
  res.uncertainty.assign(g, std::numeric_limits<double>::quiet_NaN());
  res.synthesized.assign(g, false);

  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < g; ++i)
    if (group[i].functional) members.push_back(i);

  res.stats.step = step;
  res.stats.group_size = g;
  res.stats.n_correct = members.size();

  if (members.size() == 1) res.r_q[members[0]] = 1.0;

  if (members.size() >= 2) {
    const std::size_t n = members.size();
    std::vector<std::vector<double>> pass_scores(n);
    std::vector<std::optional<QorVector>> real(n);
    bool any_flagged = false;
    const std::uint64_t mc_seed = mix_seed(seed, step, 0x3a7e);
    for (std::size_t k = 0; k < n; ++k) {
      const auto& cand = group[members[k]];
      bool flagged = config_.force_real;
      if (!config_.force_real) {
        // One seed for the whole group: pass m applies the same mask to every member.
        auto est = mc_uncertainty(model_, cand.tokens, config_.m_passes, mc_seed);
        res.uncertainty[members[k]] = est.variance;
        pass_scores[k] = std::move(est.scores);
        flagged = est.variance > config_.tau_u;
      }
      if (flagged) {
        ++res.stats.n_flagged;
        any_flagged = true;
        real[k] = synthesize(cand.design);
      }
    }
    if (config_.escalate_pairs && any_flagged)
      for (std::size_t k = 0; k < n; ++k)
        if (!real[k]) real[k] = synthesize(group[members[k]].design);

    for (std::size_t a = 0; a < n; ++a) {
      double sum = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        if (a == b) continue;
        if (real[a] && real[b]) {
          sum += real_preference(*real[a], *real[b]);
        } else {
          double p = 0.0;
          for (std::size_t m = 0; m < config_.m_passes; ++m) p += sigmoid(pass_scores[a][m] - pass_scores[b][m]);
          sum += p / static_cast<double>(config_.m_passes);
        }
      }
      res.r_q[members[a]] = sum / static_cast<double>(n - 1);
      res.synthesized[members[a]] = real[a].has_value();
    }
    res.stats.trigger_rate = static_cast<double>(res.stats.n_flagged) / static_cast<double>(n);
  }

  res.stats.synth_calls_cum = telemetry_.synth_calls;
  res.stats.synth_seconds_cum = telemetry_.synth_seconds;
  telemetry_.rows.push_back(res.stats);
  return res;
}

bool RewardRouter::maybe_online_update(std::size_t global_step, std::uint64_t seed) {
  if (!config_.online_updates || config_.k_update == 0 || global_step == 0 || global_step % config_.k_update != 0)
    return false;
  std::vector<LabeledDesign> designs;
  for (const auto& e : buffer_.entries())
    designs.push_back(LabeledDesign{e.design.kernel->name, tokenize(e.design.rendered_code, model_.tokenizer), e.qor,
                                    e.functional});
  const auto pairs = build_pairs(designs, loss_);
  if (pairs.empty() || config_.online_steps == 0) return false;
  fine_tune(model_, pairs, config_.online_steps, config_.online_lr, config_.online_batch, loss_,
            mix_seed(seed, global_step, 0x0b1e));
  ++updates_;
  return true;
}

TriggerReport trigger_rate_report(const RouterTelemetry& telemetry, std::size_t window, double cost_seconds) {
  if (window == 0) throw std::invalid_argument("trigger_rate_report: window must be >= 1");
  if (telemetry.rows.empty()) throw std::invalid_argument("trigger_rate_report: no telemetry rows");
  TriggerReport report;
  for (std::size_t start = 0; start < telemetry.rows.size(); start += window) {
    const std::size_t end = std::min(telemetry.rows.size(), start + window);
    std::size_t flagged = 0, scored = 0;
    for (std::size_t i = start; i < end; ++i) {
      const auto& r = telemetry.rows[i];
      if (r.n_correct < 2) continue;
      flagged += r.n_flagged;
      scored += r.n_correct;
    }
    report.windows.push_back(TriggerWindow{telemetry.rows[start].step, telemetry.rows[end - 1].step,
                                           scored ? static_cast<double>(flagged) / static_cast<double>(scored) : 0.0});
  }
  report.synth_calls = telemetry.synth_calls;
  report.synth_seconds = static_cast<double>(telemetry.synth_calls) * cost_seconds;
  return report;
}

double calibrate_tau(const RewardModelParams& params, std::span<const TokenizedDesign> designs, double quantile,
                     std::size_t m_passes, std::uint64_t seed) {
  if (designs.empty()) throw std::invalid_argument("calibrate_tau: no designs");
  if (!(quantile >= 0.0 && quantile <= 1.0)) throw std::invalid_argument("calibrate_tau: quantile outside [0, 1]");
  std::vector<double> u;
  u.reserve(designs.size());
  for (const auto& d : designs) u.push_back(mc_uncertainty(params, d, m_passes, seed).variance);
  std::sort(u.begin(), u.end());
  // Nearest-rank quantile.
  const auto rank = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(u.size())));
  return u[rank == 0 ? 0 : rank - 1];
}

}  // namespace qorseek
