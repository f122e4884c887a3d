#include "qorseek/reward_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "qorseek/common.hpp"
#include "qorseek/pareto.hpp"

namespace qorseek {

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::vector<std::string_view> split_tokens(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    const char c = line[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (is_word_char(c)) {
      std::size_t j = i;
      while (j < line.size() && is_word_char(line[j])) ++j;
      out.push_back(line.substr(i, j - i));
      i = j;
    } else {
      out.push_back(line.substr(i, 1));
      ++i;
    }
  }
  return out;
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

TokenizedDesign tokenize(std::string_view text, const TokenizerConfig& config) {
  if (config.vocab_size < 3) throw std::invalid_argument("tokenize: vocab_size must be >= 3");
  TokenizedDesign out;
  const std::uint64_t basis = 0xcbf29ce484222325ULL ^ config.salt;
  const std::uint64_t buckets = config.vocab_size - 2;
  std::size_t pos = 0;
  while (pos < text.size() && out.token_ids.size() < config.max_len) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto tokens = split_tokens(text.substr(pos, nl - pos));
    pos = nl + 1;
    if (tokens.size() >= 3 && tokens[0] == "#" && tokens[1] == "pragma" && tokens[2] == "HLS") {
      out.pragma_token_positions.push_back(out.token_ids.size());
      out.token_ids.push_back(kPragmaToken);
    }
    for (auto t : tokens) {
      if (out.token_ids.size() >= config.max_len) break;
      out.token_ids.push_back(static_cast<std::int32_t>(2 + fnv1a(t, basis) % buckets));
    }
  }
  if (out.token_ids.size() > config.max_len) out.token_ids.resize(config.max_len);
  std::erase_if(out.pragma_token_positions, [&](std::size_t p) { return p >= out.token_ids.size(); });
  return out;
}

ModelWeights ModelWeights::zeros(const ModelDims& d) {
  ModelWeights w;
  w.embedding.assign(d.vocab * d.embed, 0.0);
  w.w1.assign(d.embed * d.hidden, 0.0);
  w.b1.assign(d.hidden, 0.0);
  w.w2.assign(d.hidden, 0.0);
  return w;
}

RewardModelParams initialize_params(const InitConfig& config, std::uint64_t seed) {
  if (!(config.dropout_rate >= 0.0 && config.dropout_rate < 1.0))
    throw std::invalid_argument("initialize_params: dropout_rate must lie in [0, 1)");
  RewardModelParams p;
  p.dims = config.dims;
  p.dropout_rate = config.dropout_rate;
  p.tokenizer = TokenizerConfig{config.dims.vocab, config.max_len, config.vocab_salt};
  p.weights = ModelWeights::zeros(config.dims);
  Rng rng(mix_seed(seed, 0x11a7));
  for (auto& v : p.weights.embedding) v = config.embed_scale * standard_normal(rng);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(config.dims.embed));
  for (auto& v : p.weights.w1) v = s1 * standard_normal(rng);
  const double s2 = 1.0 / std::sqrt(static_cast<double>(config.dims.hidden));
  for (auto& v : p.weights.w2) v = s2 * standard_normal(rng);
  return p;
}

DropoutMask DropoutMask::sample(const ModelDims& dims, double rate, std::uint64_t seed) {
  DropoutMask m;
  m.pooled.assign(dims.embed, 1.0);
  m.hidden.assign(dims.hidden, 1.0);
  m.output.assign(dims.hidden, 1.0);
  if (rate <= 0.0) return m;
  const double keep_scale = 1.0 / (1.0 - rate);
  Rng rng(seed);
  for (auto* site : {&m.pooled, &m.hidden, &m.output})
    for (auto& v : *site) v = uniform01(rng) < rate ? 0.0 : keep_scale;
  return m;
}

namespace {

struct Activations {
  std::vector<double> x;  // pooled embedding after site-1 dropout
  std::vector<double> a;  // tanh output
  std::vector<double> h;  // after sites 2 and 3
  double score = 0.0;
};

double forward(const RewardModelParams& p, const TokenizedDesign& design, const DropoutMask* mask,
               Activations* act) {
  const auto& w = p.weights;
  const std::size_t d = p.dims.embed;
  const std::size_t hdim = p.dims.hidden;
  if (design.token_ids.empty()) {
    if (act) act->score = w.b2;
    return w.b2;
  }
  std::vector<double> x(d, 0.0);
  for (auto t : design.token_ids) {
    if (t < 0 || static_cast<std::size_t>(t) >= p.dims.vocab) throw std::out_of_range("token id outside the model vocabulary");
    const double* row = &w.embedding[static_cast<std::size_t>(t) * d];
    for (std::size_t k = 0; k < d; ++k) x[k] += row[k];
  }
  const double inv_len = 1.0 / static_cast<double>(design.token_ids.size());
  for (std::size_t k = 0; k < d; ++k) {
    x[k] *= inv_len;
    if (mask) x[k] *= mask->pooled[k];
  }
  std::vector<double> a(w.b1);
  for (std::size_t k = 0; k < d; ++k) {
    if (x[k] == 0.0) continue;
    const double* row = &w.w1[k * hdim];
    for (std::size_t j = 0; j < hdim; ++j) a[j] += x[k] * row[j];
  }
  std::vector<double> h(hdim);
  double s = w.b2;
  for (std::size_t j = 0; j < hdim; ++j) {
    a[j] = std::tanh(a[j]);
    h[j] = mask ? a[j] * mask->hidden[j] * mask->output[j] : a[j];
    s += w.w2[j] * h[j];
  }
  if (act) {
    act->x = std::move(x);
    act->a = std::move(a);
    act->h = std::move(h);
    act->score = s;
  }
  return s;
}

// Accumulates dL/dweights given upstream dL/ds for one forward pass.
void backward(const RewardModelParams& p, const TokenizedDesign& design, const DropoutMask* mask,
              const Activations& act, double upstream, ModelWeights& g) {
  const auto& w = p.weights;
  const std::size_t d = p.dims.embed;
  const std::size_t hdim = p.dims.hidden;
  g.b2 += upstream;
  if (design.token_ids.empty()) return;
  std::vector<double> dz(hdim);
  for (std::size_t j = 0; j < hdim; ++j) {
    g.w2[j] += upstream * act.h[j];
    double da = upstream * w.w2[j];
    if (mask) da *= mask->hidden[j] * mask->output[j];
    dz[j] = da * (1.0 - act.a[j] * act.a[j]);
    g.b1[j] += dz[j];
  }
  std::vector<double> dpool(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    const double* row = &w.w1[k * hdim];
    double* grow = &g.w1[k * hdim];
    double acc = 0.0;
    for (std::size_t j = 0; j < hdim; ++j) {
      grow[j] += act.x[k] * dz[j];
      acc += row[j] * dz[j];
    }
    dpool[k] = mask ? acc * mask->pooled[k] : acc;
  }
  const double inv_len = 1.0 / static_cast<double>(design.token_ids.size());
  for (auto t : design.token_ids) {
    double* grow = &g.embedding[static_cast<std::size_t>(t) * d];
    for (std::size_t k = 0; k < d; ++k) grow[k] += dpool[k] * inv_len;
  }
}

void scale_weights(ModelWeights& g, double s) {
  for (auto* v : {&g.embedding, &g.w1, &g.b1, &g.w2})
    for (auto& x : *v) x *= s;
  g.b2 *= s;
}

}  // namespace

double score(const RewardModelParams& params, const TokenizedDesign& design, const DropoutMask* mask) {
  return forward(params, design, mask, nullptr);
}

double preference(const RewardModelParams& params, const TokenizedDesign& a, const TokenizedDesign& b) {
  return sigmoid(score(params, a) - score(params, b));
}

std::string_view to_string(PairTier tier) {
  switch (tier) {
    case PairTier::dominance: return "dominance";
    case PairTier::latency: return "latency";
    case PairTier::tie: return "tie";
  }
  return "tie";
}

double relative_gap(const QorVector& a, const QorVector& b) {
  double gap = 0.0;
  for (std::size_t m = 0; m < QorVector::kMetrics; ++m) {
    const double x = static_cast<double>(a.metric(m));
    const double y = static_cast<double>(b.metric(m));
    gap = std::max(gap, std::abs(x - y) / std::max({x, y, 1.0}));
  }
  return gap;
}

std::optional<std::pair<PairTier, double>> label_pair(const QorVector& qi, const QorVector& qj,
                                                      const LossConfig& config) {
  if (relative_gap(qi, qj) < config.delta_gap) return std::nullopt;
  if (dominates(qi, qj)) return std::pair{PairTier::dominance, 1.0};
  if (qi.latency_cycles < qj.latency_cycles) return std::pair{PairTier::latency, 0.5};
  if (config.keep_ties) return std::pair{PairTier::tie, 0.0};
  return std::nullopt;
}

std::vector<PairExample> build_pairs(std::span<const LabeledDesign> designs, const LossConfig& config) {
  std::map<std::string, std::vector<std::size_t>> by_kernel;
  for (std::size_t i = 0; i < designs.size(); ++i)
    if (designs[i].functional) by_kernel[designs[i].kernel].push_back(i);
  std::vector<PairExample> out;
  for (const auto& [kernel, members] : by_kernel) {
    for (auto i : members) {
      for (auto j : members) {
        if (i == j) continue;
        const auto label = label_pair(designs[i].qor, designs[j].qor, config);
        if (!label) continue;
        out.push_back(PairExample{designs[i].tokens, designs[j].tokens, label->second, label->first, kernel, i, j});
      }
    }
  }
  return out;
}

std::vector<PairExample> build_pairs(std::span<const DseCorpus> corpora, const LossConfig& config,
                                     const TokenizerConfig& tokenizer) {
  std::vector<LabeledDesign> designs;
  for (const auto& c : corpora)
    for (const auto& e : c.entries)
      designs.push_back(LabeledDesign{c.kernel->name, tokenize(e.design.rendered_code, tokenizer), e.qor, e.functional});
  return build_pairs(designs, config);
}

LossResult loss_and_grads(const RewardModelParams& params, std::span<const PairExample> batch,
                          const LossConfig& config, std::uint64_t mask_seed) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grads: empty batch");
  LossResult out;
  out.grads = ModelWeights::zeros(params.dims);
  const bool dropout = params.dropout_rate > 0.0;
  Activations ai, aj, bi, cj;
  for (std::size_t q = 0; q < batch.size(); ++q) {
    const auto& pair = batch[q];
    std::optional<DropoutMask> shared, mi, mj;
    if (dropout) {
      shared = DropoutMask::sample(params.dims, params.dropout_rate, mix_seed(mask_seed, q, 0));
      mi = DropoutMask::sample(params.dims, params.dropout_rate, mix_seed(mask_seed, q, 1));
      mj = DropoutMask::sample(params.dims, params.dropout_rate, mix_seed(mask_seed, q, 2));
    }
    const DropoutMask* ms = shared ? &*shared : nullptr;
    const DropoutMask* pi = mi ? &*mi : nullptr;
    const DropoutMask* pj = mj ? &*mj : nullptr;

    const double logit = forward(params, pair.design_i, ms, &ai) - forward(params, pair.design_j, ms, &aj);
    const double si = forward(params, pair.design_i, pi, &bi);
    const double sj = forward(params, pair.design_j, pj, &cj);

    const double y = pair.label;
    const double bce = y * softplus(-logit) + (1.0 - y) * softplus(logit);
    const double gap = logit - (si - sj);
    out.loss += config.lambda_pair * bce + config.lambda_cons * gap * gap;

    const double d_logit = config.lambda_pair * (sigmoid(logit) - y) + 2.0 * config.lambda_cons * gap;
    const double d_indep = -2.0 * config.lambda_cons * gap;  // d/d s_i; d/d s_j is its negative
    backward(params, pair.design_i, ms, ai, d_logit, out.grads);
    backward(params, pair.design_j, ms, aj, -d_logit, out.grads);
    if (d_indep != 0.0) {
      backward(params, pair.design_i, pi, bi, d_indep, out.grads);
      backward(params, pair.design_j, pj, cj, -d_indep, out.grads);
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  scale_weights(out.grads, inv);
  return out;
}

AdamOptimizer::AdamOptimizer(const ModelDims& dims, Config config)
    : config_(config), m_(ModelWeights::zeros(dims)), v_(ModelWeights::zeros(dims)) {}

void AdamOptimizer::step(ModelWeights& w, const ModelWeights& g) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  auto update = [&](double& param, double grad, double& m, double& v) {
    m = config_.beta1 * m + (1.0 - config_.beta1) * grad;
    v = config_.beta2 * v + (1.0 - config_.beta2) * grad * grad;
    param -= config_.lr * (m / c1) / (std::sqrt(v / c2) + config_.eps);
  };
  auto block = [&](std::vector<double>& p, const std::vector<double>& gr, std::vector<double>& m,
                   std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) update(p[i], gr[i], m[i], v[i]);
  };
  block(w.embedding, g.embedding, m_.embedding, v_.embedding);
  block(w.w1, g.w1, m_.w1, v_.w1);
  block(w.b1, g.b1, m_.b1, v_.b1);
  block(w.w2, g.w2, m_.w2, v_.w2);
  update(w.b2, g.b2, m_.b2, v_.b2);
}

TierAccuracy evaluate_accuracy(const RewardModelParams& params, std::span<const PairExample> pairs) {
  TierAccuracy acc;
  std::size_t ok_dom = 0, ok_lat = 0;
  for (const auto& pr : pairs) {
    if (pr.tier == PairTier::tie) continue;
    const bool correct = (preference(params, pr.design_i, pr.design_j) > 0.5) == (pr.label > 0.0);
    if (pr.tier == PairTier::dominance) {
      ++acc.n_dominance;
      ok_dom += correct;
    } else {
      ++acc.n_latency;
      ok_lat += correct;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  acc.dominance = acc.n_dominance ? static_cast<double>(ok_dom) / static_cast<double>(acc.n_dominance) : nan;
  acc.latency = acc.n_latency ? static_cast<double>(ok_lat) / static_cast<double>(acc.n_latency) : nan;
  return acc;
}

TrainResult train(RewardModelParams params, std::span<const PairExample> pairs, const OptimizerConfig& opt,
                  const LossConfig& loss, std::uint64_t seed) {
  TrainResult result;
  std::set<std::string> kernel_set;
  for (const auto& p : pairs) kernel_set.insert(p.kernel);
  std::vector<std::string> kernels(kernel_set.begin(), kernel_set.end());
  Rng split_rng(mix_seed(seed, 0x5b17));
  std::shuffle(kernels.begin(), kernels.end(), split_rng);
  std::size_t n_test = 0;
  if (kernels.size() >= 2 && opt.test_fraction > 0.0)
    n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(opt.test_fraction * kernels.size())));
  n_test = std::min(n_test, kernels.size() - (kernels.empty() ? 0 : 1));
  std::set<std::string> test(kernels.begin(), kernels.begin() + static_cast<std::ptrdiff_t>(n_test));
  for (const auto& k : kernels) (test.count(k) ? result.test_kernels : result.train_kernels).push_back(k);
  std::sort(result.test_kernels.begin(), result.test_kernels.end());
  std::sort(result.train_kernels.begin(), result.train_kernels.end());

  std::vector<PairExample> train_pairs, test_pairs;
  for (const auto& p : pairs) (test.count(p.kernel) ? test_pairs : train_pairs).push_back(p);
  if (train_pairs.empty()) throw std::invalid_argument("train: empty train split");

  AdamOptimizer adam(params.dims, {opt.lr, opt.beta1, opt.beta2, opt.eps});
  std::vector<std::size_t> order(train_pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0x7a11));
  const std::size_t bs = std::max<std::size_t>(1, opt.batch_size);

  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    std::vector<PairExample> batch;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(train_pairs[order[i]]);
      auto lr = loss_and_grads(params, batch, loss, mix_seed(seed, static_cast<std::uint64_t>(epoch), batches));
      adam.step(params.weights, lr.grads);
      loss_sum += lr.loss;
      ++batches;
    }
    const auto tr = evaluate_accuracy(params, train_pairs);
    const auto te = evaluate_accuracy(params, test_pairs);
    result.log.push_back(AccuracyRow{epoch, tr.dominance, te.dominance, tr.latency, te.latency,
                                     loss_sum / static_cast<double>(std::max<std::size_t>(1, batches))});
  }
  result.params = std::move(params);
  return result;
}

void fine_tune(RewardModelParams& params, std::span<const PairExample> pairs, std::size_t steps, double lr,
               std::size_t batch_size, const LossConfig& loss, std::uint64_t seed) {
  if (pairs.empty() || steps == 0) return;
  AdamOptimizer adam(params.dims, {lr, 0.9, 0.999, 1e-8});
  Rng rng(mix_seed(seed, 0xf17e));
  const std::size_t bs = std::min(std::max<std::size_t>(1, batch_size), pairs.size());
  std::vector<PairExample> batch;
  for (std::size_t s = 0; s < steps; ++s) {
    batch.clear();
    for (std::size_t i = 0; i < bs; ++i) batch.push_back(pairs[uniform_index(rng, pairs.size())]);
    auto res = loss_and_grads(params, batch, loss, mix_seed(seed, s));
    adam.step(params.weights, res.grads);
  }
}

DropoutMask mc_pass_mask(const RewardModelParams& params, std::uint64_t seed, std::size_t pass) {
  return DropoutMask::sample(params.dims, params.dropout_rate, mix_seed(seed, pass, 0x3c));
}

McEstimate mc_uncertainty(const RewardModelParams& params, const TokenizedDesign& design, std::size_t m_passes,
                          std::uint64_t seed) {
  if (m_passes < 2) throw std::invalid_argument("mc_uncertainty: need at least two passes");
  McEstimate est;
  est.scores.reserve(m_passes);
  for (std::size_t m = 0; m < m_passes; ++m) {
    const auto mask = mc_pass_mask(params, seed, m);
    est.scores.push_back(score(params, design, &mask));
  }
  // Sorted summation makes the statistics independent of pass order.
  std::vector<double> sorted = est.scores;
  std::sort(sorted.begin(), sorted.end());
  // Shifted by the smallest score so identical passes give exactly zero variance.
  const double n = static_cast<double>(m_passes);
  const double base = sorted.front();
  double sum = 0.0, sq = 0.0;
  for (double s : sorted) {
    sum += s - base;
    sq += (s - base) * (s - base);
  }
  est.mean = base + sum / n;
  est.variance = std::max(0.0, sq / n - (sum / n) * (sum / n));
  return est;
}

void save_checkpoint(const RewardModelParams& p, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "qorseek-reward-model";
  j["version"] = kCheckpointVersion;
  j["dims"] = {{"vocab", p.dims.vocab}, {"embed", p.dims.embed}, {"hidden", p.dims.hidden}};
  j["dropout_rate"] = p.dropout_rate;
  j["vocab_salt"] = p.tokenizer.salt;
  j["max_len"] = p.tokenizer.max_len;
  j["embedding"] = p.weights.embedding;
  j["head_w1"] = p.weights.w1;
  j["head_b1"] = p.weights.b1;
  j["head_w2"] = p.weights.w2;
  j["head_b2"] = p.weights.b2;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << j.dump() << "\n";
}

RewardModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("format", "") != "qorseek-reward-model") throw std::runtime_error("not a reward-model checkpoint");
  if (!j.contains("version") || j["version"].get<int>() != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version");
  RewardModelParams p;
  p.dims.vocab = j["dims"]["vocab"].get<std::size_t>();
  p.dims.embed = j["dims"]["embed"].get<std::size_t>();
  p.dims.hidden = j["dims"]["hidden"].get<std::size_t>();
  p.dropout_rate = j["dropout_rate"].get<double>();
  p.tokenizer = TokenizerConfig{p.dims.vocab, j["max_len"].get<std::size_t>(), j["vocab_salt"].get<std::uint64_t>()};
  p.weights.embedding = j["embedding"].get<std::vector<double>>();
  p.weights.w1 = j["head_w1"].get<std::vector<double>>();
  p.weights.b1 = j["head_b1"].get<std::vector<double>>();
  p.weights.w2 = j["head_w2"].get<std::vector<double>>();
  p.weights.b2 = j["head_b2"].get<double>();
  if (p.weights.embedding.size() != p.dims.vocab * p.dims.embed || p.weights.w1.size() != p.dims.embed * p.dims.hidden ||
      p.weights.b1.size() != p.dims.hidden || p.weights.w2.size() != p.dims.hidden)
    throw std::runtime_error("checkpoint weight shapes do not match dims");
  return p;
}

}  // namespace qorseek
