#include "qorseek/dse.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "qorseek/common.hpp"

namespace qorseek {

ConfigEncoding encode_config(const DesignSpace& space, const PragmaConfig& config) {
  const auto idx = space.choice_indices(config);
  ConfigEncoding x(idx.size());
  for (std::size_t d = 0; d < idx.size(); ++d) {
    const auto& dim = space.dimensions()[d];
    switch (dim.kind) {
      case Dimension::Kind::unroll: {
        const double top = std::log2(static_cast<double>(dim.unroll_choices.back()));
        x[d] = top > 0 ? std::log2(static_cast<double>(dim.unroll_choices[idx[d]])) / top : 0.0;
        break;
      }
      case Dimension::Kind::pipeline: {
        const int ii = dim.pipeline_choices[idx[d]];
        x[d] = ii == 0 ? 0.0 : ii == 4 ? 1.0 / 3.0 : ii == 2 ? 2.0 / 3.0 : 1.0;
        break;
      }
      case Dimension::Kind::partition:
        x[d] = dim.size() > 1 ? static_cast<double>(idx[d]) / static_cast<double>(dim.size() - 1) : 0.0;
        break;
    }
  }
  return x;
}

GaussianProcess::GaussianProcess(std::vector<ConfigEncoding> inputs, std::vector<double> targets,
                                 double length_scale, double jitter)
    : inputs_(std::move(inputs)), length_scale_(length_scale), jitter_(jitter) {
  const auto n = static_cast<Eigen::Index>(inputs_.size());
  double mean = 0.0;
  for (double t : targets) mean += t;
  mean /= static_cast<double>(targets.size());
  double var = 0.0;
  for (double t : targets) var += (t - mean) * (t - mean);
  var /= static_cast<double>(targets.size());
  target_mean_ = mean;
  target_scale_ = var > 1e-24 ? std::sqrt(var) : 1.0;

  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) K(i, j) = kernel(inputs_[i], inputs_[j]);
  K.diagonal().array() += jitter_;
  chol_.compute(K);
  if (chol_.info() != Eigen::Success) throw std::runtime_error("GaussianProcess: covariance is not positive definite");
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = (targets[static_cast<std::size_t>(i)] - target_mean_) / target_scale_;
  alpha_ = chol_.solve(y);
}

double GaussianProcess::kernel(const ConfigEncoding& a, const ConfigEncoding& b) const {
  double sq = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) sq += (a[k] - b[k]) * (a[k] - b[k]);
  return std::exp(-sq / (2.0 * length_scale_ * length_scale_));
}

GaussianProcess::Posterior GaussianProcess::predict(const ConfigEncoding& x) const {
  const auto n = static_cast<Eigen::Index>(inputs_.size());
  Eigen::VectorXd ks(n);
  for (Eigen::Index i = 0; i < n; ++i) ks(i) = kernel(inputs_[static_cast<std::size_t>(i)], x);
  Posterior p;
  p.mean = target_mean_ + target_scale_ * ks.dot(alpha_);
  const double reduced = 1.0 - ks.dot(chol_.solve(ks));
  p.variance = std::max(0.0, reduced) * target_scale_ * target_scale_;
  return p;
}

std::array<GaussianProcess::Posterior, QorVector::kMetrics> SurrogateModel::predict(const ConfigEncoding& x) const {
  std::array<GaussianProcess::Posterior, QorVector::kMetrics> out;
  for (std::size_t m = 0; m < QorVector::kMetrics; ++m) out[m] = objectives[m].predict(x);
  return out;
}

SurrogateModel fit_surrogate(std::span<const Observation> evaluated) {
  if (evaluated.size() < 2) throw std::invalid_argument("fit_surrogate: need at least two evaluated points");
  std::vector<ConfigEncoding> xs;
  for (const auto& o : evaluated) xs.push_back(o.x);
  SurrogateModel model;
  for (std::size_t m = 0; m < QorVector::kMetrics; ++m) {
    std::vector<double> ys;
    for (const auto& o : evaluated) ys.push_back(std::log1p(static_cast<double>(o.qor.metric(m))));
    model.objectives[m] = GaussianProcess(xs, std::move(ys), kSurrogateLengthScale, kSurrogateJitter);
  }
  return model;
}

HvFrame HvFrame::from(std::span<const QorVector> evaluated) {
  HvFrame f;
  f.ref.fill(1.0);
  for (std::size_t m = 0; m < QorVector::kMetrics; ++m) {
    std::int64_t top = 0;
    for (const auto& q : evaluated) top = std::max(top, q.metric(m));
    if (top > 0) f.ref[m] = 1.1 * static_cast<double>(top);
  }
  return f;
}

ObjectivePoint HvFrame::normalize(const QorVector& q) const { return normalize(q.as_array()); }

ObjectivePoint HvFrame::normalize(const std::array<double, QorVector::kMetrics>& q) const {
  ObjectivePoint p(QorVector::kMetrics);
  for (std::size_t m = 0; m < QorVector::kMetrics; ++m) p[m] = q[m] / ref[m];
  return p;
}

double front_hypervolume(std::span<const QorVector> qors, const HvFrame& frame) {
  std::vector<ObjectivePoint> pts;
  for (auto i : pareto_front_indices(qors)) pts.push_back(frame.normalize(qors[i]));
  return hypervolume_exact(pts, frame.unit_ref());
}

double ehvi(const ConfigEncoding& candidate, const SurrogateModel& model, std::span<const ObjectivePoint> front,
            const HvFrame& frame, std::size_t n_samples, std::uint64_t seed) {
  if (n_samples == 0) return 0.0;
  const auto post = model.predict(candidate);
  const std::vector<double> ref = frame.unit_ref();
  Rng rng(seed);
  double total = 0.0;
  std::array<double, QorVector::kMetrics> raw{};
  std::vector<ObjectivePoint> limited;
  for (std::size_t s = 0; s < n_samples; ++s) {
    for (std::size_t m = 0; m < QorVector::kMetrics; ++m) {
      const double z = standard_normal(rng);
      raw[m] = std::max(0.0, std::expm1(post[m].mean + std::sqrt(post[m].variance) * z));
    }
    const ObjectivePoint y = frame.normalize(raw);

    double box = 1.0;
    for (std::size_t m = 0; m < QorVector::kMetrics; ++m) box *= std::max(0.0, 1.0 - y[m]);
    if (box <= 0.0) continue;

    // HV(F + y) - HV(F) = vol[y, ref] - HV({max(p, y)}).
    bool covered = false;
    limited.clear();
    for (const auto& p : front) {
      ObjectivePoint q(QorVector::kMetrics);
      bool le = true;
      for (std::size_t m = 0; m < QorVector::kMetrics; ++m) {
        q[m] = std::max(p[m], y[m]);
        le = le && p[m] <= y[m];
      }
      if (le) {
        covered = true;
        break;
      }
      limited.push_back(std::move(q));
    }
    if (covered) continue;
    total += std::max(0.0, box - hypervolume_exact(limited, ref));
  }
  return total / static_cast<double>(n_samples);
}

std::vector<QorVector> DseCorpus::functional_qors() const {
  std::vector<QorVector> out;
  for (const auto& e : entries)
    if (e.functional) out.push_back(e.qor);
  return out;
}

namespace {

/// Distinct uniformly random configs, deterministic in the seed.
class ConfigStream {
public:
  ConfigStream(const DesignSpace& space, std::uint64_t seed) : space_(space), rng_(seed) {}

  bool exhausted() const { return seen_.size() >= space_.size(); }
  bool seen(const PragmaConfig& c) const { return seen_.count(config_key(c)) > 0; }
  void mark(const PragmaConfig& c) { seen_.insert(config_key(c)); }
  std::size_t num_seen() const { return seen_.size(); }

  std::optional<PragmaConfig> next_unseen() {
    if (exhausted()) return std::nullopt;
    for (;;) {
      PragmaConfig c = draw();
      if (!seen(c)) {
        mark(c);
        return c;
      }
    }
  }

  PragmaConfig draw() {
    std::vector<std::size_t> idx;
    for (const auto& d : space_.dimensions()) idx.push_back(uniform_index(rng_, d.size()));
    return space_.decode(idx);
  }

  Rng& rng() { return rng_; }

private:
  const DesignSpace& space_;
  Rng rng_;
  std::set<std::string> seen_;
};

void record(DseCorpus& corpus, const SynthesisBackend& backend, const PragmaConfig& config, std::size_t step,
            double acquisition) {
  DesignPoint d = render_design(corpus.kernel, config);
  const auto verdict = backend.evaluate(d);
  if (!verdict.qor) throw std::runtime_error("run_dse: backend failed to compile a legal design");
  corpus.entries.push_back(CorpusEntry{std::move(d), *verdict.qor, verdict.functional, step});

  std::vector<QorVector> all;
  for (const auto& e : corpus.entries) all.push_back(e.qor);
  const HvFrame frame = HvFrame::from(all);
  const auto feasible = corpus.functional_qors();
  corpus.log.push_back(DseLogRow{step, acquisition, front_hypervolume(feasible, frame)});
}

}  // namespace

DseCorpus run_dse(std::shared_ptr<const KernelDescriptor> kernel, const SynthesisBackend& backend,
                  std::size_t budget_k, std::uint64_t seed, const DseOptions& options) {
  if (budget_k < options.initial_points) throw std::invalid_argument("run_dse: budget_k must be >= 4");
  DseCorpus corpus;
  corpus.kernel = kernel;
  const DesignSpace space(*kernel);
  ConfigStream stream(space, mix_seed(seed, 0x1d5e));

  std::size_t step = 0;
  for (; step < options.initial_points; ++step) {
    auto c = stream.next_unseen();
    if (!c) return corpus;
    record(corpus, backend, *c, step, 0.0);
  }

  for (; step < budget_k && !stream.exhausted(); ++step) {
    std::vector<Observation> obs;
    std::vector<QorVector> all;
    for (const auto& e : corpus.entries) {
      obs.push_back({encode_config(space, e.design.config), e.qor});
      all.push_back(e.qor);
    }
    const SurrogateModel model = fit_surrogate(obs);
    const HvFrame frame = HvFrame::from(all);
    std::vector<ObjectivePoint> front;
    const auto feasible = corpus.functional_qors();
    for (auto i : pareto_front_indices(feasible)) front.push_back(frame.normalize(feasible[i]));

    // Candidate pool: every unevaluated config when few remain, else random draws.
    std::vector<PragmaConfig> pool;
    const std::uint64_t remaining = space.size() - stream.num_seen();
    if (remaining <= options.pool_size) {
      for (std::uint64_t i = 0; i < space.size(); ++i) {
        auto c = space.config_at(i);
        if (!stream.seen(c)) pool.push_back(std::move(c));
      }
    } else {
      std::set<std::string> in_pool;
      while (pool.size() < options.pool_size) {
        auto c = stream.draw();
        if (stream.seen(c) || !in_pool.insert(config_key(c)).second) continue;
        pool.push_back(std::move(c));
      }
    }

    // Common random numbers across the pool; ties go to the earlier candidate.
    const std::uint64_t acq_seed = mix_seed(seed, step, 0xe4f1);
    std::size_t best = 0;
    double best_value = -1.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const double v = ehvi(encode_config(space, pool[i]), model, front, frame, options.ehvi_samples, acq_seed);
      if (v > best_value) {
        best_value = v;
        best = i;
      }
    }
    stream.mark(pool[best]);
    record(corpus, backend, pool[best], step, best_value);
  }
  return corpus;
}

DseCorpus run_random_search(std::shared_ptr<const KernelDescriptor> kernel, const SynthesisBackend& backend,
                            std::size_t budget_k, std::uint64_t seed) {
  DseCorpus corpus;
  corpus.kernel = kernel;
  const DesignSpace space(*kernel);
  ConfigStream stream(space, mix_seed(seed, 0x1d5e));
  for (std::size_t step = 0; step < budget_k; ++step) {
    auto c = stream.next_unseen();
    if (!c) break;
    record(corpus, backend, *c, step, 0.0);
  }
  return corpus;
}

}  // namespace qorseek
