#include "qorseek/synth_oracle.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "qorseek/common.hpp"

namespace qorseek {

namespace {

constexpr std::int64_t kPortsPerBank = 2;
constexpr std::int64_t kPipelineDepth = 3;
constexpr std::int64_t kControlOverhead = 10;
constexpr std::int64_t kBramBits = 18432;
constexpr std::uint64_t kHazardSalt = 0x51ed27a3c09b4f1dULL;

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

}  // namespace

std::int64_t QorVector::metric(std::size_t i) const {
  switch (i) {
    case 0: return latency_cycles;
    case 1: return lut;
    case 2: return dsp;
    case 3: return bram;
    case 4: return ff;
  }
  throw std::out_of_range("QorVector metric index");
}

std::array<double, QorVector::kMetrics> QorVector::as_array() const {
  return {static_cast<double>(latency_cycles), static_cast<double>(lut), static_cast<double>(dsp),
          static_cast<double>(bram), static_cast<double>(ff)};
}

std::vector<std::int64_t> effective_parallelism(const KernelDescriptor& k, const PragmaConfig& c) {
  std::vector<std::int64_t> e(k.loops.size());
  for (std::size_t i = 0; i < k.loops.size(); ++i) {
    std::int64_t v = c.loops[i].unroll_factor;
    for (const auto& a : k.loops[i].arrays_accessed) v = std::min(v, kPortsPerBank * c.arrays[*k.array_index(a)].factor);
    e[i] = v;
  }
  return e;
}

QorVector analytic_qor(const KernelDescriptor& k, const PragmaConfig& c) {
  const auto e = effective_parallelism(k, c);

  auto nest_cycles = [&](auto&& self, std::size_t l) -> std::int64_t {
    const auto& loop = k.loops[l];
    const auto& p = c.loops[l];
    const std::int64_t iters = ceil_div(loop.trip_count, e[l]);
    const auto children = k.children_of(l);
    if (children.empty()) {
      if (p.pipeline) return iters * p.ii + kPipelineDepth;
      return iters * (1 + loop.ops_add + loop.ops_mul);
    }
    std::int64_t body = 0;
    for (auto ch : children) body += self(self, ch);
    return iters * body;
  };

  QorVector q;
  q.latency_cycles = kControlOverhead;
  for (auto r : k.roots()) q.latency_cycles += nest_cycles(nest_cycles, r);

  q.lut = 200;
  for (std::size_t l = 0; l < k.loops.size(); ++l) {
    q.dsp += k.loops[l].ops_mul * e[l];
    q.lut += (k.loops[l].ops_add * 32 + k.loops[l].ops_mul * 16) * e[l];
    if (c.loops[l].pipeline) q.lut += 64 * e[l];
  }
  q.ff = 100 + q.lut / 2;

  for (std::size_t a = 0; a < k.arrays.size(); ++a) {
    const auto& p = c.arrays[a];
    if (p.kind == PartitionKind::complete) continue;
    const std::int64_t bits = k.arrays[a].num_words * k.arrays[a].word_bits;
    q.bram += p.factor * ceil_div(bits, p.factor * kBramBits);
  }
  return q;
}

bool in_hazard_set(const KernelDescriptor& k, const PragmaConfig& c) {
  if (k.hazard_fraction <= 0.0) return false;
  if (k.hazard_fraction >= 1.0) return true;
  std::uint64_t h = fnv1a(k.name);
  h = fnv1a("|", h);
  h = fnv1a(config_key(c), h);
  h = mix_seed(h, kHazardSalt);
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u < k.hazard_fraction;
}

SynthesisVerdict AnalyticBackend::evaluate(const DesignPoint& d) const {
  SynthesisVerdict v;
  if (!d.kernel || d.dynamic_alloc_flag || !is_legal_config(*d.kernel, d.config)) return v;
  v.compiled = true;
  v.functional = !in_hazard_set(*d.kernel, d.config);
  v.qor = analytic_qor(*d.kernel, d.config);
  return v;
}

std::unique_ptr<SynthesisBackend> make_backend(std::string_view name, double cost_seconds) {
  if (name == "analytic") return std::make_unique<AnalyticBackend>(cost_seconds);
  throw std::invalid_argument("unknown oracle backend '" + std::string(name) + "'");
}

}  // namespace qorseek
