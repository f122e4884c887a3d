#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "qorseek/common.hpp"
#include "qorseek/pareto.hpp"
#include "qorseek/reward_router.hpp"
#include "support.hpp"

using namespace qorseek;
using qorseek::testing::demo_kernel;

namespace {

RewardModelParams model(std::uint64_t seed, double dropout = 0.2) {
  InitConfig init;
  init.dims = {512, 16, 8};
  init.dropout_rate = dropout;
  return initialize_params(init, seed);
}

RouterCandidate candidate(const std::shared_ptr<const KernelDescriptor>& k, const PragmaConfig& c,
                          const SynthesisBackend& backend, const TokenizerConfig& tok) {
  auto d = render_design(k, c);
  const auto v = backend.evaluate(d);
  return RouterCandidate{d, tokenize(d.rendered_code, tok), v.functional};
}

std::vector<double> oracle_rq(const std::vector<RouterCandidate>& group, const SynthesisBackend& backend) {
  std::vector<QorVector> qor;
  std::vector<bool> correct;
  for (const auto& c : group) {
    qor.push_back(*backend.evaluate(c.design).qor);
    correct.push_back(c.functional);
  }
  return oracle::round_robin(qor, correct);
}

UncertaintyConfig forced() {
  UncertaintyConfig u;
  u.force_real = true;
  u.online_updates = false;
  return u;
}

}  // namespace

TEST_CASE("real preference tiers") {
  CHECK(real_preference({514, 638, 0, 0, 309}, {1024, 2715, 0, 0, 1025}) == 1.0);
  CHECK(real_preference({1024, 2715, 0, 0, 1025}, {514, 638, 0, 0, 309}) == 0.0);
  CHECK(real_preference({116, 67419, 648, 0, 90762}, {169, 2864, 12, 0, 5730}) == 1.0);
  CHECK(real_preference({169, 2864, 12, 0, 5730}, {116, 67419, 648, 0, 90762}) == 0.0);
  CHECK(real_preference({5, 1, 0, 0, 9}, {5, 9, 0, 0, 1}) == 0.5);
}

TEST_CASE("round robin by hand") {
  // Three correct candidates with a strict chain A > B > C.
  auto k = qorseek::testing::kernel_from("kernel chain\nhazard=0\nloop i trip=8 add=1 mul=1 arrays=\n");
  const AnalyticBackend backend;
  RewardRouter router(model(1), backend, forced());
  auto cfg = [](std::int64_t u) {
    PragmaConfig c;
    c.loops = {LoopPragma{u, false, 1}};
    return c;
  };
  // More unrolling: lower latency but more resources, so the latency tier decides.
  std::vector<RouterCandidate> g{candidate(k, cfg(8), backend, router.model().tokenizer),
                                 candidate(k, cfg(4), backend, router.model().tokenizer),
                                 candidate(k, cfg(1), backend, router.model().tokenizer)};
  const auto r = router.compute_rq(g, 0, 1);
  CHECK(r.r_q == std::vector<double>{1.0, 0.5, 0.0});

  std::vector<RouterCandidate> twins{g[1], g[1], g[1]};
  RewardRouter again(model(1), backend, forced());
  CHECK(again.compute_rq(twins, 0, 1).r_q == std::vector<double>{0.5, 0.5, 0.5});
}

TEST_CASE("sole and absent correct candidates") {
  auto good = qorseek::testing::kernel_from("kernel g\nhazard=0\nloop i trip=4 add=1 mul=0 arrays=\n");
  auto bad = qorseek::testing::kernel_from("kernel g\nhazard=1\nloop i trip=4 add=1 mul=0 arrays=\n");
  const AnalyticBackend backend;
  RewardRouter router(model(1), backend, UncertaintyConfig{});
  PragmaConfig c;
  c.loops.resize(1);
  std::vector<RouterCandidate> g{candidate(bad, c, backend, router.model().tokenizer),
                                 candidate(good, c, backend, router.model().tokenizer)};
  const auto one = router.compute_rq(g, 0, 1);
  CHECK(one.r_q == std::vector<double>{0.0, 1.0});
  CHECK(one.stats.trigger_rate == 0.0);
  std::vector<RouterCandidate> none{g[0], g[0]};
  CHECK(router.compute_rq(none, 1, 1).r_q == std::vector<double>{0.0, 0.0});
  CHECK(router.telemetry().synth_calls == 0);
}

TEST_CASE("forced-real r_q equals the brute-force round robin") {
  const AnalyticBackend backend;
  const std::vector<std::shared_ptr<const KernelDescriptor>> kernels{demo_kernel("gemm"), demo_kernel("vadd"),
                                                                     demo_kernel("histogram")};
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto& k = kernels[trial % kernels.size()];
    RewardRouter router(model(trial), backend, forced());
    std::vector<RouterCandidate> g;
    const std::size_t size = 2 + rng() % 7;
    for (std::size_t i = 0; i < size; ++i) g.push_back(candidate(k, sample_config(*k, rng()), backend, router.model().tokenizer));
    const auto r = router.compute_rq(g, trial, 3);
    CHECK(r.r_q == oracle_rq(g, backend));
    std::size_t n = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (g[i].functional) {
        ++n;
        sum += r.r_q[i];
      }
    if (n >= 2) CHECK(std::abs(sum - n / 2.0) <= 1e-12);
  }
}

TEST_CASE("proxy mode is antisymmetric and deterministic") {
  const AnalyticBackend backend;
  const auto k = demo_kernel("gemm");
  UncertaintyConfig u;
  u.tau_u = 1e9;  // never synthesize
  RewardRouter a(model(3), backend, u);
  RewardRouter b(model(3), backend, u);
  std::vector<RouterCandidate> g;
  for (int i = 0; i < 6; ++i) g.push_back(candidate(k, sample_config(*k, 40 + i), backend, a.model().tokenizer));
  const auto ra = a.compute_rq(g, 7, 11);
  const auto rb = b.compute_rq(g, 7, 11);
  CHECK(ra.r_q == rb.r_q);
  std::size_t n = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g[i].functional) {
      ++n;
      sum += ra.r_q[i];
      CHECK(!std::isnan(ra.uncertainty[i]));
    } else {
      CHECK(std::isnan(ra.uncertainty[i]));
    }
  if (n >= 2) CHECK(sum == doctest::Approx(n / 2.0).epsilon(1e-12));
  CHECK(a.telemetry().synth_calls == 0);
}

TEST_CASE("flagged candidates are synthesized once and remembered") {
  const AnalyticBackend backend(180.0);
  const auto k = demo_kernel("gemm");
  UncertaintyConfig u;
  u.tau_u = 1e-300;  // flag everything that has any spread
  u.online_updates = false;
  RewardRouter router(model(4, 0.5), backend, u);
  std::vector<RouterCandidate> g;
  for (int i = 0; i < 5; ++i) g.push_back(candidate(k, sample_config(*k, 90 + i), backend, router.model().tokenizer));
  const auto first = router.compute_rq(g, 0, 1);
  const auto calls = router.telemetry().synth_calls;
  CHECK(calls == first.stats.n_flagged);
  CHECK(router.buffer().size() <= calls);
  router.compute_rq(g, 1, 1);
  CHECK(router.telemetry().synth_calls == calls);
  CHECK(router.telemetry().synth_seconds == doctest::Approx(180.0 * static_cast<double>(calls)));
}

TEST_CASE("online update schedule") {
  const AnalyticBackend backend;
  const auto k = demo_kernel("gemm");
  UncertaintyConfig u;
  u.k_update = 10;
  u.online_lr = 1e-3;
  RewardRouter router(model(5), backend, u);
  const auto before = router.model();
  CHECK_FALSE(router.maybe_online_update(7, 1));
  CHECK(router.model() == before);
  CHECK_FALSE(router.maybe_online_update(10, 1));  // empty buffer, no pairs
  router.buffer().add(ReplayEntry{render_design(k, sample_config(*k, 1)), {100, 100, 1, 0, 100}, true});
  CHECK_FALSE(router.maybe_online_update(20, 1));
  CHECK(router.model() == before);
  CHECK(router.online_update_count() == 0);
}

TEST_CASE("one online update improves accuracy on an unseen kernel") {
  const AnalyticBackend backend;
  const auto k = demo_kernel("gemm");
  UncertaintyConfig u;
  u.k_update = 1;
  u.online_lr = 1e-2;
  u.online_steps = 100;
  // Latency-tier pairs only carry a direction when their reversed tie pairs are kept.
  LossConfig labels;
  labels.keep_ties = true;
  RewardRouter router(model(6, 0.1), backend, u, labels);

  const DesignSpace space(*k);
  std::vector<PragmaConfig> configs;
  std::set<std::string> seen;
  for (std::uint64_t s = 0; configs.size() < 100; ++s) {
    auto c = sample_config(*k, s);
    if (seen.insert(config_key(c)).second) configs.push_back(c);
  }
  for (std::size_t i = 0; i < 50; ++i) {
    const auto d = render_design(k, configs[i]);
    const auto v = backend.evaluate(d);
    router.buffer().add(ReplayEntry{d, *v.qor, v.functional});
  }
  std::vector<LabeledDesign> held;
  for (std::size_t i = 50; i < 100; ++i) {
    const auto d = render_design(k, configs[i]);
    const auto v = backend.evaluate(d);
    held.push_back({k->name, tokenize(d.rendered_code, router.model().tokenizer), *v.qor, v.functional});
  }
  const auto pairs = build_pairs(held, labels);
  const auto acc = [&] {
    const auto a = evaluate_accuracy(router.model(), pairs);
    return (a.dominance * a.n_dominance + a.latency * a.n_latency) / double(a.n_dominance + a.n_latency);
  };
  const double before = acc();
  CHECK(router.maybe_online_update(1, 3));
  CHECK(acc() > before);
}

TEST_CASE("trigger report") {
  RouterTelemetry t;
  for (std::size_t s = 0; s < 10; ++s) t.rows.push_back({s, 4, 4, 4 - std::min<std::size_t>(4, s / 2), 0.0, s, 0.0});
  t.synth_calls = 10;
  const auto r = trigger_rate_report(t, 2, 180.0);
  REQUIRE(r.windows.size() == 5);
  for (std::size_t w = 1; w < r.windows.size(); ++w) CHECK(r.windows[w].trigger_rate <= r.windows[w - 1].trigger_rate);
  CHECK(r.synth_seconds == 1800.0);

  RouterTelemetry zero;
  zero.rows.push_back({0, 4, 4, 0, 0.0, 0, 0.0});
  zero.rows.push_back({1, 4, 1, 0, 0.0, 0, 0.0});
  const auto z = trigger_rate_report(zero, 1, 180.0);
  CHECK(z.windows.size() == 2);
  for (const auto& w : z.windows) CHECK(w.trigger_rate == 0.0);
  CHECK(trigger_rate_report(zero, 100, 1.0).windows.size() == 1);
  CHECK_THROWS_AS(trigger_rate_report(zero, 0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(trigger_rate_report(RouterTelemetry{}, 1, 1.0), std::invalid_argument);
}

TEST_CASE("telemetry and buffer round trips") {
  RouterTelemetry t;
  t.rows.push_back({0, 4, 3, 1, 1.0 / 3.0, 1, 180.0});
  t.rows.push_back({1, 4, 2, 0, 0.0, 1, 180.0});
  std::stringstream ss;
  t.write_csv(ss);
  const auto back = RouterTelemetry::read_csv(ss);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[0].trigger_rate == t.rows[0].trigger_rate);
  CHECK(back.synth_calls == 1);

  const auto k = demo_kernel("vadd");
  ReplayBuffer buf;
  const auto d = render_design(k, sample_config(*k, 3));
  CHECK(buf.add({d, {1, 2, 3, 4, 5}, true}));
  CHECK_FALSE(buf.add({d, {9, 9, 9, 9, 9}, false}));
  std::stringstream js;
  buf.save_jsonl(js);
  const auto loaded = ReplayBuffer::load_jsonl(js, [&](const std::string& n) { return n == k->name ? k : nullptr; });
  REQUIRE(loaded.size() == 1);
  CHECK(loaded.entries()[0].qor == QorVector{1, 2, 3, 4, 5});
  CHECK(loaded.entries()[0].design.rendered_code == d.rendered_code);
}

TEST_CASE("tau calibration is a quantile of MC variance") {
  const auto p = model(9, 0.3);
  std::vector<TokenizedDesign> designs;
  const auto k = demo_kernel("gemm");
  for (int i = 0; i < 20; ++i) designs.push_back(tokenize(render_design(k, sample_config(*k, i)).rendered_code, p.tokenizer));
  std::vector<double> v;
  for (const auto& d : designs) v.push_back(mc_uncertainty(p, d, 10, 2).variance);
  std::sort(v.begin(), v.end());
  CHECK(calibrate_tau(p, designs, 0.5, 10, 2) == v[9]);
  CHECK(calibrate_tau(p, designs, 1.0, 10, 2) == v.back());
  CHECK(calibrate_tau(p, designs, 0.0, 10, 2) == v.front());
  CHECK_THROWS_AS(calibrate_tau(p, {}, 0.5, 10, 2), std::invalid_argument);
}

TEST_CASE("uncertainty config validation names the field") {
  UncertaintyConfig u;
  u.m_passes = 1;
  try {
    u.validate();
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.field() == "uncertainty.m_passes");
  }
}
