// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero when
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "../support.hpp"
#include "qorseek/commands.hpp"
#include "qorseek/dse.hpp"
#include "qorseek/grpo_sim.hpp"
#include "qorseek/pareto.hpp"
#include "qorseek/reward_router.hpp"

namespace fs = std::filesystem;
using namespace qorseek;
using qorseek::testing::demo_kernel;
using qorseek::testing::slurp;
using qorseek::testing::TempDir;

namespace {

const std::string kDemo = QORSEEK_DEMO_DIR;
const std::string kDesk = kDemo + "/desk.conf";
const std::string kAllKernels = kDemo + "/*.kd";

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Runs the CLI in-process; throws when it exits nonzero.
void cli(std::vector<std::string> args) {
  args.insert(args.begin(), "qorseek");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) throw std::runtime_error("qorseek " + args[1] + " exited " + std::to_string(code) + ": " + err.str());
}

std::vector<std::string> csv_rows(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("missing " + p.string());
  std::vector<std::string> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(line);
  return rows;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string f;
  while (std::getline(ss, f, sep)) out.push_back(f);
  return out;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

// ---------------------------------------------------------------------------
// Shared pipeline state: the corpus and reward model from criterion 1 feed the
// GRPO runs of criteria 2 to 4.

struct Pipeline {
  TempDir dir{"acceptance"};
  fs::path base() const { return dir.path() / "base"; }
  fs::path corpus() const { return base() / "corpus.jsonl"; }
  fs::path checkpoint() const { return base() / "rm.json"; }
};

std::vector<std::string> grpo_args(const Pipeline& p, const fs::path& out, std::uint64_t seed, bool online) {
  std::vector<std::string> a{"grpo",  "--config",      kDesk,
                             "--kernels", kAllKernels, "--seed",
                             std::to_string(seed), "--steps", "1000",
                             "--out", out.string(), "--set",
                             "paths.corpus=" + p.corpus().string(), "--set",
                             "paths.rm_checkpoint=" + p.checkpoint().string()};
  if (!online) {
    a.push_back("--set");
    a.push_back("uncertainty.online_updates=false");
  }
  return a;
}

Outcome reward_model_accuracy(Pipeline& p) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto out = p.base().string();
  cli({"dse", "--config", kDesk, "--kernels", kAllKernels, "--seed", "1", "--out", out});
  cli({"pairs", "--config", kDesk, "--kernels", kAllKernels, "--seed", "1", "--out", out});
  cli({"train-rm", "--config", kDesk, "--kernels", kAllKernels, "--seed", "1", "--epochs", "20", "--out", out});
  const double elapsed = seconds_since(t0);

  std::size_t kernels = 0;
  for (const auto& e : fs::directory_iterator(p.base() / "hv"))
    if (e.path().extension() == ".csv") ++kernels;
  const std::size_t designs = count_lines(p.corpus());
  const std::size_t pairs = csv_rows(p.base() / "pairs.csv").size();
  const auto last = split(csv_rows(p.base() / "rm_accuracy.csv").back(), ',');
  const double dom = std::stod(last.at(2));
  const double lat = std::stod(last.at(4));
  const bool corpus_ok = kernels >= 6 && designs >= 200 && pairs >= 2000;
  return {corpus_ok && dom >= 0.95 && lat >= 0.90 && elapsed <= 300.0,
          std::to_string(kernels) + " kernels, " + std::to_string(designs) + " designs, " + std::to_string(pairs) +
              " pairs; test accuracy dominance " + fmt(dom) + " (>= 0.95), latency " + fmt(lat) + " (>= 0.90); " +
              fmt(elapsed, 1) + " s"};
}

struct GrpoRun {
  std::vector<TrainingRow> rows;
  RouterTelemetry telemetry;
  std::string cost_report;
};

GrpoRun run_grpo(const Pipeline& p, const fs::path& out, std::uint64_t seed, bool online) {
  cli(grpo_args(p, out, seed, online));
  GrpoRun r;
  std::ifstream rows(out / "telemetry" / "grpo.csv");
  r.rows = read_training_csv(rows);
  std::ifstream tel(out / "telemetry" / "router.csv");
  r.telemetry = RouterTelemetry::read_csv(tel);
  r.cost_report = slurp(out / "cost_report.txt");
  return r;
}

double mean_rq(const std::vector<TrainingRow>& rows, std::size_t first, std::size_t last) {
  double s = 0.0;
  for (std::size_t i = first; i < last; ++i) s += rows[i].mean_r_q;
  return s / static_cast<double>(last - first);
}

std::map<std::uint64_t, GrpoRun> g_runs;  // seed -> online-enabled run

Outcome trigger_decay(const Pipeline& p) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto on = run_grpo(p, p.dir.path() / "grpo_seed1", 1, true);
  const auto off = run_grpo(p, p.dir.path() / "grpo_seed1_frozen", 1, false);
  const double elapsed = seconds_since(t0);
  const auto ron = trigger_rate_report(on.telemetry, 100, kDefaultSynthesisSeconds);
  const auto roff = trigger_rate_report(off.telemetry, 100, kDefaultSynthesisSeconds);
  const double first = ron.windows.front().trigger_rate;
  const double last = ron.windows.back().trigger_rate;
  const double frozen_last = roff.windows.back().trigger_rate;
  g_runs.emplace(1, on);
  return {on.rows.size() == 1000 && last < first && last <= 0.15 && frozen_last >= last && elapsed <= 600.0,
          "first window " + fmt(first) + ", final window " + fmt(last) + " (<= 0.15), without updates " +
              fmt(frozen_last) + "; " + fmt(elapsed, 1) + " s for both runs"};
}

Outcome rq_trend(const Pipeline& p) {
  std::size_t good = 0;
  std::string deltas;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    if (!g_runs.count(seed)) g_runs.emplace(seed, run_grpo(p, p.dir.path() / ("grpo_seed" + std::to_string(seed)), seed, true));
    const auto& rows = g_runs.at(seed).rows;
    const double delta = mean_rq(rows, rows.size() - 100, rows.size()) - mean_rq(rows, 0, 100);
    if (delta >= 0.1) ++good;
    deltas += (seed > 1 ? " " : "") + fmt(delta, 3);
  }
  return {good >= 8, std::to_string(good) + "/10 seeds gain >= 0.1 (gains: " + deltas + ")"};
}

double report_value(const std::string& report, const std::string& key) {
  const auto pos = report.find(key + ": ");
  if (pos == std::string::npos) throw std::runtime_error("cost report lacks " + key);
  return std::stod(report.substr(pos + key.size() + 2));
}

Outcome cost_accounting() {
  const auto& run = g_runs.at(1);
  const auto& r = run.cost_report;
  const double cost = report_value(r, "synthesis_seconds_per_call");
  const double calls = report_value(r, "proxy_path_synth_calls");
  const double proxy = report_value(r, "proxy_path_seconds");
  const double candidates = report_value(r, "all_real_candidates");
  const double all_real = report_value(r, "all_real_seconds");
  const double expected_candidates = 1000.0 * GrpoConfig{}.group_size;
  const bool exact = proxy == calls * cost && all_real == candidates * cost && candidates == expected_candidates &&
                     calls == static_cast<double>(run.telemetry.synth_calls);
  const double ratio = proxy / all_real;
  return {exact && ratio <= 0.3, "proxy " + fmt(proxy, 0) + " s vs all-real " + fmt(all_real, 0) + " s, ratio " +
                                     fmt(ratio) + " (<= 0.3)" + (exact ? "" : "; arithmetic mismatch")};
}

// ---------------------------------------------------------------------------
// Property suites against independent oracles.

Outcome round_robin_equivalence() {
  const AnalyticBackend backend;
  std::vector<std::shared_ptr<const KernelDescriptor>> kernels;
  for (const char* name : {"gemm", "vadd", "histogram", "fir_filter", "data_forwarding"}) kernels.push_back(demo_kernel(name));
  UncertaintyConfig forced;
  forced.force_real = true;
  forced.online_updates = false;
  InitConfig init;
  init.dims = {512, 16, 8};
  std::mt19937_64 rng(2024);
  std::size_t exact = 0, sums_ok = 0, with_pairs = 0;
  double worst_sum = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto& k = kernels[static_cast<std::size_t>(trial) % kernels.size()];
    RewardRouter router(initialize_params(init, static_cast<std::uint64_t>(trial)), backend, forced);
    std::vector<RouterCandidate> group;
    std::vector<QorVector> qor;
    std::vector<bool> correct;
    const std::size_t size = 2 + rng() % 11;
    for (std::size_t i = 0; i < size; ++i) {
      auto d = render_design(k, sample_config(*k, rng()));
      const auto v = backend.evaluate(d);
      qor.push_back(*v.qor);
      correct.push_back(v.functional);
      group.push_back({d, tokenize(d.rendered_code, router.model().tokenizer), v.functional});
    }
    const auto r = router.compute_rq(group, static_cast<std::size_t>(trial), 9);
    if (r.r_q == oracle::round_robin(qor, correct)) ++exact;
    const auto n = static_cast<std::size_t>(std::count(correct.begin(), correct.end(), true));
    if (n < 2) continue;
    ++with_pairs;
    double sum = 0.0;
    for (std::size_t i = 0; i < size; ++i)
      if (correct[i]) sum += r.r_q[i];
    const double err = std::abs(sum - static_cast<double>(n) / 2.0);
    worst_sum = std::max(worst_sum, err);
    if (err <= 1e-12) ++sums_ok;
  }
  return {exact == 100 && sums_ok == with_pairs && with_pairs > 0,
          std::to_string(exact) + "/100 groups match the brute force exactly; sum check on " +
              std::to_string(with_pairs) + " groups, worst error " + fmt(worst_sum, 15)};
}

Outcome front_and_hypervolume() {
  std::mt19937_64 rng(77);
  std::size_t fronts_ok = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<std::int64_t> d(0, trial % 2 ? 8 : 10'000);
    std::vector<QorVector> pts;
    const std::size_t n = 1 + rng() % 80;
    for (std::size_t i = 0; i < n; ++i) pts.push_back(QorVector{d(rng), d(rng), d(rng), d(rng), d(rng)});
    if (pareto_front_indices(pts) == oracle::front(pts)) ++fronts_ok;
  }

  double worst_distance = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<std::int64_t> d(0, 1000);
    std::vector<QorVector> pts;
    for (int i = 0; i < 25; ++i) pts.push_back(QorVector{d(rng), d(rng), d(rng), d(rng), d(rng)});
    const auto bounds = NormalizationBounds::from(pts);
    const auto p = pts.back();
    pts.pop_back();
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : pts) {
      double s = 0.0;
      for (std::size_t m = 0; m < QorVector::kMetrics; ++m) {
        const double range = static_cast<double>(bounds.f_max.metric(m) - bounds.f_min.metric(m));
        const double z = range > 0 ? static_cast<double>(p.metric(m) - f.metric(m)) / range : 0.0;
        s += z * z;
      }
      best = std::min(best, std::sqrt(s));
    }
    worst_distance = std::max(worst_distance, std::abs(pareto_distance(p, pts, bounds) - best));
  }

  std::uniform_real_distribution<double> u(0.0, 0.4);
  const std::vector<double> ref(QorVector::kMetrics, 1.0);
  double worst_hv = 0.0;
  for (int trial = 0; trial < 24; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial) % 12;
    std::vector<ObjectivePoint> pts;
    for (std::size_t i = 0; i < n; ++i) {
      ObjectivePoint q(QorVector::kMetrics);
      for (auto& x : q) x = u(rng);
      pts.push_back(q);
    }
    const double exact = hypervolume_exact(pts, ref);
    const double mc = oracle::mc_volume(pts, ref, 100'000, 500 + static_cast<std::uint32_t>(trial));
    worst_hv = std::max(worst_hv, std::abs(exact - mc) / exact);
  }
  return {fronts_ok == 200 && worst_distance <= 1e-9 && worst_hv <= 0.02,
          std::to_string(fronts_ok) + "/200 fronts match; distance error " + fmt(worst_distance, 12) +
              "; worst HV deviation from MC " + fmt(100 * worst_hv, 2) + "%"};
}

Outcome gradient_correctness() {
  std::mt19937_64 rng(31);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    auto [params, batch] = oracle::random_gradient_case(rng, i);
    LossConfig cfg;
    cfg.lambda_cons = 0.5;
    worst = std::max(worst, oracle::gradient_check(params, batch, cfg, 1000 + static_cast<std::uint64_t>(i)));
  }
  return {worst <= 1e-4, "20 configurations, worst relative error " + fmt(worst, 8) + " (<= 1e-4)"};
}

Outcome grpo_invariants() {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double worst_mean = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> r(2 + static_cast<std::size_t>(trial) % 15);
    for (auto& x : r) x = u(rng);
    const auto a = group_advantages(r, 1e-4);
    double m = 0.0;
    for (double x : a) m += x;
    worst_mean = std::max(worst_mean, std::abs(m / static_cast<double>(a.size())));
  }

  const AnalyticBackend backend;
  std::vector<std::shared_ptr<const KernelDescriptor>> ks{demo_kernel("gemm"), demo_kernel("fir_filter")};
  auto policy = SimPolicy::uniform(ks);
  const auto ref = policy;
  double kl_at_init = 0.0;
  for (const auto& k : ks) kl_at_init = std::max(kl_at_init, std::abs(policy_kl(policy, ref, k->name)));
  UncertaintyConfig ucfg;
  ucfg.online_updates = false;
  InitConfig init;
  init.dims = {512, 16, 8};
  RewardRouter router(initialize_params(init, 3), backend, ucfg);
  GrpoConfig cfg;
  double worst_ratio = 0.0, min_kl = 0.0, worst_step_mean = 0.0;
  for (std::size_t step = 0; step < 50; ++step) {
    StepDiagnostics diag;
    const auto g = grpo_step(policy, ref, ks[step % ks.size()], backend, router, cfg, RewardWeights{}, step, 21, &diag);
    worst_ratio = std::max(worst_ratio, diag.first_epoch_max_ratio_error);
    min_kl = std::min(min_kl, diag.kl);
    double m = 0.0;
    for (const auto& c : g.candidates) m += c.advantage;
    worst_step_mean = std::max(worst_step_mean, std::abs(m / static_cast<double>(g.candidates.size())));
  }

  InitConfig flat;
  flat.dims = {16, 4, 3};
  flat.dropout_rate = 0.0;
  const auto params = initialize_params(flat, 1);
  TokenizedDesign same;
  same.token_ids = {5, 6, 7};
  const std::vector<PairExample> batch{{same, same, 0.5, PairTier::latency, "k", 0, 1}};
  const double bce = loss_and_grads(params, batch, LossConfig{}, 1).loss;

  const bool ok = worst_mean <= 1e-12 && worst_step_mean <= 1e-12 && worst_ratio <= 1e-12 && min_kl >= 0.0 &&
                  kl_at_init == 0.0 && std::abs(bce - 0.6931) <= 1e-4;
  return {ok, "advantage mean " + fmt(std::max(worst_mean, worst_step_mean), 15) + ", first-epoch |rho - 1| " +
                  fmt(worst_ratio, 15) + ", min KL " + fmt(min_kl, 6) + ", KL at init " + fmt(kl_at_init, 1) +
                  ", BCE " + fmt(bce, 6)};
}

Outcome table_fixtures() {
  const QorVector forwarding_i{514, 638, 0, 0, 309};
  const QorVector forwarding_j{1024, 2715, 0, 0, 1025};
  const QorVector linear_a{116, 67419, 648, 0, 90762};
  const QorVector linear_b{169, 2864, 12, 0, 5730};
  const bool ok = dominates(forwarding_i, forwarding_j) && !dominates(linear_a, linear_b) && !dominates(linear_b, linear_a);
  return {ok, "data_forwarding dominates; fgnn_linear mutually non-dominated"};
}

Outcome dse_effectiveness() {
  const AnalyticBackend backend;
  const auto k = demo_kernel("vadd");
  std::size_t wins = 0;
  std::string margins;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto bo = run_dse(k, backend, 40, seed);
    const auto rs = run_random_search(k, backend, 40, seed);
    auto union_q = bo.functional_qors();
    const auto rq = rs.functional_qors();
    union_q.insert(union_q.end(), rq.begin(), rq.end());
    const auto frame = HvFrame::from(union_q);
    const double hb = front_hypervolume(bo.functional_qors(), frame);
    const double hr = front_hypervolume(rq, frame);
    if (hb >= hr) ++wins;
    margins += (seed > 1 ? " " : "") + fmt(hb - hr, 4);
  }
  return {wins >= 8, std::to_string(wins) + "/10 seeds EHVI >= random (HV margins: " + margins + ")"};
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  return files;
}

Outcome determinism() {
  TempDir dir("determinism");
  const auto kernels = dir.path() / "kernels";
  fs::create_directories(kernels);
  for (const char* name : {"vadd.kd", "dot_product.kd", "histogram.kd"}) fs::copy_file(fs::path(kDemo) / name, kernels / name);
  auto run = [&](const std::string& name) {
    const auto out = (dir.path() / name).string();
    const std::vector<std::string> common{"--config", kDesk, "--kernels", (kernels / "*.kd").string(),
                                          "--seed", "7", "--out", out};
    auto with = [&](std::vector<std::string> head, std::vector<std::string> tail = {}) {
      head.insert(head.end(), common.begin(), common.end());
      head.insert(head.end(), tail.begin(), tail.end());
      return head;
    };
    std::vector<std::string> outputs;
    for (auto args : {with({"dse"}, {"--budget", "12"}), with({"pairs"}), with({"train-rm"}, {"--epochs", "3"}),
                      with({"grpo"}, {"--steps", "60"}), with({"report"})}) {
      args.insert(args.begin(), "qorseek");
      std::vector<const char*> argv;
      for (const auto& a : args) argv.push_back(a.c_str());
      std::ostringstream o, e;
      if (run_cli(static_cast<int>(argv.size()), argv.data(), o, e) != 0)
        throw std::runtime_error("qorseek " + args[1] + " failed: " + e.str());
      outputs.push_back(o.str());
    }
    return std::make_pair(snapshot(dir.path() / name), outputs);
  };
  const auto a = run("a");
  const auto b = run("b");
  std::size_t differing = 0;
  for (const auto& [name, body] : a.first) {
    auto it = b.first.find(name);
    if (it == b.first.end() || it->second != body) ++differing;
  }
  const bool stdout_same = [&] {
    // stdout names the output directory; compare with it stripped.
    for (std::size_t i = 0; i < a.second.size(); ++i) {
      auto strip = [&](std::string s, const std::string& tag) {
        const auto dirname = (dir.path() / tag).string();
        for (auto pos = s.find(dirname); pos != std::string::npos; pos = s.find(dirname)) s.replace(pos, dirname.size(), "<out>");
        return s;
      };
      if (strip(a.second[i], "a") != strip(b.second[i], "b")) return false;
    }
    return true;
  }();
  const bool ok = !a.first.empty() && a.first.size() == b.first.size() && differing == 0 && stdout_same;
  return {ok, std::to_string(a.first.size()) + " files over dse, pairs, train-rm, grpo, report; " +
                  std::to_string(differing) + " differ" + (stdout_same ? "" : "; stdout differs")};
}

}  // namespace

int main() {
  Pipeline pipeline;
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria{
      {1, "reward-model accuracy", [&] { return reward_model_accuracy(pipeline); }},
      {2, "trigger-rate decay", [&] { return trigger_decay(pipeline); }},
      {3, "QoR-reward trend", [&] { return rq_trend(pipeline); }},
      {4, "cost accounting", [] { return cost_accounting(); }},
      {5, "round-robin oracle equivalence", [] { return round_robin_equivalence(); }},
      {6, "front, distance and hypervolume oracles", [] { return front_and_hypervolume(); }},
      {7, "gradient correctness", [] { return gradient_correctness(); }},
      {8, "GRPO math invariants", [] { return grpo_invariants(); }},
      {9, "published dominance fixtures", [] { return table_fixtures(); }},
      {10, "DSE effectiveness", [] { return dse_effectiveness(); }},
      {11, "determinism", [] { return determinism(); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria pass"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
