#include "qorseek/commands.hpp"

#include <glob.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "qorseek/common.hpp"
#include "qorseek/serialization.hpp"

namespace qorseek {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::ifstream open_input(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw MissingInputError(path, what + " not found");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path, "cannot read " + what);
  return in;
}

KernelLookup lookup_in(const std::vector<std::shared_ptr<const KernelDescriptor>>& kernels) {
  return [&kernels](const std::string& name) -> std::shared_ptr<const KernelDescriptor> {
    for (const auto& k : kernels)
      if (k->name == name) return k;
    return nullptr;
  };
}

std::vector<DseCorpus> load_corpus(const RunConfig& config,
                                   const std::vector<std::shared_ptr<const KernelDescriptor>>& kernels) {
  auto in = open_input(config.corpus_path(), "corpus");
  auto corpora = read_corpus_jsonl(in, lookup_in(kernels));
  std::size_t n = 0;
  for (const auto& c : corpora) n += c.entries.size();
  if (n == 0) throw MissingInputError(config.corpus_path(), "corpus is empty");
  spdlog::info("loaded {} designs over {} kernels from {}", n, corpora.size(), config.corpus_path().string());
  return corpora;
}

RewardModelParams fresh_params(const RunConfig& config) {
  InitConfig init;
  init.dims = config.rm.dims;
  init.dropout_rate = config.rm.dropout_rate;
  init.max_len = config.rm.max_len;
  init.vocab_salt = config.rm.vocab_salt;
  init.embed_scale = config.rm.embed_scale;
  return initialize_params(init, config.seed);
}

std::string_view qd_tier(std::size_t position, std::size_t front_size) { return position < front_size ? "front" : "near"; }

void write_accuracy_csv(std::ostream& out, const std::vector<AccuracyRow>& log) {
  out << "epoch,train_acc_dom,test_acc_dom,train_acc_lat,test_acc_lat,loss\n";
  for (const auto& r : log)
    out << r.epoch << ',' << format_double(r.train_acc_dom) << ',' << format_double(r.test_acc_dom) << ','
        << format_double(r.train_acc_lat) << ',' << format_double(r.test_acc_lat) << ',' << format_double(r.loss)
        << '\n';
}

double mean_of(const std::vector<TrainingRow>& rows, std::size_t begin, std::size_t end) {
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += rows[i].mean_r_q;
  return s / static_cast<double>(end - begin);
}

}  // namespace

std::vector<fs::path> resolve_kernel_glob(const std::string& pattern) {
  glob_t g{};
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<fs::path> out;
  if (rc == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  globfree(&g);
  if (out.empty()) throw MissingInputError(pattern, "no kernel descriptor matches");
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::shared_ptr<const KernelDescriptor>> load_kernels(const std::string& pattern) {
  std::vector<std::shared_ptr<const KernelDescriptor>> kernels;
  std::set<std::string> names;
  for (const auto& path : resolve_kernel_glob(pattern)) {
    if (!fs::is_regular_file(path)) throw MissingInputError(path, "kernel descriptor not found");
    auto k = std::make_shared<const KernelDescriptor>(load_kernel_file(path));
    if (!names.insert(k->name).second) throw ValidationError("kernels", "duplicate kernel name '" + k->name + "'");
    kernels.push_back(std::move(k));
  }
  return kernels;
}

void cmd_dse(const RunConfig& config, std::ostream& out) {
  const auto kernels = load_kernels(config.kernels);
  const auto backend = make_backend(config.backend, config.cost_seconds);
  auto corpus_out = open_output(config.corpus_path());
  auto qd_out = open_output(config.out / "qd_selection.csv");
  qd_out << "kernel,entry,config_key,tier\n";
  for (const auto& kernel : kernels) {
    spdlog::info("dse: {} (budget {})", kernel->name, config.dse_budget);
    const auto corpus = run_dse(kernel, *backend, config.dse_budget, config.seed, config.dse);
    write_corpus_jsonl(corpus_out, corpus);

    auto hv_out = open_output(config.out / "hv" / (kernel->name + ".csv"));
    hv_out << "step,ehvi,hv\n";
    for (const auto& row : corpus.log) hv_out << row.step << ',' << format_double(row.ehvi) << ',' << format_double(row.hv) << '\n';

    std::vector<std::size_t> functional;
    std::vector<QorVector> qors;
    for (std::size_t i = 0; i < corpus.entries.size(); ++i)
      if (corpus.entries[i].functional) {
        functional.push_back(i);
        qors.push_back(corpus.entries[i].qor);
      }
    const std::size_t front_size = pareto_front_indices(qors).size();
    const auto selected = qors.empty() ? std::vector<std::size_t>{}
                                       : qd_sample(qors, config.qd, NormalizationBounds::from(qors));
    for (std::size_t pos = 0; pos < selected.size(); ++pos) {
      const auto& e = corpus.entries[functional[selected[pos]]];
      qd_out << kernel->name << ',' << functional[selected[pos]] << ',' << config_key(e.design.config) << ','
             << qd_tier(pos, front_size) << '\n';
    }
    out << kernel->name << ": evaluated " << corpus.entries.size() << ", functional " << functional.size()
        << ", front " << front_size << ", qd-sample " << selected.size() << ", final hv "
        << (corpus.log.empty() ? std::string("0") : format_double(corpus.log.back().hv)) << '\n';
  }
  out << "corpus: " << config.corpus_path().string() << '\n';
}

void cmd_pairs(const RunConfig& config, std::ostream& out) {
  const auto kernels = load_kernels(config.kernels);
  const auto corpora = load_corpus(config, kernels);
  TokenizerConfig tokenizer{config.rm.dims.vocab, config.rm.max_len, config.rm.vocab_salt};
  const auto pairs = build_pairs(corpora, config.loss, tokenizer);
  auto csv = open_output(config.out / "pairs.csv");
  csv << "kernel,index_i,index_j,tier,label\n";
  std::map<PairTier, std::size_t> counts;
  for (const auto& p : pairs) {
    csv << p.kernel << ',' << p.index_i << ',' << p.index_j << ',' << to_string(p.tier) << ',' << format_double(p.label)
        << '\n';
    ++counts[p.tier];
  }
  out << "pairs: " << pairs.size() << " (dominance " << counts[PairTier::dominance] << ", latency "
      << counts[PairTier::latency] << ", tie " << counts[PairTier::tie] << ")\n";
}

void cmd_train_rm(const RunConfig& config, std::ostream& out) {
  const auto kernels = load_kernels(config.kernels);
  const auto corpora = load_corpus(config, kernels);
  auto params = fresh_params(config);
  const auto pairs = build_pairs(corpora, config.loss, params.tokenizer);
  if (pairs.empty()) throw MissingInputError(config.corpus_path(), "corpus yields no labeled pairs");
  spdlog::info("training on {} pairs for {} epochs", pairs.size(), config.rm.optimizer.epochs);
  const auto result = train(std::move(params), pairs, config.rm.optimizer, config.loss, config.seed);

  fs::create_directories(config.rm_checkpoint_path().parent_path().empty() ? fs::path(".")
                                                                            : config.rm_checkpoint_path().parent_path());
  save_checkpoint(result.params, config.rm_checkpoint_path());
  auto csv = open_output(config.out / "rm_accuracy.csv");
  write_accuracy_csv(csv, result.log);

  out << "pairs: " << pairs.size() << '\n';
  out << "test kernels:";
  for (const auto& k : result.test_kernels) out << ' ' << k;
  out << '\n';
  if (!result.log.empty()) {
    const auto& last = result.log.back();
    out << "final test accuracy: dominance " << format_double(last.test_acc_dom) << ", latency "
        << format_double(last.test_acc_lat) << '\n';
  }
  out << "checkpoint: " << config.rm_checkpoint_path().string() << '\n';
}

void cmd_grpo(const RunConfig& config, std::ostream& out) {
  const auto kernels = load_kernels(config.kernels);
  if (!fs::exists(config.rm_checkpoint_path()))
    throw MissingInputError(config.rm_checkpoint_path(), "reward-model checkpoint not found");
  auto params = load_checkpoint(config.rm_checkpoint_path());
  const auto backend = make_backend(config.backend, config.cost_seconds);

  UncertaintyConfig ucfg = config.uncertainty;
  if (config.tau_quantile) {
    const auto corpora = load_corpus(config, kernels);
    std::vector<TokenizedDesign> designs;
    for (const auto& c : corpora)
      for (const auto& e : c.entries) designs.push_back(tokenize(e.design.rendered_code, params.tokenizer));
    ucfg.tau_u = calibrate_tau(params, designs, *config.tau_quantile, ucfg.m_passes, config.seed);
    if (!(ucfg.tau_u > 0.0)) throw ValidationError("uncertainty.tau_quantile", "calibrated threshold is not positive");
    out << "tau_u (calibrated at quantile " << format_double(*config.tau_quantile)
        << "): " << format_double(ucfg.tau_u) << '\n';
  }

  RewardRouter router(std::move(params), *backend, ucfg, config.loss);
  const auto run = run_training(kernels, *backend, router, config.grpo, config.reward, config.seed);

  const fs::path tdir = config.telemetry_path();
  {
    auto f = open_output(tdir / "grpo.csv");
    write_training_csv(f, run.rows);
  }
  {
    auto f = open_output(tdir / "router.csv");
    router.telemetry().write_csv(f);
  }
  {
    auto f = open_output(config.out / "replay.jsonl");
    router.buffer().save_jsonl(f);
  }
  save_policy(run.policy, config.out / "policy.json");
  save_checkpoint(router.model(), config.out / "rm_online.json");

  const auto cost = make_cost_report(router.telemetry().synth_calls, run.candidates_generated, backend->cost_model_seconds());
  {
    auto f = open_output(config.out / "cost_report.txt");
    write_cost_report(f, cost);
  }

  out << "steps: " << run.rows.size() << ", candidates: " << run.candidates_generated
      << ", online updates: " << run.online_updates << '\n';
  out << "synthesis calls: " << cost.synth_calls << '\n';
  out << "cost: proxy path " << format_double(cost.proxy_seconds) << " s vs all-real " << format_double(cost.all_real_seconds)
      << " s (ratio " << fixed(cost.ratio()) << ")\n";
  out << "telemetry: " << tdir.string() << '\n';
}

void cmd_report(const RunConfig& config, std::ostream& out) {
  const fs::path tdir = config.telemetry_path();
  std::vector<TrainingRow> rows;
  {
    auto in = open_input(tdir / "grpo.csv", "training telemetry");
    rows = read_training_csv(in);
  }
  RouterTelemetry router;
  {
    auto in = open_input(tdir / "router.csv", "router telemetry");
    router = RouterTelemetry::read_csv(in);
  }
  if (rows.empty() || router.rows.empty()) throw MissingInputError(tdir, "telemetry has no rows");

  const std::size_t n = rows.size();
  const std::size_t window = std::max<std::size_t>(1, n / 10);
  const auto triggers = trigger_rate_report(router, window, config.cost_seconds);

  const fs::path rdir = config.out / "report";
  std::ostringstream text;
  {
    auto f = open_output(rdir / "trigger_windows.csv");
    f << "window,first_step,last_step,trigger_rate\n";
    text << "trigger rate by window (" << window << " steps):\n";
    for (std::size_t w = 0; w < triggers.windows.size(); ++w) {
      const auto& tw = triggers.windows[w];
      f << w << ',' << tw.first_step << ',' << tw.last_step << ',' << format_double(tw.trigger_rate) << '\n';
      text << "  steps " << tw.first_step << '-' << tw.last_step << ": " << fixed(tw.trigger_rate) << '\n';
    }
  }
  const double first = mean_of(rows, 0, window);
  const double last = mean_of(rows, n - window, n);
  {
    auto f = open_output(rdir / "rq_trend.csv");
    f << "segment,first_step,last_step,mean_r_q\n";
    f << "first," << rows[0].step << ',' << rows[window - 1].step << ',' << format_double(first) << '\n';
    f << "last," << rows[n - window].step << ',' << rows[n - 1].step << ',' << format_double(last) << '\n';
  }
  char delta[64];
  std::snprintf(delta, sizeof delta, "%+.4f", last - first);
  text << "mean r_q: first " << window << " steps " << fixed(first) << ", last " << window << " steps " << fixed(last)
       << '\n';
  text << "r_q trend: " << delta << '\n';
  text << "synthesis calls: " << triggers.synth_calls << " (" << format_double(triggers.synth_seconds)
       << " simulated seconds)\n";

  const fs::path acc = config.out / "rm_accuracy.csv";
  if (fs::exists(acc)) {
    std::ifstream in(acc);
    std::string line, last_line;
    std::getline(in, line);
    while (std::getline(in, line))
      if (!line.empty()) last_line = line;
    if (!last_line.empty()) {
      std::vector<std::string> cells;
      std::stringstream ss(last_line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (cells.size() == 6)
        text << "reward model (epoch " << cells[0] << "): test dominance accuracy " << fixed(std::stod(cells[2]))
             << ", test latency accuracy " << fixed(std::stod(cells[4])) << '\n';
    }
  }
  auto f = open_output(rdir / "summary.txt");
  f << text.str();
  out << text.str();
}

namespace {

void configure_logging() {
  static bool done = false;
  if (done) return;
  done = true;
  auto logger = spdlog::stderr_logger_st("qorseek");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("QORSEEK_LOG");
  const std::string level = env ? env : "info";
  if (level == "error")
    spdlog::set_level(spdlog::level::err);
  else if (level == "debug")
    spdlog::set_level(spdlog::level::debug);
  else
    spdlog::set_level(spdlog::level::info);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  configure_logging();
  CLI::App app{"qorseek: pragma design-space exploration, comparative reward modelling and GRPO simulation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> kernels, out_dir;
  std::optional<std::size_t> budget, steps;
  std::optional<int> epochs;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "key = value configuration file");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--kernels", kernels, "glob of kernel descriptor files");
  app.add_option("--budget", budget, "DSE evaluations per kernel");
  app.add_option("--epochs", epochs, "reward-model training epochs");
  app.add_option("--steps", steps, "GRPO steps");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--set", sets, "extra key=value override (repeatable)");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"dse", "run Bayesian DSE per kernel and write the corpus"},
      {"pairs", "label ordered design pairs from the corpus"},
      {"train-rm", "train the comparative reward model"},
      {"grpo", "run simulated GRPO with the reward router"},
      {"report", "summarize GRPO telemetry"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int rc = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig config;
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw MissingInputError(config_path, "config file not found");
      load_run_config(config_path, config);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ValidationError(s, "--set expects key=value");
      config.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed) config.seed = *seed;
    if (kernels) config.kernels = *kernels;
    if (budget) config.dse_budget = *budget;
    if (epochs) config.rm.optimizer.epochs = *epochs;
    if (steps) config.grpo.steps = *steps;
    if (out_dir) config.out = *out_dir;
    config.validate();

    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "dse") cmd_dse(config, out);
    else if (name == "pairs") cmd_pairs(config, out);
    else if (name == "train-rm") cmd_train_rm(config, out);
    else if (name == "grpo") cmd_grpo(config, out);
    else cmd_report(config, out);
    return kExitOk;
  } catch (const MissingInputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitMissingInput;
  } catch (const ValidationError& e) {
    err << "error: invalid configuration: " << e.what() << '\n';
    return kExitInvalidConfig;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalidConfig;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace qorseek
