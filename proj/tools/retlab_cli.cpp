// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// retlab command-line entry point.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error,
// 3 training diverged.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "retlab/bench.hpp"
#include "retlab/circuit.hpp"
#include "retlab/config_io.hpp"
#include "retlab/flow.hpp"
#include "retlab/io.hpp"
#include "retlab/plot.hpp"
#include "retlab/train.hpp"

#ifndef RETLAB_VERSION
#define RETLAB_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace retlab;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string g_command_line;

void write_manifest(const fs::path& dir, const std::string& command, const json& config) {
  json m{{"command", command},
         {"argv", g_command_line},
         {"config", config},
         {"config_hash", config_hash(config)},
         {"seed", config.contains("seed") ? config["seed"] : json(nullptr)},
         {"version", RETLAB_VERSION}};
  write_json_file(dir / "manifest.json", m);
}

// Layers a --config file and then explicit flag values over `base`.
json layered_config(json base, const std::string& config_path, const json& overrides) {
  if (!config_path.empty()) merge_json(base, read_json_file(config_path));
  merge_json(base, overrides);
  return base;
}

uint64_t require_seed(const json& config, const char* command) {
  if (!config.contains("seed") || config["seed"].is_null()) {
    throw UsageError(std::string(command) + ": --seed is required (flag or config file)");
  }
  return config["seed"].get<uint64_t>();
}

// Flags shared by gen/train/sweep that describe the task and model.
struct TaskFlags {
  std::optional<int> chain_steps, chains, embed_dim;
  std::optional<bool> ic;
  std::optional<std::string> pair_order, positions;

  void add(CLI::App* app) {
    app->add_option("--chain-steps", chain_steps, "retrieval depth D");
    app->add_option("--chains", chains, "interleaved chains N");
    app->add_option("--embed-dim", embed_dim, "token embedding width K");
    app->add_flag("--ic,!--no-ic", ic, "supervise every chain position (implicit curriculum)");
    app->add_option("--pair-order", pair_order, "ascending or descending");
    app->add_option("--positions", positions, "per_token or per_pair");
  }
  json task_patch() const {
    json t = json::object();
    if (chain_steps) t["steps"] = *chain_steps;
    if (chains) t["n_chains"] = *chains;
    if (embed_dim) t["embed_dim"] = *embed_dim;
    if (ic) t["ic"] = *ic;
    if (pair_order) t["pair_order"] = *pair_order;
    if (positions) t["positions"] = *positions;
    return t;
  }
};

struct RunFlags {
  TaskFlags task;
  std::optional<int> layers, heads, residual;
  std::optional<bool> mlp;
  std::optional<int64_t> train_steps, batch, train_examples, val_examples, val_every, checkpoint_every;
  std::optional<double> lr, weight_decay;
  std::optional<uint64_t> seed;

  void add(CLI::App* app, bool with_layers = true) {
    task.add(app);
    if (with_layers) app->add_option("--layers", layers, "transformer layers");
    app->add_option("--heads", heads, "attention heads per layer");
    app->add_option("--residual", residual, "residual stream width");
    app->add_flag("--mlp,!--no-mlp", mlp, "include MLP blocks");
    app->add_option("--train-steps", train_steps, "optimizer steps");
    app->add_option("--batch", batch, "batch size");
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--weight-decay", weight_decay, "decoupled weight decay");
    app->add_option("--train-examples", train_examples, "training corpus size");
    app->add_option("--val-examples", val_examples, "validation set size");
    app->add_option("--val-every", val_every, "steps between evaluations");
    app->add_option("--checkpoint-every", checkpoint_every, "epochs between checkpoints (0 = off)");
    app->add_option("--seed", seed, "master seed");
  }
  json patch() const {
    json j = json::object();
    if (auto t = task.task_patch(); !t.empty()) j["task"] = t;
    json m = json::object();
    if (layers) m["layers"] = *layers;
    if (heads) m["heads"] = *heads;
    if (residual) m["residual_dim"] = *residual;
    if (mlp) m["use_mlp"] = *mlp;
    if (!m.empty()) j["model"] = m;
    if (train_steps) j["steps"] = *train_steps;
    if (batch) j["batch_size"] = *batch;
    if (lr) j["lr"] = *lr;
    if (weight_decay) j["weight_decay"] = *weight_decay;
    if (train_examples) j["train_examples"] = *train_examples;
    if (val_examples) j["val_examples"] = *val_examples;
    if (val_every) j["val_every"] = *val_every;
    if (checkpoint_every) j["checkpoint_every"] = *checkpoint_every;
    if (seed) j["seed"] = *seed;
    return j;
  }
};

json run_defaults() {
  json j = RunConfig{};
  j["seed"] = nullptr;
  return j;
}

RunConfig parse_run(json j, const fs::path& out_dir) {
  RunConfig run = j.get<RunConfig>();
  if (run.checkpoint_every > 0 && run.checkpoint_dir.empty()) run.checkpoint_dir = out_dir / "checkpoints";
  run.resolve();
  return run;
}

Batch validation_batch(const TaskConfig& task, int64_t n) {
  if (n < 1) throw UsageError("--examples must be >= 1");
  const auto ex = gen_examples(task, streams::kValidation, 0, n);
  return stack_examples(ex);
}

// ---------------------------------------------------------------- commands

int cmd_gen(const std::string& config_path, const RunFlags& f, int64_t count, const fs::path& out) {
  json base{{"task", TaskConfig{}}, {"count", 1024}, {"seed", nullptr}};
  json patch = f.patch();
  patch.erase("model");
  json cfg = layered_config(base, config_path, patch);
  if (count > 0) cfg["count"] = count;
  const uint64_t seed = require_seed(cfg, "gen");
  TaskConfig task = cfg["task"].get<TaskConfig>();
  task.seed = seed;
  task.validate();
  const int64_t n = cfg["count"].get<int64_t>();
  if (n < 1) throw UsageError("gen: count must be >= 1");
  const auto examples = gen_examples(task, streams::kGen, 0, n);
  fs::create_directories(out);
  save_dataset(out / "dataset.rds", task, examples);
  write_manifest(out, "gen", cfg);
  std::cout << "wrote " << n << " examples to " << (out / "dataset.rds").string() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const RunFlags& f, const fs::path& out) {
  json cfg = layered_config(run_defaults(), config_path, f.patch());
  require_seed(cfg, "train");
  RunConfig run = parse_run(cfg, out);
  fs::create_directories(out);
  json resolved = run;
  write_manifest(out, "train", resolved);
  const int D = run.task.steps;
  const RunResult result = train(run, [&](const EvalRecord& e) {
    std::cout << "step " << e.step << " epoch " << e.epoch << " val " << e.val_loss;
    for (size_t j = 0; j < e.partial.size(); ++j) std::cout << " x" << j + 1 << "=" << e.partial[j];
    std::cout << "\n";
    return true;
  });
  write_metrics_csv(out / "metrics.csv", result.metrics, D);
  save_checkpoint(out / "final.ckpt", result.final_checkpoint);
  std::cout << "final validation MSE " << result.metrics.evals.back().val_loss << "\n";
  return 0;
}

std::vector<bool> parse_formulations(const std::vector<std::string>& names) {
  std::vector<bool> out;
  for (const auto& n : names) {
    if (n == "ic") {
      out.push_back(true);
    } else if (n == "non_ic" || n == "non-ic") {
      out.push_back(false);
    } else {
      throw UsageError("unknown formulation '" + n + "' (expected ic or non_ic)");
    }
  }
  return out;
}

int cmd_sweep(const std::string& config_path, const RunFlags& f, const std::vector<int>& layers,
              const std::vector<std::string>& forms, int n_seeds, std::optional<size_t> window, const fs::path& out) {
  json base = run_defaults();
  base["sweep"] = {{"layers", json::array({1, 2})}, {"formulations", json::array({"ic", "non_ic"})},
                   {"n_seeds", 1}, {"window", 100}};
  json patch = f.patch();
  if (!layers.empty()) patch["sweep"]["layers"] = layers;
  if (!forms.empty()) patch["sweep"]["formulations"] = forms;
  if (n_seeds > 0) patch["sweep"]["n_seeds"] = n_seeds;
  if (window) patch["sweep"]["window"] = *window;
  json cfg = layered_config(base, config_path, patch);
  const uint64_t seed = require_seed(cfg, "sweep");
  const json sw = cfg["sweep"];
  json run_json = cfg;
  run_json.erase("sweep");

  SweepConfig sc;
  sc.base = run_json.get<RunConfig>();
  sc.layers = sw.at("layers").get<std::vector<int>>();
  sc.formulations = parse_formulations(sw.at("formulations").get<std::vector<std::string>>());
  sc.seeds.clear();
  const int ns = sw.at("n_seeds").get<int>();
  if (ns < 1) throw UsageError("sweep: n_seeds must be >= 1");
  for (int i = 0; i < ns; ++i) sc.seeds.push_back(seed + static_cast<uint64_t>(i));
  sc.window = sw.at("window").get<size_t>();
  sc.out_dir = out;
  fs::create_directories(out);
  write_manifest(out, "sweep", cfg);
  const SweepReport report = sweep(sc);
  int failed = 0;
  for (const auto& c : report.cells) {
    std::cout << (c.ic ? "ic" : "non_ic") << " L=" << c.layers << " seed=" << c.seed;
    if (c.failed) {
      ++failed;
      std::cout << " FAILED: " << c.error << "\n";
    } else {
      std::cout << " final=" << c.final_loss << "\n";
    }
  }
  std::cout << "wrote " << (out / "sweep.csv").string() << "\n";
  return failed ? kExitRuntime : 0;
}

int cmd_analyze(const fs::path& ckpt_path, int64_t n_examples, int64_t per_example, bool svg, const fs::path& out) {
  const ModelCheckpoint ckpt = load_checkpoint(ckpt_path);
  const Batch batch = validation_batch(ckpt.task, n_examples);
  const double mse = evaluate_mse(ckpt.params, batch);
  MapExportOptions opt;
  opt.per_example_limit = per_example;
  opt.svg = svg;
  const auto files = export_attention_maps(ckpt.params, batch, out, opt);
  json cfg{{"checkpoint", ckpt_path.string()}, {"examples", n_examples}, {"per_example", per_example},
           {"svg", svg}, {"seed", ckpt.seed}};
  write_manifest(out, "analyze", cfg);
  std::cout << "validation MSE " << mse << " over " << n_examples << " examples; wrote " << files.size()
            << " files to " << out.string() << "\n";
  return 0;
}

int cmd_ablate(const fs::path& ckpt_path, const fs::path& circuit_path, int64_t n_examples, const fs::path& out) {
  const ModelCheckpoint ckpt = load_checkpoint(ckpt_path);
  const CircuitSpec circuit = load_circuit(circuit_path);
  const Batch batch = validation_batch(ckpt.task, n_examples);
  const CircuitReport r = validate_circuit(ckpt.params, circuit, batch, ckpt.task);
  fs::create_directories(out);
  write_circuit_report_csv(out / "ablation.csv", r);
  json cfg{{"checkpoint", ckpt_path.string()}, {"circuit", circuit}, {"examples", n_examples}, {"seed", ckpt.seed}};
  write_manifest(out, "ablate", cfg);
  std::printf("unablated %.6g\ncombined  %.6g (x%.3g)\n", r.unablated_mse, r.combined_mse,
              r.combined_mse / r.unablated_mse);
  for (size_t i = 0; i < r.path_ids.size(); ++i) {
    std::printf("knockout %-16s %.6g (x%.3g of combined)\n", r.path_ids[i].c_str(), r.knockout_mse[i],
                r.knockout_mse[i] / r.combined_mse);
  }
  return 0;
}

int cmd_emerge(const fs::path& dir, const fs::path& circuit_path, int64_t n_examples, const fs::path& out) {
  const CircuitSpec circuit = load_circuit(circuit_path);
  const EmergenceResult res = emergence_trace(dir, circuit, n_examples);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
  fs::create_directories(out);
  write_trace_csv(out / "trace.csv", res.traces);
  json cfg{{"checkpoints", dir.string()}, {"circuit", circuit}, {"examples", n_examples}};
  write_manifest(out, "emerge", cfg);
  for (const auto& t : res.traces) {
    const auto c = crossing_epoch(t);
    std::printf("%-16s hop %d final %.4f crossing %s\n", t.path_id.c_str(), t.hop,
                t.values.empty() ? 0.0 : t.values.back(), c ? std::to_string(*c).c_str() : "never");
  }
  return 0;
}

int cmd_flow(int64_t d_max, std::optional<int64_t> dump_d, std::optional<int64_t> dump_layers) {
  if (d_max < 1) throw UsageError("flow: --d-max must be >= 1");
  std::printf("%8s %10s %12s %12s\n", "D", "min_layers", "closed_form", "lower_bound");
  for (int64_t d = 1; d <= d_max; ++d) {
    std::printf("%8lld %10lld %12lld %12lld\n", static_cast<long long>(d), static_cast<long long>(flow::min_layers(d)),
                static_cast<long long>(flow::min_layers_closed_form(d)),
                static_cast<long long>(flow::depth_lower_bound(d)));
  }
  if (dump_d) {
    const int64_t t = dump_layers ? *dump_layers : flow::min_layers(*dump_d);
    const auto states = flow::trace(*dump_d, t);
    for (const auto& s : states) {
      std::printf("t=%lld", static_cast<long long>(s.t));
      for (const auto& iv : s.intervals) std::printf(" [%lld,%lld]", static_cast<long long>(iv.lo),
                                                     static_cast<long long>(iv.hi));
      std::printf("%s\n", flow::retrieved(s) ? "  retrieved" : "");
    }
  }
  return 0;
}

struct BenchFlags {
  std::vector<std::string> formulations;
  std::optional<int> steps, chains, max_attempts, concurrency;
  std::optional<int64_t> cases;
  std::optional<uint64_t> seed;
  std::string mock;
  std::optional<std::string> url, path, model, token_env;
  std::optional<double> timeout;
};

void write_bench_report(const fs::path& path, const std::vector<bench::FormulationReport>& reports) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "formulation,n_cases,n_skipped,accuracy,mean_attempts,random_baseline\n";
  for (const auto& r : reports) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%lld,%lld,%.17g,%.17g,%.17g\n", bench::formulation_name(r.formulation).c_str(),
                  static_cast<long long>(r.n_cases), static_cast<long long>(r.n_skipped), r.accuracy,
                  r.mean_attempts, r.random_baseline);
    out << buf;
  }
}

int cmd_bench(const std::string& config_path, const BenchFlags& f, const fs::path& out) {
  json base{{"seed", nullptr},
            {"formulations", json::array()},
            {"steps", 5},
            {"n_chains", 4},
            {"n_cases", 500},
            {"max_attempts", 8},
            {"concurrency", 4},
            {"mock", ""},
            {"provider", json::object()}};
  json patch = json::object();
  if (f.seed) patch["seed"] = *f.seed;
  if (!f.formulations.empty()) patch["formulations"] = f.formulations;
  if (f.steps) patch["steps"] = *f.steps;
  if (f.chains) patch["n_chains"] = *f.chains;
  if (f.cases) patch["n_cases"] = *f.cases;
  if (f.max_attempts) patch["max_attempts"] = *f.max_attempts;
  if (f.concurrency) patch["concurrency"] = *f.concurrency;
  if (!f.mock.empty()) patch["mock"] = f.mock;
  if (f.url) patch["provider"]["base_url"] = *f.url;
  if (f.path) patch["provider"]["path"] = *f.path;
  if (f.model) patch["provider"]["model"] = *f.model;
  if (f.token_env) patch["provider"]["token_env"] = *f.token_env;
  if (f.timeout) patch["provider"]["timeout_s"] = *f.timeout;
  json cfg = layered_config(base, config_path, patch);
  const uint64_t seed = require_seed(cfg, "bench");

  bench::RunOptions opt;
  opt.seed = seed;
  opt.steps = cfg["steps"].get<int>();
  opt.n_chains = cfg["n_chains"].get<int>();
  opt.n_cases = cfg["n_cases"].get<int64_t>();
  opt.max_attempts = cfg["max_attempts"].get<int>();
  opt.concurrency = cfg["concurrency"].get<int>();
  if (opt.n_cases < 1 || opt.max_attempts < 1 || opt.concurrency < 1) {
    throw UsageError("bench: n_cases, max_attempts and concurrency must be >= 1");
  }

  std::unique_ptr<bench::ChatClient> client;
  const std::string mock = cfg["mock"].get<std::string>();
  const json& prov = cfg["provider"];
  if (!mock.empty()) {
    client = std::make_unique<bench::MockClient>(bench::parse_mock_mode(mock), seed);
  } else if (prov.contains("model")) {
    bench::ProviderConfig pc;
    if (prov.contains("base_url")) pc.base_url = prov["base_url"].get<std::string>();
    if (prov.contains("path")) pc.path = prov["path"].get<std::string>();
    pc.model = prov["model"].get<std::string>();
    if (prov.contains("token_env")) pc.token_env = prov["token_env"].get<std::string>();
    if (prov.contains("timeout_s")) pc.timeout_s = prov["timeout_s"].get<double>();
    if (prov.contains("options")) pc.options = prov["options"];
    pc.max_attempts = opt.max_attempts;
    client = std::make_unique<bench::HttpChatClient>(pc);
  } else {
    throw UsageError("bench: pass --mock MODE or a provider --model");
  }

  std::vector<bench::Formulation> forms;
  for (const auto& n : cfg["formulations"]) forms.push_back(bench::parse_formulation(n.get<std::string>()));
  if (forms.empty()) forms.assign(std::begin(bench::kAllFormulations), std::end(bench::kAllFormulations));

  fs::create_directories(out);
  write_manifest(out, "bench", cfg);
  std::vector<bench::FormulationReport> reports;
  int64_t skipped = 0;
  for (auto form : forms) {
    const auto res = bench::run_benchmark(*client, form, opt);
    bench::write_transcripts(out / ("transcripts_" + bench::formulation_name(form) + ".jsonl"), res.records);
    reports.push_back(res.report);
    skipped += res.report.n_skipped;
    std::printf("%-10s accuracy %.4f  random %.4f  attempts %.2f  skipped %lld\n",
                bench::formulation_name(form).c_str(), res.report.accuracy, res.report.random_baseline,
                res.report.mean_attempts, static_cast<long long>(res.report.n_skipped));
  }
  write_bench_report(out / "report.csv", reports);
  return skipped ? kExitRuntime : 0;
}

int cmd_plot(const std::string& kind, const std::vector<std::string>& inputs, const fs::path& stem) {
  std::vector<fs::path> paths(inputs.begin(), inputs.end());
  const auto files = emit_plots(parse_plot_kind(kind), paths, stem);
  for (const auto& p : files) std::cout << "wrote " << p.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) g_command_line += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"retlab: retrieval-chain transformer lab"};
  app.set_version_flag("--version", RETLAB_VERSION);
  app.require_subcommand(1);
  std::string config_path;
  std::string out = "out";

  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("--config", config_path, "JSON config; flags override its values")
                         ->check(CLI::ExistingFile);
    sub->add_option("--out,-o", out, "output directory")->capture_default_str();
  };

  RunFlags gen_flags;
  int64_t gen_count = 0;
  auto* gen = app.add_subcommand("gen", "generate a dataset file");
  gen_flags.task.add(gen);
  gen->add_option("--seed", gen_flags.seed, "master seed");
  gen->add_option("--count", gen_count, "number of examples");
  add_common(gen, true);

  RunFlags train_flags;
  auto* trn = app.add_subcommand("train", "train one model and write metrics and checkpoints");
  train_flags.add(trn);
  add_common(trn, true);

  RunFlags sweep_flags;
  std::vector<int> sweep_layers;
  std::vector<std::string> sweep_forms;
  int sweep_seeds = 0;
  std::optional<size_t> sweep_window;
  auto* swp = app.add_subcommand("sweep", "train a grid over formulation, layer count and seed");
  sweep_flags.add(swp, false);
  swp->add_option("--layers", sweep_layers, "layer counts")->delimiter(',');
  swp->add_option("--formulations", sweep_forms, "ic and/or non_ic")->delimiter(',');
  swp->add_option("--n-seeds", sweep_seeds, "seeds per cell, counting up from --seed");
  swp->add_option("--window", sweep_window, "evaluations averaged into the final loss");
  add_common(swp, true);

  std::string ckpt;
  int64_t n_examples = 0;
  int64_t per_example = 4;
  bool no_svg = false;
  auto* ana = app.add_subcommand("analyze", "export attention maps of a checkpoint");
  ana->add_option("--checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  ana->add_option("--examples", n_examples, "validation examples")->default_val(64);
  ana->add_option("--per-example", per_example, "per-example maps to write")->capture_default_str();
  ana->add_flag("--no-svg", no_svg, "CSV only");
  add_common(ana, false);

  std::string circuit;
  auto* abl = app.add_subcommand("ablate", "validate a circuit hypothesis by attention replacement");
  abl->add_option("--checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  abl->add_option("--circuit", circuit, "circuit JSON")->required()->check(CLI::ExistingFile);
  abl->add_option("--examples", n_examples, "validation examples")->default_val(512);
  add_common(abl, false);

  std::string ckpt_dir;
  auto* emg = app.add_subcommand("emerge", "trace circuit-path attention across checkpoints");
  emg->add_option("--checkpoints", ckpt_dir, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  emg->add_option("--circuit", circuit, "circuit JSON")->required()->check(CLI::ExistingFile);
  emg->add_option("--examples", n_examples, "validation examples")->default_val(32);
  add_common(emg, false);

  int64_t d_max = 0;
  std::optional<int64_t> dump_d, dump_layers;
  auto* flw = app.add_subcommand("flow", "maximal information-flow layer counts");
  flw->add_option("--d-max", d_max, "largest chain depth in the table")->required();
  flw->add_option("--dump", dump_d, "print the interval trace for this depth");
  flw->add_option("--dump-layers", dump_layers, "layers to trace (default: min_layers)");

  BenchFlags bf;
  auto* bch = app.add_subcommand("bench", "natural-language retrieval benchmark");
  bch->add_option("--seed", bf.seed, "master seed");
  bch->add_option("--formulation", bf.formulations, "equations, lives_with, kingdoms, functions, relatives")
      ->delimiter(',');
  bch->add_option("--steps", bf.steps, "chain depth");
  bch->add_option("--chains", bf.chains, "chains per prompt");
  bch->add_option("--cases", bf.cases, "cases per formulation");
  bch->add_option("--max-attempts", bf.max_attempts, "resampling budget");
  bch->add_option("--concurrency", bf.concurrency, "parallel requests");
  bch->add_option("--mock", bf.mock, "offline client: uniform, correct or garbage");
  bch->add_option("--base-url", bf.url, "provider base URL");
  bch->add_option("--api-path", bf.path, "chat completions path");
  bch->add_option("--model", bf.model, "provider model name");
  bch->add_option("--token-env", bf.token_env, "environment variable holding the API token");
  bch->add_option("--timeout", bf.timeout, "request timeout in seconds");
  add_common(bch, true);

  std::string plot_kind;
  std::vector<std::string> plot_inputs;
  std::string plot_stem;
  auto* plt = app.add_subcommand("plot", "render SVG charts (and their data CSV) from tool outputs");
  plt->add_option("--kind", plot_kind, "loss, partial, layers, emergence or accuracy")->required();
  plt->add_option("inputs", plot_inputs, "input CSV files")->required()->check(CLI::ExistingFile);
  plt->add_option("--out,-o", plot_stem, "output stem (writes <stem>.svg and <stem>.csv)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen(config_path, gen_flags, gen_count, out);
    if (*trn) return cmd_train(config_path, train_flags, out);
    if (*swp) return cmd_sweep(config_path, sweep_flags, sweep_layers, sweep_forms, sweep_seeds, sweep_window, out);
    if (*ana) return cmd_analyze(ckpt, n_examples, per_example, !no_svg, out);
    if (*abl) return cmd_ablate(ckpt, circuit, n_examples, out);
    if (*emg) return cmd_emerge(ckpt_dir, circuit, n_examples, out);
    if (*flw) return cmd_flow(d_max, dump_d, dump_layers);
    if (*bch) return cmd_bench(config_path, bf, out);
    if (*plt) return cmd_plot(plot_kind, plot_inputs, plot_stem);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
