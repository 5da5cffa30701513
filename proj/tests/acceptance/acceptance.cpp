// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance suite. Each criterion prints one PASS/FAIL line;
// the exit code is nonzero when any selected criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "retlab/bench.hpp"
#include "retlab/circuit.hpp"
#include "retlab/flow.hpp"
#include "retlab/model.hpp"
#include "retlab/train.hpp"

namespace fs = std::filesystem;
using namespace retlab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void log(const std::string& msg) {
  std::fprintf(stderr, "  %s\n", msg.c_str());
  std::fflush(stderr);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int64_t pow3(int64_t t) {
  int64_t p = 1;
  while (t-- > 0) p *= 3;
  return p;
}

// 1. Flow model.
Outcome flow_exactness() {
  const auto t0 = Clock::now();
  for (int64_t d = 1; d <= 500; ++d) {
    const int64_t m = flow::min_layers(d);
    if (m != flow::min_layers_closed_form(d)) return {false, "min_layers differs from closed form at D=" + std::to_string(d)};
    flow::FlowState s = flow::initial_state(d);
    for (int64_t t = 0; t <= m; ++t) {
      for (const auto& iv : s.intervals) {
        if (iv.length() > pow3(t) + 1) return {false, "interval longer than 3^t+1 at D=" + std::to_string(d)};
      }
      s = flow::step(s);
    }
  }
  for (int64_t d = 1; d <= 1000000; ++d) {
    if (flow::min_layers_closed_form(d) < flow::depth_lower_bound(d)) {
      return {false, "closed form below ceil(log3(2D)) at D=" + std::to_string(d)};
    }
  }
  const double secs = seconds_since(t0);
  return {secs < 5.0, "D<=500 exact, D<=1e6 bounded, " + fmt("%.2f s", secs) + " (limit 5 s)"};
}

// 2. Full-model gradient check.
Outcome autograd_soundness() {
  const auto t0 = Clock::now();
  TaskConfig task;
  task.n_chains = 2;
  task.steps = 1;
  task.seed = 5;
  ModelConfig model;
  model.layers = 2;
  model.heads = 1;
  model.residual_dim = 8;
  model.input_dim = task.input_dim();
  model.output_dim = task.target_dim();
  Rng rng(derive_seed(5, streams::kInit, 0));
  const ModelParams params = init_model(model, rng);
  const ModelParams64 p64 = params.cast<double>();
  const Batch b = stack_examples(gen_examples(task, streams::kTrain, 0, 2));
  const auto r = grad_check_model(p64, b.inputs.cast<double>(), b.targets.cast<double>(), b.size, b.seq_len, b.n_query);
  const double secs = seconds_since(t0);
  return {r.max_rel_error < 1e-4 && secs < 10.0 && b.seq_len == 6,
          "L=" + std::to_string(b.seq_len) + ", " + std::to_string(r.analytic.size()) + " params, max rel error " +
              fmt("%.3g", r.max_rel_error) + ", " + fmt("%.2f s", secs)};
}

RunConfig base_run(int chain_steps, int chains, bool ic, int layers, int heads, uint64_t seed) {
  RunConfig r;
  r.task.steps = chain_steps;
  r.task.n_chains = chains;
  r.task.ic = ic;
  r.model.layers = layers;
  r.model.heads = heads;
  r.model.residual_dim = 64;
  r.batch_size = 64;
  r.lr = 3e-3;
  r.val_every = 50;
  r.seed = seed;
  return r;
}

RunResult run_logged(const RunConfig& r, const std::string& name) {
  const auto t0 = Clock::now();
  RunResult res = train(r);
  const auto& last = res.metrics.evals.back();
  log(name + ": " + std::to_string(last.step) + " steps, final val " + fmt("%.4f", last.val_loss) + ", " +
      fmt("%.0f s", seconds_since(t0)));
  return res;
}

// 3. Induction baseline and its depth requirement. One attention head per
// layer and no MLP, so information can only move by attention routing.
Outcome induction_baseline() {
  RunConfig r = base_run(1, 2, true, 2, 1, 1);
  r.model.use_mlp = false;
  r.steps = 2000;
  r.train_examples = 16384;
  const RunResult two = run_logged(r, "D=1 two layers");
  r.model.layers = 1;
  const RunResult one = run_logged(r, "D=1 one layer");
  const double final_two = two.metrics.evals.back().val_loss;
  double min_one = std::numeric_limits<double>::infinity();
  for (size_t i = 1; i < one.metrics.evals.size(); ++i) min_one = std::min(min_one, one.metrics.evals[i].val_loss);
  return {final_two < 0.1 && min_one > 0.4,
          "2 layers final val " + fmt("%.4f", final_two) + " (< 0.1), 1 layer min val " + fmt("%.4f", min_one) +
              " (> 0.4)"};
}

std::string crossing_str(const std::vector<std::optional<int64_t>>& c) {
  std::string s = "[";
  for (size_t j = 0; j < c.size(); ++j) {
    if (j) s += ",";
    s += c[j] ? std::to_string(*c[j]) : "never";
  }
  return s + "]";
}

struct CurriculumRuns {
  std::vector<RunResult> ic;
  std::vector<RunResult> non_ic;
};

CurriculumRuns curriculum_runs() {
  CurriculumRuns out;
  for (uint64_t seed : {1, 2, 3}) {
    RunConfig r = base_run(3, 4, true, 4, 4, seed);
    r.steps = 2000;
    r.train_examples = 65536;
    out.ic.push_back(run_logged(r, "D=3 IC seed " + std::to_string(seed)));
  }
  for (uint64_t seed : {1, 2}) {
    RunConfig r = base_run(3, 4, false, 4, 4, seed);
    r.steps = 2000;
    r.train_examples = 65536;
    out.non_ic.push_back(run_logged(r, "D=3 non-IC seed " + std::to_string(seed)));
  }
  return out;
}

// 4. IC versus non-IC at a matched budget.
Outcome curriculum_contrast(const CurriculumRuns& runs) {
  bool pass = true;
  std::string detail = "IC min x1 partial:";
  for (const auto& res : runs.ic) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : res.metrics.evals) best = std::min(best, e.partial.at(0));
    pass = pass && best < 0.5;
    detail += " " + fmt("%.3f", best);
  }
  detail += "; non-IC min val:";
  for (const auto& res : runs.non_ic) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : res.metrics.evals) best = std::min(best, e.val_loss);
    pass = pass && best > 0.5;
    detail += " " + fmt("%.3f", best);
  }
  return {pass, detail};
}

// 5. Partial losses cross 0.5 in chain order. A position that never crosses
// within the budget counts as crossing at infinity.
Outcome curriculum_ordering(const CurriculumRuns& runs) {
  bool pass = runs.ic.size() >= 3;
  std::string detail = "first step below 0.5 per x_j:";
  for (const auto& res : runs.ic) {
    const auto c = partial_crossing_steps(res.metrics, 0.5);
    int64_t prev = -1;
    for (const auto& s : c) {
      const int64_t v = s ? *s : std::numeric_limits<int64_t>::max();
      pass = pass && v >= prev;
      prev = v;
    }
    pass = pass && c.at(0).has_value();
    detail += " " + crossing_str(c);
  }
  return {pass, detail};
}

struct CircuitRun {
  RunResult result;
  TaskConfig task;
  fs::path checkpoints;
};

CircuitRun circuit_run(const fs::path& work) {
  RunConfig r = base_run(2, 4, true, 3, 1, 1);
  r.val_every = 100;
  r.steps = 3000;
  r.train_examples = 16384;
  r.checkpoint_every = 1;
  r.checkpoint_dir = work / "circuit_run" / "checkpoints";
  fs::remove_all(r.checkpoint_dir);
  CircuitRun out;
  out.result = run_logged(r, "D=2 IC circuit model");
  out.task = out.result.final_checkpoint.task;
  out.checkpoints = r.checkpoint_dir;
  return out;
}

// 6. Ablation ratios of the hand-authored circuit.
Outcome ablation_protocol(const CircuitRun& run, const CircuitSpec& circuit) {
  const Batch val = stack_examples(gen_examples(run.task, streams::kValidation, 0, 512));
  const CircuitReport rep = validate_circuit(run.result.final_checkpoint.params, circuit, val, run.task);
  bool pass = rep.combined_mse <= 2.0 * rep.unablated_mse;
  std::string detail = "unablated " + fmt("%.4f", rep.unablated_mse) + ", combined " + fmt("%.4f", rep.combined_mse) +
                       " (<= 2x), knockouts";
  for (size_t i = 0; i < rep.knockout_mse.size(); ++i) {
    const double ratio = rep.knockout_mse[i] / rep.combined_mse;
    pass = pass && ratio >= 3.0;
    detail += " " + rep.path_ids[i] + "=" + fmt("%.1fx", ratio);
  }
  return {pass && !rep.knockout_mse.empty(), detail + " (>= 3x)"};
}

// 7. Crossing-epoch interpolation and emergence order on the trained model.
Outcome emergence(const CircuitRun& run, const CircuitSpec& circuit) {
  const std::vector<double> ep{90, 100, 110, 120}, val{0.2, 0.4, 0.6, 0.9};
  const auto synthetic = crossing_epoch(ep, val);
  bool pass = synthetic.has_value() && *synthetic == 105.0;
  std::string detail = "synthetic " + (synthetic ? fmt("%.6g", *synthetic) : std::string("none")) + " (105)";

  const EmergenceResult em = emergence_trace(run.checkpoints, circuit, 64);
  pass = pass && em.warnings.empty() && !em.traces.empty();
  int max_hop = 0;
  for (const auto& t : em.traces) max_hop = std::max(max_hop, t.hop);
  std::vector<double> latest(static_cast<size_t>(max_hop + 1), -1.0);
  std::vector<double> earliest(static_cast<size_t>(max_hop + 1), std::numeric_limits<double>::infinity());
  for (const auto& t : em.traces) {
    const auto c = crossing_epoch(t);
    const double end = t.values.back();
    pass = pass && end > 0.5 && c.has_value();
    const double e = c ? *c : std::numeric_limits<double>::infinity();
    latest[static_cast<size_t>(t.hop)] = std::max(latest[static_cast<size_t>(t.hop)], e);
    earliest[static_cast<size_t>(t.hop)] = std::min(earliest[static_cast<size_t>(t.hop)], e);
    detail += "; " + t.path_id + " end " + fmt("%.3f", end) + " crosses " + (c ? fmt("%.2f", *c) : std::string("never"));
  }
  for (int h = 1; h < max_hop; ++h) {
    if (earliest[static_cast<size_t>(h + 1)] < latest[static_cast<size_t>(h)]) pass = false;
  }
  return {pass, detail};
}

// 8. Benchmark generators, mock baseline and reference transcripts.
Outcome benchmark(const fs::path& data_dir) {
  using namespace retlab::bench;
  bool pass = true;
  std::string detail;
  for (Formulation f : kAllFormulations) {
    RunOptions o;
    o.n_cases = 500;
    o.seed = 2026;
    MockClient uniform(MockMode::Uniform, 2026);
    const BenchResult r = run_benchmark(uniform, f, o);
    int solved = 0;
    for (const auto& rec : r.records) {
      try {
        solved += solve_case(rec.pcase) == rec.pcase.correct;
      } catch (const SolveError&) {
      }
    }
    const double p = r.report.random_baseline;
    const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(o.n_cases));
    const bool ok = solved == 500 && std::abs(r.report.accuracy - p) <= 3.0 * sigma;
    pass = pass && ok;
    detail += formulation_name(f) + " solved " + std::to_string(solved) + "/500 acc " + fmt("%.3f", r.report.accuracy) +
              " vs " + fmt("%.3f", p) + "; ";
  }
  int graded = 0;
  for (const char* name : {"equations", "lives_with", "kingdoms", "functions", "relatives"}) {
    const fs::path txt = data_dir / "transcripts" / (std::string(name) + ".txt");
    const fs::path ans = data_dir / "transcripts" / (std::string(name) + ".answer");
    std::istringstream lines(slurp(ans));
    std::string correct, acceptable;
    std::getline(lines, correct);
    std::getline(lines, acceptable);
    PromptCase c;
    c.formulation = parse_formulation(name);
    c.prompt = slurp(txt);
    c.correct = correct;
    std::istringstream items(acceptable);
    for (std::string item; std::getline(items, item, ',');) c.acceptable.push_back(normalize_answer(item));
    std::string solved;
    try {
      solved = solve_case(c);
    } catch (const SolveError& e) {
      log(std::string(name) + ": " + e.what());
    }
    if (solved == correct && grade(c, solved) == Grade::Correct) ++graded;
  }
  pass = pass && graded == 5;
  return {pass, detail + "transcripts graded correct " + std::to_string(graded) + "/5"};
}

int run_cli(const fs::path& cli, const std::vector<std::string>& args, const fs::path& log_file) {
  std::string cmd = "\"" + cli.string() + "\"";
  for (const auto& a : args) cmd += " \"" + a + "\"";
  cmd += " > \"" + log_file.string() + "\" 2>&1";
  return std::system(cmd.c_str());
}

// Every regular file except the manifest (which records its own argv).
std::vector<fs::path> outputs_of(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") out.push_back(fs::relative(e.path(), dir));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// 9. Seeded subcommands reproduce their outputs byte for byte.
Outcome determinism(const fs::path& cli, const fs::path& work) {
  const std::vector<std::pair<std::string, std::vector<std::string>>> commands = {
      {"gen", {"gen", "--chain-steps", "3", "--chains", "4", "--ic", "--seed", "9", "--count", "64"}},
      {"train",
       {"train", "--chain-steps", "2", "--chains", "2", "--ic", "--layers", "2", "--heads", "2", "--residual", "16",
        "--train-steps", "40", "--batch", "16", "--train-examples", "64", "--val-examples", "64", "--val-every", "10",
        "--checkpoint-every", "1", "--seed", "9"}},
      {"sweep",
       {"sweep", "--chain-steps", "1", "--chains", "2", "--layers", "1,2", "--formulations", "ic,non_ic", "--n-seeds",
        "2", "--residual", "16", "--train-steps", "12", "--batch", "8", "--train-examples", "32", "--val-examples",
        "32", "--val-every", "1", "--window", "5", "--seed", "9"}},
      {"bench", {"bench", "--mock", "uniform", "--cases", "50", "--seed", "9", "--concurrency", "3"}},
  };
  bool pass = true;
  std::string detail;
  for (const auto& [name, args] : commands) {
    std::vector<std::vector<fs::path>> listings;
    std::vector<fs::path> dirs;
    bool ok = true;
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path dir = work / "determinism" / (name + "_" + std::to_string(rep));
      fs::remove_all(dir);
      fs::create_directories(dir);
      auto full = args;
      full.push_back("-o");
      full.push_back(dir.string());
      if (run_cli(cli, full, dir.parent_path() / (name + "_" + std::to_string(rep) + ".log")) != 0) ok = false;
      listings.push_back(outputs_of(dir));
      dirs.push_back(dir);
    }
    ok = ok && !listings[0].empty() && listings[0] == listings[1];
    if (ok) {
      for (const auto& rel : listings[0]) ok = ok && slurp(dirs[0] / rel) == slurp(dirs[1] / rel);
    }
    pass = pass && ok;
    detail += name + " " + (ok ? "identical" : "DIFFERS") + " (" + std::to_string(listings[0].size()) + " files); ";
  }
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"retlab acceptance suite"};
  std::vector<int> selected{1, 2, 3, 4, 5, 6, 7, 8, 9};
  fs::path work = fs::temp_directory_path() / "retlab_acceptance";
  fs::path data_dir = RETLAB_TEST_DATA;
  fs::path circuit_path = RETLAB_CIRCUIT;
  fs::path cli = RETLAB_CLI;
  app.add_option("-c,--criteria", selected, "criteria to run (default all)")->delimiter(',')->check(CLI::Range(1, 9));
  app.add_option("--work", work, "scratch directory for runs and checkpoints");
  app.add_option("--data", data_dir, "test data directory (transcripts)");
  app.add_option("--circuit", circuit_path, "circuit spec for criteria 6 and 7");
  app.add_option("--cli", cli, "path of the retlab executable");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> want(selected.begin(), selected.end());
  fs::create_directories(work);
  const char* names[] = {"",
                         "flow model exactness",
                         "autograd soundness",
                         "induction baseline",
                         "implicit-curriculum contrast",
                         "curriculum ordering",
                         "ablation protocol",
                         "emergence tracker",
                         "benchmark generators",
                         "determinism"};

  int failures = 0;
  auto report = [&](int id, const std::function<Outcome()>& fn) {
    if (!want.count(id)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %d %s: %s  [%s] (%.0f s)\n", id, names[id], o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  };

  report(1, flow_exactness);
  report(2, autograd_soundness);
  report(3, induction_baseline);
  if (want.count(4) || want.count(5)) {
    CurriculumRuns runs;
    std::string error;
    try {
      runs = curriculum_runs();
    } catch (const std::exception& e) {
      error = e.what();
    }
    auto guarded = [&](auto fn) {
      return [&, fn]() -> Outcome {
        if (!error.empty()) return {false, "training failed: " + error};
        return fn(runs);
      };
    };
    report(4, guarded(curriculum_contrast));
    report(5, guarded(curriculum_ordering));
  }
  if (want.count(6) || want.count(7)) {
    std::optional<CircuitRun> run;
    CircuitSpec circuit;
    std::string error;
    try {
      circuit = load_circuit(circuit_path);
      run = circuit_run(work);
    } catch (const std::exception& e) {
      error = e.what();
    }
    report(6, [&]() -> Outcome {
      if (!run) return {false, "setup failed: " + error};
      return ablation_protocol(*run, circuit);
    });
    report(7, [&]() -> Outcome {
      if (!run) return {false, "setup failed: " + error};
      return emergence(*run, circuit);
    });
  }
  report(8, [&] { return benchmark(data_dir); });
  report(9, [&] { return determinism(cli, work); });

  std::printf("%zu criteria run, %d failed\n", want.size(), failures);
  return failures == 0 ? 0 : 1;
}
