// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "retlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "retlab/config_io.hpp"
#include "retlab/optim.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace retlab {

using nlohmann::json;

namespace {

// Graph buffers are allocated and freed every step; keeping them off mmap
// avoids page-fault churn.
void tune_allocator() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
    return true;
  }();
  (void)once;
#endif
}

constexpr int64_t kEvalChunk = 512;

}  // namespace

void RunConfig::resolve() {
  task.seed = seed;
  task.validate();
  model.input_dim = task.input_dim();
  model.output_dim = task.target_dim();
  validate();
}

void RunConfig::validate() const {
  task.validate();
  model.validate();
  model.check_task(task);
  if (steps < 1) throw ConfigError("run: steps must be >= 1");
  if (batch_size < 1) throw ConfigError("run: batch_size must be >= 1");
  if (train_examples < batch_size) throw ConfigError("run: train_examples must be >= batch_size");
  if (val_examples < 1) throw ConfigError("run: val_examples must be >= 1");
  if (val_every < 1) throw ConfigError("run: val_every must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("run: lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("run: weight_decay must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("run: checkpoint_every must be >= 0");
  if (checkpoint_every > 0 && checkpoint_dir.empty()) throw ConfigError("run: checkpoint_every needs checkpoint_dir");
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"task", c.task},
           {"model", c.model},
           {"steps", c.steps},
           {"batch_size", c.batch_size},
           {"lr", c.lr},
           {"weight_decay", c.weight_decay},
           {"train_examples", c.train_examples},
           {"val_examples", c.val_examples},
           {"val_every", c.val_every},
           {"seed", c.seed},
           {"checkpoint_every", c.checkpoint_every},
           {"checkpoint_dir", c.checkpoint_dir.string()},
           {"divergence_factor", c.divergence_factor},
           {"divergence_patience", c.divergence_patience}};
}

void from_json(const json& j, RunConfig& c) {
  if (auto it = j.find("task"); it != j.end()) from_json(*it, c.task);
  if (auto it = j.find("model"); it != j.end()) from_json(*it, c.model);
  auto opt = [&j](const char* key, auto& out) {
    if (auto it = j.find(key); it != j.end()) it->get_to(out);
  };
  opt("steps", c.steps);
  opt("batch_size", c.batch_size);
  opt("lr", c.lr);
  opt("weight_decay", c.weight_decay);
  opt("train_examples", c.train_examples);
  opt("val_examples", c.val_examples);
  opt("val_every", c.val_every);
  opt("seed", c.seed);
  opt("checkpoint_every", c.checkpoint_every);
  if (auto it = j.find("checkpoint_dir"); it != j.end()) c.checkpoint_dir = it->get<std::string>();
  opt("divergence_factor", c.divergence_factor);
  opt("divergence_patience", c.divergence_patience);
}

std::vector<double> partial_losses(const Tensor& pred, const Tensor& target, int steps, int embed_dim) {
  if (pred.shape() != target.shape()) {
    throw ConfigError("partial_losses: shape " + shape_string(pred.shape()) + " vs " + shape_string(target.shape()));
  }
  if (pred.rank() != 2 || pred.dim(1) != static_cast<int64_t>(steps) * embed_dim) {
    throw ConfigError("partial_losses: expected [rows, D*K] tensors, got " + shape_string(pred.shape()));
  }
  const int64_t rows = pred.dim(0);
  const int64_t width = pred.dim(1);
  std::vector<double> out(static_cast<size_t>(steps), 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < width; ++c) {
      const double diff = static_cast<double>(pred[r * width + c]) - target[r * width + c];
      out[static_cast<size_t>(c / embed_dim)] += diff * diff;
    }
  }
  for (double& v : out) v /= static_cast<double>(rows * embed_dim);
  return out;
}

double final_loss(std::span<const double> val_losses, size_t window) {
  if (window == 0 || val_losses.size() < window) {
    throw ConfigError("final_loss: need " + std::to_string(window) + " evaluations, have " +
                      std::to_string(val_losses.size()));
  }
  const auto tail = val_losses.subspan(val_losses.size() - window);
  return std::accumulate(tail.begin(), tail.end(), 0.0) / static_cast<double>(window);
}

double final_loss(const RunMetrics& metrics) {
  std::vector<double> v;
  for (const auto& e : metrics.evals) v.push_back(e.val_loss);
  return final_loss(v, 100);
}

std::vector<std::optional<int64_t>> partial_crossing_steps(const RunMetrics& metrics, double threshold) {
  std::vector<std::optional<int64_t>> out;
  if (metrics.evals.empty()) return out;
  out.resize(metrics.evals.front().partial.size());
  for (const auto& e : metrics.evals) {
    for (size_t j = 0; j < e.partial.size() && j < out.size(); ++j) {
      if (!out[j] && e.partial[j] < threshold) out[j] = e.step;
    }
  }
  return out;
}

double evaluate_mse(const ModelParams& params, const Batch& batch) {
  const ForwardResult r = forward_batch(params, batch);
  return mse(r.outputs.span(), batch.targets.span());
}

void write_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics, int steps) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,epoch,train_loss,val_loss";
  for (int j = 1; j <= steps; ++j) out << ",partial_" << j;
  out << '\n';
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  size_t e = 0;
  for (size_t s = 0; s <= metrics.train_loss.size(); ++s) {
    const bool has_eval = e < metrics.evals.size() && metrics.evals[e].step == static_cast<int64_t>(s);
    if (s == 0 && !has_eval) continue;
    out << s << ',' << num(static_cast<double>(s) / static_cast<double>(metrics.steps_per_epoch)) << ',';
    if (s > 0) out << num(metrics.train_loss[s - 1]);
    out << ',';
    if (has_eval) {
      const EvalRecord& r = metrics.evals[e++];
      out << num(r.val_loss);
      for (int j = 0; j < steps; ++j) {
        out << ',';
        if (static_cast<size_t>(j) < r.partial.size()) out << num(r.partial[static_cast<size_t>(j)]);
      }
    } else {
      for (int j = 0; j < steps; ++j) out << ',';
    }
    out << '\n';
  }
}

RunResult train(RunConfig run, const EvalHook& hook) {
  tune_allocator();
  run.resolve();
  const TaskConfig& task = run.task;
  const int64_t spe = run.steps_per_epoch();

  std::vector<ChainInstance> corpus;
  corpus.reserve(static_cast<size_t>(run.train_examples));
  for (int64_t i = 0; i < run.train_examples; ++i) {
    corpus.push_back(gen_indexed_instance(task, streams::kTrain, static_cast<uint64_t>(i)));
  }
  std::vector<Batch> val_chunks;
  for (int64_t first = 0; first < run.val_examples; first += kEvalChunk) {
    const auto ex = gen_examples(task, streams::kValidation, static_cast<uint64_t>(first),
                                 std::min(kEvalChunk, run.val_examples - first));
    val_chunks.push_back(stack_examples(ex));
  }

  Rng init_rng(derive_seed(run.seed, streams::kInit, 0));
  ModelCheckpoint ckpt;
  ckpt.params = init_model(run.model, init_rng);
  ckpt.task = task;
  ckpt.seed = run.seed;
  const AdamConfig adam{run.lr, 0.9, 0.999, 1e-8, run.weight_decay};

  RunResult result;
  RunMetrics& metrics = result.metrics;
  metrics.steps_per_epoch = spe;

  auto evaluate = [&](int64_t step) {
    EvalRecord rec;
    rec.step = step;
    rec.epoch = static_cast<double>(step) / static_cast<double>(spe);
    double total = 0.0;
    std::vector<double> partial(task.ic ? static_cast<size_t>(task.steps) : 0, 0.0);
    int64_t count = 0;
    for (const Batch& b : val_chunks) {
      const ForwardResult r = forward_batch(ckpt.params, b);
      total += mse(r.outputs.span(), b.targets.span()) * static_cast<double>(b.size);
      if (task.ic) {
        const auto p = partial_losses(r.outputs, b.targets, task.steps, task.embed_dim);
        for (size_t j = 0; j < p.size(); ++j) partial[j] += p[j] * static_cast<double>(b.size);
      }
      count += b.size;
    }
    rec.val_loss = total / static_cast<double>(count);
    for (double& p : partial) p /= static_cast<double>(count);
    rec.partial = std::move(partial);
    metrics.evals.push_back(rec);
    return hook ? hook(rec) : true;
  };
  auto save = [&](int64_t epoch, int64_t step) {
    ckpt.epoch = epoch;
    ckpt.step = step;
    char name[64];
    std::snprintf(name, sizeof name, "epoch_%06lld.ckpt", static_cast<long long>(epoch));
    const auto path = run.checkpoint_dir / name;
    save_checkpoint(path, ckpt);
    metrics.checkpoints.push_back(path);
  };

  bool keep_going = evaluate(0);
  if (run.checkpoint_every > 0) save(0, 0);

  std::vector<int64_t> order(static_cast<size_t>(run.train_examples));
  std::vector<EncodedExample> batch_examples(static_cast<size_t>(run.batch_size));
  double first_loss = 0.0;
  int64_t above = 0;
  for (int64_t step = 1; step <= run.steps && keep_going; ++step) {
    const int64_t epoch = (step - 1) / spe;
    const int64_t slot = (step - 1) % spe;
    if (slot == 0) {
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle_rng(derive_seed(run.seed, streams::kShuffle, static_cast<uint64_t>(epoch)));
      std::shuffle(order.begin(), order.end(), shuffle_rng);
    }
    for (int64_t i = 0; i < run.batch_size; ++i) {
      const auto idx = order[static_cast<size_t>(slot * run.batch_size + i)];
      batch_examples[static_cast<size_t>(i)] = encode_instance(corpus[static_cast<size_t>(idx)], task);
    }
    const Batch batch = stack_examples(batch_examples);

    Graph g;
    Var loss;
    try {
      const ForwardGraph fg =
          build_forward(g, ckpt.params, batch.inputs, batch.size, batch.seq_len, batch.n_query, ForwardOptions{}, true);
      loss = ops::mse_loss(g, fg.output, g.constant(batch.targets));
      g.backward(loss);

      std::vector<Tensor> grads;
      grads.reserve(fg.params.size());
      for (Var p : fg.params) grads.push_back(g.grad(p));
      std::vector<ParamSlot> slots;
      size_t i = 0;
      ckpt.params.visit([&](const std::string&, Tensor& t) {
        slots.push_back(ParamSlot{&t, &grads[i], t.rank() == 2});
        ++i;
      });
      adam_update(slots, ckpt.optimizer, adam);
    } catch (const NumericError& e) {
      throw DivergenceError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }

    const double loss_value = g.value(loss)[0];
    metrics.train_loss.push_back(loss_value);
    if (step == 1) first_loss = loss_value;
    above = loss_value > run.divergence_factor * first_loss ? above + 1 : 0;
    if (above >= run.divergence_patience) {
      char msg[256];
      std::snprintf(msg, sizeof msg,
                    "training diverged at step %lld: loss %.6g stayed above %.3g x initial loss %.6g for %lld steps",
                    static_cast<long long>(step), loss_value, run.divergence_factor, first_loss,
                    static_cast<long long>(above));
      throw DivergenceError(msg);
    }

    if (step % run.val_every == 0 || step == run.steps) keep_going = evaluate(step);
    if (step % spe == 0 && run.checkpoint_every > 0 && ((step / spe) % run.checkpoint_every) == 0) {
      save(step / spe, step);
    }
  }
  ckpt.step = static_cast<int64_t>(metrics.train_loss.size());
  ckpt.epoch = ckpt.step / spe;
  result.final_checkpoint = std::move(ckpt);
  return result;
}

SweepReport aggregate_sweep(std::vector<SweepCell> cells) {
  SweepReport report;
  std::map<std::pair<int, int>, std::vector<const SweepCell*>> groups;  // (!ic, layers)
  for (const SweepCell& c : cells) groups[{c.ic ? 0 : 1, c.layers}].push_back(&c);
  for (const auto& [key, members] : groups) {
    SweepRow row;
    row.ic = key.first == 0;
    row.layers = key.second;
    double sum = 0.0;
    std::vector<double> psum;
    for (const SweepCell* c : members) {
      if (c->failed) continue;
      ++row.n_ok;
      sum += c->final_loss;
      if (psum.empty()) psum.assign(c->partial.size(), 0.0);
      for (size_t j = 0; j < psum.size() && j < c->partial.size(); ++j) psum[j] += c->partial[j];
    }
    if (row.n_ok > 0) {
      row.mean_final_loss = sum / row.n_ok;
      for (double& p : psum) p /= row.n_ok;
      row.mean_partial = std::move(psum);
    } else {
      row.mean_final_loss = std::nan("");
    }
    report.rows.push_back(std::move(row));
  }
  report.cells = std::move(cells);
  return report;
}

SweepReport sweep(const SweepConfig& config) {
  if (config.formulations.empty() || config.layers.empty() || config.seeds.empty()) {
    throw ConfigError("sweep: empty grid");
  }
  std::vector<SweepCell> cells;
  for (bool ic : config.formulations) {
    for (int layers : config.layers) {
      for (uint64_t seed : config.seeds) {
        SweepCell cell;
        cell.ic = ic;
        cell.layers = layers;
        cell.seed = seed;
        RunConfig run = config.base;
        run.task.ic = ic;
        run.model.layers = layers;
        run.seed = seed;
        run.checkpoint_every = 0;
        try {
          const RunResult r = train(run);
          std::vector<double> v;
          for (const auto& e : r.metrics.evals) v.push_back(e.val_loss);
          const size_t window = std::min(config.window, v.size());
          cell.final_loss = final_loss(v, window);
          const size_t first = r.metrics.evals.size() - window;
          cell.partial.assign(r.metrics.evals.back().partial.size(), 0.0);
          for (size_t e = first; e < r.metrics.evals.size(); ++e) {
            for (size_t j = 0; j < cell.partial.size(); ++j) cell.partial[j] += r.metrics.evals[e].partial[j];
          }
          for (double& p : cell.partial) p /= static_cast<double>(window);
          if (!config.out_dir.empty()) {
            char name[96];
            std::snprintf(name, sizeof name, "%s_L%d_s%llu.csv", ic ? "ic" : "nonic", layers,
                          static_cast<unsigned long long>(seed));
            write_metrics_csv(config.out_dir / name, r.metrics, ic ? run.task.steps : 0);
          }
        } catch (const std::exception& e) {
          cell.failed = true;
          cell.error = e.what();
        }
        cells.push_back(std::move(cell));
      }
    }
  }
  SweepReport report = aggregate_sweep(std::move(cells));
  if (!config.out_dir.empty()) write_sweep_csv(config.out_dir / "sweep.csv", report);
  return report;
}

void write_sweep_csv(const std::filesystem::path& path, const SweepReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  size_t width = 0;
  for (const auto& c : report.cells) width = std::max(width, c.partial.size());
  out << "kind,formulation,layers,seed,n_ok,final_loss";
  for (size_t j = 1; j <= width; ++j) out << ",partial_" << j;
  out << ",error\n";
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  for (const auto& c : report.cells) {
    out << "cell," << (c.ic ? "ic" : "nonic") << ',' << c.layers << ',' << c.seed << ',' << (c.failed ? 0 : 1)
        << ',' << (c.failed ? "" : num(c.final_loss));
    for (size_t j = 0; j < width; ++j) out << ',' << (j < c.partial.size() ? num(c.partial[j]) : "");
    std::string err = c.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << ',' << err << '\n';
  }
  for (const auto& r : report.rows) {
    out << "mean," << (r.ic ? "ic" : "nonic") << ',' << r.layers << ",," << r.n_ok << ','
        << num(r.mean_final_loss);
    for (size_t j = 0; j < width; ++j) out << ',' << (j < r.mean_partial.size() ? num(r.mean_partial[j]) : "");
    out << ",\n";
  }
}

}  // namespace retlab
