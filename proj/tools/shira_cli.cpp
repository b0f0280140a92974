// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

// shira: pretrain toy bases, train adapters, benchmark switching, fuse,
// evaluate and inspect adapter files.

#include <CLI11.hpp>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli_config.hpp"
#include "shira/bench.hpp"
#include "shira/error.hpp"
#include "shira/fusion.hpp"
#include "shira/persist.hpp"
#include "shira/runtime.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace shira;

namespace {

enum ExitCode : int {
  kOk = 0,
  kOther = 1,
  kConfig = 2,
  kIo = 3,
  kNumeric = 4,
};

/// Failure already carrying its exit class and file context.
struct CliFailure {
  int code;
  std::string message;
};

void ensure_parent(const fs::path& path) {
  const fs::path parent = path.parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw IoError("cannot create directory " + parent.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& j) {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

template <typename F>
auto with_file(const fs::path& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const FormatError& e) {
    throw CliFailure{kIo, path.string() + ": " + e.what()};
  } catch (const IoError& e) {
    throw CliFailure{kIo, path.string() + ": " + e.what()};
  }
}

Mlp load_checkpoint(const fs::path& path) {
  return with_file(path, [&] { return read_checkpoint(path); });
}

ModelAdapter load_adapter(const fs::path& path) {
  return with_file(path, [&] { return read_adapter(path); });
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_digest(const fs::path& path) {
  const Bytes b = read_file(path);
  return hex64(fnv1a64(b));
}

json envelope(const std::string& command, const cli::CliConfig& cfg, std::size_t threads) {
  return {{"command", command}, {"effective_config", cfg.to_json()}, {"threads", threads}};
}

cli::CliConfig load_config(const std::string& path) {
  if (path.empty()) {
    cli::CliConfig c;
    c.validate();
    return c;
  }
  return cli::CliConfig::load(path);
}

Mlp fresh_model(const cli::CliConfig& cfg) {
  Rng rng(cfg.model.seed);
  return Mlp::random(cfg.task.input_dim, cfg.model.widths, cfg.model.hidden,
                     Activation::none, rng);
}

const cli::NamedStyle* find_task(const cli::CliConfig& cfg, const std::string& name) {
  for (const cli::NamedStyle& t : cfg.tasks)
    if (t.name == name) return &t;
  return nullptr;
}

std::size_t weight_count(const Mlp& m, const std::vector<std::size_t>& layers) {
  std::size_t n = 0;
  for (std::size_t i : resolve_layers(m, layers)) n += m.weight(i).size();
  return n;
}

std::size_t param_count(const Mlp& m) {
  std::size_t n = 0;
  for (const LinearLayer& l : m.layers()) n += l.weight.size() + l.bias.size();
  return n;
}

void print_row(const char* method, std::size_t trainable, std::size_t changed,
               std::size_t total, std::size_t adapted, double acc) {
  std::printf("%-8s %12zu %9.3f %12zu %9.3f %11.3f %9.4f\n", method, trainable,
              100.0 * static_cast<double>(trainable) / static_cast<double>(total), changed,
              100.0 * static_cast<double>(changed) / static_cast<double>(total),
              100.0 * static_cast<double>(changed) / static_cast<double>(adapted), acc);
}

// --- pretrain ---------------------------------------------------------------

struct PretrainOpts {
  std::string config;
  std::string out;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
};

int cmd_pretrain(const PretrainOpts& o, std::size_t threads) {
  cli::CliConfig cfg = load_config(o.config);
  if (o.steps) cfg.pretrain.steps = *o.steps;
  if (o.seed) cfg.pretrain.seed = *o.seed;
  cfg.validate();
  const fs::path out = o.out.empty() ? fs::path(cfg.output_dir) / "base.shmc" : fs::path(o.out);

  const TaskData data = make_base_task(cfg.task);
  const DenseResult r = train_full(fresh_model(cfg), data.train, cfg.pretrain, &data.test);
  ensure_parent(out);
  with_file(out, [&] { write_checkpoint(out, r.model); });

  const double acc = r.report.metrics.at("eval_accuracy");
  const double chance = 1.0 / static_cast<double>(cfg.task.classes);
  json rep = envelope("pretrain", cfg, threads);
  rep["report"] = r.report.to_json();
  rep["checkpoint"] = out.string();
  rep["checkpoint_fnv1a64"] = file_digest(out);
  rep["chance_accuracy"] = chance;
  write_json(fs::path(out.string() + ".report.json"), rep);
  std::printf("pretrained %zu params, test accuracy %.4f (chance %.4f)\n", param_count(r.model),
              acc, chance);
  std::printf("wrote %s\n", out.string().c_str());
  return kOk;
}

// --- train-adapter ----------------------------------------------------------

struct TrainOpts {
  std::string config;
  std::string checkpoint;
  std::string strategy;
  std::string task;
  std::string out;
  std::optional<double> fraction;
  std::optional<double> lr;
  std::optional<std::size_t> rank;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
};

int cmd_train_adapter(const TrainOpts& o, std::size_t threads) {
  cli::CliConfig cfg = load_config(o.config);
  TrainConfig tc = cfg.train;
  const bool sparse = o.strategy != "lora" && o.strategy != "full";
  if (sparse) {
    tc.mask_strategy = parse_mask_strategy(o.strategy);
    tc.lr = cfg.shira_lr;
  }
  if (o.fraction) tc.mask_fraction = *o.fraction;
  if (o.lr) tc.lr = *o.lr;
  if (o.rank) tc.lora_rank = *o.rank;
  if (o.steps) tc.steps = *o.steps;
  if (o.seed) tc.seed = *o.seed;
  tc.validate();
  cfg.train = tc;

  StyleConfig style = cfg.style;
  std::string task_name = "style";
  if (!o.task.empty()) {
    const cli::NamedStyle* t = find_task(cfg, o.task);
    if (t == nullptr) throw ConfigError("no task named '" + o.task + "' in config");
    style = t->style;
    task_name = t->name;
  }

  const fs::path ckpt =
      o.checkpoint.empty() ? fs::path(cfg.output_dir) / "base.shmc" : fs::path(o.checkpoint);
  const Mlp base = load_checkpoint(ckpt);
  if (base.input_dim() != cfg.task.input_dim) {
    throw ShapeError("checkpoint input dim " + std::to_string(base.input_dim()) +
                     " does not match task input dim " + std::to_string(cfg.task.input_dim));
  }
  const TaskData data = make_style_task(cfg.task, style);
  const std::string ext = o.strategy == "full" ? ".shmc" : ".shra";
  const fs::path out = o.out.empty()
                           ? fs::path(cfg.output_dir) / (task_name + "_" + o.strategy + ext)
                           : fs::path(o.out);
  ensure_parent(out);

  const json meta = {{"strategy", o.strategy},
                     {"task", task_name},
                     {"train_digest", tc.digest()},
                     {"checkpoint_fnv1a64", file_digest(ckpt)}};
  TrainReport report;
  std::size_t trainable = 0;
  std::size_t changed = 0;
  if (sparse) {
    const ModelMask mask = build_mask(base, tc, data.train);
    ShiraResult r = train_shira(base, mask, data.train, tc, &data.test);
    r.adapter.meta = meta;
    with_file(out, [&] { write_adapter(out, r.adapter); });
    report = r.report;
  } else if (o.strategy == "lora") {
    LoraResult r = train_lora(base, data.train, tc, &data.test);
    r.adapter.meta = meta;
    with_file(out, [&] { write_adapter(out, r.adapter); });
    report = r.report;
  } else {
    const DenseResult r = train_full(base, data.train, tc, &data.test);
    with_file(out, [&] { write_checkpoint(out, r.model); });
    report = r.report;
  }
  trainable = report.params.trainable;
  changed = report.params.changed;

  const std::size_t total = param_count(base);
  const std::size_t adapted = weight_count(base, tc.adapted_layers);
  json rep = envelope("train-adapter", cfg, threads);
  rep["strategy"] = o.strategy;
  rep["task"] = task_name;
  rep["task_style"] = style.to_json();
  rep["report"] = report.to_json();
  rep["output"] = out.string();
  rep["output_fnv1a64"] = file_digest(out);
  rep["adapted_weight_count"] = adapted;
  rep["trainable_fraction_of_adapted"] =
      static_cast<double>(trainable) / static_cast<double>(adapted);
  rep["changed_fraction_of_adapted"] = static_cast<double>(changed) / static_cast<double>(adapted);
  write_json(fs::path(out.string() + ".report.json"), rep);

  std::printf("%-8s %12s %9s %12s %9s %11s %9s\n", "method", "trainable", "%Params", "changed",
              "%C", "%C(adapt)", "accuracy");
  print_row(o.strategy.c_str(), trainable, changed, total, adapted,
            report.metrics.at("eval_accuracy"));
  std::printf("wrote %s\n", out.string().c_str());
  return kOk;
}

// --- bench ------------------------------------------------------------------

struct BenchOpts {
  BenchConfig bench;
  std::size_t stage_dim = 1024;
  std::string out_dir;
  std::string config;
};

SparseModelAdapter random_sparse_adapter(const Mlp& m, double density, Rng& rng) {
  SparseModelAdapter out;
  for (std::size_t i = 0; i < m.layer_count(); ++i) {
    const Mask mask = make_random_mask(m.weight(i).shape(), MaskBudget(density), rng);
    SparseAdapter s;
    s.rows = static_cast<std::uint32_t>(mask.rows());
    s.cols = static_cast<std::uint32_t>(mask.cols());
    s.coords.assign(mask.coords().begin(), mask.coords().end());
    s.values.resize(s.coords.size());
    for (double& v : s.values) v = 0.01 * rng.gaussian();
    s.strategy = MaskStrategy::random;
    s.source_layer = static_cast<std::uint32_t>(i);
    out.layers.emplace(static_cast<std::uint32_t>(i), std::move(s));
  }
  out.meta = {{"name", "bench_shira"}};
  return out;
}

LoraModelAdapter random_lora_adapter(const Mlp& m, std::size_t rank, Rng& rng) {
  LoraModelAdapter out;
  for (std::size_t i = 0; i < m.layer_count(); ++i) {
    const Shape s = m.weight(i).shape();
    out.layers.emplace(static_cast<std::uint32_t>(i),
                       LoraAdapter{rand_matrix(rng, s.rows, rank, Distribution::gaussian(0.01)),
                                   rand_matrix(rng, rank, s.cols, Distribution::gaussian(0.01)),
                                   2.0});
  }
  out.meta = {{"name", "bench_lora"}};
  return out;
}

int cmd_bench(const BenchOpts& o, std::size_t threads) {
  cli::CliConfig cfg = load_config(o.config);
  o.bench.validate();
  if (o.stage_dim == 0) throw ConfigError("stage-dim must be positive");
  const fs::path dir = o.out_dir.empty() ? fs::path(cfg.output_dir) / "bench" : fs::path(o.out_dir);

  const BenchResult r = bench_switch(o.bench);
  Rng rng(o.bench.seed);
  const std::vector<std::size_t> widths{o.stage_dim, o.stage_dim};
  const Mlp model = Mlp::random(o.stage_dim, widths, Activation::relu, Activation::none, rng);
  const std::vector<ModelAdapter> adapters{
      random_sparse_adapter(model, o.bench.densities.front(), rng),
      random_lora_adapter(model, o.bench.lora_rank, rng)};
  const std::vector<StageTiming> stages = bench_stages(model, adapters, o.bench.trials);

  write_text(dir / "bench.csv", r.to_csv());
  json rep = envelope("bench", cfg, threads);
  rep["bench_config"] = o.bench.to_json();
  rep["rows"] = r.to_json();
  rep["stage_dim"] = o.stage_dim;
  rep["stages"] = stages_to_json(stages);
  write_json(dir / "bench.json", rep);

  std::printf("%6s %10s %14s %14s %14s %9s\n", "dim", "d|rank", "method", "mean_ns", "median_ns",
              "speedup");
  for (const BenchRow& row : r.rows) {
    std::printf("%6zu %10g %14s %14.0f %14.0f %9.2f\n", row.dim, row.density_or_rank,
                row.method.c_str(), row.mean_ns, row.median_ns, row.speedup);
  }
  std::printf("\nstages on %zux%zu layers (mean ns)\n", o.stage_dim, o.stage_dim);
  std::printf("%8s %12s %12s %12s %12s\n", "method", "load", "fuse", "unfuse", "unload");
  for (const StageTiming& s : stages) {
    std::printf("%8s %12.0f %12.0f %12.0f %12.0f\n", s.method.c_str(), s.load_ns, s.fuse_ns,
                s.unfuse_ns, s.unload_ns);
  }
  std::printf("wrote %s and %s\n", (dir / "bench.csv").string().c_str(),
              (dir / "bench.json").string().c_str());
  return kOk;
}

// --- fuse -------------------------------------------------------------------

struct FuseOpts {
  std::vector<std::string> adapters;
  std::vector<double> weights;
  std::vector<std::string> lora;
  bool strict = false;
  std::string out;
  std::string config;
};

int cmd_fuse(const FuseOpts& o, std::size_t threads) {
  cli::CliConfig cfg = load_config(o.config);
  std::vector<ModelAdapter> in;
  for (const std::string& p : o.adapters) in.push_back(load_adapter(p));
  const fs::path out =
      o.out.empty() ? fs::path(cfg.output_dir) / "fused.shra" : fs::path(o.out);

  json rep = envelope("fuse", cfg, threads);
  rep["sources"] = o.adapters;
  rep["weights"] = o.weights.empty() ? std::vector<double>(o.adapters.size(), 1.0) : o.weights;
  rep["strict"] = o.strict;
  rep["output"] = out.string();

  if (std::holds_alternative<SparseModelAdapter>(in.front())) {
    SparseModelAdapter fused = fuse_multi(std::span<const ModelAdapter>(in), o.weights, o.strict);
    fused.meta["sources"] = o.adapters;
    const auto& a1 = std::get<SparseModelAdapter>(in[0]);
    const auto& a2 = std::get<SparseModelAdapter>(in[1]);
    std::optional<LoraModelAdapter> l1, l2;
    if (!o.lora.empty()) {
      if (o.lora.size() != 2) throw ConfigError("--lora takes exactly two adapter files");
      l1 = std::get<LoraModelAdapter>(load_adapter(o.lora[0]));
      l2 = std::get<LoraModelAdapter>(load_adapter(o.lora[1]));
    }
    FusionReport fr = fusion_report(a1, a2, l1 ? &*l1 : nullptr, l2 ? &*l2 : nullptr);
    fr.sources = {o.adapters[0], o.adapters[1]};
    rep["interference"] = fr.to_json();
    ensure_parent(out);
    with_file(out, [&] { write_adapter(out, fused); });
    std::printf("fused %zu sparse adapters: %zu nonzeros\n", in.size(), fused.total_nnz());
    std::printf("%6s %10s %10s %10s %12s %12s\n", "layer", "overlap", "union", "overlap%",
                "S1tS2 dens", "LoRA dens");
    for (const auto& [id, it] : fr.sparse) {
      const auto lora_it = fr.lora.find(id);
      std::printf("%6u %10zu %10zu %10.4f %12.4f %12s\n", id, it.overlap, it.union_size,
                  100.0 * it.overlap_fraction, it.product_density,
                  lora_it == fr.lora.end()
                      ? "-"
                      : std::to_string(lora_it->second.product_density).c_str());
    }
  } else {
    std::vector<LoraModelAdapter> loras;
    for (const ModelAdapter& a : in) {
      if (!std::holds_alternative<LoraModelAdapter>(a))
        throw InvalidArgument("cannot fuse LoRA and sparse adapters together");
      loras.push_back(std::get<LoraModelAdapter>(a));
    }
    LoraModelAdapter fused = fuse_multi_lora(loras, o.weights);
    fused.meta["sources"] = o.adapters;
    json inter = json::object();
    for (const auto& [id, layer] : loras[0].layers) {
      const auto other = loras[1].layers.find(id);
      if (other != loras[1].layers.end())
        inter[std::to_string(id)] = interference(layer, other->second).to_json();
    }
    rep["interference"] = {{"lora", inter}};
    ensure_parent(out);
    with_file(out, [&] { write_adapter(out, fused); });
    std::printf("fused %zu LoRA adapters by factor concatenation\n", in.size());
  }
  write_json(fs::path(out.string() + ".report.json"), rep);
  std::printf("wrote %s\n", out.string().c_str());
  return kOk;
}

// --- eval -------------------------------------------------------------------

struct EvalOpts {
  std::string config;
  std::string checkpoint;
  std::string adapter;
  std::vector<std::string> singles;
  std::vector<double> alphas{0.0, 0.5, 1.0, 2.0};
  std::string out;
};

int cmd_eval(const EvalOpts& o, std::size_t threads) {
  cli::CliConfig cfg = load_config(o.config);
  if (cfg.tasks.empty()) throw ConfigError("eval needs at least one entry in tasks");
  if (!o.singles.empty() && o.singles.size() != cfg.tasks.size()) {
    throw ConfigError("--single needs one adapter per task (" + std::to_string(cfg.tasks.size()) +
                      ")");
  }
  const fs::path ckpt =
      o.checkpoint.empty() ? fs::path(cfg.output_dir) / "base.shmc" : fs::path(o.checkpoint);
  const Mlp base = load_checkpoint(ckpt);
  const ModelAdapter adapter = load_adapter(o.adapter);

  std::vector<TaskEval> tasks;
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    TaskEval t{cfg.tasks[i].name, make_style_task(cfg.task, cfg.tasks[i].style).test,
               std::nullopt};
    if (!o.singles.empty()) {
      AdapterRuntime rt(base);
      rt.load(load_adapter(o.singles[i]), 1.0, o.singles[i]);
      t.single_accuracy = class_accuracy(rt.model(), t.test);
    }
    tasks.push_back(std::move(t));
  }

  json rep = envelope("eval", cfg, threads);
  rep["checkpoint"] = ckpt.string();
  rep["adapter"] = o.adapter;
  rep["singles"] = o.singles;

  json sweep = json::array();
  std::printf("%8s", "alpha");
  for (const TaskEval& t : tasks) std::printf(" %12s", t.name.c_str());
  std::printf(" %10s\n", "base_eq");
  for (double alpha : o.alphas) {
    AdapterRuntime rt(base);
    rt.load(adapter, alpha, o.adapter);
    json point = {{"alpha", alpha}};
    bool base_equal = true;
    std::printf("%8g", alpha);
    for (const TaskEval& t : tasks) {
      const DenseMatrix out = predict(rt.model(), t.test.inputs);
      const double acc = accuracy(out, std::get<ClassTargets>(t.test.targets));
      point["accuracy"][t.name] = acc;
      const DenseMatrix ref = predict(base, t.test.inputs);
      base_equal = base_equal && out.shape() == ref.shape() &&
                   std::memcmp(out.data().data(), ref.data().data(),
                               out.size() * sizeof(double)) == 0;
      std::printf(" %12.4f", acc);
    }
    point["outputs_equal_base"] = base_equal;
    std::printf(" %10s\n", base_equal ? "yes" : "no");
    sweep.push_back(point);
  }
  rep["alpha_sweep"] = sweep;

  if (!o.singles.empty()) {
    const MultiEvalReport m = eval_multi(base, adapter, tasks, 1.0);
    rep["multi"] = m.to_json();
    std::printf("single avg %.4f  fused avg %.4f  drop %.2f points (%.2f%% relative)\n",
                m.avg_single, m.avg_fused, m.drop_points, m.drop_percent);
  }
  const fs::path out =
      o.out.empty() ? fs::path(cfg.output_dir) / "eval.json" : fs::path(o.out);
  write_json(out, rep);
  std::printf("wrote %s\n", out.string().c_str());
  return kOk;
}

// --- inspect ----------------------------------------------------------------

json inspect_adapter(const ModelAdapter& a) {
  json layers = json::array();
  json meta;
  std::string kind;
  if (const auto* s = std::get_if<SparseModelAdapter>(&a)) {
    kind = "sparse";
    meta = s->meta;
    for (const auto& [id, l] : s->layers) {
      layers.push_back({{"layer", id},
                        {"rows", l.rows},
                        {"cols", l.cols},
                        {"nnz", l.nnz()},
                        {"density", l.density()},
                        {"strategy", std::string(to_string(l.strategy))},
                        {"alpha_default", l.alpha_default},
                        {"delta_rank", numerical_rank(delta_dense(l))}});
    }
  } else {
    const auto& l = std::get<LoraModelAdapter>(a);
    kind = "lora";
    meta = l.meta;
    for (const auto& [id, f] : l.layers) {
      const Shape s = f.shape();
      layers.push_back({{"layer", id},
                        {"rows", s.rows},
                        {"cols", s.cols},
                        {"rank", f.rank()},
                        {"alpha_lora", f.alpha_lora},
                        {"factor_params", f.a.size() + f.b.size()},
                        {"delta_rank", numerical_rank(delta_dense(f))}});
    }
  }
  return {{"type", "adapter"}, {"kind", kind}, {"layers", layers}, {"meta", meta}};
}

json inspect_checkpoint(const Mlp& m) {
  json layers = json::array();
  for (std::size_t i = 0; i < m.layer_count(); ++i) {
    const LinearLayer& l = m.layers()[i];
    layers.push_back({{"layer", i},
                      {"out", l.out_dim()},
                      {"in", l.in_dim()},
                      {"activation", std::string(to_string(l.activation))}});
  }
  return {{"type", "checkpoint"},
          {"input_dim", m.input_dim()},
          {"params", param_count(m)},
          {"layers", layers}};
}

json inspect_mask(const ModelMask& mm) {
  json layers = json::array();
  for (const auto& [id, m] : mm.layers) {
    layers.push_back({{"layer", id},
                      {"rows", m.rows()},
                      {"cols", m.cols()},
                      {"nnz", m.size()},
                      {"density", static_cast<double>(m.size()) /
                                      static_cast<double>(m.rows() * m.cols())}});
  }
  return {{"type", "mask"}, {"layers", layers}};
}

void print_summary(const json& j) {
  const std::string type = j.at("type");
  if (type == "adapter") {
    std::printf("adapter (%s)\n", j.at("kind").get<std::string>().c_str());
    for (const json& l : j.at("layers")) {
      if (j.at("kind") == "sparse") {
        std::printf("  layer %u: %ux%u nnz %zu density %.6f rank %zu strategy %s alpha %g\n",
                    l.at("layer").get<unsigned>(), l.at("rows").get<unsigned>(),
                    l.at("cols").get<unsigned>(), l.at("nnz").get<std::size_t>(),
                    l.at("density").get<double>(), l.at("delta_rank").get<std::size_t>(),
                    l.at("strategy").get<std::string>().c_str(), l.at("alpha_default").get<double>());
      } else {
        std::printf("  layer %u: %zux%zu rank %zu alpha %g delta rank %zu\n",
                    l.at("layer").get<unsigned>(), l.at("rows").get<std::size_t>(),
                    l.at("cols").get<std::size_t>(), l.at("rank").get<std::size_t>(),
                    l.at("alpha_lora").get<double>(), l.at("delta_rank").get<std::size_t>());
      }
    }
    std::printf("  meta %s\n", j.at("meta").dump().c_str());
  } else if (type == "checkpoint") {
    std::printf("checkpoint: input %zu, %zu params\n", j.at("input_dim").get<std::size_t>(),
                j.at("params").get<std::size_t>());
    for (const json& l : j.at("layers")) {
      std::printf("  layer %zu: %zu <- %zu %s\n", l.at("layer").get<std::size_t>(),
                  l.at("out").get<std::size_t>(), l.at("in").get<std::size_t>(),
                  l.at("activation").get<std::string>().c_str());
    }
  } else {
    std::printf("mask\n");
    for (const json& l : j.at("layers")) {
      std::printf("  layer %zu: %zux%zu nnz %zu density %.6f\n", l.at("layer").get<std::size_t>(),
                  l.at("rows").get<std::size_t>(), l.at("cols").get<std::size_t>(),
                  l.at("nnz").get<std::size_t>(), l.at("density").get<double>());
    }
  }
}

int cmd_inspect(const std::string& path, bool as_json) {
  const Bytes bytes = with_file(path, [&] { return read_file(path); });
  const auto magic = [&](const char* m) {
    return bytes.size() >= 4 && std::equal(m, m + 4, bytes.begin());
  };
  json j = with_file(path, [&]() -> json {
    if (magic("SHRA")) return inspect_adapter(decode_adapter(bytes));
    if (magic("SHMC")) return inspect_checkpoint(decode_checkpoint(bytes));
    if (magic("SHMK")) return inspect_mask(decode_mask(bytes));
    throw FormatError(FormatErrorKind::bad_magic, "unrecognized file type");
  });
  j["path"] = path;
  j["bytes"] = bytes.size();
  j["fnv1a64"] = hex64(fnv1a64(bytes));
  if (as_json)
    std::cout << j.dump(2) << '\n';
  else
    print_summary(j);
  return kOk;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    try {
      out.push_back(std::stod(item, &used));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("bad number '" + item + "' in list");
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse high rank adapters on toy MLPs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "shira 0.1.0");

  PretrainOpts pre;
  auto* c_pre = app.add_subcommand("pretrain", "train a base model on the base task");
  c_pre->add_option("-c,--config", pre.config, "JSON config")->check(CLI::ExistingFile);
  c_pre->add_option("-o,--out", pre.out, "checkpoint path");
  c_pre->add_option("--steps", pre.steps);
  c_pre->add_option("--seed", pre.seed);

  TrainOpts tr;
  auto* c_tr = app.add_subcommand("train-adapter", "train one adapter on a style task");
  c_tr->add_option("-c,--config", tr.config, "JSON config")->check(CLI::ExistingFile);
  c_tr->add_option("--checkpoint", tr.checkpoint, "base checkpoint");
  c_tr->add_option("-s,--strategy", tr.strategy, "struct|rand|wm|grad|snip|lora|full")
      ->required()
      ->check(CLI::IsMember({"struct", "rand", "wm", "grad", "snip", "lora", "full"}));
  c_tr->add_option("--task", tr.task, "task name from the config's tasks list");
  c_tr->add_option("-o,--out", tr.out, "output file");
  c_tr->add_option("--fraction", tr.fraction, "mask density");
  c_tr->add_option("--lr", tr.lr);
  c_tr->add_option("--rank", tr.rank, "LoRA rank");
  c_tr->add_option("--steps", tr.steps);
  c_tr->add_option("--seed", tr.seed);

  BenchOpts be;
  std::string dims = "512,1024,2048,4096";
  std::string densities = "0.01,0.02";
  auto* c_be = app.add_subcommand("bench", "time LoRA fuse against sparse scatter");
  c_be->add_option("-c,--config", be.config, "JSON config")->check(CLI::ExistingFile);
  c_be->add_option("--dims", dims, "comma list")->capture_default_str();
  c_be->add_option("--densities", densities, "comma list")->capture_default_str();
  c_be->add_option("--rank", be.bench.lora_rank)->capture_default_str();
  c_be->add_option("--trials", be.bench.trials, "at least 10")->capture_default_str();
  c_be->add_option("--warmup", be.bench.warmup)->capture_default_str();
  c_be->add_option("--seed", be.bench.seed)->capture_default_str();
  c_be->add_option("--stage-dim", be.stage_dim)->capture_default_str();
  c_be->add_option("-o,--out-dir", be.out_dir);

  FuseOpts fu;
  std::string fuse_weights;
  auto* c_fu = app.add_subcommand("fuse", "naively add adapters");
  c_fu->add_option("adapters", fu.adapters, "adapter files")->required()->expected(2, -1);
  c_fu->add_option("-w,--weights", fuse_weights, "comma list, one per adapter");
  c_fu->add_option("--lora", fu.lora, "two LoRA files for interference comparison")
      ->expected(2);
  c_fu->add_flag("--strict", fu.strict, "reject overlapping supports");
  c_fu->add_option("-o,--out", fu.out);
  c_fu->add_option("-c,--config", fu.config)->check(CLI::ExistingFile);

  EvalOpts ev;
  std::string alphas = "0,0.5,1,2";
  auto* c_ev = app.add_subcommand("eval", "evaluate an adapter on the config's tasks");
  c_ev->add_option("-c,--config", ev.config, "JSON config")->check(CLI::ExistingFile);
  c_ev->add_option("--checkpoint", ev.checkpoint);
  c_ev->add_option("-a,--adapter", ev.adapter, "adapter to evaluate")->required();
  c_ev->add_option("--single", ev.singles, "single-task adapters in task order");
  c_ev->add_option("--alphas", alphas, "comma list")->capture_default_str();
  c_ev->add_option("-o,--out", ev.out);

  std::string inspect_path;
  bool inspect_json = false;
  auto* c_in = app.add_subcommand("inspect", "summarize an adapter, checkpoint or mask file");
  c_in->add_option("path", inspect_path)->required();
  c_in->add_flag("--json", inspect_json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    const std::size_t threads = cli::thread_cap();
    if (*c_pre) return cmd_pretrain(pre, threads);
    if (*c_tr) return cmd_train_adapter(tr, threads);
    if (*c_be) {
      be.bench.dims.clear();
      for (double d : parse_list(dims)) {
        if (d < 1 || d != static_cast<double>(static_cast<std::size_t>(d)))
          throw ConfigError("dims must be positive integers");
        be.bench.dims.push_back(static_cast<std::size_t>(d));
      }
      be.bench.densities = parse_list(densities);
      return cmd_bench(be, threads);
    }
    if (*c_fu) {
      if (!fuse_weights.empty()) fu.weights = parse_list(fuse_weights);
      return cmd_fuse(fu, threads);
    }
    if (*c_ev) {
      ev.alphas = parse_list(alphas);
      return cmd_eval(ev, threads);
    }
    if (*c_in) return cmd_inspect(inspect_path, inspect_json);
  } catch (const CliFailure& e) {
    std::cerr << "error: " << e.message << '\n';
    return e.code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error at step " << e.step() << ": " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOther;
}
