// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "xmf/cli.hpp"
#include "xmf/errors.hpp"
#include "xmf/fault.hpp"
#include "xmf/metrics.hpp"
#include "xmf/selfcheck.hpp"

namespace xmf::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// --- shared plumbing -------------------------------------------------------------

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "root seed; component seeds not set in the config derive from it");
}

RunConfig resolve(const Common& c) {
  SeedOverrides explicit_seeds;
  RunConfig cfg = c.config_path.empty() ? RunConfig::defaults()
                                        : load_run_config(c.config_path, &explicit_seeds);
  if (c.seed) apply_root_seed(cfg, *c.seed, explicit_seeds);
  return cfg;
}

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << j.dump(2) << '\n';
  if (!f) throw IoError("write failed for " + path.string());
}

json header(const std::string& command) {
  return {{"tool", "xmf"}, {"version", kVersion}, {"command", command}};
}

// Every command leaves <command>.config.json next to its outputs.
void echo_config(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                 const json& extra = json::object()) {
  json j = header(command);
  j["config"] = to_json(cfg);
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_json((dir.empty() ? fs::path(".") : dir) / (command + ".config.json"), j);
}

data::Dataset load_dataset(const fs::path& path) {
  if (path.extension() == ".jsonl") return data::jsonl_read(path);
  return data::mmf_read(path);
}

std::array<std::size_t, 3> feature_dims(const data::Dataset& ds, const std::string& what) {
  if (ds.empty()) throw ParameterError(what + " holds no samples");
  std::array<std::size_t, 3> dims{};
  for (std::size_t m = 0; m < data::kNumModalities; ++m) dims[m] = ds.front().features[m].cols();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t m = 0; m < data::kNumModalities; ++m) {
      if (ds[i].features[m].cols() != dims[m]) {
        throw DimensionError(what + ": sample " + std::to_string(i) + " has " +
                             data::kModalityNames[m] + " width " +
                             std::to_string(ds[i].features[m].cols()) + ", sample 0 has " +
                             std::to_string(dims[m]));
      }
    }
  }
  return dims;
}

std::string dims_str(const std::array<std::size_t, 3>& d) {
  return std::to_string(d[0]) + "/" + std::to_string(d[1]) + "/" + std::to_string(d[2]);
}

// --- datagen ---------------------------------------------------------------------

struct DatagenArgs {
  Common common;
  std::string out;
  std::optional<std::size_t> num_samples;
};

int cmd_datagen(const DatagenArgs& a) {
  RunConfig cfg = resolve(a.common);
  if (a.num_samples) {
    cfg.data.num_samples = *a.num_samples;
    cfg.data.validate();
  }
  const data::Dataset ds = data::synth_generate(cfg.data);
  const fs::path out(a.out);
  ensure_dir(out.parent_path());
  if (out.extension() == ".jsonl") {
    data::jsonl_write(ds, out);
  } else {
    data::mmf_write(ds, out);
  }
  echo_config(out.parent_path(), "datagen", cfg, {{"output", out.filename().string()}});
  std::printf("wrote %zu samples to %s\n", ds.size(), out.string().c_str());
  return kOk;
}

// --- train -----------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string data, out;
  bool no_local = false, no_global = false, lambda_sweep = false;
  std::string fusion, ot_mode;
  std::optional<int> epochs;
  std::optional<double> lr, lambda;
  std::vector<double> lambdas{0.0, 0.01, 0.1, 1.0};
};

// Trains one model into `out` and returns its metrics document.
json train_one(const RunConfig& cfg, const data::Dataset& train_set,
               const data::Dataset& test_set, const fs::path& out) {
  ensure_dir(out);
  echo_config(out, "train", cfg);

  std::ofstream csv(out / "epochs.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot open " + (out / "epochs.csv").string() + " for writing");
  csv << "epoch,task_loss,align_loss,train_accuracy\n";
  fusion::TrainConfig tc = cfg.train;
  tc.on_epoch = [&](const fusion::EpochLog& e) {
    char line[160];
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g\n", e.epoch, e.task_loss, e.align_loss,
                  e.train_accuracy);
    csv << line;
    csv.flush();
    std::printf("epoch %3d  task %.4f  align %.4f  train acc %.3f\n", e.epoch, e.task_loss,
                e.align_loss, e.train_accuracy);
    std::fflush(stdout);
  };

  const auto t0 = std::chrono::steady_clock::now();
  const fusion::TrainResult result =
      fusion::train(fusion::FusionModel::init(cfg.model, cfg.train.seed), train_set, tc);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fusion::save_checkpoint(result.model, out / "model.amb1");
  const metrics::EvalReport train_rep = metrics::evaluate(result.model, train_set);
  const metrics::EvalReport test_rep = metrics::evaluate(result.model, test_set);

  json m = header("train");
  m["config"] = to_json(cfg);
  m["lambda"] = cfg.model.lambda;
  m["local_alignment"] = cfg.model.local_alignment;
  m["fusion"] = fusion::to_string(cfg.model.fusion);
  m["train_samples"] = train_set.size();
  m["test_samples"] = test_set.size();
  m["train_accuracy"] = train_rep.accuracy;
  m["test_accuracy"] = test_rep.accuracy;
  m["test_f1"] = test_rep.f1;
  m["final_task_loss"] = result.log.back().task_loss;
  m["final_align_loss"] = result.log.back().align_loss;
  m["parameters"] = result.model.parameter_count();
  m["seconds"] = seconds;
  write_json(out / "metrics.json", m);
  std::printf("test accuracy %.4f  f1 %.4f  (%zu train / %zu test, %.1f s)\n", test_rep.accuracy,
              test_rep.f1, train_set.size(), test_set.size(), seconds);
  return m;
}

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = resolve(a.common);
  if (a.no_local) cfg.model.local_alignment = false;
  if (a.lambda) cfg.model.lambda = *a.lambda;
  if (a.no_global) cfg.model.lambda = 0.0;
  if (!a.fusion.empty()) {
    const auto f = fusion::parse_fusion_mode(a.fusion);
    if (!f) throw ConfigError("--fusion: unknown mode \"" + a.fusion + "\"");
    cfg.model.fusion = *f;
  }
  if (!a.ot_mode.empty()) {
    const auto m = align::parse_plan_mode(a.ot_mode);
    if (!m) throw ConfigError("--ot-mode: unknown mode \"" + a.ot_mode + "\"");
    cfg.model.plan_mode = *m;
  }
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.lr) cfg.train.lr = *a.lr;

  const data::Dataset all = load_dataset(a.data);
  cfg.model.input_dims = feature_dims(all, a.data);
  try {
    cfg.model.validate();
    for (double l : a.lambdas) {
      if (!(l >= 0.0)) throw ConfigError("--lambdas entries must be >= 0");
    }
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  const auto [train_set, test_set] = data::train_test_split(all, cfg.test_fraction);
  const fs::path out(a.out);

  if (!a.lambda_sweep) {
    train_one(cfg, train_set, test_set, out);
    return kOk;
  }
  // One model per lambda under out/lambda_<value>, plus a summary table.
  ensure_dir(out);
  std::ofstream summary(out / "lambda_sweep.csv", std::ios::trunc);
  if (!summary) throw IoError("cannot open " + (out / "lambda_sweep.csv").string());
  summary << "lambda,train_accuracy,test_accuracy,test_f1,final_align_loss\n";
  for (double l : a.lambdas) {
    RunConfig c = cfg;
    c.model.lambda = l;
    char dir[64];
    std::snprintf(dir, sizeof dir, "lambda_%g", l);
    std::printf("== lambda %g\n", l);
    const json m = train_one(c, train_set, test_set, out / dir);
    char line[200];
    std::snprintf(line, sizeof line, "%g,%.6f,%.6f,%.6f,%.9g\n", l,
                  m["train_accuracy"].get<double>(), m["test_accuracy"].get<double>(),
                  m["test_f1"].get<double>(), m["final_align_loss"].get<double>());
    summary << line;
    summary.flush();
  }
  return kOk;
}

// --- eval ------------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string checkpoint, data, out, split = "test";
  std::vector<double> rates;
};

data::Dataset select_split(const data::Dataset& all, const std::string& split, double fraction) {
  if (split == "all") return all;
  auto [train_set, test_set] = data::train_test_split(all, fraction);
  return split == "train" ? std::move(train_set) : std::move(test_set);
}

void check_compatible(const fusion::FusionModel& model, const data::Dataset& ds,
                      const std::string& what) {
  const auto dims = feature_dims(ds, what);
  if (dims != model.config.input_dims) {
    throw DimensionError(what + " has feature widths " + dims_str(dims) +
                         " (audio/video/language) but the checkpoint expects " +
                         dims_str(model.config.input_dims));
  }
}

int cmd_eval(const EvalArgs& a) {
  RunConfig cfg = resolve(a.common);
  if (!a.rates.empty()) cfg.missing_rates = a.rates;
  for (double r : cfg.missing_rates) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("--missing-rates entries must lie in [0, 1]");
  }
  const fusion::FusionModel model = fusion::load_checkpoint(a.checkpoint);
  const data::Dataset ds = select_split(load_dataset(a.data), a.split, cfg.test_fraction);
  check_compatible(model, ds, a.data);

  const metrics::EvalReport rep =
      metrics::evaluate_missing_rates(model, ds, cfg.missing_rates, cfg.eval_seed);
  json j = header("eval");
  j["config"] = to_json(cfg);
  j["model"] = {{"fusion", fusion::to_string(model.config.fusion)},
                {"local_alignment", model.config.local_alignment},
                {"lambda", model.config.lambda}};
  j["split"] = a.split;
  j["samples"] = ds.size();
  j["majority_baseline"] = metrics::majority_baseline(ds);
  j["accuracy"] = rep.accuracy;
  j["f1"] = rep.f1;
  j["delta"] = rep.delta;
  json rows = json::array();
  for (const metrics::RatePoint& p : rep.by_rate) {
    rows.push_back({{"rate", p.rate}, {"accuracy", p.accuracy}, {"f1", p.f1}});
    std::printf("rate %.2f  accuracy %.4f  f1 %.4f\n", p.rate, p.accuracy, p.f1);
  }
  j["by_rate"] = rows;
  std::printf("delta %.4f  (majority baseline %.4f)\n", rep.delta, metrics::majority_baseline(ds));
  if (!a.out.empty()) {
    const fs::path out(a.out);
    ensure_dir(out.parent_path());
    write_json(out, j);
    echo_config(out.parent_path(), "eval", cfg);
  }
  return kOk;
}

// --- align -----------------------------------------------------------------------

struct AlignArgs {
  Common common;
  std::string checkpoint, data, out;
  std::size_t sample = 0;
};

std::vector<std::string> token_labels(char prefix, std::size_t n) {
  std::vector<std::string> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = prefix + std::to_string(i);
  return out;
}

int cmd_align(const AlignArgs& a) {
  const RunConfig cfg = resolve(a.common);
  const data::Dataset ds = load_dataset(a.data);
  if (a.sample >= ds.size()) {
    throw ParameterError("--sample " + std::to_string(a.sample) + " is out of range (dataset has " +
                         std::to_string(ds.size()) + " samples)");
  }
  data::MultimodalSample s = ds[a.sample];
  s.present = {true, true, true};

  std::vector<align::TransportPlan> plans;
  if (!a.checkpoint.empty()) {
    const fusion::FusionModel model = fusion::load_checkpoint(a.checkpoint);
    check_compatible(model, ds, a.data);
    if (model.config.fusion != fusion::FusionMode::aligned || !model.config.local_alignment) {
      throw ParameterError("checkpoint " + a.checkpoint + " does not use transport alignment");
    }
    const fusion::SampleOutput so = fusion::run_sample(model.to_vars(false), model.config, s);
    plans = {*so.plans[0], *so.plans[1]};
  } else {
    for (std::size_t m = 0; m < 2; ++m) {
      if (s.features[m].cols() != s.language().cols()) {
        throw DimensionError(std::string("without --checkpoint the ") + data::kModalityNames[m] +
                             " and language widths must match to compare raw features");
      }
      plans.push_back(align::relaxed_ot_plan(align::cosine_cost(s.features[m], s.language())));
    }
  }

  const fs::path out(a.out);
  ensure_dir(out);
  const auto anchors = token_labels('l', s.language().rows());
  metrics::export_transport_plan(plans[0], token_labels('a', s.audio().rows()), anchors,
                                 out / "a2l.csv");
  metrics::export_transport_plan(plans[1], token_labels('v', s.video().rows()), anchors,
                                 out / "v2l.csv");
  echo_config(out, "align", cfg,
              {{"sample", a.sample}, {"checkpoint", a.checkpoint}, {"data", a.data}});
  std::printf("wrote %s and %s\n", (out / "a2l.csv").string().c_str(),
              (out / "v2l.csv").string().c_str());
  return kOk;
}

// --- bench -----------------------------------------------------------------------

struct BenchArgs {
  Common common;
  std::string out;
  std::vector<std::size_t> lengths;
  std::optional<int> repeats;
  std::vector<std::string> methods;
};

int cmd_bench(const BenchArgs& a) {
  RunConfig cfg = resolve(a.common);
  if (!a.lengths.empty()) cfg.bench.lengths = a.lengths;
  if (a.repeats) cfg.bench.repeats = *a.repeats;
  if (!a.methods.empty()) {
    cfg.bench.methods.clear();
    for (const std::string& m : a.methods) cfg.bench.methods.push_back(bench::parse_method(m));
  }
  const bench::SweepResult r = bench::run_scaling_sweep(cfg.bench);

  const fs::path out(a.out);
  ensure_dir(out);
  bench::write_sweep_csv(r, out / "bench.csv");
  json j = header("bench");
  j["config"] = to_json(cfg);
  json rows = json::array();
  for (const bench::BenchResult& b : r.results) {
    rows.push_back({{"method", bench::to_string(b.method)},
                    {"length", b.length},
                    {"median_ms", b.oom ? json(nullptr) : json(b.median_ms)},
                    {"repeats", b.repeats},
                    {"flops", b.flops},
                    {"estimated_bytes", b.estimated_bytes},
                    {"measured_bytes", b.measured_bytes},
                    {"oom", b.oom}});
    if (b.oom) {
      std::printf("%-14s L=%-6zu over budget\n", bench::to_string(b.method).c_str(), b.length);
    } else {
      std::printf("%-14s L=%-6zu %10.3f ms  %14llu flops\n", bench::to_string(b.method).c_str(),
                  b.length, b.median_ms, static_cast<unsigned long long>(b.flops));
    }
  }
  j["results"] = rows;
  json slopes = json::object();
  for (const auto& [m, s] : r.slopes) {
    slopes[bench::to_string(m)] = std::isfinite(s) ? json(s) : json(nullptr);
    std::printf("slope %-14s %.3f\n", bench::to_string(m).c_str(), s);
  }
  j["slopes"] = slopes;
  write_json(out / "bench.json", j);
  echo_config(out, "bench", cfg);
  return kOk;
}

// --- gradcheck -------------------------------------------------------------------

struct GradcheckArgs {
  Common common;
  std::string out;
  std::size_t configs = 50;
  double tol = 1e-4;
  std::vector<std::string> faults;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const RunConfig cfg = resolve(a.common);
  fault::disarm_all();
  for (const std::string& name : a.faults) {
    const auto site = fault::parse_site(name);
    if (!site) throw ConfigError("--inject-fault: unknown site \"" + name + "\"");
    fault::arm(*site);
  }
  fusion::SuiteOptions opts;
  opts.configs = a.configs;
  opts.tol = a.tol;
  const auto reports = fusion::run_gradient_suites(cfg.seed, opts);
  fault::disarm_all();

  bool ok = true;
  json rows = json::array();
  for (const fusion::SuiteReport& r : reports) {
    ok = ok && r.passed();
    std::printf("%-16s %s  %zu/%zu configs within tol, max rel err %.3e\n", r.name.c_str(),
                r.passed() ? "ok  " : "FAIL", r.configs - r.failures, r.configs, r.max_rel_error);
    if (!r.passed()) std::printf("  worst %s\n", r.worst.c_str());
    rows.push_back({{"suite", r.name},
                    {"configs", r.configs},
                    {"failures", r.failures},
                    {"max_rel_error", r.max_rel_error},
                    {"worst", r.worst}});
  }
  if (!a.out.empty()) {
    const fs::path out(a.out);
    ensure_dir(out);
    json j = header("gradcheck");
    j["config"] = to_json(cfg);
    j["tolerance"] = a.tol;
    j["injected_faults"] = a.faults;
    j["suites"] = rows;
    j["passed"] = ok;
    write_json(out / "gradcheck.json", j);
    echo_config(out, "gradcheck", cfg);
  }
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Temporally misaligned multimodal fusion: data, training, evaluation, benchmarks"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  DatagenArgs dg;
  auto* c_dg = app.add_subcommand("datagen", "generate the synthetic misaligned dataset");
  add_common(c_dg, dg.common);
  c_dg->add_option("--out", dg.out, "output file (.mmf for MMF1, .jsonl for JSONL)")->required();
  c_dg->add_option("--num-samples", dg.num_samples, "override data.num_samples");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "train a fusion model");
  add_common(c_tr, tr.common);
  c_tr->add_option("--data", tr.data, "dataset file (MMF1 or .jsonl)")->required()->check(CLI::ExistingFile);
  c_tr->add_option("--out", tr.out, "output directory")->required();
  c_tr->add_flag("--no-local", tr.no_local, "replace transport alignment with truncate/pad");
  c_tr->add_flag("--no-global", tr.no_global, "drop the MMD term (lambda = 0)");
  c_tr->add_option("--fusion", tr.fusion, "aligned | single_stream_mamba | multi_stream_mamba");
  c_tr->add_option("--ot-mode", tr.ot_mode, "literal | mass_normalized");
  c_tr->add_option("--epochs", tr.epochs, "override train.epochs");
  c_tr->add_option("--lr", tr.lr, "override train.lr");
  c_tr->add_option("--lambda", tr.lambda, "override train.lambda");
  c_tr->add_flag("--lambda-sweep", tr.lambda_sweep, "train one model per --lambdas value");
  c_tr->add_option("--lambdas", tr.lambdas, "sweep values (default 0,0.01,0.1,1)")->delimiter(',');

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "evaluate a checkpoint under missing modalities");
  add_common(c_ev, ev.common);
  c_ev->add_option("--checkpoint", ev.checkpoint, "AMB1 checkpoint")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--data", ev.data, "dataset file")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--missing-rates", ev.rates, "comma-separated rates")->delimiter(',');
  c_ev->add_option("--split", ev.split, "test | train | all")
      ->check(CLI::IsMember({"test", "train", "all"}));
  c_ev->add_option("--out", ev.out, "report JSON path");

  AlignArgs al;
  auto* c_al = app.add_subcommand("align", "export the audio and video transport plans of one sample");
  add_common(c_al, al.common);
  c_al->add_option("--checkpoint", al.checkpoint, "use the model's plans (optional)")->check(CLI::ExistingFile);
  c_al->add_option("--data", al.data, "dataset file")->required()->check(CLI::ExistingFile);
  c_al->add_option("--sample", al.sample, "sample index")->required();
  c_al->add_option("--out", al.out, "output directory")->required();

  BenchArgs be;
  auto* c_be = app.add_subcommand("bench", "time scan fusion against attention baselines");
  add_common(c_be, be.common);
  c_be->add_option("--out", be.out, "output directory")->required();
  c_be->add_option("--lengths", be.lengths, "comma-separated sequence lengths")->delimiter(',');
  c_be->add_option("--repeats", be.repeats, "timed runs per point (>= 5)");
  c_be->add_option("--methods", be.methods, "subset of scan,single_stream,multi_stream")->delimiter(',');

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  add_common(c_gc, gc.common);
  c_gc->add_option("--configs", gc.configs, "seeded configurations per suite");
  c_gc->add_option("--tol", gc.tol, "relative tolerance");
  c_gc->add_option("--out", gc.out, "output directory for gradcheck.json");
  c_gc->add_option("--inject-fault", gc.faults, "perturb an analytic gradient (testing)")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  std::string name = app.get_subcommands().front()->get_name();
  try {
    if (*c_dg) return cmd_datagen(dg);
    if (*c_tr) return cmd_train(tr);
    if (*c_ev) return cmd_eval(ev);
    if (*c_al) return cmd_align(al);
    if (*c_be) return cmd_bench(be);
    if (*c_gc) return cmd_gradcheck(gc);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "xmf %s: numeric failure: %s\n", name.c_str(), e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "xmf %s: error: %s\n", name.c_str(), e.what());
    return kUsage;
  }
  return kUsage;
}

}  // namespace xmf::cli
