// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "xmf/cli.hpp"
#include "xmf/errors.hpp"
#include "xmf/rng.hpp"

namespace xmf::cli {

using nlohmann::json;

RunConfig RunConfig::defaults(std::uint64_t root) {
  RunConfig c;
  apply_root_seed(c, root, {});
  return c;
}

void apply_root_seed(RunConfig& c, std::uint64_t root, const SeedOverrides& explicit_seeds) {
  c.seed = root;
  if (!explicit_seeds.data) c.data.seed = derive_seed(root, "data");
  if (!explicit_seeds.train) c.train.seed = derive_seed(root, "train");
  if (!explicit_seeds.eval) c.eval_seed = derive_seed(root, "eval");
  if (!explicit_seeds.bench) c.bench.seed = derive_seed(root, "bench");
}

namespace {

template <class T>
struct is_vector : std::false_type {};
template <class T>
struct is_vector<std::vector<T>> : std::true_type {};

// nlohmann converts 2.5 or -1 into a size_t without complaint; integers
// have to be integral in the document and unsigned ones non-negative.
template <class T>
bool exact_type(const json& v) {
  if constexpr (is_vector<T>::value) {
    if (!v.is_array()) return false;
    for (const json& e : v) {
      if (!exact_type<typename T::value_type>(e)) return false;
    }
    return true;
  } else if constexpr (std::is_same_v<T, bool>) {
    return v.is_boolean();
  } else if constexpr (std::is_unsigned_v<T>) {
    return v.is_number_unsigned();
  } else if constexpr (std::is_integral_v<T>) {
    return v.is_number_integer();
  } else if constexpr (std::is_floating_point_v<T>) {
    return v.is_number();
  } else {
    return v.is_string();
  }
}

// Walks one JSON object, handing each known key to its reader and
// rejecting the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
    for (const auto& [key, _] : j_.items()) unseen_.insert(key);
  }

  template <class T>
  bool read(const std::string& key, T& out) {
    const auto it = j_.find(key);
    if (it == j_.end()) return false;
    unseen_.erase(key);
    if (!exact_type<T>(*it)) {
      throw ConfigError(where(key) + " has the wrong type (got " + it->dump() + ")");
    }
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type (got " + it->dump() + ")");
    }
    return true;
  }

  const json* child(const std::string& key) {
    const auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    unseen_.erase(key);
    return &*it;
  }

  void finish() const {
    if (!unseen_.empty()) throw ConfigError("unknown key " + where(*unseen_.begin()));
  }

  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> unseen_;
};

template <class T>
T parse_enum(const std::optional<T>& parsed, const std::string& key, const std::string& value) {
  if (!parsed) throw ConfigError(key + ": unknown value \"" + value + "\"");
  return *parsed;
}

void read_data(Section& s, RunConfig& c, SeedOverrides& seeds) {
  data::SynthConfig& d = c.data;
  s.read("num_samples", d.num_samples);
  s.read("t_audio", d.t_audio);
  s.read("t_video", d.t_video);
  s.read("t_language", d.t_language);
  s.read("d_audio", d.d_audio);
  s.read("d_video", d.d_video);
  s.read("d_language", d.d_language);
  s.read("misalignment_max_shift", d.misalignment_max_shift);
  s.read("noise_std", d.noise_std);
  s.read("content_dim", d.content_dim);
  s.read("cue_flip_rate", d.cue_flip_rate);
  s.read("side_sentiment_gain", d.side_sentiment_gain);
  s.read("test_fraction", c.test_fraction);
  seeds.data = s.read("seed", d.seed);
  s.finish();
}

void read_model(Section& s, RunConfig& c) {
  fusion::FusionConfig& m = c.model;
  s.read("d", m.model_dim);
  s.read("N", m.state_dim);
  s.read("layers", m.num_layers);
  std::string text;
  if (s.read("fusion", text)) m.fusion = parse_enum(fusion::parse_fusion_mode(text), s.where("fusion"), text);
  if (s.read("task", text)) m.task = parse_enum(fusion::parse_task(text), s.where("task"), text);
  s.read("local_alignment", m.local_alignment);
  s.finish();
}

void read_train(Section& s, RunConfig& c, SeedOverrides& seeds) {
  fusion::TrainConfig& t = c.train;
  s.read("epochs", t.epochs);
  s.read("lr", t.lr);
  s.read("batch_size", t.batch_size);
  s.read("train_missing_rate", t.train_missing_rate);
  s.read("lambda", c.model.lambda);
  std::string text;
  if (s.read("ot_mode", text)) {
    c.model.plan_mode = parse_enum(align::parse_plan_mode(text), s.where("ot_mode"), text);
  }
  if (const json* k = s.child("kernel")) {
    if (k->is_string() && k->get<std::string>() == "median") {
      c.model.kernel = align::KernelConfig::median();
    } else if (k->is_object()) {
      Section ks(*k, s.where("kernel"));
      double sigma = 0.0;
      if (!ks.read("sigma", sigma)) throw ConfigError(s.where("kernel") + " needs \"sigma\"");
      ks.finish();
      if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw ConfigError(s.where("kernel") + ".sigma must be positive");
      }
      c.model.kernel = align::KernelConfig::fixed(sigma);
    } else {
      throw ConfigError(s.where("kernel") + " must be \"median\" or {\"sigma\": value}");
    }
  }
  seeds.train = s.read("seed", t.seed);
  s.finish();
}

void read_eval(Section& s, RunConfig& c, SeedOverrides& seeds) {
  s.read("missing_rates", c.missing_rates);
  seeds.eval = s.read("seed", c.eval_seed);
  s.finish();
}

void read_bench(Section& s, RunConfig& c, SeedOverrides& seeds) {
  bench::SweepConfig& b = c.bench;
  s.read("lengths", b.lengths);
  s.read("repeats", b.repeats);
  s.read("warmup", b.warmup);
  s.read("d", b.d);
  s.read("N", b.N);
  s.read("budget_bytes", b.byte_budget);
  std::vector<std::string> methods;
  if (s.read("methods", methods)) {
    b.methods.clear();
    for (const std::string& m : methods) {
      try {
        b.methods.push_back(bench::parse_method(m));
      } catch (const ParameterError& e) {
        throw ConfigError(s.where("methods") + ": " + e.what());
      }
    }
  }
  seeds.bench = s.read("seed", b.seed);
  s.finish();
}

void validate(const RunConfig& c) {
  try {
    c.data.validate();
    c.model.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) {
    throw ConfigError("data.test_fraction must lie in (0, 1)");
  }
  const fusion::TrainConfig& t = c.train;
  if (t.epochs <= 0) throw ConfigError("train.epochs must be positive");
  if (!(t.lr > 0.0) || !std::isfinite(t.lr)) throw ConfigError("train.lr must be positive");
  if (t.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(t.train_missing_rate >= 0.0 && t.train_missing_rate <= 1.0)) {
    throw ConfigError("train.train_missing_rate must lie in [0, 1]");
  }
  if (c.missing_rates.empty()) throw ConfigError("eval.missing_rates must not be empty");
  for (double r : c.missing_rates) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("eval.missing_rates entries must lie in [0, 1]");
  }
  const bench::SweepConfig& b = c.bench;
  if (b.lengths.size() < 3) throw ConfigError("bench.lengths needs at least 3 entries");
  for (std::size_t L : b.lengths) {
    if (L < 3) throw ConfigError("bench.lengths entries must be at least 3");
  }
  if (b.repeats < 5) throw ConfigError("bench.repeats must be at least 5");
  if (b.warmup < 0) throw ConfigError("bench.warmup must be >= 0");
  if (b.d == 0 || b.N == 0) throw ConfigError("bench.d and bench.N must be positive");
  if (b.methods.empty()) throw ConfigError("bench.methods must not be empty");
}

}  // namespace

RunConfig parse_run_config(const json& j, SeedOverrides* explicit_seeds) {
  Section top(j, "");
  std::uint64_t root = 1;
  top.read("seed", root);
  RunConfig c = RunConfig::defaults(root);
  SeedOverrides seeds;
  if (const json* s = top.child("data")) {
    Section sec(*s, "data");
    read_data(sec, c, seeds);
  }
  if (const json* s = top.child("model")) {
    Section sec(*s, "model");
    read_model(sec, c);
  }
  if (const json* s = top.child("train")) {
    Section sec(*s, "train");
    read_train(sec, c, seeds);
  }
  if (const json* s = top.child("eval")) {
    Section sec(*s, "eval");
    read_eval(sec, c, seeds);
  }
  if (const json* s = top.child("bench")) {
    Section sec(*s, "bench");
    read_bench(sec, c, seeds);
  }
  top.finish();
  c.model.input_dims = {c.data.d_audio, c.data.d_video, c.data.d_language};
  validate(c);
  if (explicit_seeds) *explicit_seeds = seeds;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, SeedOverrides* explicit_seeds) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    // nlohmann reports "parse error at line L, column C: ..." in what().
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(j, explicit_seeds);
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  const data::SynthConfig& d = c.data;
  j["data"] = {{"num_samples", d.num_samples},
               {"t_audio", d.t_audio},
               {"t_video", d.t_video},
               {"t_language", d.t_language},
               {"d_audio", d.d_audio},
               {"d_video", d.d_video},
               {"d_language", d.d_language},
               {"misalignment_max_shift", d.misalignment_max_shift},
               {"noise_std", d.noise_std},
               {"content_dim", d.content_dim},
               {"cue_flip_rate", d.cue_flip_rate},
               {"side_sentiment_gain", d.side_sentiment_gain},
               {"test_fraction", c.test_fraction},
               {"seed", d.seed}};
  const fusion::FusionConfig& m = c.model;
  j["model"] = {{"d", m.model_dim},
                {"N", m.state_dim},
                {"layers", m.num_layers},
                {"fusion", fusion::to_string(m.fusion)},
                {"task", fusion::to_string(m.task)},
                {"local_alignment", m.local_alignment}};
  json kernel = "median";
  if (!m.kernel.is_median()) kernel = {{"sigma", *m.kernel.sigma}};
  j["train"] = {{"epochs", c.train.epochs},
                {"lr", c.train.lr},
                {"batch_size", c.train.batch_size},
                {"train_missing_rate", c.train.train_missing_rate},
                {"lambda", m.lambda},
                {"ot_mode", align::to_string(m.plan_mode)},
                {"kernel", kernel},
                {"seed", c.train.seed}};
  j["eval"] = {{"missing_rates", c.missing_rates}, {"seed", c.eval_seed}};
  std::vector<std::string> methods;
  for (bench::Method bm : c.bench.methods) methods.push_back(bench::to_string(bm));
  j["bench"] = {{"lengths", c.bench.lengths},   {"repeats", c.bench.repeats},
                {"warmup", c.bench.warmup},     {"d", c.bench.d},
                {"N", c.bench.N},               {"budget_bytes", c.bench.byte_budget},
                {"methods", methods},           {"seed", c.bench.seed}};
  return j;
}

}  // namespace xmf::cli
