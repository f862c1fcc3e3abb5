// SPDX-License-Identifier: Apache-2.0
//
// sada: data generation, source training, evaluation and sweeps.
//
// Exit codes: 0 ok, 2 usage, 3 training failure, 4 artifact mismatch, 5 I/O.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sada/config.hpp"
#include "sada/evaluate.hpp"
#include "sada/model.hpp"
#include "sada/sadt.hpp"
#include "sada/synth.hpp"
#include "sada/train.hpp"

namespace {

using namespace sada;
namespace fs = std::filesystem;

enum Exit { kOk = 0, kUsage = 2, kTrainFailure = 3, kMismatch = 4, kIo = 5 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Level { Error = 0, Info = 1, Debug = 2 };

Level log_level() {
  static const Level level = [] {
    const char* env = std::getenv("SADA_LOG");
    const std::string v = env ? env : "info";
    if (v == "error") return Level::Error;
    if (v == "debug") return Level::Debug;
    return Level::Info;
  }();
  return level;
}

void log(Level level, const std::string& msg) {
  static const char* names[] = {"error", "info", "debug"};
  if (level <= log_level()) std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Target-domain read audit for sweeps. Every file read goes through the
// observer; a file whose directory holds a target-domain manifest is refused.
struct ReadAudit {
  std::mutex mu;
  std::map<fs::path, bool> target_dirs;
  std::vector<fs::path> violations;
};

ReadAudit& audit() {
  static ReadAudit a;
  return a;
}

bool dir_is_target(const fs::path& dir) {
  std::ifstream in(dir / "manifest.jsonl");
  std::string line;
  while (in && std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      return is_target(nlohmann::json::parse(line).at("domain").get<std::string>());
    } catch (const nlohmann::json::exception&) {
      return false;
    }
  }
  return false;
}

void audit_read(const fs::path& path) {
  const fs::path dir = fs::weakly_canonical(fs::absolute(path)).parent_path();
  auto& a = audit();
  std::lock_guard lock(a.mu);
  auto it = a.target_dirs.find(dir);
  if (it == a.target_dirs.end()) it = a.target_dirs.emplace(dir, dir_is_target(dir)).first;
  if (it->second) {
    a.violations.push_back(path);
    throw UsageError("sweep refuses to read target-domain file " + path.string());
  }
}

struct ConfigFlags {
  std::optional<std::string> file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> direct;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags, const std::vector<std::string>& direct_keys) {
  cmd->add_option("--config", flags.file, "key = value config file");
  cmd->add_option("--set", flags.sets, "override one config key (key=value), repeatable");
  for (const auto& key : direct_keys) {
    cmd->add_option_function<std::string>(
        "--" + key, [&flags, key](const std::string& v) { flags.direct[key] = v; }, "config key '" + key + "'");
  }
}

RunConfig build_config(const ConfigFlags& flags) {
  RunConfig cfg;
  if (flags.file) cfg.load_file(*flags.file);
  for (const auto& kv : flags.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const auto& [k, v] : flags.direct) cfg.set(k, v);
  return cfg;
}

std::vector<MemorySample> load_all(const Dataset& ds) {
  std::vector<MemorySample> out;
  for (std::size_t i = 0; i < ds.entries.size(); ++i) out.push_back({ds.id(i), ds.image(i), ds.mask(i)});
  return out;
}

void check_labels(const Dataset& ds, const TinySegNet& net) {
  if (ds.entries.empty()) return;
  const ByteTensor mask = ds.mask(0);
  for (auto v : mask.data) {
    if (v != kIgnoreLabel && v >= net.classes()) {
      throw ArchitectureError("dataset label " + std::to_string(v) + " exceeds checkpoint class count " +
                              std::to_string(net.classes()));
    }
  }
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  std::string out, split;
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

int cmd_gen(const GenArgs& a) {
  const Split split = parse_split(a.split);
  if (a.n < 1) throw UsageError("--n must be at least 1");
  const auto manifest = generate(a.out, split, a.n, a.seed);
  log(Level::Info, "wrote " + std::to_string(a.n) + " samples to " + manifest.string());
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data, out;
  std::optional<std::string> log_path;
  ConfigFlags cfg;
};

int cmd_train(const TrainArgs& a) {
  const RunConfig cfg = build_config(a.cfg);
  const TrainRecipe recipe = cfg.recipe();
  const Dataset ds = read_manifest(a.data);
  if (ds.entries.empty()) throw UsageError("training manifest is empty");
  const auto samples = load_all(ds);
  log(Level::Info, "training on " + std::to_string(samples.size()) + " samples, config " + cfg.hash());

  TinySegNet net(kSceneClasses, recipe.seed);
  std::string log_text;
  const TrainResult result = train_source(net, samples, recipe, [&](const TrainStep& s) {
    nlohmann::ordered_json j{{"epoch", s.epoch}, {"step", s.step}, {"lr", s.lr}, {"loss", s.loss}};
    log_text += j.dump() + "\n";
    if (log_level() >= Level::Debug) log(Level::Debug, j.dump());
  });
  const fs::path log_path = a.log_path ? fs::path(*a.log_path) : fs::path(a.out + ".log.jsonl");
  write_text(log_path, log_text);
  if (result.diverged) {
    const auto& last = result.log.back();
    throw TrainFailure("loss diverged at epoch " + std::to_string(last.epoch) + " step " + std::to_string(last.step) +
                       " (lr " + std::to_string(last.lr) + "); see " + log_path.string());
  }

  nlohmann::ordered_json meta{
      {"recipe", nlohmann::ordered_json::parse(recipe.to_json())},
      {"source", {{"domain", ds.entries.front().domain}, {"n", ds.entries.size()}}},
      {"config_hash", cfg.hash()},
  };
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  save_checkpoint(a.out, net, meta.dump());
  log(Level::Info, "final loss " + std::to_string(result.log.back().loss) + ", checkpoint " + a.out);
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt, data, method = "san";
  std::optional<std::string> out;
  unsigned jobs = 1;
  ConfigFlags cfg;
};

int cmd_eval(const EvalArgs& a) {
  const Method method = parse_method(a.method);
  const RunConfig cfg = build_config(a.cfg);
  const AdaptConfig adapt = cfg.adapt();
  const TinySegNet net = load_model(a.ckpt);
  const Dataset ds = read_manifest(a.data);
  check_labels(ds, net);
  const EvalResult res = evaluate_set(net, from_dataset(ds), method, adapt, cfg.hash(), a.jobs);

  std::string records;
  for (const auto& r : res.records) {
    if (r.error) log(Level::Error, r.id + ": " + *r.error);
    records += r.to_json() + "\n";
  }
  const std::string aggregate = res.aggregate.to_json() + "\n";
  if (a.out) {
    write_text(fs::path(*a.out) / "records.jsonl", records);
    write_text(fs::path(*a.out) / "aggregate.json", aggregate);
    write_text(fs::path(*a.out) / "config.cfg", cfg.canonical());
  }
  std::cout << aggregate;
  return kOk;
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
  std::string ckpt, data, param, grid, out;
  std::optional<std::string> method;
  unsigned jobs = 1;
  ConfigFlags cfg;
};

std::vector<std::string> grid_values(const std::string& param, const std::string& grid) {
  // Scale sets are separated by ';' since each set is itself a list.
  const char sep = param == "scales" ? ';' : ',';
  std::vector<std::string> out;
  std::stringstream ss(grid);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (item.find_first_not_of(" \t") != std::string::npos) out.push_back(item);
  }
  if (out.empty()) throw UsageError("--grid is empty");
  return out;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(10);
  os << *v;
  return os.str();
}

int cmd_sweep(const SweepArgs& a) {
  static const std::set<std::string> params{"alpha", "psi", "eta", "iters", "scales"};
  if (!params.count(a.param)) throw UsageError("unknown sweep parameter '" + a.param + "'");
  const Method method = parse_method(a.method.value_or(a.param == "alpha" ? "san" : "adapt"));
  set_read_observer(&audit_read);

  const RunConfig base = build_config(a.cfg);
  const TinySegNet net = load_model(a.ckpt);
  const Dataset ds = read_manifest(a.data);
  for (const auto& e : ds.entries) {
    if (is_target(e.domain)) throw UsageError("sweep refuses target-domain data (" + e.domain + ")");
  }
  check_labels(ds, net);
  const std::vector<MemorySample> samples = load_all(ds);

  std::string csv = "param,value,miou,ece,coverage,wall_ms,config_hash\n";
  nlohmann::ordered_json points = nlohmann::ordered_json::array();
  std::optional<std::size_t> best;
  std::optional<double> best_miou;
  std::vector<RunConfig> configs;
  for (const auto& value : grid_values(a.param, a.grid)) {
    RunConfig cfg = base;
    cfg.set(a.param, value);
    const EvalResult res = evaluate_set(net, from_memory(samples), method, cfg.adapt(), cfg.hash(), a.jobs);
    const Aggregate& agg = res.aggregate;
    const std::string norm = cfg.get(a.param);
    csv += a.param + ",\"" + norm + "\"," + fmt(agg.miou) + "," + fmt(agg.ece) + "," + fmt(agg.coverage) + "," +
           fmt(res.wall_ms) + "," + agg.config_hash + "\n";
    points.push_back({{"value", norm}, {"aggregate", nlohmann::ordered_json::parse(agg.to_json())}});
    if (agg.miou && (!best_miou || *agg.miou > *best_miou)) {
      best_miou = agg.miou;
      best = configs.size();
    }
    log(Level::Info, a.param + "=" + norm + " miou " + fmt(agg.miou));
    configs.push_back(std::move(cfg));
  }
  set_read_observer(nullptr);
  if (!audit().violations.empty()) throw UsageError("sweep touched target-domain files");

  nlohmann::ordered_json summary{{"param", a.param},
                                 {"method", method_name(method)},
                                 {"base_config_hash", base.hash()},
                                 {"points", points},
                                 {"best", best ? nlohmann::ordered_json(configs[*best].get(a.param)) : nullptr}};
  write_text(fs::path(a.out) / "sweep.csv", csv);
  write_text(fs::path(a.out) / "sweep.json", summary.dump() + "\n");
  if (best) write_text(fs::path(a.out) / "best.cfg", configs[*best].canonical());
  std::cout << csv;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-adaptive segmentation inference on synthetic domain shift"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic split");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--split", gen.split, "source|val|targetA|targetB|targetC")->required();
  g->add_option("--n", gen.n, "number of samples")->required();
  g->add_option("--seed", gen.seed, "generator seed");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train the source model");
  t->add_option("--data", train.data, "source manifest or directory")->required();
  t->add_option("--out", train.out, "checkpoint path")->required();
  t->add_option("--log", train.log_path, "training log (JSON lines)");
  add_config_flags(t, train.cfg, {"epochs", "seed", "batch_size", "base_lr", "crop_size"});

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "evaluate one method on a dataset");
  e->add_option("--ckpt", eval.ckpt, "checkpoint")->required();
  e->add_option("--data", eval.data, "manifest or directory")->required();
  e->add_option("--method", eval.method, "tbn|pbn|san|tta|adapt|entropy");
  e->add_option("--out", eval.out, "output directory for records.jsonl and aggregate.json");
  e->add_option("--jobs", eval.jobs, "parallel images")->check(CLI::PositiveNumber);
  add_config_flags(e, eval.cfg, {"alpha", "psi", "eta", "iters", "groups", "scales", "seed"});

  SweepArgs sweep;
  auto* s = app.add_subcommand("sweep", "sweep one hyperparameter on a non-target split");
  s->add_option("--ckpt", sweep.ckpt, "checkpoint")->required();
  s->add_option("--data", sweep.data, "validation manifest or directory")->required();
  s->add_option("--param", sweep.param, "alpha|psi|eta|iters|scales")->required();
  s->add_option("--grid", sweep.grid, "comma-separated values (scale sets separated by ';')")->required();
  s->add_option("--method", sweep.method, "method to evaluate (default: san for alpha, adapt otherwise)");
  s->add_option("--out", sweep.out, "output directory")->required();
  s->add_option("--jobs", sweep.jobs, "parallel images")->check(CLI::PositiveNumber);
  add_config_flags(s, sweep.cfg, {"alpha", "psi", "eta", "iters", "groups", "scales", "seed"});

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(train);
    if (*e) return cmd_eval(eval);
    if (*s) return cmd_sweep(sweep);
  } catch (const UsageError& err) {
    log(Level::Error, err.what());
    return kUsage;
  } catch (const ConfigError& err) {
    log(Level::Error, err.what());
    return kUsage;
  } catch (const ContractError& err) {
    log(Level::Error, err.what());
    return kUsage;
  } catch (const TrainFailure& err) {
    log(Level::Error, err.what());
    return kTrainFailure;
  } catch (const ArchitectureError& err) {
    log(Level::Error, err.what());
    return kMismatch;
  } catch (const FormatError& err) {
    log(Level::Error, err.what());
    return kMismatch;
  } catch (const IoError& err) {
    log(Level::Error, err.what());
    return kIo;
  } catch (const fs::filesystem_error& err) {
    log(Level::Error, err.what());
    return kIo;
  }
  return kUsage;
}
