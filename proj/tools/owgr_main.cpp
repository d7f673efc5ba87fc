#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "owgr/common.hpp"
#include "owgr/envelope.hpp"
#include "owgr/report.hpp"
#include "owgr/synth.hpp"
#include "owgr/tomlmini.hpp"

namespace fs = std::filesystem;
using namespace owgr;

namespace {

// desk-scale default when a command needs a dataset and none was given
constexpr std::size_t kDefaultPerClass = 12;

int cmd_gen(const std::string& config, const std::string& out,
            std::uint64_t seed, bool seed_given) {
  const TomlTable toml = parse_toml_file(config);
  GenCounts counts;
  std::uint64_t gen_seed = 0;
  std::size_t gestures = 8, contexts = 24, users = 20;
  for (const auto& [key, value] : toml) {
    if (key == "seed") {
      gen_seed = static_cast<std::uint64_t>(value.as_int());
    } else if (key == "per_class_per_context") {
      counts.per_class_per_context = static_cast<std::size_t>(value.as_int());
    } else if (key == "gestures") {
      gestures = static_cast<std::size_t>(value.as_int());
    } else if (key == "contexts") {
      contexts = static_cast<std::size_t>(value.as_int());
    } else if (key == "users") {
      users = static_cast<std::size_t>(value.as_int());
    } else {
      throw ParamError("unknown gen config key: " + key);
    }
  }
  if (seed_given) gen_seed = seed;
  const Dataset ds =
      gen_dataset(default_catalog(gestures, contexts, users), counts, gen_seed);
  save_dataset(ds, out);
  std::cout << "wrote " << ds.instances.size() << " instances to " << out
            << "\n";
  return 0;
}

nlohmann::json report_json(const MetricsReport& rep) {
  return {{"case", rep.case_name},   {"method", rep.method},
          {"params", rep.params},    {"seed", rep.seed},
          {"avg_acc", rep.avg_acc},  {"forgetting", rep.forgetting},
          {"forgetting_expect", rep.forgetting_expect},
          {"rows", rep.rows},        {"flags", rep.flags}};
}

int cmd_run(const std::string& config, const std::string& out,
            const std::string& case_name, const std::string& method,
            std::uint64_t seed) {
  RunSpec spec;
  spec.kind = case_from_string(case_name);
  spec.method = strategy_from_string(method);
  spec.seed = seed;

  // --config may point at a dataset directory or at a run config (toml)
  std::string dataset_dir = config;
  std::uint64_t dataset_seed = 0;
  std::size_t per_class = kDefaultPerClass;
  TrainConfig train;
  if (config.size() > 5 && config.substr(config.size() - 5) == ".toml") {
    dataset_dir.clear();
    for (const auto& [key, value] : parse_toml_file(config)) {
      if (key == "dataset") {
        dataset_dir = value.as_str();
      } else if (key == "dataset_seed") {
        dataset_seed = static_cast<std::uint64_t>(value.as_int());
      } else if (key == "per_class_per_context") {
        per_class = static_cast<std::size_t>(value.as_int());
      } else if (key == "num_tasks") {
        spec.params.num_tasks = static_cast<std::size_t>(value.as_int());
      } else if (key == "ordering") {
        spec.params.ordering = ordering_from_string(value.as_str());
      } else if (key == "granularity") {
        spec.params.granularity = value.as_str() == "fine"
                                      ? Granularity::Fine
                                      : Granularity::Coarse;
      } else if (key == "gestures_per_task") {
        spec.params.gestures_per_task =
            static_cast<std::size_t>(value.as_int());
      } else if (key == "replay_M") {
        spec.replay_M = static_cast<std::size_t>(value.as_int());
      } else if (key == "train.max_epochs") {
        train.max_epochs = static_cast<std::size_t>(value.as_int());
      } else if (key == "train.probe_epochs") {
        train.probe_epochs = static_cast<std::size_t>(value.as_int());
      } else if (key == "train.packnet_retrain_epochs") {
        train.packnet_retrain_epochs =
            static_cast<std::size_t>(value.as_int());
      } else {
        throw ParamError("unknown run config key: " + key);
      }
    }
  }

  Dataset ds;
  if (!dataset_dir.empty()) {
    ds = load_dataset(dataset_dir);
  } else {
    GenCounts counts;
    counts.per_class_per_context = per_class;
    ds = gen_dataset(default_catalog(), counts, dataset_seed);
  }
  const MetricsReport rep = run_single(spec, ds, train);

  fs::create_directories(out);
  {
    std::ofstream f(fs::path(out) / "report.json",
                    std::ios::binary | std::ios::trunc);
    f << report_json(rep).dump(2) << "\n";
    if (!f) throw IoError("cannot write report.json");
  }
  {
    auto table = rows_from_report(rep, "-", "-");
    table.sort_canonical();
    std::ofstream f(fs::path(out) / "results.csv",
                    std::ios::binary | std::ios::trunc);
    f << table.to_csv();
    if (!f) throw IoError("cannot write results.csv");
  }
  if (!rep.avg_acc.empty()) {
    std::cout << "A_" << rep.avg_acc.size() << " = " << rep.avg_acc.back();
    if (!rep.forgetting.empty()) {
      std::cout << "  F_" << rep.avg_acc.size() << " = "
                << rep.forgetting.back();
    }
    std::cout << "\n";
  }
  return 0;
}

std::string value_to_string(const TomlValue& v) {
  if (v.kind == TomlValue::Kind::Str) return v.str;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v.as_num());
  return buf;
}

int cmd_sweep(const std::string& config, const std::string& out,
              std::size_t jobs, std::uint64_t master_seed) {
  const TomlTable toml = parse_toml_file(config);
  SweepConfig cfg;
  std::string dataset_dir;
  std::uint64_t dataset_seed = 0;
  std::size_t per_class = kDefaultPerClass;
  SweepOptions opts;
  for (const auto& [key, value] : toml) {
    if (key == "case") {
      cfg.kind = case_from_string(value.as_str());
    } else if (key == "swept_param") {
      cfg.swept_param = value.as_str();
    } else if (key == "values") {
      cfg.values.clear();
      for (const auto& v : value.as_arr()) {
        cfg.values.push_back(value_to_string(v));
      }
    } else if (key == "methods") {
      cfg.methods.clear();
      for (const auto& v : value.as_arr()) {
        cfg.methods.push_back(strategy_from_string(v.as_str()));
      }
    } else if (key == "seeds") {
      cfg.seeds.clear();
      for (const auto& v : value.as_arr()) {
        cfg.seeds.push_back(static_cast<std::uint64_t>(v.as_int()));
      }
    } else if (key == "dataset") {
      dataset_dir = value.as_str();
    } else if (key == "dataset_seed") {
      dataset_seed = static_cast<std::uint64_t>(value.as_int());
    } else if (key == "per_class_per_context") {
      per_class = static_cast<std::size_t>(value.as_int());
    } else if (key == "train.max_epochs") {
      opts.train.max_epochs = static_cast<std::size_t>(value.as_int());
    } else if (key == "train.probe_epochs") {
      opts.train.probe_epochs = static_cast<std::size_t>(value.as_int());
    } else if (key == "train.packnet_retrain_epochs") {
      opts.train.packnet_retrain_epochs =
          static_cast<std::size_t>(value.as_int());
    } else {
      throw ParamError("unknown sweep config key: " + key);
    }
  }

  Dataset ds;
  if (!dataset_dir.empty()) {
    ds = load_dataset(dataset_dir);
  } else {
    GenCounts counts;
    counts.per_class_per_context = per_class;
    ds = gen_dataset(default_catalog(), counts, dataset_seed);
  }

  opts.out_dir = out;
  opts.jobs = jobs;
  opts.master_seed = master_seed;
  const auto table = sweep(cfg, ds, opts);
  std::cout << table.rows.size() << " rows -> " << out << "/results.csv\n";
  return 0;
}

int cmd_report(const std::string& config, const std::string& out,
               const std::string& format) {
  std::ifstream f(config, std::ios::binary);
  if (!f) throw IoError("cannot read " + config);
  std::stringstream buf;
  buf << f.rdbuf();
  auto table = ResultsTable::from_csv(buf.str());
  table.sort_canonical();
  emit_report(table, format, out);
  std::cout << "report (" << format << ") -> " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"open-world gesture continual-learning laboratory"};
  app.require_subcommand(1);

  std::string config, out = "out", case_name = "new_context",
              method = "finetune", format = "csv";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--config", config, "generation config (toml)")->required();
  gen->add_option("--out", out, "output directory");
  auto* gen_seed = gen->add_option("--seed", seed, "override config seed");

  auto* run = app.add_subcommand("run", "one continual run");
  run->add_option("--config", config, "dataset directory (generated if absent)");
  run->add_option("--out", out, "output directory");
  run->add_option("--case", case_name, "new_context|new_gesture|new_user");
  run->add_option("--method", method,
                  "finetune|lwf|si|packnet|replay|mas");
  run->add_option("--seed", seed, "replication seed");

  auto* sweep_cmd = app.add_subcommand("sweep", "one-at-a-time sweep");
  sweep_cmd->add_option("--config", config, "sweep config (toml)")->required();
  sweep_cmd->add_option("--out", out, "output directory");
  sweep_cmd->add_option("--jobs", jobs, "work pool size")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1024}));
  sweep_cmd->add_option("--seed", seed, "master seed");

  auto* report = app.add_subcommand("report", "summaries from a results.csv");
  report->add_option("--config", config, "results.csv path")->required();
  report->add_option("--out", out, "output directory");
  report->add_option("--format", format, "csv|json|svg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "owgr-error: " << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) {
      return cmd_gen(config, out, seed, gen_seed->count() > 0);
    }
    if (run->parsed()) return cmd_run(config, out, case_name, method, seed);
    if (sweep_cmd->parsed()) return cmd_sweep(config, out, jobs, seed);
    if (report->parsed()) return cmd_report(config, out, format);
  } catch (const ParamError& e) {
    std::cerr << "owgr-error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "owgr-error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
