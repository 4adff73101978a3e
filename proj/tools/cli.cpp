#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <tuple>

#include "protofed/checkpoint.hpp"
#include "protofed/config.hpp"
#include "protofed/federation.hpp"

namespace protofed::cli {

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

KeyValues load_config_values(const CommonArgs& args) {
  KeyValues values = args.config.empty() ? KeyValues{} : read_key_values(args.config);
  if (!args.out.empty()) values["out_dir"] = args.out;
  if (args.seed) values["seed"] = std::to_string(*args.seed);
  return values;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IngestionError("write failed for " + path.string());
}

std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string csv_safe(std::string s) {
  for (auto& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

/// Runs one experiment and writes its artifacts into cfg.out_dir.
ExperimentResult run_to_dir(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  write_text(dir / "config.resolved.json", to_json(cfg).dump(2) + "\n");

  std::ofstream rounds(dir / "rounds.jsonl", std::ios::binary);
  if (!rounds) throw IngestionError("cannot open " + (dir / "rounds.jsonl").string());
  auto on_round = [&](const RoundReport& r) { rounds << to_json(r).dump() << '\n' << std::flush; };
  ExperimentResult result = run_experiment(cfg, worker_threads_from_env(), on_round);

  write_text(dir / "summary.json", to_json(result.summary).dump(2) + "\n");
  save_checkpoint(dir / "model.bin", Checkpoint{result.final_params, result.generalized});
  if (result.generalized) {
    write_text(dir / "prototypes.json", to_json(*result.generalized).dump(2) + "\n");
  }
  return result;
}

int cmd_run(const CommonArgs& args, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(load_config_values(args));
  const auto result = run_to_dir(cfg);
  out << "rounds: " << result.summary.rounds << "  avg_acc_last" << result.summary.window << ": "
      << fmt_real(result.summary.final_accuracy.average) << "  -> " << cfg.out_dir << "\n";
  return kExitOk;
}

int cmd_sweep(const CommonArgs& args, std::ostream& out, std::ostream& err) {
  if (args.config.empty()) throw ConfigError("sweep: --config is required");
  SweepSpec spec = read_sweep(args.config);
  if (args.seed) spec.base["seed"] = std::to_string(*args.seed);
  const fs::path root = !args.out.empty()                ? fs::path(args.out)
                        : spec.base.count("out_dir") ? fs::path(spec.base.at("out_dir"))
                                                         : fs::path("out");
  // Validate the base once so systematic errors fail fast.
  resolve_config(spec.base);
  fs::create_directories(root);

  std::ofstream csv(root / "sweep.csv", std::ios::binary);
  if (!csv) throw IngestionError("cannot open " + (root / "sweep.csv").string());
  const int domains = resolve_config(spec.base).num_domains();
  csv << "param,value,avg_acc_last5";
  for (int d = 0; d < domains; ++d) csv << ",domain_" << d;
  csv << ",status\n";

  int failures = 0;
  for (const auto& value : spec.values) {
    KeyValues values = spec.base;
    values[spec.param] = value;
    values["out_dir"] = (root / (spec.param + "_" + value)).string();
    csv << spec.param << ',' << value;
    try {
      const ExperimentConfig cfg = resolve_config(values);
      const auto result = run_to_dir(cfg);
      csv << ',' << fmt_real(result.summary.final_accuracy.average);
      for (int d = 0; d < domains; ++d) {
        csv << ',' << fmt_real(result.summary.final_accuracy.per_domain.at(d));
      }
      csv << ",ok\n";
      out << spec.param << "=" << value << "  avg_acc_last5: "
          << fmt_real(result.summary.final_accuracy.average) << "\n";
    } catch (const std::exception& e) {
      ++failures;
      csv << ',';
      for (int d = 0; d < domains; ++d) csv << ',';
      csv << ",error: " << csv_safe(e.what()) << '\n';
      err << spec.param << "=" << value << " failed: " << e.what() << "\n";
    }
    csv << std::flush;
  }
  out << "sweep: " << spec.values.size() << " runs, " << failures << " failed -> "
      << (root / "sweep.csv").string() << "\n";
  return kExitOk;
}

struct AblationRow {
  std::string group;
  std::string variant;
  bool gpcl;
  bool apa;
  AggregatorMode aggregator;
  MixupMode mixup;
};

int cmd_ablate(const CommonArgs& args, std::ostream& out) {
  const KeyValues base = load_config_values(args);
  const ExperimentConfig base_cfg = resolve_config(base);
  const fs::path root = base_cfg.out_dir;
  fs::create_directories(root);

  const auto agg = base_cfg.aggregator;
  const auto mix = base_cfg.train.mixup;
  const std::vector<AblationRow> rows = {
      {"components", "gpcl=off,apa=off", false, false, agg, mix},
      {"components", "gpcl=on,apa=off", true, false, agg, mix},
      {"components", "gpcl=off,apa=on", false, true, agg, mix},
      {"components", "gpcl=on,apa=on", true, true, agg, mix},
      {"aggregator", "averaging", true, true, AggregatorMode::kAverage, mix},
      {"aggregator", "reweighting", true, true, AggregatorMode::kReweight, mix},
      {"mixup", "without_mixup", true, true, agg, MixupMode::kOff},
      {"mixup", "mixup_input", true, true, agg, MixupMode::kInput},
      {"mixup", "mixup_feature", true, true, agg, MixupMode::kFeature},
  };

  std::ofstream csv(root / "ablation.csv", std::ios::binary);
  if (!csv) throw IngestionError("cannot open " + (root / "ablation.csv").string());
  csv << "group,variant,gpcl,apa,aggregator,mixup,avg_acc_last5,worst_domain_acc";
  for (int d = 0; d < base_cfg.num_domains(); ++d) csv << ",domain_" << d;
  csv << "\n";

  std::map<std::tuple<bool, bool, AggregatorMode, MixupMode>, Summary> cache;
  for (const auto& row : rows) {
    const auto key = std::make_tuple(row.gpcl, row.apa, row.aggregator, row.mixup);
    auto it = cache.find(key);
    if (it == cache.end()) {
      ExperimentConfig cfg = base_cfg;
      cfg.train.gpcl = row.gpcl;
      cfg.train.apa = row.apa;
      cfg.aggregator = row.aggregator;
      cfg.train.mixup = row.mixup;
      cfg.out_dir = (root / (std::string(row.gpcl ? "gpcl" : "nogpcl") + "_" +
                             (row.apa ? "apa" : "noapa") + "_" + to_string(row.aggregator) +
                             "_" + to_string(row.mixup)))
                        .string();
      it = cache.emplace(key, run_to_dir(cfg).summary).first;
    }
    const Summary& s = it->second;
    double worst = 1.0;
    for (const auto& [d, a] : s.final_accuracy.per_domain) worst = std::min(worst, a);
    csv << row.group << ',' << '"' << row.variant << '"' << ',' << (row.gpcl ? "on" : "off") << ','
        << (row.apa ? "on" : "off") << ',' << to_string(row.aggregator) << ','
        << to_string(row.mixup) << ',' << fmt_real(s.final_accuracy.average) << ','
        << fmt_real(worst);
    for (const auto& [d, a] : s.final_accuracy.per_domain) csv << ',' << fmt_real(a);
    csv << "\n";
    out << row.group << " / " << row.variant << "  avg_acc_last5: "
        << fmt_real(s.final_accuracy.average) << "\n";
  }
  out << "ablation: " << cache.size() << " distinct runs -> " << (root / "ablation.csv").string()
      << "\n";
  return kExitOk;
}

int cmd_dump_embeddings(const std::string& checkpoint, const std::string& data,
                        const std::string& out_path, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const auto dim = static_cast<int>(ckpt.params.input_dim());
  CsvSchema schema{std::nullopt, static_cast<int>(ckpt.params.num_classes()), std::nullopt};
  std::vector<Sample> samples = load_csv(data, schema);
  if (!samples.empty() && samples.front().x.size() != dim) {
    throw ConfigError("dump-embeddings: data has " + std::to_string(samples.front().x.size()) +
                      " input columns, checkpoint expects " + std::to_string(dim));
  }
  std::vector<Sample> embedded;
  embedded.reserve(samples.size());
  for (const auto& s : samples) {
    embedded.push_back(Sample{forward(ckpt.params, s.x).features.col(0), s.label, s.domain});
  }
  if (embedded.empty()) {
    // Header only; keep the feature columns so downstream readers see the width.
    std::ofstream os(out_path, std::ios::binary);
    for (Eigen::Index i = 0; i < ckpt.params.feature_dim(); ++i) os << 'h' << i << ',';
    os << "label,domain\n";
  } else {
    write_csv(out_path, embedded, "h");
  }
  out << "embeddings: " << embedded.size() << " rows x " << ckpt.params.feature_dim() + 2
      << " columns -> " << out_path << "\n";
  return kExitOk;
}

int cmd_gen_data(const CommonArgs& args, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(load_config_values(args));
  if (cfg.data != DataSource::kSynthetic) throw ConfigError("gen-data: requires data = synthetic");
  Rng rng(cfg.seed, kDataStream);
  const auto domains = make_domains(cfg.synthetic, rng);
  std::vector<Sample> all;
  for (const auto& d : domains) all.insert(all.end(), d.begin(), d.end());
  fs::create_directories(cfg.out_dir);
  const fs::path path = fs::path(cfg.out_dir) / "data.csv";
  write_csv(path, all);
  out << "gen-data: " << all.size() << " samples -> " << path.string() << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated prototype learning simulator"};
  app.require_subcommand(1);

  CommonArgs common;
  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", common.config, "key = value config file");
    if (config_required) opt->required();
    sub->add_option("--out", common.out, "output directory (overrides out_dir)");
    sub->add_option("--seed", common.seed, "seed (overrides the config)");
  };
  auto* run_cmd = app.add_subcommand("run", "run one experiment");
  add_common(run_cmd, false);
  auto* sweep_cmd = app.add_subcommand("sweep", "sweep tau, alpha or beta");
  add_common(sweep_cmd, true);
  auto* ablate_cmd = app.add_subcommand("ablate", "component/aggregator/mixup ablation grid");
  add_common(ablate_cmd, false);
  auto* gen_cmd = app.add_subcommand("gen-data", "write the synthetic dataset as CSV");
  add_common(gen_cmd, false);

  std::string checkpoint, data, dump_out;
  auto* dump_cmd = app.add_subcommand("dump-embeddings", "write features h of a dataset");
  dump_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  dump_cmd->add_option("--data", data, "input CSV")->required();
  dump_cmd->add_option("--out", dump_out, "output CSV")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(common, out);
    if (sweep_cmd->parsed()) return cmd_sweep(common, out, err);
    if (ablate_cmd->parsed()) return cmd_ablate(common, out);
    if (gen_cmd->parsed()) return cmd_gen_data(common, out);
    if (dump_cmd->parsed()) return cmd_dump_embeddings(checkpoint, data, dump_out, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}

}  // namespace protofed::cli
