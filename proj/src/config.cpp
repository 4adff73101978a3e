#include "protofed/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace protofed {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

class Resolver {
 public:
  explicit Resolver(const KeyValues& values) : values_(values) {}

  const std::string& raw(const std::string& key) { return values_.at(key); }

  int integer(const std::string& key) {
    const auto& s = raw(key);
    int v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) error(key + ": '" + s + "' is not an integer");
    return v;
  }

  std::uint64_t unsigned64(const std::string& key) {
    const auto& s = raw(key);
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      error(key + ": '" + s + "' is not an unsigned integer");
    }
    return v;
  }

  double real(const std::string& key) {
    const auto& s = raw(key);
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
      error(key + ": '" + s + "' is not a finite real");
    }
    return v;
  }

  bool flag(const std::string& key) {
    const auto& s = raw(key);
    if (s == "true" || s == "on" || s == "1") return true;
    if (s == "false" || s == "off" || s == "0") return false;
    error(key + ": '" + s + "' is not a boolean (true/false)");
    return false;
  }

  std::vector<int> int_list(const std::string& key) {
    std::vector<int> out;
    for (const auto& item : split_list(raw(key))) {
      int v = 0;
      const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc() || p != item.data() + item.size()) {
        error(key + ": '" + item + "' is not an integer");
        continue;
      }
      out.push_back(v);
    }
    if (out.empty()) error(key + ": list must not be empty");
    return out;
  }

  template <typename E>
  E choice(const std::string& key, const std::vector<std::pair<std::string, E>>& options) {
    const auto& s = raw(key);
    std::string names;
    for (const auto& [name, value] : options) {
      if (s == name) return value;
      names += (names.empty() ? "" : "|") + name;
    }
    error(key + ": '" + s + "' is not one of " + names);
    return options.front().second;
  }

  void require(bool ok, const std::string& message) {
    if (!ok) error(message);
  }

  void error(const std::string& message) { errors_.push_back(message); }
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  const KeyValues& values_;
  std::vector<std::string> errors_;
};

std::string join_errors(const std::string& title, const std::vector<std::string>& errors) {
  std::string msg = title;
  for (const auto& e : errors) msg += "\n  " + e;
  return msg;
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues out;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  std::vector<std::string> errors;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) {
      errors.push_back(where + ": expected key = value");
      continue;
    }
    auto key = trim(std::string_view(body).substr(0, eq));
    auto value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) {
      errors.push_back(where + ": empty key");
      continue;
    }
    if (!out.emplace(key, value).second) errors.push_back(where + ": duplicate key '" + key + "'");
  }
  if (!errors.empty()) throw ConfigError(join_errors("invalid config " + origin + ":", errors));
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

const KeyValues& default_key_values() {
  static const KeyValues defaults = {
      {"rounds", "30"},
      {"epochs", "10"},
      {"batch_size", "32"},
      {"lr", "0.01"},
      {"weight_decay", "1e-5"},
      {"tau", "0.07"},
      {"alpha", "0.4"},
      {"beta", "0.99"},
      {"ema", "true"},
      {"aggregator", "reweight"},
      {"gpcl", "true"},
      {"apa", "true"},
      {"mixup", "feature"},
      {"apa_mode", "per_sample"},
      {"widths", "64,16"},
      {"seed", "1"},
      {"out_dir", "out"},
      {"data", "synthetic"},
      {"classes", "5"},
      {"domains", "4"},
      {"input_dim", "16"},
      {"per_class", "100"},
      {"anchor_scale", "1.5"},
      {"noise_sigma", "1.0"},
      {"max_rotation", "0.8"},
      {"scale_spread", "2.0"},
      {"bias_scale", "1.0"},
      {"clients_per_domain", "3,2,1,2"},
      {"sampling_rate", "0.5"},
      {"test_fraction", "0.2"},
      {"csv_path", ""},
  };
  return defaults;
}

ExperimentConfig resolve_config(const KeyValues& values) {
  const auto& defaults = default_key_values();
  std::vector<std::string> unknown;
  for (const auto& [k, v] : values) {
    if (!defaults.count(k)) unknown.push_back("unknown key '" + k + "'");
  }
  if (!unknown.empty()) throw ConfigError(join_errors("config rejected:", unknown));

  KeyValues merged = defaults;
  for (const auto& [k, v] : values) merged[k] = v;

  Resolver r(merged);
  ExperimentConfig cfg;
  cfg.rounds = r.integer("rounds");
  cfg.train.epochs = r.integer("epochs");
  cfg.train.batch_size = r.integer("batch_size");
  cfg.train.lr = r.real("lr");
  cfg.train.weight_decay = r.real("weight_decay");
  cfg.train.tau = r.real("tau");
  cfg.train.alpha = r.real("alpha");
  cfg.beta = r.real("beta");
  cfg.ema = r.flag("ema");
  cfg.aggregator = r.choice<AggregatorMode>(
      "aggregator", {{"reweight", AggregatorMode::kReweight}, {"average", AggregatorMode::kAverage}});
  cfg.train.gpcl = r.flag("gpcl");
  cfg.train.apa = r.flag("apa");
  cfg.train.mixup = r.choice<MixupMode>(
      "mixup",
      {{"feature", MixupMode::kFeature}, {"input", MixupMode::kInput}, {"off", MixupMode::kOff}});
  cfg.train.apa_mode = r.choice<ApaMode>(
      "apa_mode", {{"per_sample", ApaMode::kPerSample}, {"class_mean", ApaMode::kClassMean}});
  cfg.widths = r.int_list("widths");
  cfg.seed = r.unsigned64("seed");
  cfg.out_dir = r.raw("out_dir");
  cfg.data = r.choice<DataSource>("data",
                                  {{"synthetic", DataSource::kSynthetic}, {"csv", DataSource::kCsv}});
  cfg.synthetic.classes = r.integer("classes");
  cfg.synthetic.domains = r.integer("domains");
  cfg.synthetic.input_dim = r.integer("input_dim");
  cfg.synthetic.per_class = r.integer("per_class");
  cfg.synthetic.anchor_scale = r.real("anchor_scale");
  cfg.synthetic.noise_sigma = r.real("noise_sigma");
  cfg.synthetic.max_rotation = r.real("max_rotation");
  cfg.synthetic.scale_spread = r.real("scale_spread");
  cfg.synthetic.bias_scale = r.real("bias_scale");
  cfg.plan.clients_per_domain = r.int_list("clients_per_domain");
  cfg.plan.sampling_rate = r.real("sampling_rate");
  cfg.plan.test_fraction = r.real("test_fraction");
  cfg.csv_path = r.raw("csv_path");

  r.require(cfg.rounds >= 1, "rounds must be >= 1");
  r.require(cfg.train.epochs >= 1, "epochs must be >= 1");
  r.require(cfg.train.batch_size >= 1, "batch_size must be >= 1");
  r.require(cfg.train.lr > 0.0, "lr must be > 0");
  r.require(cfg.train.weight_decay >= 0.0, "weight_decay must be >= 0");
  r.require(cfg.train.tau > 0.0, "tau must be > 0");
  r.require(cfg.train.alpha > 0.0, "alpha must be > 0");
  r.require(cfg.beta >= 0.0 && cfg.beta <= 1.0, "beta must be in [0, 1]");
  for (int w : cfg.widths) r.require(w >= 1, "widths must be positive");
  r.require(cfg.synthetic.classes >= 2, "classes must be >= 2");
  r.require(cfg.synthetic.domains >= 1, "domains must be >= 1");
  r.require(cfg.synthetic.input_dim >= 2, "input_dim must be >= 2");
  r.require(cfg.synthetic.per_class >= 1, "per_class must be >= 1");
  r.require(cfg.synthetic.anchor_scale > 0.0, "anchor_scale must be > 0");
  r.require(cfg.synthetic.noise_sigma >= 0.0, "noise_sigma must be >= 0");
  r.require(cfg.synthetic.max_rotation >= 0.0, "max_rotation must be >= 0");
  r.require(cfg.synthetic.scale_spread >= 1.0, "scale_spread must be >= 1");
  r.require(cfg.synthetic.bias_scale >= 0.0, "bias_scale must be >= 0");
  r.require(cfg.plan.sampling_rate > 0.0 && cfg.plan.sampling_rate <= 1.0,
            "sampling_rate must be in (0, 1]");
  r.require(cfg.plan.test_fraction > 0.0 && cfg.plan.test_fraction < 1.0,
            "test_fraction must be in (0, 1)");
  r.require(static_cast<int>(cfg.plan.clients_per_domain.size()) == cfg.synthetic.domains,
            "clients_per_domain must list one count per domain");
  for (int c : cfg.plan.clients_per_domain) r.require(c >= 0, "clients_per_domain must be >= 0");
  r.require(cfg.plan.total_clients() >= 1, "clients_per_domain allocates no clients");
  if (cfg.data == DataSource::kCsv) {
    r.require(!cfg.csv_path.empty(), "missing required key 'csv_path' (data = csv)");
  }
  if (!r.errors().empty()) throw ConfigError(join_errors("config rejected:", r.errors()));
  return cfg;
}

std::string to_string(MixupMode m) {
  switch (m) {
    case MixupMode::kOff: return "off";
    case MixupMode::kInput: return "input";
    case MixupMode::kFeature: return "feature";
  }
  return "?";
}

std::string to_string(AggregatorMode m) {
  return m == AggregatorMode::kReweight ? "reweight" : "average";
}

std::string to_string(ApaMode m) {
  return m == ApaMode::kPerSample ? "per_sample" : "class_mean";
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  return {
      {"rounds", cfg.rounds},
      {"epochs", cfg.train.epochs},
      {"batch_size", cfg.train.batch_size},
      {"lr", cfg.train.lr},
      {"weight_decay", cfg.train.weight_decay},
      {"tau", cfg.train.tau},
      {"alpha", cfg.train.alpha},
      {"beta", cfg.beta},
      {"ema", cfg.ema},
      {"aggregator", to_string(cfg.aggregator)},
      {"gpcl", cfg.train.gpcl},
      {"apa", cfg.train.apa},
      {"mixup", to_string(cfg.train.mixup)},
      {"apa_mode", to_string(cfg.train.apa_mode)},
      {"widths", cfg.widths},
      {"seed", cfg.seed},
      {"out_dir", cfg.out_dir},
      {"data", cfg.data == DataSource::kSynthetic ? "synthetic" : "csv"},
      {"classes", cfg.synthetic.classes},
      {"domains", cfg.synthetic.domains},
      {"input_dim", cfg.synthetic.input_dim},
      {"per_class", cfg.synthetic.per_class},
      {"anchor_scale", cfg.synthetic.anchor_scale},
      {"noise_sigma", cfg.synthetic.noise_sigma},
      {"max_rotation", cfg.synthetic.max_rotation},
      {"scale_spread", cfg.synthetic.scale_spread},
      {"bias_scale", cfg.synthetic.bias_scale},
      {"clients_per_domain", cfg.plan.clients_per_domain},
      {"sampling_rate", cfg.plan.sampling_rate},
      {"test_fraction", cfg.plan.test_fraction},
      {"csv_path", cfg.csv_path},
  };
}

SweepSpec parse_sweep(const KeyValues& values, const std::filesystem::path& base_dir) {
  SweepSpec spec;
  std::vector<std::string> errors;
  auto it = values.find("sweep_param");
  if (it == values.end()) {
    errors.push_back("missing required key 'sweep_param'");
  } else {
    spec.param = it->second;
    if (spec.param != "tau" && spec.param != "alpha" && spec.param != "beta") {
      errors.push_back("sweep_param must be one of tau|alpha|beta, got '" + spec.param + "'");
    }
  }
  it = values.find("sweep_values");
  if (it == values.end()) {
    errors.push_back("missing required key 'sweep_values'");
  } else {
    spec.values = split_list(it->second);
    if (spec.values.empty()) errors.push_back("sweep_values must not be empty");
  }
  if (!errors.empty()) throw ConfigError(join_errors("sweep rejected:", errors));

  if (auto b = values.find("base_config"); b != values.end()) {
    std::filesystem::path p = b->second;
    if (p.is_relative()) p = base_dir / p;
    spec.base = read_key_values(p);
  }
  for (const auto& [k, v] : values) {
    if (k == "sweep_param" || k == "sweep_values" || k == "base_config") continue;
    spec.base[k] = v;
  }
  return spec;
}

SweepSpec read_sweep(const std::filesystem::path& path) {
  return parse_sweep(read_key_values(path), path.parent_path());
}

}  // namespace protofed
