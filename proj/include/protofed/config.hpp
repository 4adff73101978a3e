#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "protofed/datagen.hpp"
#include "protofed/losses.hpp"

namespace protofed {

enum class MixupMode { kOff, kInput, kFeature };
enum class AggregatorMode { kReweight, kAverage };
enum class DataSource { kSynthetic, kCsv };

/// Client-side training knobs.
struct TrainConfig {
  int epochs = 10;
  int batch_size = 32;
  double lr = 0.01;
  double weight_decay = 1e-5;
  double tau = 0.07;
  double alpha = 0.4;
  bool gpcl = true;
  bool apa = true;
  MixupMode mixup = MixupMode::kFeature;
  ApaMode apa_mode = ApaMode::kPerSample;
};

struct ExperimentConfig {
  int rounds = 30;
  TrainConfig train;
  double beta = 0.99;
  bool ema = true;
  AggregatorMode aggregator = AggregatorMode::kReweight;
  std::vector<int> widths{64, 16};  // hidden widths..., feature dimension d
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  DataSource data = DataSource::kSynthetic;
  SyntheticSpec synthetic;
  std::string csv_path;
  PartitionPlan plan{{3, 2, 1, 2}, 0.5, 0.2};

  int num_classes() const { return synthetic.classes; }
  int num_domains() const { return synthetic.domains; }
};

/// Raw `key = value` entries, keyed by name.
using KeyValues = std::map<std::string, std::string>;

/// Parses the flat text format: one `key = value` per line, `#` starts a
/// comment, blank lines ignored. Duplicate keys are rejected.
KeyValues parse_key_values(const std::string& text, const std::string& origin = "<config>");
KeyValues read_key_values(const std::filesystem::path& path);

/// Every accepted key with its documented default, as text.
const KeyValues& default_key_values();

/// Strict resolution: unknown keys, missing required keys and constraint
/// violations are all collected into one ConfigError.
ExperimentConfig resolve_config(const KeyValues& values);

nlohmann::json to_json(const ExperimentConfig& cfg);

std::string to_string(MixupMode m);
std::string to_string(AggregatorMode m);
std::string to_string(ApaMode m);

/// One-parameter sweep over tau, alpha or beta.
struct SweepSpec {
  std::string param;
  std::vector<std::string> values;
  KeyValues base;
};

/// Sweep files use `sweep_param`, `sweep_values` (comma separated) and an
/// optional `base_config` path (relative to the sweep file); every other key
/// overrides the base configuration.
SweepSpec read_sweep(const std::filesystem::path& path);
SweepSpec parse_sweep(const KeyValues& values, const std::filesystem::path& base_dir);

}  // namespace protofed
