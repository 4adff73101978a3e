#pragma once

#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "protofed/numerics.hpp"

namespace protofed {

struct Sample {
  Vec x;
  int label = 0;
  int domain = 0;
};

/// Affine map that defines one domain's input distribution:
/// x = scale .* (rotation * z) + bias, with z = anchor + noise_sigma * N(0, I).
struct DomainSpec {
  Mat rotation;
  Vec scale;
  Vec bias;
  double noise_sigma = 1.0;

  static DomainSpec identity(int input_dim, double noise_sigma);
  void validate() const;
};

/// Knobs of the random domain generator used by make_domains.
struct SyntheticSpec {
  int classes = 5;
  int domains = 4;
  int input_dim = 16;
  int per_class = 100;        // samples per class per domain
  double anchor_scale = 1.5;  // std-dev of the shared class anchors
  double noise_sigma = 1.0;
  double max_rotation = 0.8;  // radians per Givens rotation
  double scale_spread = 2.0;  // per-dimension scale in [1/spread, spread]
  double bias_scale = 1.0;
};

/// Draws a random DomainSpec per domain from the generator knobs.
std::vector<DomainSpec> make_domain_specs(const SyntheticSpec& spec, Rng& rng);

/// Shared class anchors (columns) with independent N(0, anchor_scale^2) entries.
Mat make_class_anchors(int classes, int input_dim, double anchor_scale, Rng& rng);

/// Samples per domain (outer index = domain id). Every domain holds exactly
/// per_class samples of every class.
std::vector<std::vector<Sample>> make_domains(const Mat& anchors,
                                              const std::vector<DomainSpec>& specs, int per_class,
                                              Rng& rng);
std::vector<std::vector<Sample>> make_domains(const SyntheticSpec& spec, Rng& rng);
std::vector<std::vector<Sample>> make_domains(int classes, int domains, int input_dim,
                                              int per_class, Rng& rng);

struct PartitionPlan {
  std::vector<int> clients_per_domain;
  double sampling_rate = 1.0;
  double test_fraction = 0.2;

  int total_clients() const;
  void validate(std::size_t domain_count) const;
};

struct ClientData {
  int client_id = 0;
  int domain = 0;
  std::vector<std::size_t> pool_indices;  // indices into the domain's sample list
  std::vector<Sample> samples;
};

struct Partition {
  std::vector<ClientData> clients;
  std::vector<std::vector<Sample>> test_sets;             // per domain
  std::vector<std::vector<std::size_t>> test_indices;     // per domain
  std::vector<std::vector<std::size_t>> train_pool;       // per domain
};

/// Holds out test_fraction of every domain, assigns domains to clients in a
/// random order matching the plan's counts, then gives each client
/// floor(sampling_rate * |train pool|) samples drawn without replacement
/// from its domain's training pool.
Partition partition(const std::vector<std::vector<Sample>>& domain_data, const PartitionPlan& plan,
                    Rng& rng);

std::vector<std::vector<Sample>> group_by_domain(const std::vector<Sample>& samples,
                                                 int domain_count);

struct CsvSchema {
  std::optional<int> input_dim;  // inferred from the header when absent
  int num_classes = 0;
  std::optional<int> num_domains;
};

/// Header `x0,...,x{n-1},label,domain`; reals written with 17 significant digits.
/// The feature columns use `prefix` instead of `x` when given (embedding dumps use `h`);
/// load_csv accepts any feature column names.
void write_csv(const std::filesystem::path& path, const std::vector<Sample>& samples,
               std::string_view prefix = "x");
std::vector<Sample> load_csv(const std::filesystem::path& path, const CsvSchema& schema);

}  // namespace protofed
