#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "protofed/config.hpp"
#include "protofed/datagen.hpp"
#include "protofed/losses.hpp"
#include "protofed/model.hpp"
#include "protofed/prototypes.hpp"

namespace protofed {

// RNG stream ids outside the client-index range.
inline constexpr std::uint64_t kDataStream = 0xDA7A0000'00000000ULL;
inline constexpr std::uint64_t kInitStream = 0x1A170000'00000000ULL;

struct ClientState {
  int client_id = 0;
  int domain = 0;
  std::vector<Sample> dataset;
  Mat inputs;               // input_dim x N, column i = dataset[i].x
  std::vector<int> labels;  // dataset labels
  ModelParams params;
  Rng rng;

  ClientState(int id, int domain_id, std::vector<Sample> data, std::uint64_t seed);
  std::size_t size() const { return dataset.size(); }
};

struct ServerState {
  int round = 0;
  ModelParams global_params;
  std::optional<PrototypeSet> generalized;
  double beta = 0.99;
  AggregatorMode aggregator = AggregatorMode::kReweight;
  bool ema_enabled = true;
};

struct LocalResult {
  ModelParams params;
  PrototypeSet prototypes;  // over the full local dataset, final local model
  LossBreakdown mean_loss;  // mean over all local batches
};

struct Accuracy {
  std::map<int, double> per_domain;
  double average = 0.0;  // unweighted mean over domains
};

struct RoundReport {
  int round = 0;
  Accuracy accuracy;
  std::vector<LossBreakdown> client_losses;  // indexed by client id
};

struct Summary {
  int rounds = 0;
  int window = 0;  // number of final rounds averaged
  Accuracy final_accuracy;
};

/// One client's LocalUpdate: R epochs of shuffled mini-batch SGD on
/// CE + APA + GPCL (GPCL skipped without generalized prototypes), then local
/// prototypes of the full dataset under the trained model.
LocalResult local_update(ClientState& client, const ModelParams& global_params,
                         const PrototypeSet* generalized, const TrainConfig& cfg);

/// Weighted average with weights |D_m| / sum |D_m|, accumulated in list order.
ModelParams aggregate_params(std::span<const ModelParams> client_params,
                             std::span<const std::size_t> sample_counts);

/// Top-1 accuracy per domain (argmax ties go to the lowest class index).
Accuracy evaluate(const ModelParams& params, const std::vector<std::vector<Sample>>& test_sets);

/// Generalized prototypes for the next round from the collected client sets.
PrototypeSet build_generalized(std::span<const PrototypeSet> client_sets,
                               const std::optional<PrototypeSet>& previous,
                               AggregatorMode mode, bool ema_enabled, double beta);

/// Broadcast, parallel local training over `threads` workers, barrier,
/// aggregation and evaluation. Advances server.round.
RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const TrainConfig& cfg, const std::vector<std::vector<Sample>>& test_sets,
                      int threads = 1);

/// Data, clients and initial model derived from a config and its seed.
struct ExperimentSetup {
  Partition partition;
  ModelParams initial_params;
  int num_classes = 0;
};

ExperimentSetup prepare_experiment(const ExperimentConfig& cfg);
std::vector<ClientState> make_clients(const Partition& partition, std::uint64_t seed);

struct ExperimentResult {
  std::vector<RoundReport> rounds;
  Summary summary;
  ModelParams final_params;
  std::optional<PrototypeSet> generalized;
};

using RoundCallback = std::function<void(const RoundReport&)>;

ExperimentResult run_experiment(const ExperimentConfig& cfg, int threads = 1,
                                const RoundCallback& on_round = {});

/// Mean accuracy over the last min(window, rounds) reports.
Summary summarize(const std::vector<RoundReport>& rounds, int window = 5);

/// PROTOFED_THREADS when set and positive, otherwise the hardware concurrency.
int worker_threads_from_env();

nlohmann::json to_json(const RoundReport& report);
nlohmann::json to_json(const Summary& summary);

}  // namespace protofed
