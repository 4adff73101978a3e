#include "protofed/federation.hpp"

#include <cstdlib>
#include <exception>
#include <string>
#include <thread>

namespace protofed {

namespace {

Mat stack_inputs(const std::vector<Sample>& samples) {
  if (samples.empty()) return {};
  Mat x(samples.front().x.size(), static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = samples[i].x;
  return x;
}

std::vector<int> stack_labels(const std::vector<Sample>& samples) {
  std::vector<int> y;
  y.reserve(samples.size());
  for (const auto& s : samples) y.push_back(s.label);
  return y;
}

void shuffle_indices(std::vector<Eigen::Index>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_index(i));
    std::swap(v[i - 1], v[j]);
  }
}

// Augmented prototypes of one batch according to the MixUp mode.
PrototypeSet batch_augmented_prototypes(const ModelParams& params, const Mat& inputs,
                                        const Mat& features, std::span<const int> labels,
                                        Rng& rng, const TrainConfig& cfg) {
  switch (cfg.mixup) {
    case MixupMode::kFeature:
      return augmented_prototypes(features, labels, rng, cfg.alpha);
    case MixupMode::kInput: {
      const Mat mixed = mixup_features(inputs, labels, rng, cfg.alpha);
      return local_prototypes(forward(params, mixed).features, labels);
    }
    case MixupMode::kOff:
      break;
  }
  return local_prototypes(features, labels);
}

}  // namespace

ClientState::ClientState(int id, int domain_id, std::vector<Sample> data, std::uint64_t seed)
    : client_id(id),
      domain(domain_id),
      dataset(std::move(data)),
      inputs(stack_inputs(dataset)),
      labels(stack_labels(dataset)),
      rng(seed, static_cast<std::uint64_t>(id)) {
  if (dataset.empty()) throw UsageError("client " + std::to_string(id) + " has no data");
}

LocalResult local_update(ClientState& client, const ModelParams& global_params,
                         const PrototypeSet* generalized, const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw UsageError("local_update: epochs must be >= 1");
  if (cfg.batch_size < 1) throw UsageError("local_update: batch_size must be >= 1");
  const auto n = static_cast<Eigen::Index>(client.size());
  const Eigen::Index batch = std::min<Eigen::Index>(cfg.batch_size, n);
  const bool use_gpcl = cfg.gpcl && generalized && !generalized->empty();

  ModelParams params = global_params;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  LossBreakdown sum;
  std::size_t steps = 0;
  Mat x;
  std::vector<int> y;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(order, client.rng);
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index b = std::min(batch, n - start);
      x.resize(client.inputs.rows(), b);
      y.resize(static_cast<std::size_t>(b));
      for (Eigen::Index i = 0; i < b; ++i) {
        const auto src = order[static_cast<std::size_t>(start + i)];
        x.col(i) = client.inputs.col(src);
        y[static_cast<std::size_t>(i)] = client.labels[static_cast<std::size_t>(src)];
      }

      const ForwardTrace trace = forward(params, x);
      const LossValue ce = cross_entropy(trace.logits, y);
      Mat dfeatures = Mat::Zero(trace.features.rows(), b);
      double apa_value = 0.0;
      double gpcl_value = 0.0;
      if (cfg.apa) {
        const PrototypeSet augmented =
            batch_augmented_prototypes(params, x, trace.features, y, client.rng, cfg);
        const LossValue apa = apa_loss(trace.features, y, augmented, cfg.apa_mode);
        apa_value = apa.value;
        dfeatures += apa.grad;
      }
      if (use_gpcl) {
        const LossValue gpcl = gpcl_loss(trace.features, y, *generalized, cfg.tau);
        gpcl_value = gpcl.value;
        dfeatures += gpcl.grad;
      }
      const LossBreakdown step = total_loss(ce.value, gpcl_value, apa_value);
      sum.ce += step.ce;
      sum.gpcl += step.gpcl;
      sum.apa += step.apa;
      sum.total += step.total;
      ++steps;

      const ModelGrads grads = backward(params, trace, ce.grad, dfeatures);
      params = sgd_step(params, grads, cfg.lr, cfg.weight_decay);
    }
  }

  LocalResult result;
  result.prototypes = local_prototypes(forward(params, client.inputs).features, client.labels);
  const double inv = 1.0 / static_cast<double>(steps);
  result.mean_loss = LossBreakdown{sum.ce * inv, sum.gpcl * inv, sum.apa * inv, sum.total * inv};
  client.params = params;
  result.params = std::move(params);
  return result;
}

ModelParams aggregate_params(std::span<const ModelParams> client_params,
                             std::span<const std::size_t> sample_counts) {
  if (client_params.empty()) throw UsageError("aggregate_params: no client models");
  if (client_params.size() != sample_counts.size()) {
    throw UsageError("aggregate_params: one sample count per client required");
  }
  std::size_t total = 0;
  for (auto c : sample_counts) {
    if (c == 0) throw UsageError("aggregate_params: sample counts must be positive");
    total += c;
  }
  ModelParams acc = zeros_like(client_params.front());
  for (std::size_t m = 0; m < client_params.size(); ++m) {
    if (!same_shape(acc, client_params[m])) throw UsageError("aggregate_params: shape mismatch");
    accumulate_scaled(acc, client_params[m],
                      static_cast<double>(sample_counts[m]) / static_cast<double>(total));
  }
  return acc;
}

Accuracy evaluate(const ModelParams& params, const std::vector<std::vector<Sample>>& test_sets) {
  Accuracy acc;
  double sum = 0.0;
  int domains = 0;
  for (std::size_t d = 0; d < test_sets.size(); ++d) {
    const auto& set = test_sets[d];
    if (set.empty()) throw UsageError("evaluate: empty test set for domain " + std::to_string(d));
    const Mat logits = forward(params, stack_inputs(set)).logits;
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < logits.cols(); ++i) {
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < logits.rows(); ++k) {
        if (logits(k, i) > logits(best, i)) best = k;
      }
      if (best == set[static_cast<std::size_t>(i)].label) ++correct;
    }
    const double a = static_cast<double>(correct) / static_cast<double>(set.size());
    acc.per_domain[static_cast<int>(d)] = a;
    sum += a;
    ++domains;
  }
  acc.average = domains ? sum / domains : 0.0;
  return acc;
}

PrototypeSet build_generalized(std::span<const PrototypeSet> client_sets,
                               const std::optional<PrototypeSet>& previous, AggregatorMode mode,
                               bool ema_enabled, double beta) {
  PrototypeSet fresh = mode == AggregatorMode::kReweight
                           ? reweight(client_sets, initial_mean(client_sets))
                           : average_prototypes(client_sets);
  if (!ema_enabled) return fresh;
  return ema_update(fresh, previous ? &*previous : nullptr, beta);
}

RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const TrainConfig& cfg, const std::vector<std::vector<Sample>>& test_sets,
                      int threads) {
  if (clients.empty()) throw UsageError("run_round: no clients");
  const std::size_t m_count = clients.size();
  std::vector<std::optional<LocalResult>> results(m_count);
  std::vector<std::exception_ptr> failures(m_count);
  const PrototypeSet* g = server.generalized ? &*server.generalized : nullptr;

  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t m = first; m < m_count; m += stride) {
      try {
        results[m] = local_update(clients[m], server.global_params, g, cfg);
      } catch (...) {
        failures[m] = std::current_exception();
      }
    }
  };
  const auto workers = static_cast<std::size_t>(std::clamp<int>(threads, 1, static_cast<int>(m_count)));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work, t, workers);
  }
  // Barrier passed: any failure aborts the round before aggregation.
  for (auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  std::vector<ModelParams> params;
  std::vector<std::size_t> counts;
  std::vector<PrototypeSet> sets;
  RoundReport report;
  report.round = server.round;
  for (std::size_t m = 0; m < m_count; ++m) {
    params.push_back(std::move(results[m]->params));
    counts.push_back(clients[m].size());
    sets.push_back(std::move(results[m]->prototypes));
    report.client_losses.push_back(results[m]->mean_loss);
  }

  server.global_params = aggregate_params(params, counts);
  server.generalized =
      build_generalized(sets, server.generalized, server.aggregator, server.ema_enabled, server.beta);
  report.accuracy = evaluate(server.global_params, test_sets);
  ++server.round;
  return report;
}

ExperimentSetup prepare_experiment(const ExperimentConfig& cfg) {
  ExperimentSetup setup;
  Rng data_rng(cfg.seed, kDataStream);
  std::vector<std::vector<Sample>> domains;
  if (cfg.data == DataSource::kSynthetic) {
    domains = make_domains(cfg.synthetic, data_rng);
  } else {
    CsvSchema schema{std::nullopt, cfg.num_classes(), cfg.num_domains()};
    domains = group_by_domain(load_csv(cfg.csv_path, schema), cfg.num_domains());
  }
  setup.partition = partition(domains, cfg.plan, data_rng);
  setup.num_classes = cfg.num_classes();

  const auto input_dim = static_cast<int>(setup.partition.clients.front().samples.front().x.size());
  std::vector<int> arch{input_dim};
  arch.insert(arch.end(), cfg.widths.begin(), cfg.widths.end());
  Rng init_rng(cfg.seed, kInitStream);
  setup.initial_params = init_params(init_rng, arch, setup.num_classes);
  return setup;
}

std::vector<ClientState> make_clients(const Partition& partition, std::uint64_t seed) {
  std::vector<ClientState> clients;
  clients.reserve(partition.clients.size());
  for (const auto& c : partition.clients) clients.emplace_back(c.client_id, c.domain, c.samples, seed);
  return clients;
}

Summary summarize(const std::vector<RoundReport>& rounds, int window) {
  Summary s;
  s.rounds = static_cast<int>(rounds.size());
  s.window = std::min<int>(window, s.rounds);
  if (s.window == 0) return s;
  for (auto it = rounds.end() - s.window; it != rounds.end(); ++it) {
    for (const auto& [d, a] : it->accuracy.per_domain) s.final_accuracy.per_domain[d] += a;
    s.final_accuracy.average += it->accuracy.average;
  }
  for (auto& [d, a] : s.final_accuracy.per_domain) a /= s.window;
  s.final_accuracy.average /= s.window;
  return s;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, int threads,
                                const RoundCallback& on_round) {
  ExperimentSetup setup = prepare_experiment(cfg);
  std::vector<ClientState> clients = make_clients(setup.partition, cfg.seed);

  ServerState server;
  server.global_params = setup.initial_params;
  server.beta = cfg.beta;
  server.aggregator = cfg.aggregator;
  server.ema_enabled = cfg.ema;

  ExperimentResult result;
  for (int t = 0; t < cfg.rounds; ++t) {
    result.rounds.push_back(run_round(server, clients, cfg.train, setup.partition.test_sets, threads));
    if (on_round) on_round(result.rounds.back());
  }
  result.summary = summarize(result.rounds);
  result.final_params = std::move(server.global_params);
  result.generalized = std::move(server.generalized);
  return result;
}

int worker_threads_from_env() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("PROTOFED_THREADS")) {
    const int requested = std::atoi(env);
    if (requested > 0) n = requested;
  }
  return n;
}

namespace {

nlohmann::json accuracy_json(const Accuracy& a) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [d, v] : a.per_domain) per[std::to_string(d)] = v;
  return {{"domain_accuracy", per}, {"average_accuracy", a.average}};
}

}  // namespace

nlohmann::json to_json(const RoundReport& report) {
  nlohmann::json j = accuracy_json(report.accuracy);
  j["round"] = report.round;
  nlohmann::json losses = nlohmann::json::array();
  for (const auto& l : report.client_losses) {
    losses.push_back({{"ce", l.ce}, {"gpcl", l.gpcl}, {"apa", l.apa}, {"total", l.total}});
  }
  j["client_losses"] = losses;
  return j;
}

nlohmann::json to_json(const Summary& summary) {
  nlohmann::json j = accuracy_json(summary.final_accuracy);
  j["rounds"] = summary.rounds;
  j["window"] = summary.window;
  return j;
}

}  // namespace protofed
