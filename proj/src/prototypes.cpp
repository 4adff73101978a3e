#include "protofed/prototypes.hpp"

#include <string>

namespace protofed {

void PrototypeSet::set(int label, Vec vector, std::size_t support) {
  if (support == 0) throw UsageError("PrototypeSet: support must be at least 1");
  if (!vector.allFinite()) throw UsageError("PrototypeSet: non-finite prototype");
  if (!entries_.empty() && vector.size() != dim_) {
    throw UsageError("PrototypeSet: dimension " + std::to_string(vector.size()) +
                     " does not match " + std::to_string(dim_));
  }
  dim_ = vector.size();
  entries_[label] = Entry{std::move(vector), support};
}

const PrototypeSet::Entry& PrototypeSet::at(int label) const {
  auto it = entries_.find(label);
  if (it == entries_.end()) throw UsageError("PrototypeSet: no class " + std::to_string(label));
  return it->second;
}

std::vector<int> PrototypeSet::classes() const {
  std::vector<int> out;
  out.reserve(entries_.size());
  for (const auto& [k, e] : entries_) out.push_back(k);
  return out;
}

PrototypeSet local_prototypes(const Mat& features, std::span<const int> labels) {
  if (features.cols() == 0) throw UsageError("local_prototypes: empty input");
  detail::require_same_size(features.cols(), static_cast<Eigen::Index>(labels.size()),
                            "local_prototypes");
  std::map<int, std::pair<Vec, std::size_t>> sums;
  for (Eigen::Index i = 0; i < features.cols(); ++i) {
    auto [it, inserted] = sums.try_emplace(labels[i], Vec::Zero(features.rows()), 0);
    it->second.first += features.col(i);
    ++it->second.second;
  }
  PrototypeSet out;
  for (auto& [k, acc] : sums) {
    out.set(k, acc.first / static_cast<double>(acc.second), acc.second);
  }
  return out;
}

Vec mixup_feature(const Vec& h_i, const Vec& h_j, double gamma) {
  detail::require_same_size(h_i.size(), h_j.size(), "mixup_feature");
  return gamma * h_i + (1.0 - gamma) * h_j;
}

Mat mixup_features(const Mat& features, std::span<const int> labels, Rng& rng, double alpha,
                   std::optional<double> fixed_gamma) {
  detail::require_same_size(features.cols(), static_cast<Eigen::Index>(labels.size()),
                            "mixup_features");
  if (!(alpha > 0.0)) throw UsageError("mixup: alpha must be positive");

  // Cross-class partner pools, ascending column order.
  std::map<int, std::vector<Eigen::Index>> others;
  for (Eigen::Index i = 0; i < features.cols(); ++i) others.try_emplace(labels[i]);
  for (auto& [k, pool] : others) {
    for (Eigen::Index i = 0; i < features.cols(); ++i) {
      if (labels[i] != k) pool.push_back(i);
    }
  }

  Mat mixed(features.rows(), features.cols());
  for (Eigen::Index i = 0; i < features.cols(); ++i) {
    const double gamma = fixed_gamma ? *fixed_gamma : sample_beta(rng, alpha);
    const auto& pool = others[labels[i]];
    if (pool.empty()) {
      mixed.col(i) = features.col(i);
      continue;
    }
    const auto j = pool[rng.uniform_index(pool.size())];
    mixed.col(i) = gamma * features.col(i) + (1.0 - gamma) * features.col(j);
  }
  return mixed;
}

PrototypeSet augmented_prototypes(const Mat& features, std::span<const int> labels, Rng& rng,
                                  double alpha, std::optional<double> fixed_gamma) {
  if (features.cols() == 0) throw UsageError("augmented_prototypes: empty input");
  return local_prototypes(mixup_features(features, labels, rng, alpha, fixed_gamma), labels);
}

PrototypeSet initial_mean(std::span<const PrototypeSet> client_sets) {
  if (client_sets.empty()) throw UsageError("initial_mean: no client prototypes");
  std::map<int, std::pair<Vec, std::size_t>> sums;
  for (const auto& set : client_sets) {
    for (const auto& [k, entry] : set) {
      auto [it, inserted] = sums.try_emplace(k, Vec::Zero(entry.vector.size()), 0);
      if (it->second.first.size() != entry.vector.size()) {
        throw UsageError("initial_mean: inconsistent prototype dimension");
      }
      it->second.first += entry.vector;
      ++it->second.second;
    }
  }
  PrototypeSet out;
  for (auto& [k, acc] : sums) {
    out.set(k, acc.first / static_cast<double>(acc.second), acc.second);
  }
  return out;
}

PrototypeSet reweight(std::span<const PrototypeSet> client_sets, const PrototypeSet& mean,
                      ReweightReport* report) {
  std::map<int, ClassReweight> per_class;
  for (std::size_t m = 0; m < client_sets.size(); ++m) {
    for (const auto& [k, entry] : client_sets[m]) {
      if (!mean.contains(k)) {
        throw InternalError("reweight: class " + std::to_string(k) + " missing from the mean");
      }
      auto& cw = per_class[k];
      cw.clients.push_back(m);
      cw.distances.push_back(sq_l2_distance(entry.vector, mean.vector(k)));
    }
  }

  PrototypeSet out;
  for (auto& [k, cw] : per_class) {
    double total = 0.0;
    for (double d : cw.distances) total += d;
    const auto n = cw.clients.size();
    cw.weights.resize(n);
    cw.fallback = total < kDegenerateDistance;
    Vec g = Vec::Zero(mean.dim());
    for (std::size_t i = 0; i < n; ++i) {
      cw.weights[i] = cw.fallback ? 1.0 / static_cast<double>(n) : cw.distances[i] / total;
      g += cw.weights[i] * client_sets[cw.clients[i]].vector(k);
    }
    out.set(k, std::move(g), n);
  }
  if (report) report->per_class = std::move(per_class);
  return out;
}

PrototypeSet ema_update(const PrototypeSet& fresh, const PrototypeSet* previous, double beta) {
  if (!previous) return fresh;
  PrototypeSet out;
  for (const auto& [k, entry] : fresh) {
    if (!previous->contains(k)) {
      out.set(k, entry.vector, entry.support);
      continue;
    }
    const Vec& prev = previous->vector(k);
    detail::require_same_size(entry.vector.size(), prev.size(), "ema_update");
    out.set(k, beta * entry.vector + (1.0 - beta) * prev, entry.support);
  }
  return out;
}

PrototypeSet average_prototypes(std::span<const PrototypeSet> client_sets) {
  return initial_mean(client_sets);
}

nlohmann::json to_json(const PrototypeSet& set) {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [k, entry] : set) {
    std::vector<double> v(entry.vector.data(), entry.vector.data() + entry.vector.size());
    classes[std::to_string(k)] = {{"vector", v}, {"support", entry.support}};
  }
  return {{"dim", set.dim()}, {"classes", classes}};
}

PrototypeSet prototypes_from_json(const nlohmann::json& j) {
  PrototypeSet out;
  try {
    for (const auto& [key, value] : j.at("classes").items()) {
      const auto v = value.at("vector").get<std::vector<double>>();
      out.set(std::stoi(key), Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())),
              value.at("support").get<std::size_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(std::string("prototype json: ") + e.what());
  }
  return out;
}

}  // namespace protofed
