#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "protofed/numerics.hpp"

namespace protofed {

/// Class-indexed feature centroids. Absent classes are missing keys; every
/// present entry has support >= 1 and all vectors share one dimension.
class PrototypeSet {
 public:
  struct Entry {
    Vec vector;
    std::size_t support = 0;
  };

  void set(int label, Vec vector, std::size_t support);
  bool contains(int label) const { return entries_.count(label) != 0; }
  const Entry& at(int label) const;
  const Vec& vector(int label) const { return at(label).vector; }

  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  // Feature dimension, 0 when empty.
  Eigen::Index dim() const { return dim_; }
  std::vector<int> classes() const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::map<int, Entry> entries_;
  Eigen::Index dim_ = 0;
};

struct ClassReweight {
  std::vector<std::size_t> clients;  // indices into the client_sets argument
  std::vector<double> distances;     // squared L2 to the initial mean
  std::vector<double> weights;       // distance / total distance
  bool fallback = false;             // uniform weights used (degenerate total distance)
};

struct ReweightReport {
  std::map<int, ClassReweight> per_class;
};

// Below this total distance a class is treated as degenerate.
inline constexpr double kDegenerateDistance = 1e-12;

/// Per-class mean of the columns of `features` (d x N).
PrototypeSet local_prototypes(const Mat& features, std::span<const int> labels);

/// gamma * h_i + (1 - gamma) * h_j.
Vec mixup_feature(const Vec& h_i, const Vec& h_j, double gamma);

/// MixUp-augmented prototypes. For each sample i in column order, draws
/// gamma ~ Beta(alpha, alpha), then a partner uniformly among the samples of a
/// different label (the r-th such sample in column order), and groups the mixed
/// feature under the original label of i. A sample without a cross-class
/// partner keeps its own feature. `fixed_gamma` replaces the Beta draw.
PrototypeSet augmented_prototypes(const Mat& features, std::span<const int> labels, Rng& rng,
                                  double alpha, std::optional<double> fixed_gamma = std::nullopt);

/// Mixed features for every column, using the same draw sequence as
/// augmented_prototypes.
Mat mixup_features(const Mat& features, std::span<const int> labels, Rng& rng, double alpha,
                   std::optional<double> fixed_gamma = std::nullopt);

/// Unweighted per-class mean over the clients that hold the class.
PrototypeSet initial_mean(std::span<const PrototypeSet> client_sets);

/// Distance-reweighted generalized prototypes: clients further from the
/// initial mean receive proportionally more weight.
PrototypeSet reweight(std::span<const PrototypeSet> client_sets, const PrototypeSet& mean,
                      ReweightReport* report = nullptr);

/// beta * fresh + (1 - beta) * previous per class. Classes missing from
/// `previous` pass through unchanged; no previous set returns `fresh`.
PrototypeSet ema_update(const PrototypeSet& fresh, const PrototypeSet* previous, double beta);

/// Plain prototype averaging baseline.
PrototypeSet average_prototypes(std::span<const PrototypeSet> client_sets);

nlohmann::json to_json(const PrototypeSet& set);
PrototypeSet prototypes_from_json(const nlohmann::json& j);

}  // namespace protofed
