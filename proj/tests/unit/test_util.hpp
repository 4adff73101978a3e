#pragma once

#include <vector>

#include "protofed/numerics.hpp"
#include "protofed/prototypes.hpp"
#include "reference_oracle.hpp"

namespace testutil {

inline protofed::Vec random_vec(protofed::Rng& rng, Eigen::Index n, double scale = 1.0) {
  protofed::Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

inline protofed::Mat random_mat(protofed::Rng& rng, Eigen::Index rows, Eigen::Index cols,
                                double scale = 1.0) {
  protofed::Mat m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) m.col(c) = random_vec(rng, rows, scale);
  return m;
}

inline std::vector<int> random_labels(protofed::Rng& rng, std::size_t n, int classes) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(classes)));
  return y;
}

inline std::vector<double> to_std(const protofed::Mat& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

inline protofed::Mat from_std(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const protofed::Mat>(v.data(), rows, cols);
}

inline oracle::NaiveSet to_naive(const protofed::PrototypeSet& s) {
  oracle::NaiveSet out;
  for (const auto& [k, e] : s) out[k] = std::vector<double>(e.vector.data(), e.vector.data() + e.vector.size());
  return out;
}

/// Random client prototype sets; each client holds each class with
/// probability `keep` (at least one class kept per client).
inline std::vector<protofed::PrototypeSet> random_client_sets(protofed::Rng& rng, int clients,
                                                              int classes, Eigen::Index dim,
                                                              double keep = 0.8) {
  std::vector<protofed::PrototypeSet> sets(static_cast<std::size_t>(clients));
  for (auto& s : sets) {
    for (int k = 0; k < classes; ++k) {
      if (rng.uniform() < keep || (k == classes - 1 && s.empty())) {
        s.set(k, random_vec(rng, dim, 2.0), 1 + rng.uniform_index(20));
      }
    }
  }
  return sets;
}

}  // namespace testutil
