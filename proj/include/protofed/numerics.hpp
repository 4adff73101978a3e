#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "protofed/errors.hpp"

namespace protofed {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Norm floor used by cosine similarity.
inline constexpr double kNormFloor = 1e-12;

namespace detail {
inline void require_same_size(Eigen::Index a, Eigen::Index b, const char* op) {
  if (a != b) {
    throw UsageError(std::string(op) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                     std::to_string(b) + ")");
  }
}
}  // namespace detail

/// u.v / (max(|u|, eps) * max(|v|, eps)), clamped to [-1, 1].
template <typename DerivedU, typename DerivedV>
typename DerivedU::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedU>& u,
                                            const Eigen::MatrixBase<DerivedV>& v) {
  using Scalar = typename DerivedU::Scalar;
  detail::require_same_size(u.size(), v.size(), "cosine_similarity");
  if (u.size() == 0) throw UsageError("cosine_similarity: empty vectors");
  const Scalar nu = std::max<Scalar>(u.norm(), Scalar(kNormFloor));
  const Scalar nv = std::max<Scalar>(v.norm(), Scalar(kNormFloor));
  const Scalar s = u.dot(v) / (nu * nv);
  return std::clamp<Scalar>(s, Scalar(-1), Scalar(1));
}

template <typename DerivedU, typename DerivedV>
typename DerivedU::Scalar sq_l2_distance(const Eigen::MatrixBase<DerivedU>& u,
                                         const Eigen::MatrixBase<DerivedV>& v) {
  detail::require_same_size(u.size(), v.size(), "sq_l2_distance");
  return (u - v).squaredNorm();
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

/// PCG32 (XSH-RR) generator with an explicit stream selector. Each client owns
/// one instance keyed by (seed, client index); instances are never shared.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream_id);

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on the open interval (0, 1).
  double uniform_open();
  // Uniform integer in [0, bound). bound must be positive.
  std::uint64_t uniform_index(std::uint64_t bound);
  double normal();
  // Gamma(shape, 1): Marsaglia-Tsang, with the shape+1 boost for shape < 1.
  double gamma(double shape);

  std::uint64_t stream_id() const { return stream_id_; }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
  std::uint64_t stream_id_ = 0;
};

/// Draw from the symmetric Beta(alpha, alpha) as g1 / (g1 + g2).
double sample_beta(Rng& rng, double alpha);

}  // namespace protofed
