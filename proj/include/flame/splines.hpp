#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "flame/common.hpp"

namespace flame {

inline constexpr int kSplineDegree = 3;   // cubic, fixed
inline constexpr int kPenaltyOrder = 2;   // second differences, fixed
inline constexpr int kMinBasisSize = 6;

/// Cubic B-spline knot sequence on [domain_lo, domain_hi] with equally spaced
/// breakpoints and each boundary knot repeated degree+1 times, so the leftmost
/// basis function is the only one alive at domain_lo (b_1(lo) = 1). K basis
/// functions span K-3 segments of equal width.
struct KnotVector {
  int degree = kSplineDegree;
  int interior_count = 0;          // breakpoints strictly inside the domain
  std::vector<double> knots;       // length K + degree + 1, ascending
  double domain_lo = 0.0;
  double domain_hi = 0.0;

  int size() const { return static_cast<int>(knots.size()) - degree - 1; }
  int segment_count() const { return size() - degree; }
  double segment_width() const {
    return (domain_hi - domain_lo) / segment_count();
  }
};

/// (K-2) x K second-order difference operator; rows are (1, -2, 1).
struct PenaltyOperator {
  int order = kPenaltyOrder;
  Mat rows;

  /// (D g)_k = g_{k+2} - 2 g_{k+1} + g_k, computed directly (exact for
  /// integer-valued coefficient sequences).
  Vec apply(const Vec& gamma) const {
    const auto m = rows.rows();
    Vec out(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      out[k] = gamma[k + 2] - 2.0 * gamma[k + 1] + gamma[k];
    }
    return out;
  }
};

inline KnotVector build_knots(int basis_size, double domain_lo, double domain_hi) {
  if (basis_size < kMinBasisSize) {
    throw config_error("build_knots: basis size must be at least " +
                       std::to_string(kMinBasisSize) + ", got " +
                       std::to_string(basis_size));
  }
  if (!(domain_hi > domain_lo) || domain_lo < 0.0) {
    throw config_error("build_knots: need domain_hi > domain_lo >= 0");
  }
  KnotVector kv;
  kv.interior_count = basis_size - kSplineDegree - 1;
  kv.domain_lo = domain_lo;
  kv.domain_hi = domain_hi;
  const int segments = basis_size - kSplineDegree;
  const double width = (domain_hi - domain_lo) / segments;
  kv.knots.reserve(basis_size + kSplineDegree + 1);
  for (int i = 0; i <= kSplineDegree; ++i) kv.knots.push_back(domain_lo);
  for (int i = 1; i < segments; ++i) kv.knots.push_back(domain_lo + width * i);
  for (int i = 0; i <= kSplineDegree; ++i) kv.knots.push_back(domain_hi);
  return kv;
}

namespace detail {

/// Index of the knot span containing z: largest i with t_i <= z < t_{i+1},
/// with z == domain_hi mapped to the last non-empty span.
inline int find_span(const KnotVector& kv, double z) {
  const int K = kv.size();
  const int last = K - 1;  // span [t_{K-1}, t_K) is the rightmost non-empty one
  if (z >= kv.knots[K]) return last;
  int lo = kv.degree, hi = last;
  while (lo < hi) {
    const int mid = (lo + hi + 1) / 2;
    if (kv.knots[mid] <= z) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  return lo;
}

/// Values of the degree+1 basis functions alive on the span of z, left to
/// right (triangular de Boor scheme; repeated knots never divide by zero).
inline void local_basis(const KnotVector& kv, double z, int span,
                        std::array<double, kSplineDegree + 1>& out) {
  std::array<double, kSplineDegree + 1> left{}, right{};
  out[0] = 1.0;
  for (int j = 1; j <= kSplineDegree; ++j) {
    left[j] = z - kv.knots[span + 1 - j];
    right[j] = kv.knots[span + j] - z;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double tmp = out[r] / (right[r + 1] + left[j - r]);
      out[r] = saved + right[r + 1] * tmp;
      saved = left[j - r] * tmp;
    }
    out[j] = saved;
  }
}

}  // namespace detail

/// Nonzero basis values at z together with the index of the first of the
/// (at most) four supporting coefficients. Hot path for design assembly.
struct LocalBasis {
  int first = 0;
  std::array<double, kSplineDegree + 1> values{};
};

inline LocalBasis eval_basis_local(const KnotVector& kv, double z) {
  if (!(z >= kv.domain_lo && z <= kv.domain_hi)) {
    throw extrapolation_error(
        "eval_basis: z = " + std::to_string(z) + " outside basis domain [" +
        std::to_string(kv.domain_lo) + ", " + std::to_string(kv.domain_hi) + "]");
  }
  const int span = detail::find_span(kv, z);
  LocalBasis lb;
  lb.first = span - kSplineDegree;
  detail::local_basis(kv, z, span, lb.values);
  return lb;
}

/// Dense K-vector of basis values at z. Entries are nonnegative, at most
/// degree+1 are nonzero, and they sum to one on the domain.
inline Vec eval_basis(const KnotVector& kv, double z) {
  const LocalBasis lb = eval_basis_local(kv, z);
  Vec out = Vec::Zero(kv.size());
  for (int m = 0; m <= kSplineDegree; ++m) out[lb.first + m] = lb.values[m];
  return out;
}

/// |zs| x K matrix whose row i is eval_basis(kv, zs[i]).
inline Mat basis_matrix(const KnotVector& kv, const std::vector<double>& zs) {
  Mat out = Mat::Zero(static_cast<Eigen::Index>(zs.size()), kv.size());
  for (std::size_t i = 0; i < zs.size(); ++i) {
    LocalBasis lb;
    try {
      lb = eval_basis_local(kv, zs[i]);
    } catch (const extrapolation_error& e) {
      throw extrapolation_error("basis_matrix: row " + std::to_string(i) + ": " +
                                e.what());
    }
    for (int m = 0; m <= kSplineDegree; ++m) {
      out(static_cast<Eigen::Index>(i), lb.first + m) = lb.values[m];
    }
  }
  return out;
}

inline PenaltyOperator difference_penalty(int basis_size) {
  if (basis_size < kPenaltyOrder + 1) {
    throw config_error("difference_penalty: basis size must be at least 3");
  }
  PenaltyOperator op;
  op.rows = Mat::Zero(basis_size - 2, basis_size);
  for (int k = 0; k < basis_size - 2; ++k) {
    op.rows(k, k) = 1.0;
    op.rows(k, k + 1) = -2.0;
    op.rows(k, k + 2) = 1.0;
  }
  return op;
}

/// Greville abscissae m_k = (t_{k+1} + ... + t_{k+degree}) / degree. The
/// coefficient sequence gamma_k = c * m_k represents f(z) = c * z exactly.
inline Vec greville_abscissae(const KnotVector& kv) {
  Vec m(kv.size());
  for (int k = 0; k < kv.size(); ++k) {
    double s = 0.0;
    for (int j = 1; j <= kv.degree; ++j) s += kv.knots[k + j];
    m[k] = s / kv.degree;
  }
  return m;
}

}  // namespace flame
