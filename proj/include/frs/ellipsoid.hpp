#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace frs {

// Ellipsoid {x : (x - c)^T K (x - c) <= 1} with K symmetric positive definite.
// K is the forward shape matrix: large K means a small set.  Several routines
// below also handle the inverse-shape convention Q = K^{-1}, whose entries
// scale like squared semi-axes; conversions are always explicit at the call
// boundary.
class Ellipsoid {
 public:
  Ellipsoid(Eigen::VectorXd center, Eigen::MatrixXd shape)
      : c_(std::move(center)), K_(std::move(shape)) {
    if (c_.size() == 0) throw std::invalid_argument("ellipsoid: empty center");
    if (K_.rows() != c_.size() || K_.cols() != c_.size())
      throw std::invalid_argument("ellipsoid: shape/center dimension mismatch");
    // Enforce symmetry, then require strictly positive eigenvalues with a
    // floor relative to the largest one.
    K_ = 0.5 * (K_ + K_.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K_, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(hi > 0.0) || !(lo > 1e-14 * hi))
      throw std::runtime_error("ellipsoid: shape matrix is not positive definite");
  }

  Eigen::Index dim() const { return c_.size(); }
  const Eigen::VectorXd& center() const { return c_; }
  const Eigen::MatrixXd& shape() const { return K_; }

  // Q = K^{-1} via Cholesky.
  Eigen::MatrixXd inverse_shape() const {
    Eigen::LLT<Eigen::MatrixXd> llt(K_);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("ellipsoid: shape factorization failed");
    Eigen::MatrixXd q = llt.solve(Eigen::MatrixXd::Identity(dim(), dim()));
    return 0.5 * (q + q.transpose());
  }

  // log det K^{-1} = -log det K, from the Cholesky factor.
  double logdet_inverse_shape() const {
    Eigen::LLT<Eigen::MatrixXd> llt(K_);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("ellipsoid: shape factorization failed");
    return -2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  }

 private:
  Eigen::VectorXd c_;
  Eigen::MatrixXd K_;
};

// Ellipsoid-like set whose shape matrix may be singular, e.g. a cylinder
// obtained by lifting a low-dimensional ellipsoid into a larger space.  It
// has no volume semantics of its own; it is only meaningful as the second
// argument of fuse_intersection below.
struct DegenerateEllipsoid {
  Eigen::VectorXd center;
  Eigen::MatrixXd shape;  // symmetric positive semidefinite
};

inline bool contains(const Ellipsoid& e, const Eigen::VectorXd& x, double slack = 0.0) {
  if (x.size() != e.dim())
    throw std::invalid_argument("contains: point dimension mismatch");
  const Eigen::VectorXd r = x - e.center();
  return r.dot(e.shape() * r) <= 1.0 + slack;
}

// Support function h(v) = v^T c + sqrt(v^T K^{-1} v).
inline double support(const Ellipsoid& e, const Eigen::VectorXd& v) {
  if (v.size() != e.dim())
    throw std::invalid_argument("support: direction dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(e.shape());
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("support: shape factorization failed");
  return v.dot(e.center()) + std::sqrt(std::max(0.0, v.dot(llt.solve(v))));
}

// Minimal-trace outer ellipsoid of a Minkowski sum, in the inverse-shape
// convention: given Q_i = K_i^{-1}, the sum of E(0, Q_i^{-1}) is contained in
// E(0, Q^{-1}) with
//   Q = sum_i Q_i / a_i,   a_i = sqrt(tr Q_i) / sum_j sqrt(tr Q_j),
// and this choice of weights minimizes tr Q.
inline Eigen::MatrixXd min_trace_sum(const std::vector<Eigen::MatrixXd>& qs) {
  if (qs.empty()) throw std::invalid_argument("min_trace_sum: empty input");
  const Eigen::Index n = qs.front().rows();
  double denom = 0.0;
  for (const auto& q : qs) {
    if (q.rows() != n || q.cols() != n)
      throw std::invalid_argument("min_trace_sum: dimension mismatch");
    const double tr = q.trace();
    if (!(tr > 0.0))
      throw std::invalid_argument("min_trace_sum: member with non-positive trace");
    denom += std::sqrt(tr);
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  for (const auto& q : qs) out += q * (denom / std::sqrt(q.trace()));
  return 0.5 * (out + out.transpose());
}

namespace detail {

// Shared fusion core; K2 may be singular (cylinder case) as long as the
// convex combination N stays positive definite.
inline Ellipsoid fuse_core(const Eigen::VectorXd& c1, const Eigen::MatrixXd& K1,
                           const Eigen::VectorXd& c2, const Eigen::MatrixXd& K2,
                           double b) {
  if (c1.size() != c2.size() || K1.rows() != K2.rows())
    throw std::invalid_argument("fuse_intersection: dimension mismatch");
  if (!(b >= 0.0 && b <= 1.0))
    throw std::invalid_argument("fuse_intersection: weight must lie in [0, 1]");
  const Eigen::MatrixXd N = b * K1 + (1.0 - b) * K2;
  Eigen::LLT<Eigen::MatrixXd> llt(N);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("fuse_intersection: normal matrix is singular");
  const Eigen::VectorXd c = llt.solve(b * (K1 * c1) + (1.0 - b) * (K2 * c2));
  const double delta = b * c1.dot(K1 * c1) + (1.0 - b) * c2.dot(K2 * c2) - c.dot(N * c);
  if (delta >= 1.0)
    throw std::runtime_error("fuse_intersection: empty intersection certificate (delta >= 1)");
  return Ellipsoid(c, N / (1.0 - delta));
}

}  // namespace detail

// Outer ellipsoid of the intersection of two ellipsoids.  Any point in both
// sets satisfies b.q1(x) + (1-b).q2(x) <= 1, which rearranges to the returned
// ellipsoid; b = 1 returns e1 and b = 0 returns e2 exactly.
inline Ellipsoid fuse_intersection(const Ellipsoid& e1, const Ellipsoid& e2, double b) {
  return detail::fuse_core(e1.center(), e1.shape(), e2.center(), e2.shape(), b);
}

// Overload for a degenerate second set (e.g. a lifted cylinder);  requires
// b < 1 contributions of the definite first shape to keep N invertible.
inline Ellipsoid fuse_intersection(const Ellipsoid& e1, const DegenerateEllipsoid& e2,
                                   double b) {
  return detail::fuse_core(e1.center(), e1.shape(), e2.center, e2.shape, b);
}

// Lift an ellipsoid into a larger space: the result constrains only the
// listed coordinates and is unbounded along the rest (shape is PSD with a
// null space), so it is only usable as the second fusion argument.
inline DegenerateEllipsoid propagate_to_space(const Ellipsoid& e, Eigen::Index target_dim,
                                              const std::vector<Eigen::Index>& idx) {
  if (static_cast<Eigen::Index>(idx.size()) != e.dim())
    throw std::invalid_argument("propagate_to_space: index count must match dimension");
  DegenerateEllipsoid out;
  out.center = Eigen::VectorXd::Zero(target_dim);
  out.shape = Eigen::MatrixXd::Zero(target_dim, target_dim);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= target_dim)
      throw std::invalid_argument("propagate_to_space: index out of range");
    out.center(idx[i]) = e.center()(static_cast<Eigen::Index>(i));
    for (size_t j = 0; j < idx.size(); ++j)
      out.shape(idx[i], idx[j]) = e.shape()(static_cast<Eigen::Index>(i),
                                            static_cast<Eigen::Index>(j));
  }
  return out;
}

// Orthogonal projection (shadow) onto the kept coordinates.  With the shape
// partitioned as [[M11, M12], [M21, M22]] over kept/dropped indices, the
// shadow has shape M11 - M12 M22^{-1} M21 (Schur complement) and the
// restricted center.
inline Ellipsoid project(const Ellipsoid& e, const std::vector<Eigen::Index>& keep) {
  const Eigen::Index n = e.dim();
  if (keep.empty() || static_cast<Eigen::Index>(keep.size()) > n)
    throw std::invalid_argument("project: bad kept-index count");
  std::vector<bool> kept(static_cast<size_t>(n), false);
  for (Eigen::Index k : keep) {
    if (k < 0 || k >= n || kept[static_cast<size_t>(k)])
      throw std::invalid_argument("project: invalid or repeated index");
    kept[static_cast<size_t>(k)] = true;
  }
  std::vector<Eigen::Index> drop;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!kept[static_cast<size_t>(i)]) drop.push_back(i);
  if (drop.empty()) return e;

  const Eigen::Index p = static_cast<Eigen::Index>(keep.size());
  const Eigen::Index q = static_cast<Eigen::Index>(drop.size());
  Eigen::MatrixXd M11(p, p), M12(p, q), M22(q, q);
  Eigen::VectorXd c(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    c(i) = e.center()(keep[static_cast<size_t>(i)]);
    for (Eigen::Index j = 0; j < p; ++j)
      M11(i, j) = e.shape()(keep[static_cast<size_t>(i)], keep[static_cast<size_t>(j)]);
    for (Eigen::Index j = 0; j < q; ++j)
      M12(i, j) = e.shape()(keep[static_cast<size_t>(i)], drop[static_cast<size_t>(j)]);
  }
  for (Eigen::Index i = 0; i < q; ++i)
    for (Eigen::Index j = 0; j < q; ++j)
      M22(i, j) = e.shape()(drop[static_cast<size_t>(i)], drop[static_cast<size_t>(j)]);

  Eigen::LLT<Eigen::MatrixXd> llt(M22);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("project: dropped block is singular");
  return Ellipsoid(c, M11 - M12 * llt.solve(M12.transpose()));
}

// Image under an invertible linear map: T E(c, K) = E(Tc, T^{-T} K T^{-1}).
inline Ellipsoid linear_map(const Ellipsoid& e, const Eigen::MatrixXd& T) {
  if (T.rows() != e.dim() || T.cols() != e.dim())
    throw std::invalid_argument("linear_map: matrix dimension mismatch");
  Eigen::FullPivLU<Eigen::MatrixXd> lu(T);
  if (!lu.isInvertible())
    throw std::runtime_error("linear_map: matrix is singular");
  const Eigen::MatrixXd Ti = lu.inverse();
  return Ellipsoid(T * e.center(), Ti.transpose() * e.shape() * Ti);
}

// Minimal-trace(Lambda^{-1}) diagonal ellipsoid containing the box
// {|x_i| <= d_i}: lambda_i = 1 / (d_i * sum_j d_j).  The containment
// constraint sum_i lambda_i d_i^2 = 1 is tight at every box corner.
inline Eigen::VectorXd min_trace_box_ellipsoid(const Eigen::VectorXd& d) {
  if (d.size() == 0) throw std::invalid_argument("min_trace_box_ellipsoid: empty input");
  if (!(d.minCoeff() > 0.0))
    throw std::invalid_argument("min_trace_box_ellipsoid: half-widths must be positive");
  const double s = d.sum();
  return (1.0 / s) * d.cwiseInverse();
}

}  // namespace frs
