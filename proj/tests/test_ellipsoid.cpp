#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

#include "frs/ellipsoid.hpp"
#include "test_support.hpp"

using frs::DegenerateEllipsoid;
using frs::Ellipsoid;
using frs_test::boundary_point;
using frs_test::make_rng;
using frs_test::random_ellipsoid;
using frs_test::random_spd;
using frs_test::random_unit_vector;

TEST_CASE("constructor validates the shape matrix") {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(2);

  // Mild asymmetry is symmetrized away.
  Eigen::MatrixXd k(2, 2);
  k << 2.0, 0.1 + 1e-12, 0.1, 1.0;
  Ellipsoid e(c, k);
  CHECK(e.shape()(0, 1) == Catch::Approx(e.shape()(1, 0)));

  Eigen::MatrixXd neg(2, 2);
  neg << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS(Ellipsoid(c, neg));

  // Eigenvalue floor is relative to the largest eigenvalue.
  Eigen::MatrixXd flat(2, 2);
  flat << 1.0, 0.0, 0.0, 1e-15;
  CHECK_THROWS(Ellipsoid(c, flat));

  CHECK_THROWS(Ellipsoid(c, Eigen::MatrixXd::Identity(3, 3)));
}

TEST_CASE("contains evaluates the quadratic form with slack") {
  Ellipsoid e(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
  Eigen::VectorXd x(3);
  x << 1.1, 0.0, 0.0;  // quadratic form is 1.21
  CHECK_FALSE(frs::contains(e, x));
  CHECK(frs::contains(e, x, 0.22));
  CHECK(frs::contains(e, Eigen::VectorXd::Zero(3)));
  CHECK_THROWS(frs::contains(e, Eigen::VectorXd::Zero(4)));
}

TEST_CASE("support matches closed-form values and the boundary maximizer") {
  Eigen::MatrixXd k = Eigen::Vector3d(4.0, 1.0, 1.0).asDiagonal();
  Ellipsoid e(Eigen::VectorXd::Zero(3), k);
  Eigen::VectorXd ex = Eigen::Vector3d::UnitX();
  CHECK(frs::support(e, ex) == Catch::Approx(0.5).margin(1e-15));

  Eigen::VectorXd c(3);
  c << 1.0, 2.0, 3.0;
  Ellipsoid shifted(c, k);
  CHECK(frs::support(shifted, Eigen::Vector3d::UnitY().eval()) == Catch::Approx(3.0));

  // The maximizer x* = c + K^{-1} v / sqrt(v^T K^{-1} v) lies on the boundary
  // and attains the support value; nudging past it leaves the set.
  auto rng = make_rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    Ellipsoid r = random_ellipsoid(4, rng);
    Eigen::VectorXd v = random_unit_vector(4, rng);
    Eigen::MatrixXd kinv = r.inverse_shape();
    Eigen::VectorXd xstar = r.center() + kinv * v / std::sqrt(v.dot(kinv * v));
    CHECK(frs::contains(r, xstar, 1e-9));
    CHECK(v.dot(xstar) == Catch::Approx(frs::support(r, v)).epsilon(1e-10));
    CHECK_FALSE(frs::contains(r, (xstar + 1e-3 * kinv * v).eval()));
  }
}

TEST_CASE("min_trace_sum on two unit disks gives the radius-two disk") {
  std::vector<Eigen::MatrixXd> qs(2, Eigen::MatrixXd::Identity(2, 2));
  Eigen::MatrixXd q = frs::min_trace_sum(qs);
  CHECK((q - 4.0 * Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-12);
}

TEST_CASE("min_trace_sum rejects bad input") {
  CHECK_THROWS(frs::min_trace_sum({}));
  CHECK_THROWS(frs::min_trace_sum(
      {Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(3, 3)}));
  CHECK_THROWS(frs::min_trace_sum(
      {Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Zero(2, 2)}));
}

TEST_CASE("min_trace_sum bounds the Minkowski sum of member ellipsoids") {
  auto rng = make_rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Eigen::MatrixXd> qs;
    const int m = 2 + static_cast<int>(trial % 3);
    for (int i = 0; i < m; ++i) qs.push_back(random_spd(3, rng));
    Eigen::MatrixXd q = frs::min_trace_sum(qs);
    Ellipsoid outer(Eigen::VectorXd::Zero(3), q.inverse());

    // Sum of boundary points of the members must land inside.
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd u = random_unit_vector(3, rng);
    for (const auto& qi : qs)
      sum += boundary_point(Ellipsoid(Eigen::VectorXd::Zero(3), qi.inverse()), u);
    CHECK(frs::contains(outer, sum, 1e-9));

    // The stated weights minimize the trace over the weighted-sum family.
    std::uniform_real_distribution<double> uni(0.05, 1.0);
    double best = q.trace();
    for (int k = 0; k < 20; ++k) {
      Eigen::VectorXd w(m);
      for (int i = 0; i < m; ++i) w(i) = uni(rng);
      w /= w.sum();
      Eigen::MatrixXd alt = Eigen::MatrixXd::Zero(3, 3);
      for (int i = 0; i < m; ++i) alt += qs[static_cast<size_t>(i)] / w(i);
      CHECK(alt.trace() >= best - 1e-9);
    }
  }
}

TEST_CASE("fuse_intersection endpoints reproduce the inputs") {
  auto rng = make_rng(11);
  Ellipsoid e1 = random_ellipsoid(3, rng, 0.2);
  Ellipsoid e2 = random_ellipsoid(3, rng, 0.2);
  Ellipsoid f1 = frs::fuse_intersection(e1, e2, 1.0);
  CHECK((f1.center() - e1.center()).norm() < 1e-12);
  CHECK((f1.shape() - e1.shape()).norm() < 1e-10);
  Ellipsoid f0 = frs::fuse_intersection(e1, e2, 0.0);
  CHECK((f0.center() - e2.center()).norm() < 1e-12);
  CHECK((f0.shape() - e2.shape()).norm() < 1e-10);
}

TEST_CASE("fuse_intersection certifies empty intersections") {
  Ellipsoid e1(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
  Eigen::VectorXd far(2);
  far << 10.0, 0.0;
  Ellipsoid e2(far, Eigen::MatrixXd::Identity(2, 2));
  CHECK_THROWS(frs::fuse_intersection(e1, e2, 0.5));
}

TEST_CASE("fuse_intersection contains the true intersection") {
  auto rng = make_rng(13);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  int checked = 0;
  while (checked < 200) {
    Ellipsoid e1 = random_ellipsoid(3, rng, 0.3);
    Ellipsoid e2 = random_ellipsoid(3, rng, 0.3);
    // Rejection-sample a point in the intersection.
    Eigen::VectorXd x(3);
    bool found = false;
    for (int k = 0; k < 400 && !found; ++k) {
      for (int i = 0; i < 3; ++i) x(i) = 2.0 * uni(rng);
      found = frs::contains(e1, x) && frs::contains(e2, x);
    }
    if (!found) continue;
    ++checked;
    for (double b : {0.1, 0.5, 0.9, 0.99}) {
      Ellipsoid fused = frs::fuse_intersection(e1, e2, b);
      CHECK(frs::contains(fused, x, 1e-9));
    }
  }
}

TEST_CASE("fuse_intersection with an origin-centered first set matches the reduced form") {
  // With c1 = 0 the general-center update must collapse to
  //   c = (1-b) N^{-1} K2 c2,  delta = (1-b) c2^T K2 c2 - c^T N c.
  auto rng = make_rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixXd k1 = random_spd(4, rng);
    Eigen::MatrixXd k2 = random_spd(4, rng);
    Eigen::VectorXd c2 = 0.1 * random_unit_vector(4, rng);
    const double b = 0.99;
    Ellipsoid fused = frs::fuse_intersection(Ellipsoid(Eigen::VectorXd::Zero(4), k1),
                                             Ellipsoid(c2, k2), b);
    Eigen::MatrixXd n = b * k1 + (1.0 - b) * k2;
    Eigen::VectorXd c = n.ldlt().solve((1.0 - b) * (k2 * c2));
    const double delta = (1.0 - b) * c2.dot(k2 * c2) - c.dot(n * c);
    CHECK((fused.center() - c).norm() < 1e-12);
    CHECK((fused.shape() - n / (1.0 - delta)).norm() < 1e-9 * n.norm());
  }
}

TEST_CASE("propagate_to_space builds a cylinder usable in fusion") {
  auto rng = make_rng(19);
  Ellipsoid small = random_ellipsoid(2, rng, 0.2);
  DegenerateEllipsoid cyl = frs::propagate_to_space(small, 4, {2, 3});
  REQUIRE(cyl.center.size() == 4);
  CHECK(cyl.center(2) == small.center()(0));
  CHECK(cyl.shape(2, 3) == small.shape()(0, 1));
  CHECK(cyl.shape.topLeftCorner(2, 2).norm() == 0.0);

  Ellipsoid big(Eigen::VectorXd::Zero(4), 0.25 * Eigen::MatrixXd::Identity(4, 4));
  Ellipsoid fused = frs::fuse_intersection(big, cyl, 0.9);
  // Points of the big set whose (2,3) coordinates satisfy the small set stay in.
  std::uniform_real_distribution<double> uni(-1.9, 1.9);
  int checked = 0;
  while (checked < 200) {
    Eigen::VectorXd x(4);
    for (int i = 0; i < 4; ++i) x(i) = uni(rng);
    Eigen::VectorXd tail = x.tail(2);
    if (!frs::contains(big, x) || !frs::contains(small, tail)) continue;
    ++checked;
    CHECK(frs::contains(fused, x, 1e-9));
  }

  CHECK_THROWS(frs::propagate_to_space(small, 4, {2}));
  CHECK_THROWS(frs::propagate_to_space(small, 4, {2, 7}));
}

TEST_CASE("project computes the exact shadow") {
  Eigen::MatrixXd k(2, 2);
  k << 2.0, 1.0, 1.0, 2.0;
  Ellipsoid e(Eigen::VectorXd::Zero(2), k);
  Ellipsoid shadow = frs::project(e, {0});
  CHECK(shadow.shape()(0, 0) == Catch::Approx(1.5));  // 2 - 1 * (1/2) * 1

  // Identity: support of the shadow equals support of the original along any
  // direction lifted with zeros.
  auto rng = make_rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    Ellipsoid r = random_ellipsoid(5, rng);
    Ellipsoid p = frs::project(r, {0, 2, 4});
    Eigen::VectorXd dir3 = random_unit_vector(3, rng);
    Eigen::VectorXd dir5 = Eigen::VectorXd::Zero(5);
    dir5(0) = dir3(0);
    dir5(2) = dir3(1);
    dir5(4) = dir3(2);
    CHECK(frs::support(p, dir3) == Catch::Approx(frs::support(r, dir5)).epsilon(1e-10));
  }

  // Boundary points project inside the shadow.
  for (int trial = 0; trial < 100; ++trial) {
    Ellipsoid r = random_ellipsoid(4, rng);
    Ellipsoid p = frs::project(r, {1, 3});
    Eigen::VectorXd x = boundary_point(r, random_unit_vector(4, rng));
    Eigen::VectorXd xs(2);
    xs << x(1), x(3);
    CHECK(frs::contains(p, xs, 1e-9));
  }

  CHECK_THROWS(frs::project(e, {}));
  CHECK_THROWS(frs::project(e, {0, 0}));
  CHECK_THROWS(frs::project(e, {3}));
}

TEST_CASE("linear_map transforms center and shape consistently") {
  Ellipsoid disk(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
  Eigen::MatrixXd t = Eigen::Vector2d(2.0, 1.0).asDiagonal();
  Ellipsoid mapped = frs::linear_map(disk, t);
  CHECK(mapped.shape()(0, 0) == Catch::Approx(0.25));
  CHECK(mapped.shape()(1, 1) == Catch::Approx(1.0));

  auto rng = make_rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    Ellipsoid r = random_ellipsoid(4, rng);
    Eigen::MatrixXd m = random_spd(4, rng, 0.5);  // invertible
    Ellipsoid img = frs::linear_map(r, m);
    Eigen::VectorXd x = boundary_point(r, random_unit_vector(4, rng));
    Eigen::VectorXd y = m * x;
    Eigen::VectorXd d = y - img.center();
    CHECK(d.dot(img.shape() * d) == Catch::Approx(1.0).epsilon(1e-8));
  }

  CHECK_THROWS(frs::linear_map(disk, Eigen::MatrixXd::Zero(2, 2)));
  CHECK_THROWS(frs::linear_map(disk, Eigen::MatrixXd::Identity(3, 3)));
}

TEST_CASE("min_trace_box_ellipsoid matches hand-computed weights") {
  Eigen::VectorXd d1(3);
  d1 << 1.0, 1.0, 1.0;
  Eigen::VectorXd lam1 = frs::min_trace_box_ellipsoid(d1);
  CHECK((lam1 - Eigen::VectorXd::Constant(3, 1.0 / 3.0)).norm() < 1e-15);

  Eigen::VectorXd d2(3);
  d2 << 2.0, 1.0, 1.0;
  Eigen::VectorXd lam2 = frs::min_trace_box_ellipsoid(d2);
  CHECK(lam2(0) == Catch::Approx(0.125));
  CHECK(lam2(1) == Catch::Approx(0.25));
  CHECK(lam2(2) == Catch::Approx(0.25));

  Eigen::VectorXd bad(2);
  bad << 1.0, 0.0;
  CHECK_THROWS(frs::min_trace_box_ellipsoid(bad));
}

TEST_CASE("min_trace_box_ellipsoid is tight, sound, and trace-optimal") {
  auto rng = make_rng(31);
  std::uniform_real_distribution<double> uni(0.1, 4.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd d(3);
    for (int i = 0; i < 3; ++i) d(i) = uni(rng);
    Eigen::VectorXd lam = frs::min_trace_box_ellipsoid(d);

    // Tight at corners, and corners dominate interior box points.
    CHECK(lam.dot(d.cwiseProduct(d)) == Catch::Approx(1.0).epsilon(1e-12));
    Ellipsoid e(Eigen::VectorXd::Zero(3), Eigen::MatrixXd(lam.asDiagonal()));
    for (int k = 0; k < 20; ++k) {
      Eigen::VectorXd x(3);
      std::uniform_real_distribution<double> box(-1.0, 1.0);
      for (int i = 0; i < 3; ++i) x(i) = box(rng) * d(i);
      CHECK(frs::contains(e, x, 1e-12));
    }

    // No feasible diagonal competitor has a smaller trace of Lambda^{-1}.
    const double best = lam.cwiseInverse().sum();
    for (int k = 0; k < 200; ++k) {
      Eigen::VectorXd w(3);
      for (int i = 0; i < 3; ++i) w(i) = uni(rng);
      w /= w.dot(d.cwiseProduct(d));  // scale onto the containment boundary
      CHECK(w.cwiseInverse().sum() >= best - 1e-6);
    }
  }
}
