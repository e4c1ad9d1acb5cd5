#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "kopt/rng.hpp"

using kopt::Rng;

TEST_CASE("identical seeds give identical streams") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("different derived streams diverge") {
  Rng a(kopt::derive_stream(7, 0)), b(kopt::derive_stream(7, 1));
  int same = 0;
  for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64() ? 1 : 0;
  REQUIRE(same == 0);
  REQUIRE(kopt::derive_stream(7, 3) == kopt::derive_stream(7, 3));
}

TEST_CASE("uniform01 range and mean") {
  Rng rng(99);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  REQUIRE(std::abs(sum / 100000 - 0.5) < 0.01);
}

TEST_CASE("uniform_int covers inclusive bounds") {
  Rng rng(5);
  std::vector<int> hits(4, 0);
  for (int i = 0; i < 4000; ++i) {
    const long v = rng.uniform_int(2, 5);
    REQUIRE(v >= 2);
    REQUIRE(v <= 5);
    ++hits[static_cast<std::size_t>(v - 2)];
  }
  for (int h : hits) REQUIRE(h > 0);
}

TEST_CASE("standard normal moments") {
  Rng rng(2024);
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double std = std::sqrt(sq / n - mean * mean);
  REQUIRE(std::abs(mean) < 0.02);
  REQUIRE(std::abs(std - 1.0) < 0.02);
}

TEST_CASE("psd_sqrt on diagonal matrix") {
  Eigen::MatrixXd sigma(2, 2);
  sigma << 4, 0, 0, 9;
  const Eigen::MatrixXd s = kopt::psd_sqrt(sigma);
  REQUIRE(std::abs(s(0, 0) - 2.0) < 1e-12);
  REQUIRE(std::abs(s(1, 1) - 3.0) < 1e-12);
  REQUIRE(std::abs(s(0, 1)) < 1e-12);
}

TEST_CASE("psd_sqrt reproduces the covariance") {
  Eigen::MatrixXd a(3, 3);
  a << 1, 0.2, 0, 0.5, 1, 0.1, 0, 0.3, 1;
  const Eigen::MatrixXd sigma = a * a.transpose();
  const Eigen::MatrixXd s = kopt::psd_sqrt(sigma);
  REQUIRE((s * s.transpose() - sigma).norm() < 1e-10);
}

TEST_CASE("psd_sqrt accepts zero and rejects indefinite") {
  REQUIRE(kopt::psd_sqrt(Eigen::MatrixXd::Zero(4, 4)).norm() == 0.0);
  Eigen::MatrixXd bad(2, 2);
  bad << 1, 2, 2, 1;  // eigenvalues -1, 3
  REQUIRE_THROWS_AS(kopt::psd_sqrt(bad), std::invalid_argument);
  REQUIRE_THROWS_AS(kopt::psd_sqrt(Eigen::MatrixXd::Zero(2, 3)), std::invalid_argument);
}

TEST_CASE("sample_mvn matches requested covariance") {
  Eigen::MatrixXd sigma(2, 2);
  sigma << 4, 1, 1, 2;
  const Eigen::MatrixXd s = kopt::psd_sqrt(sigma);
  Rng rng(31);
  const int n = 50000;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  std::vector<Eigen::Vector2d> draws;
  draws.reserve(n);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd x = kopt::sample_mvn(Eigen::Vector2d::Zero(), s, rng);
    draws.push_back(x);
    mean += x;
  }
  mean /= n;
  for (const auto& x : draws) cov += (x - mean) * (x - mean).transpose();
  cov /= n - 1;
  REQUIRE(std::abs(cov(0, 0) - 4.0) < 0.4);
  REQUIRE(std::abs(cov(1, 1) - 2.0) < 0.2);
  REQUIRE(std::abs(cov(0, 1) - 1.0) < 0.15);
}

TEST_CASE("zero covariance draws consume randomness but return the mean") {
  Rng rng(8);
  const Eigen::MatrixXd s = kopt::psd_sqrt(Eigen::MatrixXd::Zero(3, 3));
  Eigen::Vector3d mu(1, 2, 3);
  const Eigen::VectorXd x = kopt::sample_mvn(mu, s, rng);
  REQUIRE((x - mu).norm() == 0.0);
}
