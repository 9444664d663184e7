#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "dip/metrics.hpp"
#include "oracles.hpp"

using dip::Tensor;

namespace {

std::vector<double> as_vector(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("psnr closed forms") {
  Tensor<double> a({1, 1, 4, 4}, 0.5);
  CHECK(std::isinf(dip::psnr(a, a, 1.0)));
  CHECK(dip::psnr(a, a, 1.0) > 0);
  Tensor<double> b = a;
  for (auto& v : b.data()) v += 0.1;  // MSE 0.01
  CHECK(dip::psnr(a, b, 1.0) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(dip::psnr(a, b, 1.0) == dip::psnr(b, a, 1.0));
  CHECK_THROWS_AS(dip::psnr(a, Tensor<double>({1, 1, 4, 5}), 1.0), std::invalid_argument);
  CHECK_THROWS_AS(dip::psnr(a, b, 0.0), std::invalid_argument);
}

TEST_CASE("psnr is strictly decreasing in MSE") {
  Tensor<double> a({1, 1, 3, 3}, 0.0);
  double prev = INFINITY;
  for (int k = 1; k < 30; ++k) {
    Tensor<double> b({1, 1, 3, 3}, 0.01 * k);
    const double p = dip::psnr(a, b, 1.0);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("psnr and ssim match naive oracles") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const auto a = oracle::random_tensor<double>({1, 1, 16, 16}, rng, 0.0, 1.0);
    const auto b = oracle::random_tensor<double>({1, 1, 16, 16}, rng, 0.0, 1.0);
    CHECK(dip::psnr(a, b, 1.0) == doctest::Approx(oracle::naive_psnr(as_vector(a), as_vector(b), 1.0)).epsilon(1e-12));
    const double s = dip::ssim(a, b);
    CHECK(std::abs(s - oracle::naive_ssim(as_vector(a), as_vector(b), 16, 16)) < 1e-9);
    CHECK(std::abs(s - dip::ssim(b, a)) < 1e-12);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("ssim on structured images and custom range") {
  std::mt19937_64 rng(12);
  Tensor<double> a({1, 1, 20, 24});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (rng() & 1) ? 1.0 : 0.0;
  CHECK(dip::ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  Tensor<double> inv = a;
  for (auto& v : inv.data()) v = 1.0 - v;
  CHECK(dip::ssim(a, inv) < 0.0);

  auto s8 = a;
  for (auto& v : s8.data()) v *= 255.0;
  auto t8 = oracle::random_tensor<double>({1, 1, 20, 24}, rng, 0.0, 255.0);
  dip::SsimParams p;
  p.dynamic_range = 255.0;
  CHECK(std::abs(dip::ssim(s8, t8, p) -
                 oracle::naive_ssim(as_vector(s8), as_vector(t8), 20, 24, 11, 1.5, 0.01, 0.03, 255.0)) < 1e-9);
  CHECK_THROWS_AS(dip::ssim(Tensor<double>({1, 1, 10, 30}), Tensor<double>({1, 1, 10, 30})), std::invalid_argument);
}

TEST_CASE("single precision metrics track the oracle") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = oracle::random_tensor<float>({1, 1, 16, 16}, rng, 0.0, 1.0);
    const auto b = oracle::random_tensor<float>({1, 1, 16, 16}, rng, 0.0, 1.0);
    std::vector<double> va(a.data().begin(), a.data().end()), vb(b.data().begin(), b.data().end());
    CHECK(std::abs(dip::ssim(a, b) - oracle::naive_ssim(va, vb, 16, 16)) < 1e-6);
    CHECK(std::abs(dip::psnr(a, b, 1.0) - oracle::naive_psnr(va, vb, 1.0)) < 1e-6);
  }
}

TEST_CASE("aggregate statistics") {
  std::vector<dip::MetricRow> rows = {
      {"a", "7x3", "dip", 0.9, 30.0}, {"b", "7x3", "dip", 0.7, 20.0}, {"a", "7x3", "bicubic", 0.5, 25.0}};
  const auto rep = dip::aggregate(rows);
  REQUIRE(rep.aggregates.size() == 2);
  CHECK(rep.aggregates[0].method == "dip");
  CHECK(rep.aggregates[0].n == 2);
  CHECK(rep.aggregates[0].ssim_mean == doctest::Approx(0.8));
  CHECK(rep.aggregates[0].psnr_sd == doctest::Approx(std::sqrt(50.0)));
  CHECK(rep.aggregates[1].ssim_sd == 0.0);
  CHECK(rep.aggregates[1].psnr_mean == 25.0);
  CHECK(dip::sample_mean({1.0, 3.0}) == 2.0);
  CHECK(dip::sample_sd({1.0, 3.0}) == doctest::Approx(1.41421356).epsilon(1e-8));

  std::mt19937_64 rng(3);
  std::vector<dip::MetricRow> big;
  std::vector<double> vals;
  for (int i = 0; i < 37; ++i) {
    const double v = std::uniform_real_distribution<>(0, 1)(rng);
    vals.push_back(v);
    big.push_back({"img" + std::to_string(i), "10x5", "lanczos", v, 10 * v});
  }
  const auto r2 = dip::aggregate(big);
  REQUIRE(r2.aggregates.size() == 1);
  CHECK(r2.aggregates[0].n == 37);
  CHECK(r2.aggregates[0].ssim_mean == dip::sample_mean(vals));
  CHECK(r2.aggregates[0].ssim_sd == dip::sample_sd(vals));
  CHECK_THROWS_AS(dip::sample_mean({}), std::invalid_argument);
}

TEST_CASE("anova F statistic") {
  CHECK(dip::anova_f({{1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}}) == 0.0);
  CHECK(std::isinf(dip::anova_f({{0.0, 0.0}, {1.0, 1.0}})));
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> g(3);
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t i = 0; i < 4 + k + rng() % 5; ++i) g[k].push_back(std::normal_distribution<>(k * 0.3, 1)(rng));
    CHECK(dip::anova_f(g) == doctest::Approx(oracle::anova_f_textbook(g)).epsilon(1e-9));
  }
  CHECK_THROWS_AS(dip::anova_f({{1.0, 2.0}}), std::invalid_argument);
  CHECK_THROWS_AS(dip::anova_f({{1.0, 2.0}, {3.0}}), std::invalid_argument);
}

TEST_CASE("csv output") {
  std::ostringstream os;
  dip::write_report_csv(os, {{"x", "1x1", "bilinear", 1.0, INFINITY}, {"a,b", "7x3", "dip", 0.5, 21.25}});
  CHECK(os.str() == "image,pattern,method,ssim,psnr_db\nx,1x1,bilinear,1,inf\n\"a,b\",7x3,dip,0.5,21.25\n");
  std::ostringstream ag;
  dip::write_aggregate_csv(ag, {{"7x3", "dip", 0.5, 0.1, 20.0, 1.5, 3}});
  CHECK(ag.str() == "pattern,method,ssim_mean,ssim_sd,psnr_mean,psnr_sd,n\n7x3,dip,0.5,0.1,20,1.5,3\n");
  CHECK(dip::format_number(0.1) == "0.1");
  CHECK(std::stod(dip::format_number(0.1 + 0.2)) == 0.1 + 0.2);
}
