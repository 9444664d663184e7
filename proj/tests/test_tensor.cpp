#include "doctest.h"

#include <cmath>
#include <random>

#include "dip/ops.hpp"
#include "oracles.hpp"

using dip::Shape;
using dip::Tensor;
using dip::Var;
using TD = Tensor<double>;
using VD = Var<double>;

namespace {

// Weighted sum so upstream gradients are not uniform.
VD probe_loss(const VD& out, const VD& weights) { return dip::sum(dip::hadamard(out, weights)); }

}  // namespace

TEST_CASE("tensor shape validation") {
  CHECK_THROWS_AS(TD({2, 0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(TD({2, 2}, std::vector<double>(3)), std::invalid_argument);
  TD t({2, 3, 4, 5}, 1.5);
  CHECK(t.size() == 120);
  CHECK(t.at(1, 2, 3, 4) == 1.5);
  CHECK(t.all_finite());
  t[7] = NAN;
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("conv2d identity and constant examples") {
  TD x({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  VD in(x);
  VD k(TD({1, 1, 1, 1}, 1.0));
  VD b(TD({1}, 0.0));
  auto y = dip::conv2d(in, k, b, {});
  CHECK(y.value() == x);

  VD c(TD({1, 1, 5, 5}, 5.0));
  VD ones(TD({1, 1, 3, 3}, 1.0));
  auto z = dip::conv2d(c, ones, b, {1, dip::Padding::valid()});
  REQUIRE(z.shape() == Shape{1, 1, 3, 3});
  for (double v : z.value().data()) CHECK(v == doctest::Approx(45.0));
}

TEST_CASE("conv2d output extent and errors") {
  VD x(TD({1, 2, 9, 7}, 0.0));
  VD k(TD({3, 2, 3, 3}, 0.0));
  VD b;
  auto y = dip::conv2d(x, k, b, {2, dip::Padding::same(3)});
  CHECK(y.shape() == Shape{1, 3, 5, 4});  // floor((9+2-3)/2)+1, floor((7+2-3)/2)+1
  VD wrong(TD({3, 4, 3, 3}, 0.0));
  CHECK_THROWS_WITH_AS(dip::conv2d(x, wrong, b, {}), doctest::Contains("channels"), std::invalid_argument);
  VD big(TD({1, 2, 11, 11}, 0.0));
  CHECK_THROWS_AS(dip::conv2d(x, big, b, {}), std::invalid_argument);
  CHECK_THROWS_AS(dip::conv2d(x, k, b, {0, dip::Padding::valid()}), std::invalid_argument);
}

TEST_CASE("conv2d agrees with the direct-loop oracle") {
  std::mt19937_64 rng(11);
  struct Case {
    Shape x, k;
    std::size_t stride, pad;
    bool reflect;
  };
  const Case cases[] = {
      {{1, 2, 5, 5}, {3, 2, 3, 3}, 1, 0, false}, {{2, 3, 8, 7}, {4, 3, 3, 3}, 1, 1, true},
      {{1, 2, 9, 9}, {2, 2, 5, 5}, 2, 2, true},  {{1, 1, 6, 10}, {2, 1, 3, 3}, 2, 1, false},
      {{1, 4, 12, 12}, {3, 4, 5, 5}, 1, 2, true},
  };
  for (const auto& c : cases) {
    TD x = oracle::random_tensor<double>(c.x, rng);
    TD k = oracle::random_tensor<double>(c.k, rng);
    TD b = oracle::random_tensor<double>({c.k[0]}, rng);
    dip::Padding pad{c.reflect ? dip::PadMode::Reflect : dip::PadMode::Zero, c.pad, c.pad, c.pad, c.pad};
    auto y = dip::conv2d(VD(x), VD(k), VD(b), {c.stride, pad});
    TD ref = oracle::naive_conv2d(x, k, &b, c.stride, c.pad, c.reflect);
    REQUIRE(y.shape() == ref.shape());
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - y.value()[i]));
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("centered delta kernel with reflection padding reproduces input") {
  std::mt19937_64 rng(3);
  TD x = oracle::random_tensor<double>({1, 1, 7, 9}, rng);
  for (std::size_t ks : {3u, 5u, 7u}) {
    TD k({1, 1, ks, ks}, 0.0);
    k.at(0, 0, ks / 2, ks / 2) = 1.0;
    auto y = dip::conv2d(VD(x), VD(k), VD(), {1, dip::Padding::same(ks)});
    CHECK(y.value() == x);
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  std::mt19937_64 rng(5);
  VD x(oracle::random_tensor<double>({1, 2, 5, 5}, rng), true);
  VD k(oracle::random_tensor<double>({3, 2, 3, 3}, rng), true);
  VD b(oracle::random_tensor<double>({3}, rng), true);
  std::vector<VD> wrt{x, k, b};
  SUBCASE("valid sum loss") {
    auto err = oracle::gradcheck<double>(wrt, [&] { return dip::sum(dip::conv2d(x, k, b, {})); });
    CHECK(err < 1e-4);
  }
  SUBCASE("reflect padded, strided, weighted loss") {
    VD r(oracle::random_tensor<double>({1, 3, 3, 3}, rng));
    auto err = oracle::gradcheck<double>(
        wrt, [&] { return probe_loss(dip::conv2d(x, k, b, {2, dip::Padding::same(3)}), r); });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("bilinear_upsample2x examples") {
  auto y = dip::bilinear_upsample2x(VD(TD({1, 2, 3, 4}, 0.7)));
  CHECK(y.shape() == Shape{1, 2, 6, 8});
  for (double v : y.value().data()) CHECK(v == 0.7);

  auto row = dip::bilinear_upsample2x(VD(TD({1, 1, 1, 2}, std::vector<double>{0.0, 1.0})));
  REQUIRE(row.shape() == Shape{1, 1, 2, 4});
  const auto& v = row.value();
  CHECK(v[0] == 0.0);
  CHECK(v[3] == 1.0);
  for (std::size_t i = 1; i < 4; ++i) CHECK(v[i] >= v[i - 1]);
  CHECK(v[1] == 0.25);
  CHECK(v[2] == 0.75);
}

TEST_CASE("bilinear_upsample2x preserves the global mean") {
  std::mt19937_64 rng(17);
  for (unsigned trial = 0; trial < 10; ++trial) {
    TD x = oracle::random_tensor<double>({1, 1, 3u + trial % 4u, 2u + trial % 5u}, rng);
    auto y = dip::bilinear_upsample2x(VD(x));
    double mx = 0.0, my = 0.0;
    for (double v : x.data()) mx += v;
    for (double v : y.value().data()) my += v;
    CHECK(std::abs(mx / x.size() - my / y.value().size()) < 1e-12);
  }
}

TEST_CASE("bilinear_upsample2x gradient") {
  std::mt19937_64 rng(23);
  VD x(oracle::random_tensor<double>({1, 1, 4, 4}, rng), true);
  VD r(oracle::random_tensor<double>({1, 1, 8, 8}, rng));
  std::vector<VD> wrt{x};
  CHECK(oracle::gradcheck<double>(wrt, [&] { return probe_loss(dip::bilinear_upsample2x(x), r); }) < 1e-4);
}

TEST_CASE("leaky_relu values and slopes") {
  auto y = dip::leaky_relu(VD(TD({3}, std::vector<double>{-1.0, 3.0, 0.0})), 0.2);
  CHECK(y.value()[0] == doctest::Approx(-0.2));
  CHECK(y.value()[1] == 3.0);
  CHECK(y.value()[2] == 0.0);

  VD x(TD({3}, std::vector<double>{-2.0, 2.0, 0.0}), true);
  dip::backward(dip::sum(dip::leaky_relu(x, 0.2)));
  CHECK(x.grad()[0] == doctest::Approx(0.2));
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == doctest::Approx(0.2));
  CHECK_THROWS_AS(dip::leaky_relu(x, 1.0), std::invalid_argument);
}

TEST_CASE("hadamard semantics and broadcasting") {
  std::mt19937_64 rng(29);
  TD a = oracle::random_tensor<double>({1, 1, 1, 3}, rng);
  CHECK(dip::hadamard(VD(a), VD(TD(a.shape(), 1.0))).value() == a);
  auto zeroed = dip::hadamard(VD(a), VD(TD(a.shape(), 0.0)));
  for (double v : zeroed.value().data()) CHECK(v == 0.0);

  auto m = dip::hadamard(VD(TD({3}, std::vector<double>{1, 2, 3})), VD(TD({3}, std::vector<double>{0, 1, 0})));
  CHECK(m.value() == TD({3}, std::vector<double>{0, 2, 0}));

  VD big(oracle::random_tensor<double>({2, 3, 4, 5}, rng), true);
  VD mask(oracle::random_tensor<double>({1, 1, 4, 5}, rng), true);
  VD r(oracle::random_tensor<double>({2, 3, 4, 5}, rng));
  std::vector<VD> wrt{big, mask};
  CHECK(oracle::gradcheck<double>(wrt, [&] { return probe_loss(dip::hadamard(big, mask), r); }) < 1e-4);
  CHECK_THROWS_AS(dip::hadamard(big, VD(TD({1, 1, 5, 4}))), std::invalid_argument);
}

TEST_CASE("concat_channels") {
  std::mt19937_64 rng(31);
  VD a(oracle::random_tensor<double>({1, 2, 4, 4}, rng), true);
  VD b(oracle::random_tensor<double>({1, 3, 4, 4}, rng), true);
  std::vector<VD> both{a, b};
  auto y = dip::concat_channels<double>(both);
  CHECK(y.shape() == Shape{1, 5, 4, 4});
  std::vector<VD> single{a};
  CHECK(dip::concat_channels<double>(single).value() == a.value());

  dip::backward(dip::sum(y));
  for (double g : a.grad().data()) CHECK(g == 1.0);
  for (double g : b.grad().data()) CHECK(g == 1.0);
  CHECK(a.grad().shape() == a.shape());
  CHECK(b.grad().shape() == b.shape());

  VD r(oracle::random_tensor<double>({1, 5, 4, 4}, rng));
  std::vector<VD> wrt{a, b};
  CHECK(oracle::gradcheck<double>(wrt, [&] { return probe_loss(dip::concat_channels<double>(both), r); }) < 1e-4);

  std::vector<VD> bad{a, VD(TD({1, 1, 4, 3}))};
  CHECK_THROWS_AS(dip::concat_channels<double>(bad), std::invalid_argument);
}

TEST_CASE("mse_loss") {
  std::mt19937_64 rng(37);
  TD a = oracle::random_tensor<double>({2, 3}, rng);
  CHECK(dip::mse_loss(VD(a), VD(a)).value()[0] == 0.0);
  CHECK(dip::mse_loss(VD(TD({2}, 0.0)), VD(TD({2}, 1.0))).value()[0] == 1.0);

  VD p(oracle::random_tensor<double>({1, 1, 3, 4}, rng), true);
  TD t = oracle::random_tensor<double>({1, 1, 3, 4}, rng);
  dip::backward(dip::mse_loss(p, VD(t)));
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(p.grad()[i] == doctest::Approx(2.0 * (p.value()[i] - t[i]) / 12.0));
  std::vector<VD> wrt{p};
  CHECK(oracle::gradcheck<double>(wrt, [&] { return dip::mse_loss(p, VD(t)); }) < 1e-4);
  CHECK_THROWS_AS(dip::mse_loss(p, VD(TD({12}))), std::invalid_argument);

  for (int trial = 0; trial < 20; ++trial) {
    TD x = oracle::random_tensor<double>({7}, rng), y = oracle::random_tensor<double>({7}, rng);
    CHECK(dip::mse_loss(VD(x), VD(y)).value()[0] > 0.0);
  }
}

TEST_CASE("backward contract") {
  VD w(TD({3}, std::vector<double>{0.3, -1.0, 2.0}), true);
  dip::backward(dip::sum(w));
  for (double g : w.grad().data()) CHECK(g == 1.0);

  dip::backward(dip::sum(w));  // grads accumulate
  for (double g : w.grad().data()) CHECK(g == 2.0);
  w.zero_grad();
  for (double g : w.grad().data()) CHECK(g == 0.0);

  CHECK_THROWS_AS(dip::backward(w), std::invalid_argument);  // non-scalar
  CHECK_THROWS_AS(dip::backward(dip::sum(VD(TD({2}, 1.0)))), std::invalid_argument);

  // Masked loss: zero gradient wherever m = 0.
  VD img(TD({1, 1, 2, 3}, std::vector<double>{0.1, 0.9, 0.4, 0.6, 0.2, 0.8}), true);
  VD mask(TD({1, 1, 2, 3}, std::vector<double>{1, 0, 1, 0, 1, 0}));
  VD x0(TD({1, 1, 2, 3}, std::vector<double>{0.5, 0, 0.5, 0, 0.5, 0}));
  dip::backward(dip::mse_loss(dip::hadamard(img, mask), x0));
  for (std::size_t i = 0; i < 6; ++i) {
    if (mask.value()[i] == 0.0) CHECK(img.grad()[i] == 0.0);
    else CHECK(img.grad()[i] != 0.0);
  }
}

TEST_CASE("composite conv -> leaky_relu -> mse gradients") {
  std::mt19937_64 rng(41);
  VD x(oracle::random_tensor<double>({1, 2, 6, 6}, rng), true);
  VD k(oracle::random_tensor<double>({2, 2, 3, 3}, rng), true);
  VD b(oracle::random_tensor<double>({2}, rng), true);
  VD t(oracle::random_tensor<double>({1, 2, 6, 6}, rng));
  std::vector<VD> wrt{x, k, b};
  auto loss = [&] { return dip::mse_loss(dip::leaky_relu(dip::conv2d(x, k, b, {1, dip::Padding::same(3)}), 0.2), t); };
  CHECK(oracle::gradcheck<double>(wrt, loss) < 1e-4);
}

TEST_CASE("single precision gradients within 1e-2") {
  std::mt19937_64 rng(43);
  using VF = Var<float>;
  VF x(oracle::random_tensor<float>({1, 2, 6, 6}, rng), true);
  VF k(oracle::random_tensor<float>({2, 2, 3, 3}, rng), true);
  VF b(oracle::random_tensor<float>({2}, rng), true);
  std::vector<VF> wrt{x, k, b};
  auto loss = [&] {
    return dip::sum(dip::bilinear_upsample2x(dip::leaky_relu(dip::conv2d(x, k, b, {1, dip::Padding::same(3)}), 0.2)));
  };
  CHECK(oracle::gradcheck<float>(wrt, loss, 1e-2) < 1e-2);
}

TEST_CASE("backward is deterministic") {
  std::mt19937_64 rng(47);
  TD xv = oracle::random_tensor<double>({1, 3, 10, 10}, rng);
  TD kv = oracle::random_tensor<double>({4, 3, 5, 5}, rng);
  auto run = [&] {
    VD k(kv, true);
    dip::backward(dip::sum(dip::sigmoid(dip::conv2d(VD(xv), k, VD(), {2, dip::Padding::same(5)}))));
    return k.grad();
  };
  CHECK(run() == run());
}

TEST_CASE("crop2d, avg_pool2x and sigmoid gradients") {
  std::mt19937_64 rng(53);
  VD x(oracle::random_tensor<double>({1, 2, 6, 8}, rng), true);
  std::vector<VD> wrt{x};
  VD r1(oracle::random_tensor<double>({1, 2, 3, 4}, rng));
  CHECK(oracle::gradcheck<double>(wrt, [&] { return probe_loss(dip::avg_pool2x(x), r1); }) < 1e-4);
  VD r2(oracle::random_tensor<double>({1, 2, 4, 5}, rng));
  CHECK(oracle::gradcheck<double>(wrt, [&] { return probe_loss(dip::crop2d(x, 1, 2, 4, 5), r2); }) < 1e-4);
  VD r3(oracle::random_tensor<double>({1, 2, 6, 8}, rng));
  CHECK(oracle::gradcheck<double>(wrt, [&] { return probe_loss(dip::sigmoid(x), r3); }) < 1e-4);
}

TEST_CASE("instance_norm standardizes each plane") {
  std::mt19937_64 rng(61);
  const TD t = oracle::random_tensor<double>({2, 3, 5, 7}, rng, -3.0, 5.0);
  const auto y = dip::instance_norm(VD(t)).value();
  for (std::size_t p = 0; p < 6; ++p) {
    double mean = 0.0, sq = 0.0, var = 0.0, xm = 0.0;
    for (std::size_t i = 0; i < 35; ++i) xm += t[p * 35 + i];
    xm /= 35.0;
    for (std::size_t i = 0; i < 35; ++i) {
      mean += y[p * 35 + i];
      sq += y[p * 35 + i] * y[p * 35 + i];
      var += (t[p * 35 + i] - xm) * (t[p * 35 + i] - xm);
    }
    var /= 35.0;
    CHECK(std::abs(mean / 35.0) < 1e-12);
    CHECK(sq / 35.0 == doctest::Approx(var / (var + 1e-5)).epsilon(1e-12));
  }
  const auto flat = dip::instance_norm(VD(TD({1, 1, 3, 3}, 0.7))).value();
  for (std::size_t i = 0; i < flat.size(); ++i) CHECK(std::abs(flat[i]) < 1e-12);
  CHECK_THROWS_AS(dip::instance_norm(VD(TD({3, 3}, 1.0))), std::invalid_argument);
  CHECK_THROWS_AS(dip::instance_norm(VD(t), 0.0), std::invalid_argument);
}

TEST_CASE("instance_norm gradient") {
  std::mt19937_64 rng(67);
  VD x(oracle::random_tensor<double>({1, 3, 4, 6}, rng), true);
  std::vector<VD> wrt{x};
  VD r(oracle::random_tensor<double>({1, 3, 4, 6}, rng));
  CHECK(oracle::gradcheck<double>(wrt, [&] { return probe_loss(dip::instance_norm(x), r); }) < 1e-4);
}

TEST_CASE("graph inspection visits each node once") {
  VD w(TD({1, 1, 4, 4}, 0.5), true);
  auto h = dip::leaky_relu(w, 0.2);
  std::vector<VD> pair{h, h};
  auto loss = dip::sum(dip::concat_channels<double>(pair));
  auto ops = dip::graph_ops(loss);
  CHECK(ops.size() == 4);  // leaf, leaky_relu, concat, sum
  CHECK(std::count(ops.begin(), ops.end(), "leaky_relu") == 1);
  dip::backward(loss);
  for (double g : w.grad().data()) CHECK(g == 2.0);
}

TEST_CASE("finite checking mode") {
  auto& rt = dip::Runtime::get();
  rt.check_finite = true;
  TD bad({2}, std::vector<double>{1.0, INFINITY});
  CHECK_THROWS_AS(dip::leaky_relu(VD(bad), 0.2), std::runtime_error);
  rt.check_finite = false;
  CHECK_NOTHROW(dip::leaky_relu(VD(bad), 0.2));
}
