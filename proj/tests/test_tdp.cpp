#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <random>

#include "posthoc/tdp.hpp"
#include "test_support.hpp"

using namespace posthoc;

namespace {

std::vector<double> random_template(std::size_t K, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 0.6);
  std::vector<double> t(K);
  for (auto& v : t) v = u(rng);
  std::sort(t.begin(), t.end());
  return t;
}

// p-values drawn from a coarse grid so that ties with thresholds occur.
std::vector<double> coarse_p(std::size_t n, std::mt19937_64& rng) {
  std::vector<double> p(n);
  for (auto& v : p) v = static_cast<double>(rng() % 11) / 20.0;
  return p;
}

} // namespace

TEST_CASE("Bound examples") {
  const std::vector<double> t{0.01, 0.02, 0.03};
  CHECK(tdp_bound_bruteforce(std::vector<double>{0.005, 0.015, 0.025, 0.5}, t) == 0.25);
  CHECK(tdp_bound_linear(std::vector<double>{0.005, 0.015, 0.025, 0.5}, t) == 0.25);
  CHECK(tdp_bound_bruteforce(std::vector<double>{0.5, 0.03, 0.9}, t) == 0.0);
  CHECK(tdp_bound_bruteforce(std::vector<double>{0.001}, t) == 1.0);
  CHECK(tdp_bound_bruteforce(std::vector<double>{0.01}, t) == 0.0); // tie is not a discovery
  CHECK_THROWS_AS(tdp_bound_bruteforce(std::vector<double>{}, t), ParamError);
  CHECK_THROWS_AS(tdp_bound_linear(std::vector<double>{}, t), ParamError);
  CHECK_THROWS_AS(tdp_bound_linear(std::vector<double>{0.2, 0.1}, t), ContractError);
}

TEST_CASE("Singletons follow 1{p < t_1}") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const auto t = random_template(1 + rng() % 5, rng);
    const double p = u(rng);
    CHECK(tdp_bound_linear(std::vector<double>{p}, t) == (p < t[0] ? 1.0 : 0.0));
  }
}

TEST_CASE("Linear sweep equals brute force") {
  std::mt19937_64 rng(2);
  SECTION("small exhaustive-style sweep") {
    for (std::size_t n = 1; n <= 12; ++n)
      for (std::size_t K = 1; K <= 6; ++K)
        for (int rep = 0; rep < 20; ++rep) {
          auto p = rep % 2 ? coarse_p(n, rng) : testing::uniform_rows(1, n, rng);
          std::vector<double> t(K);
          for (auto& v : t) v = static_cast<double>(rng() % 11) / 20.0;
          std::sort(t.begin(), t.end());
          const double brute = tdp_bound_bruteforce(p, t);
          std::sort(p.begin(), p.end());
          REQUIRE(tdp_bound_linear(p, t) == brute);
        }
  }
  SECTION("larger random cases") {
    for (int rep = 0; rep < 1000; ++rep) {
      const std::size_t n = 1 + rng() % 200, K = 1 + rng() % 50;
      auto p = testing::uniform_rows(1, n, rng);
      for (auto& v : p) v = v * v;
      std::sort(p.begin(), p.end());
      const auto t = random_template(K, rng);
      REQUIRE(tdp_bound_linear(p, t) == tdp_bound_bruteforce(p, t));
    }
  }
}

TEST_CASE("Bound properties") {
  std::mt19937_64 rng(3);
  SECTION("monotone in the template") {
    for (int rep = 0; rep < 300; ++rep) {
      const std::size_t n = 1 + rng() % 40, K = 1 + rng() % 20;
      auto p = testing::uniform_rows(1, n, rng);
      const auto t = random_template(K, rng);
      auto larger = t;
      for (auto& v : larger) v = std::min(0.99, v * 1.3 + 0.01);
      std::sort(larger.begin(), larger.end());
      for (std::size_t k = 0; k < K; ++k) larger[k] = std::max(larger[k], t[k]);
      CHECK(tdp_bound_linear(p, larger) >= tdp_bound_linear(p, t));
    }
  }
  SECTION("invariant under permutation of S") {
    for (int rep = 0; rep < 200; ++rep) {
      auto p = coarse_p(1 + rng() % 30, rng);
      const auto t = random_template(1 + rng() % 10, rng);
      const double ref = tdp_bound_bruteforce(p, t);
      std::shuffle(p.begin(), p.end(), rng);
      CHECK(tdp_bound_bruteforce(p, t) == ref);
    }
  }
  SECTION("sets no larger than delta get zero under pARI(delta)") {
    for (int rep = 0; rep < 200; ++rep) {
      const std::size_t m = 40 + rng() % 100, delta = 1 + rng() % 30;
      const auto t = pari_template(m, delta, 1.0, 0.05, m);
      auto p = testing::uniform_rows(1, 1 + rng() % delta, rng);
      for (auto& v : p) v *= 1e-6;
      CHECK(tdp_bound_linear(p, t) == 0.0);
    }
  }
}

TEST_CASE("Selection and truth") {
  CHECK_THROWS_AS(Selection({}, 10), ParamError);
  CHECK_THROWS_AS(Selection({1, 1}, 10), ParamError);
  CHECK_THROWS_AS(Selection({10}, 10), IndexError);
  const Selection s({4, 2, 3}, 5);
  CHECK(std::vector<std::size_t>(s.indices().begin(), s.indices().end()) == std::vector<std::size_t>{2, 3, 4});

  std::vector<std::uint8_t> h0(20, 1);
  std::fill(h0.begin(), h0.begin() + 10, 0);
  std::vector<std::size_t> signal(5), null(5), half(10);
  std::iota(signal.begin(), signal.end(), 0);
  std::iota(null.begin(), null.end(), 12);
  std::iota(half.begin(), half.end(), 5);
  CHECK(true_tdp(signal, h0) == 1.0);
  CHECK(true_tdp(null, h0) == 0.0);
  CHECK(true_tdp(half, h0) == 0.5);
  CHECK_THROWS_AS(true_tdp(std::vector<std::size_t>{}, h0), ParamError);
}

TEST_CASE("Top-k order breaks ties by index") {
  const std::vector<double> z{1.0, -3.0, 3.0, 0.5, -1.0};
  CHECK(top_k_order(z) == std::vector<std::size_t>{1, 2, 0, 4, 3});
}

TEST_CASE("Confidence curve equals per-k linear bounds") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t m = 50 + rng() % 200;
    const auto mask = testing::full_mask(static_cast<std::uint32_t>(m));
    std::vector<double> z(m);
    for (auto& v : z) v = std::round(g(rng) * 4.0) / 4.0; // ties in |Z|
    std::vector<double> p(m);
    for (std::size_t i = 0; i < m; ++i) p[i] = std::erfc(std::fabs(z[i]) / std::sqrt(2.0));
    const StatMap zmap(mask, z);
    std::map<std::string, Template> templates{{"Simes", simes_template(m, 0.1, m)},
                                              {"ARI", ari_template(p, 0.1, m / 2)},
                                              {"pARI", pari_template(m, 5, 0.3, 0.1, m)}};
    const auto curve = confidence_curve(zmap, p, templates);
    REQUIRE(curve.ks.size() == m);
    const auto order = top_k_order(z);
    for (std::size_t mi = 0; mi < curve.methods.size(); ++mi) {
      const auto& t = templates.at(curve.methods[mi]).thresholds;
      for (std::size_t k = 1; k <= m; ++k) {
        std::vector<double> sub;
        for (std::size_t i = 0; i < k; ++i) sub.push_back(p[order[i]]);
        std::sort(sub.begin(), sub.end());
        REQUIRE(curve.bounds[mi][k - 1] == tdp_bound_linear(sub, t));
      }
    }
    // k = m is the whole-map bound
    const auto partial = confidence_curve(zmap, p, templates, {1, m / 2, m});
    CHECK(partial.bounds[0].back() == curve.bounds[0].back());
    CHECK_THROWS_AS(confidence_curve(zmap, p, templates, {0, 3}), ParamError);
    CHECK_THROWS_AS(confidence_curve(zmap, p, templates, {3, 3}), ParamError);
  }
}

TEST_CASE("pARI(27) curve is zero for k <= 27") {
  std::mt19937_64 rng(10);
  const std::size_t m = 400;
  const auto mask = testing::full_mask(m);
  std::vector<double> z(m), p(m);
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t i = 0; i < m; ++i) {
    z[i] = g(rng) + (i < 60 ? 6.0 : 0.0);
    p[i] = std::max(1e-300, std::erfc(std::fabs(z[i]) / std::sqrt(2.0)));
  }
  const auto curve = confidence_curve(StatMap(mask, z), p, {{"pARI", pari_template(m, 27, 0.5, 0.05, m)}});
  for (std::size_t k = 1; k <= 27; ++k) CHECK(curve.bounds[0][k - 1] == 0.0);
  CHECK(curve.bounds[0][59] > 0.0);
}
