#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "posthoc/template_io.hpp"
#include "posthoc/templates.hpp"
#include "test_support.hpp"

using namespace posthoc;

namespace {

// Definition of the Hommel value as a double loop over (i, j), cross-multiplied.
std::size_t hommel_bruteforce(std::vector<double> p, double alpha) {
  std::sort(p.begin(), p.end());
  const std::size_t m = p.size();
  std::size_t h = 0;
  for (std::size_t i = 1; i <= m; ++i) {
    bool ok = true;
    for (std::size_t j = 1; j <= i; ++j)
      if (!(static_cast<long double>(p[m - i + j - 1]) * static_cast<long double>(i) > static_cast<long double>(j) * alpha)) ok = false;
    if (ok) h = i;
  }
  return h;
}

// Closed testing with Simes local tests: the largest index set whose local test does not reject.
std::size_t hommel_closed_testing(const std::vector<double>& p, double alpha) {
  const std::size_t m = p.size();
  std::size_t h = 0;
  for (std::uint32_t subset = 1; subset < (1u << m); ++subset) {
    std::vector<double> q;
    for (std::size_t i = 0; i < m; ++i)
      if (subset >> i & 1u) q.push_back(p[i]);
    std::sort(q.begin(), q.end());
    bool rejected = false;
    for (std::size_t j = 1; j <= q.size(); ++j)
      if (static_cast<long double>(q[j - 1]) * static_cast<long double>(q.size()) <= static_cast<long double>(j) * alpha)
        rejected = true;
    if (!rejected) h = std::max(h, q.size());
  }
  return h;
}

NullRows rows_view(const std::vector<double>& data, std::size_t B, std::size_t m) { return NullRows(data, B, m, m); }

const std::vector<double> kReferenceVector{0.001, 0.008, 0.039, 0.041, 0.042, 0.06,  0.074, 0.205, 0.212,
                                       0.216, 0.222, 0.251, 0.269, 0.275, 0.34,  0.341, 0.384, 0.569,
                                       0.594, 0.696, 0.762, 0.94,  0.942, 0.975, 0.986};

} // namespace

TEST_CASE("Simes template") {
  const auto t = simes_template(100, 0.1, 3);
  REQUIRE(t.K() == 3);
  CHECK(t.thresholds[0] == Catch::Approx(0.001).epsilon(1e-15));
  CHECK(t.thresholds[1] == Catch::Approx(0.002).epsilon(1e-15));
  CHECK(t.thresholds[2] == Catch::Approx(0.003).epsilon(1e-15));
  CHECK(simes_template(50000, 0.05, 1000).thresholds[999] == Catch::Approx(0.001).epsilon(1e-15));
  CHECK_THROWS_AS(simes_template(10, 0.0, 3), ParamError);
  CHECK_THROWS_AS(simes_template(10, 0.1, 11), ParamError);
  CHECK_THROWS_AS(simes_template(10, 0.1, 0), ParamError);
}

TEST_CASE("Hommel value") {
  SECTION("degenerate vectors") {
    CHECK(hommel_value(std::vector<double>(17, 1.0), 0.05) == 17);
    CHECK(hommel_value(std::vector<double>(17, 0.0), 0.05) == 0);
  }
  SECTION("reference vector") {
    for (double alpha : {0.05, 0.1, 0.5}) {
      CHECK(hommel_value(kReferenceVector, alpha) == hommel_bruteforce(kReferenceVector, alpha));
    }
    // Frozen from an independent implementation.
    CHECK(hommel_value(kReferenceVector, 0.05) == 24);
    CHECK(hommel_value(kReferenceVector, 0.1) == 24);
    CHECK(hommel_value(kReferenceVector, 0.5) == 21);
  }
  SECTION("brute force agrees with closed testing") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 300; ++rep) {
      const std::size_t m = 1 + rng() % 10;
      std::vector<double> p(m);
      for (auto& v : p) v = rep % 3 == 0 ? std::pow(u(rng), 4.0) : u(rng);
      if (rep % 7 == 0) p[0] = 0.05; // ties with thresholds
      const double alpha = rep % 2 ? 0.05 : 0.2;
      REQUIRE(hommel_bruteforce(p, alpha) == hommel_closed_testing(p, alpha));
      CHECK(hommel_value(p, alpha) == hommel_bruteforce(p, alpha));
    }
  }
  SECTION("fast value equals brute force on random vectors") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 500; ++rep) {
      const std::size_t m = 1 + rng() % 100;
      std::vector<double> p(m);
      const double power = 1.0 + static_cast<double>(rng() % 6);
      for (auto& v : p) v = std::pow(u(rng), power);
      const double alpha = std::vector<double>{0.01, 0.05, 0.1, 0.25}[rng() % 4];
      CHECK(hommel_value(p, alpha) == hommel_bruteforce(p, alpha));
    }
  }
  SECTION("adding a p-value of one never decreases h") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 200; ++rep) {
      std::vector<double> p(1 + rng() % 40);
      for (auto& v : p) v = std::pow(u(rng), 3.0);
      const auto h = hommel_value(p, 0.1);
      p.push_back(1.0);
      CHECK(hommel_value(p, 0.1) >= h);
    }
  }
}

TEST_CASE("ARI template") {
  SECTION("h = m reduces to Simes") {
    const std::vector<double> p(40, 1.0);
    const auto ari = ari_template(p, 0.05, 40);
    CHECK(*ari.hommel == 40);
    CHECK(ari.thresholds == simes_template(40, 0.05, 40).thresholds);
  }
  SECTION("h = m/2 doubles the thresholds") {
    std::vector<double> p(10, 1.0);
    std::fill(p.begin(), p.begin() + 5, 1e-9);
    const auto ari = ari_template(p, 0.05, 10);
    REQUIRE(*ari.hommel == 5);
    const auto simes = simes_template(10, 0.05, 10);
    for (std::size_t k = 0; k < 10; ++k) CHECK(ari.thresholds[k] == 2.0 * simes.thresholds[k]);
  }
  SECTION("h = 0 gives the all-signal family") {
    const auto ari = ari_template(std::vector<double>(5, 0.0), 0.05, 5);
    CHECK(*ari.hommel == 0);
    for (double t : ari.thresholds) CHECK(t == kBelowOne);
    validate(ari);
  }
  SECTION("ARI dominates Simes pointwise") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 50; ++rep) {
      std::vector<double> p(60);
      for (auto& v : p) v = std::pow(u(rng), 3.0);
      const auto ari = ari_template(p, 0.1, 60);
      const auto simes = simes_template(60, 0.1, 60);
      for (std::size_t k = 0; k < 60; ++k) CHECK(ari.thresholds[k] >= simes.thresholds[k]);
    }
  }
}

TEST_CASE("pARI pivotal statistic") {
  const std::size_t m = 8;
  std::vector<double> grid(m);
  for (std::size_t k = 0; k < m; ++k) grid[k] = static_cast<double>(k + 1) / m;
  CHECK(pari_pivotal(grid, 0, m) == 1.0);
  CHECK(pari_pivotal(std::vector<double>{0.1, 0.3, 0.5, 0.9}, 0, 4) == Catch::Approx(0.4).epsilon(1e-15));
  CHECK(pari_pivotal(std::vector<double>{0.1, 0.3, 0.5, 0.9}, 3, 4) == 0.9);
  CHECK_THROWS_AS(pari_pivotal(std::vector<double>{0.1, 0.3}, 2, 2), ParamError);
}

TEST_CASE("pARI template and calibration") {
  SECTION("delta = 27 zeroes the first 27 thresholds") {
    const auto t = pari_template(1000, 27, 0.3, 0.05, 1000);
    for (std::size_t k = 1; k <= 27; ++k) CHECK(t.thresholds[k - 1] == 0.0);
    CHECK(t.thresholds[27] > 0.0);
    validate(t);
  }
  SECTION("B = 2, alpha = 0.5 takes the smaller pivotal value") {
    const std::vector<double> data{0.1, 0.3, 0.5, 0.9, 0.2, 0.4, 0.6, 0.8};
    const auto res = calibrate_pari(rows_view(data, 2, 4), 0, 0.5, 0, 1);
    CHECK(res.k_alpha == 1);
    CHECK(res.pivotal_values.size() == 2);
    const double smaller = std::min(res.pivotal_values[0], res.pivotal_values[1]);
    CHECK(smaller == Catch::Approx(0.4).epsilon(1e-15));
    CHECK(res.lambda_star <= smaller);
    CHECK(res.lambda_star >= std::nextafter(smaller, 0.0) - 1e-15);
  }
  SECTION("too few randomizations") {
    const std::vector<double> data{0.1, 0.3, 0.5, 0.9, 0.2, 0.4, 0.6, 0.8};
    CHECK_THROWS_AS(calibrate_pari(rows_view(data, 2, 4), 0, 0.1, 0, 1), ParamError);
  }
  SECTION("empirical JER never exceeds alpha") {
    std::mt19937_64 rng(101);
    for (int rep = 0; rep < 50; ++rep) {
      const std::size_t m = 30 + rng() % 120, B = 40 + rng() % 300;
      const auto data = testing::uniform_rows(B, m, rng);
      const auto null = rows_view(data, B, m);
      const double alpha = std::vector<double>{0.05, 0.1, 0.2}[rng() % 3];
      for (std::size_t delta : {std::size_t{0}, std::size_t{1}, std::size_t{27}}) {
        const auto res = calibrate_pari(null, delta, alpha, 0, 1);
        CHECK(empirical_jer(res.tmpl, null) <= alpha);
        // near-maximal: raising lambda to the next pivotal value breaks the budget
        CHECK(res.k_alpha == static_cast<std::size_t>(std::floor(alpha * B)));
      }
    }
  }
}

TEST_CASE("Pivotal-statistic duality") {
  std::mt19937_64 rng(555);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t m = 5 + rng() % 60;
    const auto row = testing::uniform_rows(1, m, rng);
    const std::size_t delta = rng() % m;
    const double lambda = pari_pivotal(row, delta, m);
    const auto null = rows_view(row, 1, m);
    const auto below = pari_template(m, delta, lambda * (1.0 - 1e-12), 0.5, m);
    const auto above = pari_template(m, delta, lambda * (1.0 + 1e-12), 0.5, m);
    CHECK(empirical_jer(below, null) == 0.0);
    CHECK(empirical_jer(above, null) == 1.0);
  }
}

TEST_CASE("Notip learned templates") {
  SECTION("column-wise sort oracle") {
    std::mt19937_64 rng(8);
    const auto data = testing::uniform_rows(5, 4, rng);
    const auto family = learn_notip_templates(rows_view(data, 5, 4), 4);
    for (std::size_t k = 1; k <= 4; ++k) {
      std::vector<double> col;
      for (std::size_t b = 0; b < 5; ++b) col.push_back(data[b * 4 + k - 1]);
      // insertion sort as an independent ordering
      for (std::size_t i = 1; i < col.size(); ++i)
        for (std::size_t j = i; j > 0 && col[j] < col[j - 1]; --j) std::swap(col[j], col[j - 1]);
      for (std::size_t c = 1; c <= 5; ++c) CHECK(family.value(c, k) == col[c - 1]);
    }
    for (std::size_t c = 1; c <= 5; ++c) {
      const auto curve = family.curve(c);
      CHECK(std::is_sorted(curve.begin(), curve.end()));
    }
  }
  SECTION("identical rows") {
    const std::vector<double> row{0.01, 0.2, 0.3, 0.7, 0.9};
    std::vector<double> data;
    for (int b = 0; b < 6; ++b) data.insert(data.end(), row.begin(), row.end());
    const auto family = learn_notip_templates(rows_view(data, 6, 5), 3);
    for (std::size_t c = 1; c <= 6; ++c) CHECK(family.curve(c) == std::vector<double>(row.begin(), row.begin() + 3));
  }
  SECTION("preconditions") {
    const std::vector<double> one{0.1, 0.2, 0.3};
    CHECK_THROWS_AS(learn_notip_templates(rows_view(one, 1, 3), 2), ParamError);
    const std::vector<double> two{0.1, 0.2, 0.3, 0.1, 0.2, 0.3};
    CHECK_THROWS_AS(learn_notip_templates(rows_view(two, 2, 3), 4), ParamError);
  }
  SECTION("default K") {
    CHECK(notip_default_k(50000) == 1000);
    CHECK(notip_default_k(27000) == 540);
    CHECK(notip_default_k(10) == 1);
  }
}

TEST_CASE("Notip calibration") {
  SECTION("self-calibration at alpha = 1/B selects the lowest level") {
    std::mt19937_64 rng(4);
    const std::size_t B = 20, m = 30;
    const auto data = testing::uniform_rows(B, m, rng);
    const auto null = rows_view(data, B, m);
    const auto family = learn_notip_templates(null, 5);
    const auto res = calibrate_notip(family, null, 1.0 / B, 1);
    CHECK(res.k_alpha == 1);
    CHECK(res.curve_index == 0);
    CHECK(res.lambda_star == 0.0);
    for (double t : res.tmpl.thresholds) CHECK(t == 0.0);
    CHECK(empirical_jer(res.tmpl, null) == 0.0);
  }
  SECTION("calibrated template respects alpha on independent rows") {
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 50; ++rep) {
      const std::size_t m = 40 + rng() % 100, Bt = 50 + rng() % 200, Bc = 40 + rng() % 200;
      const auto train = testing::uniform_rows(Bt, m, rng);
      const auto calib = testing::uniform_rows(Bc, m, rng);
      const std::size_t K = 1 + rng() % 10;
      const auto family = learn_notip_templates(rows_view(train, Bt, m), K);
      const double alpha = std::vector<double>{0.05, 0.1, 0.2}[rng() % 3];
      const auto res = calibrate_notip(family, rows_view(calib, Bc, m), alpha, 1);
      CHECK(empirical_jer(res.tmpl, rows_view(calib, Bc, m)) <= alpha);
      validate(res.tmpl);
    }
  }
  SECTION("lambda is monotone in alpha") {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 20; ++rep) {
      const std::size_t m = 50, B = 200;
      const auto train = testing::uniform_rows(B, m, rng);
      const auto calib = testing::uniform_rows(B, m, rng);
      const auto family = learn_notip_templates(rows_view(train, B, m), 5);
      double previous = -1.0;
      for (double alpha : {0.02, 0.05, 0.1, 0.2, 0.3}) {
        const auto res = calibrate_notip(family, rows_view(calib, B, m), alpha, 1);
        CHECK(res.lambda_star >= previous);
        previous = res.lambda_star;
      }
    }
  }
}

TEST_CASE("empirical JER") {
  std::mt19937_64 rng(77);
  const std::size_t m = 20, B = 50;
  const auto data = testing::uniform_rows(B, m, rng);
  const auto null = rows_view(data, B, m);
  CHECK(empirical_jer(std::vector<double>(m, 0.0), null) == 0.0);
  std::vector<double> top(m, kBelowOne);
  CHECK(empirical_jer(top, null) == 1.0);
  CHECK_THROWS_AS(empirical_jer(std::vector<double>(m + 1, 0.0), null), ParamError);

  SECTION("Simes under independence") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 r(seed);
      const std::size_t mm = 100, BB = 2000;
      const auto rows = testing::uniform_rows(BB, mm, r);
      const double jer = empirical_jer(simes_template(mm, 0.1, mm), rows_view(rows, BB, mm));
      INFO("seed " << seed << " JER " << jer);
      CHECK(jer >= 0.07);
      CHECK(jer <= 0.13);
    }
  }
}

TEST_CASE("Template validation and JSON") {
  Template bad;
  bad.thresholds = {0.2, 0.1};
  CHECK_THROWS_AS(validate(bad), ContractError);
  bad.thresholds = {0.2, 1.0};
  CHECK_THROWS_AS(validate(bad), ContractError);
  bad.thresholds = {};
  CHECK_THROWS_AS(validate(bad), ContractError);

  std::vector<double> p{0.001, 0.2, 0.03, 0.5, 0.9, 0.04};
  const std::vector<Template> all{simes_template(6, 0.05, 4), ari_template(p, 0.1, 6),
                                  pari_template(6, 2, 0.1234567890123, 0.05, 6)};
  for (const auto& t : all) {
    const auto back = template_from_json(nlohmann::json::parse(to_json(t).dump()));
    CHECK(back.kind == t.kind);
    CHECK(back.alpha == t.alpha);
    CHECK(back.thresholds == t.thresholds);
    CHECK(back.hommel == t.hommel);
    CHECK(back.delta == t.delta);
    CHECK(back.lambda_star == t.lambda_star);
  }
  auto j = to_json(all[0]);
  j["K"] = 7;
  CHECK_THROWS_AS(template_from_json(j), FormatError);
  j = to_json(all[0]);
  j["kind"] = "Bonferroni";
  CHECK_THROWS_AS(template_from_json(j), FormatError);
  j = to_json(all[0]);
  j["thresholds"] = {0.3, 0.1, 0.2, 0.4};
  CHECK_THROWS_AS(template_from_json(j), FormatError);
}
