// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"
#include "soar/errors.hpp"
#include "soar/info.hpp"

using namespace soar;
using namespace soar::info;

namespace {

double binary_entropy(double p) { return -p * std::log2(p) - (1 - p) * std::log2(1 - p); }

// I = H(X) + H(Y) - H(X, Y), an independent route to the same quantity.
double mi_by_entropies(const Table& j) {
  std::vector<double> px(j.rows, 0), py(j.cols, 0);
  double hxy = 0;
  for (std::size_t r = 0; r < j.rows; ++r) {
    for (std::size_t c = 0; c < j.cols; ++c) {
      const double v = j.at(r, c);
      px[r] += v;
      py[c] += v;
      if (v > 0) hxy -= v * std::log(v) / std::log(2.0);
    }
  }
  auto h = [](const std::vector<double>& d) {
    double s = 0;
    for (double v : d)
      if (v > 0) s -= v * std::log(v) / std::log(2.0);
    return s;
  };
  return h(px) + h(py) - hxy;
}

}  // namespace

TEST_CASE("mutual information fixtures") {
  CHECK(mutual_information(Table(2, 2, {0.06, 0.14, 0.24, 0.56})) == doctest::Approx(0.0));

  Table ident(4, 4);
  for (int i = 0; i < 4; ++i) ident.at(i, i) = 0.25;
  CHECK(mutual_information(ident) == doctest::Approx(2.0).epsilon(1e-14));

  const Table bsc(2, 2, {0.375, 0.125, 0.125, 0.375});
  CHECK(mutual_information(bsc) == doctest::Approx(1.0 - binary_entropy(0.25)).epsilon(1e-14));
  CHECK(mutual_information(bsc) == doctest::Approx(0.1887).epsilon(1e-3));
}

TEST_CASE("mutual information rejects invalid mass") {
  CHECK_THROWS_AS(mutual_information(Table(1, 2, {0.5, 0.6})), ContractError);
  CHECK_THROWS_AS(mutual_information(Table(1, 2, {-0.5, 1.5})), ContractError);
}

TEST_CASE("mutual information matches the entropy identity") {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 200; ++t) {
    const auto j = random_joint(rng, 1 + t % 6, 1 + (t / 6) % 7);
    CHECK(std::abs(mutual_information(j) - mi_by_entropies(j)) < 1e-12);
    CHECK(std::abs(mutual_information(j) - mutual_information(j.transposed())) < 1e-12);
  }
}

TEST_CASE("push_chain fixtures") {
  const std::vector<double> uniform4{0.25, 0.25, 0.25, 0.25};

  auto joints = push_chain({uniform4, {}});
  REQUIRE(joints.size() == 1);
  CHECK(mutual_information(joints[0]) == doctest::Approx(entropy(uniform4)));

  const std::vector<int> perm{2, 0, 3, 1};
  joints = push_chain({uniform4, {permutation_map(perm)}});
  CHECK(mutual_information(joints[1]) == doctest::Approx(2.0));

  const std::vector<int> collapse{0, 0, 1, 1};
  joints = push_chain({uniform4, {deterministic_map(collapse, 2)}});
  CHECK(mutual_information(joints[0]) == doctest::Approx(2.0));
  CHECK(mutual_information(joints[1]) == doctest::Approx(1.0));

  CHECK_THROWS_AS(push_chain({uniform4, {deterministic_map(collapse, 2), permutation_map(perm)}}),
                  ContractError);
}

TEST_CASE("push_chain marginal matches direct enumeration") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto chain = random_chain(rng, 6, 3);
    const auto joints = push_chain(chain);
    // walk the output distribution forward one stage at a time
    std::vector<double> dist = chain.initial;
    for (std::size_t k = 0; k < chain.stages.size(); ++k) {
      const auto& s = chain.stages[k];
      std::vector<double> next(s.cols, 0.0);
      for (std::size_t x = 0; x < s.rows; ++x)
        for (std::size_t y = 0; y < s.cols; ++y) next[y] += dist[x] * s.at(x, y);
      dist = next;
      const auto& j = joints[k + 1];
      for (std::size_t y = 0; y < j.cols; ++y) {
        double col = 0;
        for (std::size_t x = 0; x < j.rows; ++x) col += j.at(x, y);
        CHECK(col == doctest::Approx(dist[y]).epsilon(1e-12));
      }
      for (std::size_t x = 0; x < j.rows; ++x) {
        double row = 0;
        for (std::size_t y = 0; y < j.cols; ++y) row += j.at(x, y);
        CHECK(row == doctest::Approx(chain.initial[x]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("dpi_check fixtures") {
  const std::vector<double> px{0.1, 0.2, 0.3, 0.4};
  const std::vector<int> id{0, 1, 2, 3};
  auto r = dpi_check({px, {permutation_map(id), permutation_map(id), permutation_map(id)}});
  CHECK(r.monotone);
  for (double v : r.mi) CHECK(v == doctest::Approx(entropy(px)));

  const std::vector<int> perm{3, 1, 0, 2}, constant{0, 0, 0, 0};
  r = dpi_check({px, {permutation_map(perm), deterministic_map(constant, 1)}});
  REQUIRE(r.mi.size() == 3);
  CHECK(r.mi[0] == doctest::Approx(entropy(px)));
  CHECK(r.mi[1] == doctest::Approx(entropy(px)));
  CHECK(r.mi[2] == 0.0);
  CHECK(r.monotone);
}

TEST_CASE("dpi holds on 1000 sampled chains") {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 1000; ++t) {
    const auto chain = random_chain(rng);
    const auto r = dpi_check(chain);
    CHECK(r.monotone);
  }
}

TEST_CASE("reversibility fixtures") {
  const std::vector<double> px{0.5, 0.25, 0.25};
  const std::vector<int> perm{1, 2, 0}, constant{0, 0, 0};
  CHECK(reversibility_check(permutation_map(perm), px));
  CHECK_FALSE(reversibility_check(deterministic_map(constant, 1), px));

  // symbols 2 and 3 collide, but 3 never occurs
  const std::vector<double> support{0.3, 0.3, 0.4, 0.0};
  const std::vector<int> partial{0, 1, 2, 2};
  CHECK(reversibility_check(deterministic_map(partial, 3), support));
  const std::vector<double> full{0.25, 0.25, 0.25, 0.25};
  CHECK_FALSE(reversibility_check(deterministic_map(partial, 3), full));
}

TEST_CASE("target ordering") {
  const Table joint_yx(2, 4, {0.2, 0.05, 0.15, 0.1, 0.05, 0.2, 0.1, 0.15});
  const std::vector<int> collapse{0, 0, 1, 1};
  const std::vector<Table> stages{deterministic_map(collapse, 2)};
  const auto r = target_chain_check(joint_yx, stages);
  REQUIRE(r.mi.size() == 2);
  CHECK(r.mi[0] >= r.mi[1]);
  CHECK(r.monotone);
}

TEST_CASE("chain json round trip") {
  std::mt19937_64 rng(9);
  const auto chain = random_chain(rng, 5, 3);
  const auto back = chain_from_json(nlohmann::json::parse(chain_to_json(chain).dump()));
  CHECK(back.initial == chain.initial);
  REQUIRE(back.stages.size() == chain.stages.size());
  for (std::size_t k = 0; k < back.stages.size(); ++k) CHECK(back.stages[k].p == chain.stages[k].p);

  CHECK_THROWS_AS(chain_from_json(nlohmann::json::parse(R"({"stages": []})")), SchemaError);
  CHECK_THROWS_AS(chain_from_json(nlohmann::json::parse(R"({"initial": [1], "stages": [[[1], [0.5, 0.5]]]})")),
                  SchemaError);
}

TEST_CASE("sampled suites pass") {
  for (const auto& s : run_suites(1, 300)) {
    INFO(s.name);
    CHECK(s.failures == 0);
    CHECK(s.worst <= kDpiTolerance);
  }
  const auto forced = run_suites(1, 5, -1.0);
  CHECK(forced[0].failures > 0);
  CHECK_FALSE(forced[0].first_failure.is_null());
}
