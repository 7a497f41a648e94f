// SPDX-License-Identifier: Apache-2.0
//
// Exact information-theoretic checks over finite alphabets: mutual
// information, data-processing chains and reversibility. All values in bits.

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace soar::info {

/// Dense row-major table. Used both for joints p(x, y) and for transition
/// tables T[x][y] = p(y | x).
struct Table {
  std::size_t rows{0};
  std::size_t cols{0};
  std::vector<double> p;

  Table() = default;
  Table(std::size_t r, std::size_t c, std::vector<double> values = {});

  double& at(std::size_t r, std::size_t c) { return p[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return p[r * cols + c]; }
  Table transposed() const;
};

inline constexpr double kMassTolerance = 1e-12;
inline constexpr double kDpiTolerance = 1e-10;

/// Throws ContractError unless entries are >= 0 and sum to 1.
void validate_joint(const Table& joint);
/// Throws ContractError unless every row is a distribution.
void validate_transition(const Table& t);

struct MapChain {
  std::vector<double> initial;
  std::vector<Table> stages;

  void validate() const;
};

double entropy(std::span<const double> distribution);
double mutual_information(const Table& joint);

/// Joint of X with X itself, then with every stage output.
std::vector<Table> push_chain(const MapChain& chain);

struct DpiResult {
  std::vector<double> mi;  // I(X; stage_k), k = 0..n
  bool monotone{true};
  double worst_increase{0};  // largest mi[k+1] - mi[k], 0 if none
};

DpiResult dpi_check(const MapChain& chain, double tolerance = kDpiTolerance);

/// Same ordering check for a target Y: joint_yx is |Y| x |X| and the chain
/// acts on X, giving I(Y; X) >= I(Y; f(X)) >= ...
DpiResult target_chain_check(const Table& joint_yx, std::span<const Table> stages,
                             double tolerance = kDpiTolerance);

/// True iff I(X; r(X)) equals H(X) within tolerance.
bool reversibility_check(const Table& map, std::span<const double> input,
                         double tolerance = kDpiTolerance);

/// Transition table of a deterministic map x -> targets[x].
Table deterministic_map(std::span<const int> targets, std::size_t output_size);
Table permutation_map(std::span<const int> permutation);

std::vector<double> random_distribution(std::mt19937_64& rng, std::size_t n,
                                        double zero_probability = 0.0);
Table random_transition(std::mt19937_64& rng, std::size_t rows, std::size_t cols);
Table random_joint(std::mt19937_64& rng, std::size_t rows, std::size_t cols);
/// Alphabets in [1, max_alphabet], 0..max_length stages; about half the stages
/// are deterministic.
MapChain random_chain(std::mt19937_64& rng, std::size_t max_alphabet = 8,
                      std::size_t max_length = 3);

/// {"initial": [...], "stages": [[[row], ...], ...]}; throws SchemaError.
nlohmann::ordered_json chain_to_json(const MapChain& chain);
MapChain chain_from_json(const nlohmann::json& doc);

struct SuiteResult {
  std::string name;
  std::size_t trials{0};
  std::size_t failures{0};
  double worst{0};  // worst violation observed
  nlohmann::ordered_json first_failure;  // reproducer, null when none
};

/// Sampled property suites: dpi, bijection composition, target ordering and
/// transpose symmetry.
std::vector<SuiteResult> run_suites(std::uint64_t seed, std::size_t trials,
                                    double tolerance = kDpiTolerance);

}  // namespace soar::info
