// SPDX-License-Identifier: Apache-2.0

#include "soar/info.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "soar/errors.hpp"

namespace soar::info {
namespace {

Table multiply(const Table& a, const Table& b) {
  if (a.cols != b.rows) {
    throw ContractError("push_chain: stage expects " + std::to_string(b.rows) +
                        " inputs but receives " + std::to_string(a.cols));
  }
  Table out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double v = a.at(i, k);
      if (v == 0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) out.at(i, j) += v * b.at(k, j);
    }
  }
  return out;
}

void check_distribution(std::span<const double> d, const std::string& what) {
  double sum = 0;
  for (double v : d) {
    if (!(v >= 0) || !std::isfinite(v)) throw ContractError(what + ": negative or non-finite entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > kMassTolerance) {
    throw ContractError(what + ": mass " + std::to_string(sum) + " is not 1");
  }
}

std::vector<double> normalized(std::vector<double> v) {
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  for (auto& x : v) x /= s;
  return v;
}

DpiResult sequence_check(std::vector<double> mi, double tolerance) {
  DpiResult r;
  r.mi = std::move(mi);
  for (std::size_t k = 1; k < r.mi.size(); ++k) {
    r.worst_increase = std::max(r.worst_increase, r.mi[k] - r.mi[k - 1]);
  }
  r.monotone = r.worst_increase <= tolerance;
  return r;
}

}  // namespace

Table::Table(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), p(std::move(values)) {
  if (p.empty()) p.assign(r * c, 0.0);
  if (p.size() != r * c) throw ContractError("Table: expected rows*cols entries");
}

Table Table::transposed() const {
  Table t(cols, rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) t.at(c, r) = at(r, c);
  }
  return t;
}

void validate_joint(const Table& joint) {
  if (joint.rows == 0 || joint.cols == 0) throw ContractError("joint: empty alphabet");
  check_distribution(joint.p, "joint");
}

void validate_transition(const Table& t) {
  if (t.rows == 0 || t.cols == 0) throw ContractError("transition: empty alphabet");
  for (std::size_t r = 0; r < t.rows; ++r) {
    check_distribution(std::span<const double>(t.p).subspan(r * t.cols, t.cols),
                       "transition row " + std::to_string(r));
  }
}

void MapChain::validate() const {
  if (initial.empty()) throw ContractError("chain: empty input alphabet");
  check_distribution(initial, "chain initial distribution");
  std::size_t width = initial.size();
  for (const auto& s : stages) {
    validate_transition(s);
    if (s.rows != width) throw ContractError("chain: stage dimension mismatch");
    width = s.cols;
  }
}

double entropy(std::span<const double> distribution) {
  double h = 0;
  for (double v : distribution) {
    if (v > 0) h -= v * std::log2(v);
  }
  return h;
}

double mutual_information(const Table& joint) {
  validate_joint(joint);
  std::vector<double> px(joint.rows, 0.0), py(joint.cols, 0.0);
  for (std::size_t r = 0; r < joint.rows; ++r) {
    for (std::size_t c = 0; c < joint.cols; ++c) {
      px[r] += joint.at(r, c);
      py[c] += joint.at(r, c);
    }
  }
  double mi = 0;
  for (std::size_t r = 0; r < joint.rows; ++r) {
    for (std::size_t c = 0; c < joint.cols; ++c) {
      const double v = joint.at(r, c);
      if (v > 0) mi += v * std::log2(v / (px[r] * py[c]));
    }
  }
  return std::max(mi, 0.0);
}

std::vector<Table> push_chain(const MapChain& chain) {
  chain.validate();
  Table current(chain.initial.size(), chain.initial.size());
  for (std::size_t i = 0; i < chain.initial.size(); ++i) current.at(i, i) = chain.initial[i];
  std::vector<Table> joints{current};
  for (const auto& stage : chain.stages) {
    current = multiply(current, stage);
    joints.push_back(current);
  }
  return joints;
}

DpiResult dpi_check(const MapChain& chain, double tolerance) {
  std::vector<double> mi;
  for (const auto& j : push_chain(chain)) mi.push_back(mutual_information(j));
  return sequence_check(std::move(mi), tolerance);
}

DpiResult target_chain_check(const Table& joint_yx, std::span<const Table> stages,
                             double tolerance) {
  validate_joint(joint_yx);
  std::vector<double> mi{mutual_information(joint_yx)};
  Table current = joint_yx;
  for (const auto& stage : stages) {
    validate_transition(stage);
    current = multiply(current, stage);
    mi.push_back(mutual_information(current));
  }
  return sequence_check(std::move(mi), tolerance);
}

bool reversibility_check(const Table& map, std::span<const double> input, double tolerance) {
  MapChain chain{{input.begin(), input.end()}, {map}};
  const auto joints = push_chain(chain);
  return std::abs(mutual_information(joints[1]) - entropy(input)) <= tolerance;
}

Table deterministic_map(std::span<const int> targets, std::size_t output_size) {
  Table t(targets.size(), output_size);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= output_size) {
      throw ContractError("deterministic_map: target out of range");
    }
    t.at(i, static_cast<std::size_t>(targets[i])) = 1.0;
  }
  return t;
}

Table permutation_map(std::span<const int> permutation) {
  std::vector<int> sorted(permutation.begin(), permutation.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] != static_cast<int>(i)) throw ContractError("permutation_map: not a permutation");
  }
  return deterministic_map(permutation, permutation.size());
}

std::vector<double> random_distribution(std::mt19937_64& rng, std::size_t n,
                                        double zero_probability) {
  std::exponential_distribution<double> weight(1.0);
  std::bernoulli_distribution zero(zero_probability);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> v(n);
  for (auto& x : v) x = zero(rng) ? 0.0 : weight(rng);
  if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0; })) v[pick(rng)] = 1.0;
  return normalized(std::move(v));
}

Table random_transition(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  Table t(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = random_distribution(rng, cols, 0.3);
    std::copy(row.begin(), row.end(), t.p.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  return t;
}

Table random_joint(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  return Table(rows, cols, random_distribution(rng, rows * cols, 0.2));
}

MapChain random_chain(std::mt19937_64& rng, std::size_t max_alphabet, std::size_t max_length) {
  std::uniform_int_distribution<std::size_t> alphabet(1, max_alphabet);
  std::uniform_int_distribution<std::size_t> length(0, max_length);
  std::bernoulli_distribution deterministic(0.5);
  MapChain chain;
  chain.initial = random_distribution(rng, alphabet(rng), 0.2);
  std::size_t width = chain.initial.size();
  for (std::size_t k = length(rng); k > 0; --k) {
    const std::size_t out = alphabet(rng);
    if (deterministic(rng)) {
      std::uniform_int_distribution<int> target(0, static_cast<int>(out) - 1);
      std::vector<int> targets(width);
      for (auto& t : targets) t = target(rng);
      chain.stages.push_back(deterministic_map(targets, out));
    } else {
      chain.stages.push_back(random_transition(rng, width, out));
    }
    width = out;
  }
  return chain;
}

nlohmann::ordered_json chain_to_json(const MapChain& chain) {
  nlohmann::ordered_json doc;
  doc["initial"] = chain.initial;
  auto stages = nlohmann::ordered_json::array();
  for (const auto& s : chain.stages) {
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < s.rows; ++r) {
      rows.push_back(std::vector<double>(s.p.begin() + static_cast<std::ptrdiff_t>(r * s.cols),
                                         s.p.begin() + static_cast<std::ptrdiff_t>((r + 1) * s.cols)));
    }
    stages.push_back(std::move(rows));
  }
  doc["stages"] = std::move(stages);
  return doc;
}

MapChain chain_from_json(const nlohmann::json& doc) {
  try {
    MapChain chain;
    chain.initial = doc.at("initial").get<std::vector<double>>();
    for (const auto& stage : doc.value("stages", nlohmann::json::array())) {
      const auto rows = stage.get<std::vector<std::vector<double>>>();
      if (rows.empty()) throw SchemaError("chain: empty stage");
      Table t(rows.size(), rows.front().size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != t.cols) throw SchemaError("chain: ragged stage table");
        std::copy(rows[r].begin(), rows[r].end(),
                  t.p.begin() + static_cast<std::ptrdiff_t>(r * t.cols));
      }
      chain.stages.push_back(std::move(t));
    }
    return chain;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("chain: ") + e.what());
  }
}

std::vector<SuiteResult> run_suites(std::uint64_t seed, std::size_t trials, double tolerance) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> alphabet(1, 8);
  SuiteResult dpi{"dpi", trials, 0, 0, nullptr};
  SuiteResult bijection{"bijection", trials, 0, 0, nullptr};
  SuiteResult target{"target_order", trials, 0, 0, nullptr};
  SuiteResult symmetry{"symmetry", trials, 0, 0, nullptr};

  auto record = [&](SuiteResult& s, double violation, auto reproducer) {
    s.worst = std::max(s.worst, violation);
    if (violation > tolerance) {
      if (s.failures++ == 0) s.first_failure = reproducer();
    }
  };

  for (std::size_t t = 0; t < trials; ++t) {
    const auto chain = random_chain(rng);
    record(dpi, dpi_check(chain, tolerance).worst_increase, [&] { return chain_to_json(chain); });

    const std::size_t n = alphabet(rng);
    std::vector<int> p1(n), p2(n);
    std::iota(p1.begin(), p1.end(), 0);
    std::iota(p2.begin(), p2.end(), 0);
    std::shuffle(p1.begin(), p1.end(), rng);
    std::shuffle(p2.begin(), p2.end(), rng);
    const MapChain bij{random_distribution(rng, n, 0.2), {permutation_map(p1), permutation_map(p2)}};
    const auto mi = dpi_check(bij, tolerance).mi;
    double drift = 0;
    for (double v : mi) drift = std::max(drift, std::abs(v - mi.front()));
    record(bijection, drift, [&] { return chain_to_json(bij); });

    const auto xy_chain = random_chain(rng);
    const std::size_t ny = alphabet(rng);
    // p(y, x) = p(x) p(y | x)
    const auto y_given_x = random_transition(rng, xy_chain.initial.size(), ny);
    Table joint_yx(ny, xy_chain.initial.size());
    for (std::size_t x = 0; x < joint_yx.cols; ++x) {
      for (std::size_t y = 0; y < ny; ++y) joint_yx.at(y, x) = xy_chain.initial[x] * y_given_x.at(x, y);
    }
    record(target, target_chain_check(joint_yx, xy_chain.stages, tolerance).worst_increase, [&] {
      nlohmann::ordered_json j;
      j["joint_yx_rows"] = joint_yx.rows;
      j["joint_yx"] = joint_yx.p;
      j["chain"] = chain_to_json(xy_chain);
      return j;
    });

    const auto joint = random_joint(rng, alphabet(rng), alphabet(rng));
    record(symmetry, std::abs(mutual_information(joint) - mutual_information(joint.transposed())),
           [&] { return nlohmann::ordered_json{{"rows", joint.rows}, {"p", joint.p}}; });
  }
  return {dpi, bijection, target, symmetry};
}

}  // namespace soar::info
