#include "crteffects/dgp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "crteffects/errors.hpp"
#include "crteffects/glm.hpp"
#include "crteffects/rng.hpp"

namespace crt {

ScenarioSpec ScenarioSpec::sim1(std::uint64_t seed) {
  ScenarioSpec s;
  s.scenario = Scenario::SimI;
  s.clusters = 20;
  s.size_mean = 150.0;
  s.size_sd = 80.0;
  s.size_floor = 30;
  s.seed = seed;
  return s;
}

ScenarioSpec ScenarioSpec::sim2(std::uint64_t seed) {
  ScenarioSpec s;
  s.scenario = Scenario::SimII;
  s.clusters = 20;
  s.size_mean = 400.0;
  s.size_sd = 250.0;
  s.size_floor = 30;
  s.seed = seed;
  return s;
}

void ScenarioSpec::validate() const {
  if (clusters <= 0 || clusters % 2 != 0)
    throw ConfigError("cluster count must be a positive even number");
  if (size_floor < 1) throw ConfigError("cluster-size floor must be >= 1");
  if (!(size_sd >= 0)) throw ConfigError("cluster-size sd must be >= 0");
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<std::pair<int, int>> match_exact(const std::vector<double>& v) {
  const int n = static_cast<int>(v.size());
  const unsigned full = (1u << n) - 1u;
  std::vector<double> best(full + 1, kInf);
  std::vector<int> choice(full + 1, -1);
  best[0] = 0.0;
  for (unsigned mask = 0; mask < full; ++mask) {
    if (best[mask] == kInf) continue;
    const int i = std::countr_zero(~mask);  // lowest unpaired cluster
    for (int j = i + 1; j < n; ++j) {
      if (mask & (1u << j)) continue;
      const unsigned next = mask | (1u << i) | (1u << j);
      const double cost = best[mask] + std::abs(v[i] - v[j]);
      if (cost < best[next]) {
        best[next] = cost;
        choice[next] = (i << 8) | j;
      }
    }
  }
  std::vector<std::pair<int, int>> pairs;
  for (unsigned mask = full; mask;) {
    const int c = choice[mask];
    const int i = c >> 8, j = c & 0xff;
    pairs.emplace_back(i, j);
    mask &= ~((1u << i) | (1u << j));
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

std::vector<std::pair<int, int>> match_greedy(const std::vector<double>& v) {
  const int n = static_cast<int>(v.size());
  std::vector<char> used(n, 0);
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n; ++i) {
    if (used[i]) continue;
    int bestj = -1;
    double bestd = kInf;
    for (int j = i + 1; j < n; ++j) {
      if (used[j]) continue;
      const double d = std::abs(v[i] - v[j]);
      if (d < bestd) {
        bestd = d;
        bestj = j;
      }
    }
    used[i] = used[bestj] = 1;
    pairs.emplace_back(i, bestj);
  }
  return pairs;
}

int draw_size(Rng& rng, const ScenarioSpec& spec) {
  const double raw = rng.normal(spec.size_mean, spec.size_sd);
  const int rounded = static_cast<int>(std::lround(raw));
  return std::max(rounded, spec.size_floor);
}

// One cluster's covariates and potential outcomes, prior to arm assignment.
struct RawCluster {
  Eigen::VectorXd e;
  Eigen::MatrixXd w;
  Eigen::VectorXd y1, y0;
};

RawCluster draw_cluster_sim1(Rng& rng, const ScenarioSpec& spec) {
  RawCluster c;
  const double e1 = rng.normal(2.0, 1.0);
  const double e2 = rng.normal(0.0, 1.0);
  const int n = draw_size(rng, spec);
  const double u_e1 = rng.uniform(-0.2, 1.5);
  const double u_e2 = rng.uniform(-0.5, 0.5);
  c.e.resize(2);
  c.e << e1, e2;
  c.w.resize(n, 4);
  c.y1.resize(n);
  c.y0.resize(n);
  for (int i = 0; i < n; ++i) {
    const double w1 = rng.normal(2.0 * u_e1, 0.35);
    const double w2 = rng.normal(4.0 * u_e1, 0.9);
    const double w3 = rng.normal(u_e2, 0.5);
    const double w4 = rng.normal(u_e2, 0.5);
    c.w.row(i) << w1, w2, w3, w4;
    const double u_y = rng.uniform();
    // E1 enters the risk model centered at its mean of 2
    const double base = -0.75 + 0.8 * w1 + 0.4 * w2 - 0.3 * (e1 - 2.0);
    // the null variant zeroes every treatment term
    const double trt = spec.null_effect ? 0.0 : -0.35 - 0.2 * w2;
    c.y1[i] = u_y < expit(base + trt) ? 1.0 : 0.0;
    c.y0[i] = u_y < expit(base) ? 1.0 : 0.0;
  }
  return c;
}

RawCluster draw_cluster_sim2(Rng& rng, const ScenarioSpec& spec) {
  RawCluster c;
  const double e1 = rng.normal(0.0, 1.0);
  const double e2 = rng.normal(0.0, 1.0);
  const int n = draw_size(rng, spec);
  const double u_e1 = rng.uniform(-1.0, 1.0);
  const double u_e2 = rng.uniform(-1.0, 1.0);
  const double u_e3 = rng.uniform(-1.0, 1.0);
  const double n_scaled = n / 150.0;
  c.e.resize(3);
  c.e << e1, e2, n_scaled;
  c.w.resize(n, 3);
  c.y1.resize(n);
  c.y0.resize(n);
  for (int i = 0; i < n; ++i) {
    const double w1 = rng.normal(u_e1, 0.5);
    const double w2 = rng.normal(u_e2, 0.5);
    const double w3 = rng.normal(u_e3, 0.5);
    c.w.row(i) << w1, w2, w3;
    const double u_y = rng.uniform();
    const double base = 0.5 + w1 / 6.0 + w2 / 2.0 + w3 / 4.0 + e1 / 5.0 +
                        e2 / 5.0 - n_scaled / 8.0;
    // informative size: only the treatment-size interaction is nulled
    const double trt = spec.null_effect ? 0.0 : -n_scaled / 5.0;
    c.y1[i] = u_y < expit(base + trt) ? 1.0 : 0.0;
    c.y0[i] = u_y < expit(base) ? 1.0 : 0.0;
  }
  return c;
}

RawCluster draw_cluster(Rng& rng, const ScenarioSpec& spec) {
  return spec.scenario == Scenario::SimI ? draw_cluster_sim1(rng, spec)
                                         : draw_cluster_sim2(rng, spec);
}

std::pair<TrialData, CounterfactualStore> generate_impl(const ScenarioSpec& spec,
                                                        std::uint64_t stream) {
  spec.validate();
  Rng rng(spec.seed, stream);
  const int J = spec.clusters;

  std::vector<RawCluster> raw;
  raw.reserve(J);
  std::vector<double> e2(J);
  for (int j = 0; j < J; ++j) {
    raw.push_back(draw_cluster(rng, spec));
    e2[j] = raw[j].e[1];
  }

  const auto pairs = pair_match(e2);
  std::vector<int> pair_of(J, -1), arm(J, 0);
  for (size_t k = 0; k < pairs.size(); ++k) {
    const auto [a, b] = pairs[k];
    pair_of[a] = pair_of[b] = static_cast<int>(k) + 1;
    const bool first_treated = rng.bernoulli(0.5);
    arm[a] = first_treated ? 1 : 0;
    arm[b] = first_treated ? 0 : 1;
  }

  TrialData trial;
  CounterfactualStore store;
  if (spec.scenario == Scenario::SimI) {
    trial.e_names = {"E1", "E2"};
    trial.w_names = {"W1", "W2", "W3", "W4"};
  } else {
    trial.e_names = {"E1", "E2", "Ntilde"};
    trial.w_names = {"W1", "W2", "W3"};
  }
  trial.clusters.resize(J);
  store.y1.resize(J);
  store.y0.resize(J);
  for (int j = 0; j < J; ++j) {
    ClusterRecord& c = trial.clusters[j];
    c.id = j + 1;
    c.pair_id = pair_of[j];
    c.arm = arm[j];
    c.e = std::move(raw[j].e);
    c.w = std::move(raw[j].w);
    c.y = arm[j] == 1 ? raw[j].y1 : raw[j].y0;
    store.y1[j] = std::move(raw[j].y1);
    store.y0[j] = std::move(raw[j].y0);
  }
  return {std::move(trial), std::move(store)};
}

}  // namespace

std::vector<std::pair<int, int>> pair_match(const std::vector<double>& values) {
  const int n = static_cast<int>(values.size());
  if (n % 2 != 0) throw DataError("pair matching needs an even number of clusters");
  if (n == 0) return {};
  if (n <= 22) return match_exact(values);
  return match_greedy(values);
}

std::pair<TrialData, CounterfactualStore> generate_sim1(const ScenarioSpec& spec,
                                                        std::uint64_t stream) {
  if (spec.scenario != Scenario::SimI)
    throw ConfigError("generate_sim1 called with a different scenario");
  return generate_impl(spec, stream);
}

std::pair<TrialData, CounterfactualStore> generate_sim2(const ScenarioSpec& spec,
                                                        std::uint64_t stream) {
  if (spec.scenario != Scenario::SimII)
    throw ConfigError("generate_sim2 called with a different scenario");
  return generate_impl(spec, stream);
}

std::pair<TrialData, CounterfactualStore> generate_trial(const ScenarioSpec& spec,
                                                         std::uint64_t stream) {
  return generate_impl(spec, stream);
}

ScenarioTruth compute_truth(const ScenarioSpec& spec, int population_size) {
  spec.validate();
  if (population_size < 1000)
    throw ConfigError("truth population must be at least 1000 clusters");
  // Stream 0 is reserved for the truth population; replicates start at 1.
  Rng rng(spec.seed, 0);

  double sum_c1 = 0, sum_c0 = 0;        // cluster-level means
  double sum_i1 = 0, sum_i0 = 0;        // individual-level sums
  long long total_n = 0;
  double sum_log1 = 0, sum_log0 = 0;    // geometric means of cluster outcomes
  long long n_log1 = 0, n_log0 = 0;
  for (int j = 0; j < population_size; ++j) {
    const RawCluster c = draw_cluster(rng, spec);
    const int n = static_cast<int>(c.y1.size());
    const double m1 = c.y1.mean();
    const double m0 = c.y0.mean();
    sum_c1 += m1;
    sum_c0 += m0;
    sum_i1 += c.y1.sum();
    sum_i0 += c.y0.sum();
    total_n += n;
    if (m1 > 0) {
      sum_log1 += std::log(m1);
      ++n_log1;
    }
    if (m0 > 0) {
      sum_log0 += std::log(m0);
      ++n_log0;
    }
  }

  ScenarioTruth t;
  t.population_size = population_size;
  t.psi_c1 = sum_c1 / population_size;
  t.psi_c0 = sum_c0 / population_size;
  t.psi_1 = sum_i1 / static_cast<double>(total_n);
  t.psi_0 = sum_i0 / static_cast<double>(total_n);
  t.cluster_ratio = t.psi_c1 / t.psi_c0;
  t.individual_ratio = t.psi_1 / t.psi_0;
  t.geometric_ratio = std::exp(sum_log1 / static_cast<double>(n_log1) -
                               sum_log0 / static_cast<double>(n_log0));
  t.cluster_diff = t.psi_c1 - t.psi_c0;
  t.individual_diff = t.psi_1 - t.psi_0;
  return t;
}

}  // namespace crt
