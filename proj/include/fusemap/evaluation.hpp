#pragma once

/// @file evaluation.hpp
/// @brief Instruments for validating and benchmarking the analytical model
///        and the optimizer: a loop-nest counting oracle, exhaustive joint
///        search, stochastic baselines at equal evaluation budgets, and
///        rank-correlation statistics.

#include <cstdint>
#include <vector>

#include <fusemap/cost.hpp>
#include <fusemap/optimizer.hpp>

namespace fusemap {

/// Access counts measured by explicit loop iteration; same table layout as
/// the analytical model, plus the padded MAC total.
struct OracleCounts {
  TrafficTable<double> traffic;
  double macs = 0.0;
};

/// Counts every memory access of one node's discrete mapping by walking the
/// temporal loop nest rather than evaluating closed forms. Fill and read
/// multiplicities come from odometer iteration over the nest above each
/// level (a resident tile is reloaded on every outer iteration); write-backs
/// are counted once per completed output tile by visiting each non-reduction
/// index projection exactly once. Throws when the padded MAC count exceeds
/// `max_macs`.
OracleCounts loopnest_count(const LayerNode& node, const NodeMapping& mapping,
                            const AcceleratorConfig& config,
                            double max_macs = 1e9);

/// Random discrete mapping for one node: every free slot draws a divisor of
/// its extent uniformly; the DRAM factor is the coverage quotient.
/// Deterministic in the seed.
NodeMapping random_mapping(const LayerNode& node,
                           const AcceleratorConfig& config, uint64_t seed);

/// Random full strategy: random mapping per node plus random fusion bits.
DeploymentStrategy random_strategy(const WorkloadGraph& graph,
                                   const AcceleratorConfig& config,
                                   uint64_t seed);

/// Result of exhaustive joint enumeration over every per-slot divisor
/// choice and fusion bit combination.
struct ExhaustiveResult {
  DeploymentStrategy strategy;
  double edp = 0.0;
  bool feasible = false;       // a feasible combination exists
  long long combinations = 0;  // total assignments enumerated
  long long feasible_count = 0;
};

/// Enumerates the full joint discrete space (all divisor assignments for
/// every free slot of every node, times all fusion bit patterns) and
/// returns the feasible assignment with minimum exact EDP, or the best
/// infeasible one when nothing is feasible. Throws when the joint space
/// exceeds `guard` combinations.
ExhaustiveResult exhaustive_best(const WorkloadGraph& graph,
                                 const AcceleratorConfig& config,
                                 double guard = 1e7);

/// One point of a search convergence curve: best exact EDP among feasible
/// candidates seen after `evals` cost-model evaluations (NaN until the
/// first feasible candidate).
struct SearchPoint {
  long long evals = 0;
  double best_edp = 0.0;
};

struct SearchResult {
  DeploymentStrategy strategy;
  double edp = 0.0;
  bool feasible = false;
  long long evals = 0;
  std::vector<SearchPoint> convergence;
};

struct GaParams {
  int population = 64;
  int elites = 2;
  int tournament = 3;
  double crossover_rate = 0.8;
  double mutation_rate = 0.05;
};

/// Genetic search over the same discrete space as the optimizer: genomes
/// are per-slot divisor indices plus fusion bits; fitness is exact EDP plus
/// a large additive penalty per constraint violation. Stops after `budget`
/// fitness evaluations.
SearchResult ga_search(const WorkloadGraph& graph,
                       const AcceleratorConfig& config, long long budget,
                       uint64_t seed, const GaParams& params = {});

/// Uniform random sampling baseline at the same evaluation budget.
SearchResult random_search(const WorkloadGraph& graph,
                           const AcceleratorConfig& config, long long budget,
                           uint64_t seed);

/// Gradient optimizer wrapped to a fixed evaluation budget: each descent
/// step is charged as two evaluations (the relaxed forward pass plus the
/// exact scoring of the discrete strategy the step visited), so every
/// restart runs budget / (2 * restarts) steps. The convergence curve
/// samples the running best of the relaxed loss periodically.
SearchResult gradient_search(const WorkloadGraph& graph,
                             const AcceleratorConfig& config,
                             OptimizerConfig opt, long long budget);

/// Kendall tau-b and Spearman rho (average ranks) between two samples of
/// equal length. Both are in [-1, 1]; ties are handled by the b-correction
/// and by rank averaging respectively.
struct RankCorrelation {
  double kendall_tau = 0.0;
  double spearman_rho = 0.0;
};

RankCorrelation rank_correlation(const std::vector<double>& a,
                                 const std::vector<double>& b);

}  // namespace fusemap
