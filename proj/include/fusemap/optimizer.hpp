#pragma once

/// @file optimizer.hpp
/// @brief Gradient-descent mapping search with restarts, plus decoding of
///        continuous parameters into a discrete, validated strategy.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <fusemap/accelerator.hpp>
#include <fusemap/autodiff.hpp>
#include <fusemap/cost.hpp>
#include <fusemap/penalty.hpp>
#include <fusemap/relax.hpp>
#include <fusemap/workload.hpp>

namespace fusemap {

struct OptimizerConfig {
  int steps = 500;
  int restarts = 8;
  double learning_rate = 0.05;
  double beta1 = 0.9;
  /// Short second-moment memory keeps Adam steps large through divisor
  /// transitions late in the anneal; 0.999 freezes the walk after the first
  /// corridor because stale squared gradients linger for thousands of steps.
  double beta2 = 0.9;
  double epsilon = 1e-8;
  uint64_t seed = 0;
  double alpha = 0.5;
  double tau0 = 5.0;
  double tau_min = 0.05;
  double anneal_fraction = 0.8;
  double lambda0 = 1.0;
  double lambda_max = 1000.0;
  double sigma_threshold = 0.5;

  void validate() const;
};

OptimizerConfig load_optimizer_config(const std::filesystem::path& path);
OptimizerConfig optimizer_config_from_json_string(const std::string& text);
std::string optimizer_config_to_json_string(const OptimizerConfig& config);

/// lambda(step): linear ramp lambda0 -> lambda_max over the first half of
/// the budget, then held.
double lambda_schedule(int step, int total_steps, double lambda0,
                       double lambda_max);

/// Discrete mapping of one node: integer tiling factors per level and
/// dimension. The DRAM temporal factor is the coverage quotient.
struct NodeMapping {
  int num_levels = 0;
  std::vector<long long> temporal;              // [level * kNumDims + dim]
  std::array<long long, kNumDims> spatial{};    // at the spatial level

  long long t(int level, Dim d) const {
    return temporal.at(static_cast<size_t>(level) * kNumDims +
                       static_cast<size_t>(d));
  }
  long long s(Dim d) const { return spatial[static_cast<size_t>(d)]; }
  void set_t(int level, Dim d, long long v) {
    temporal.at(static_cast<size_t>(level) * kNumDims +
                static_cast<size_t>(d)) = v;
  }
  void set_s(Dim d, long long v) { spatial[static_cast<size_t>(d)] = v; }
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool clean() const { return violations.empty(); }
};

/// Decoded deployment: integer factors per node, fusion flags per eligible
/// edge, derived groups, and the discrete validity report.
struct DeploymentStrategy {
  std::vector<NodeMapping> nodes;
  /// Eligible edges as (producer, consumer) node indices, graph edge order.
  std::vector<std::pair<int, int>> fusion_edges;
  std::vector<bool> fused;
  /// Every node appears in exactly one group; fused runs are contiguous.
  std::vector<std::vector<int>> groups;
  ValidationReport validity;
  bool feasible = false;
};

/// Partition of the graph's nodes into execution groups induced by fused
/// flags on the eligible edges: maximal fused runs plus singletons, ordered
/// by first member. Every node appears in exactly one group.
std::vector<std::vector<int>> fusion_groups(
    const WorkloadGraph& graph,
    const std::vector<std::pair<int, int>>& fusion_edges,
    const std::vector<bool>& fused);

std::string strategy_to_json_string(const DeploymentStrategy& strategy,
                                    const WorkloadGraph& graph);
DeploymentStrategy strategy_from_json_string(const std::string& text,
                                             const WorkloadGraph& graph);

/// Seeded initialization: geometric split of each extent across its free
/// slots, each slot perturbed by a log-uniform factor in [1/1.2, 1.2];
/// sigma raw starts at 0 (sigma = 0.5).
MappingParams init_params(const WorkloadGraph& graph,
                          const AcceleratorConfig& config, uint64_t seed);

/// One full loss build on a fresh tape: slots, derived DRAM factors, cost,
/// penalties. Exposes the parameter handles for the update step and the
/// view for inspection.
struct LossBuild {
  RelaxedView<ad::Expr> view;
  std::vector<std::vector<SlotBuild>> slots;   // per node
  std::vector<FusionBuild> fusion;
  CostBreakdown<ad::Expr> cost;
  LossTerms<ad::Expr> loss;
};

LossBuild build_loss(ad::Tape& tape, const MappingParams& params,
                     const WorkloadGraph& graph,
                     const AcceleratorConfig& config, SelectMode mode,
                     double alpha, double tau, double lambda, double edp0);

/// Exact factor table for a decoded mapping (plain doubles).
NodeFactors<double> factors_from_mapping(const NodeMapping& mapping,
                                         const AcceleratorConfig& config);

/// Relaxed re-encoding of a decoded strategy: continuous values are the
/// integer factors themselves, sigma is the fused flag.
RelaxedView<double> view_from_strategy(const DeploymentStrategy& strategy,
                                       const AcceleratorConfig& config);

/// Exact discrete cost of a decoded strategy (sigma in {0,1}).
CostBreakdown<double> evaluate_strategy(const DeploymentStrategy& strategy,
                                        const WorkloadGraph& graph,
                                        const AcceleratorConfig& config);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  int t = 0;
};

struct StepStats {
  double loss = 0.0;
  double edp = 0.0;
  double p_map = 0.0;
  double p_mem = 0.0;
  double p_align = 0.0;
  double tau = 0.0;
  double lambda = 0.0;
  bool finite = true;
};

/// One optimization step: resample noise, anneal tau, schedule lambda,
/// forward/backward, Adam update of every raw parameter in place.
StepStats opt_step(MappingParams& params, AdamState& adam,
                   const WorkloadGraph& graph, const AcceleratorConfig& config,
                   const OptimizerConfig& opt, uint64_t noise_seed,
                   int step_index, double edp0);

/// Argmax decoding at zero noise; DRAM temporal factors cover the extent
/// by ceiling quotient; sigma > threshold means fused.
DeploymentStrategy decode(const MappingParams& params,
                          const WorkloadGraph& graph,
                          const AcceleratorConfig& config,
                          const OptimizerConfig& opt);

/// Pure integer re-check of every constraint; lists each violation.
/// Tile extent of one dimension at `level` under a discrete mapping
/// (temporal factors through the level, spatial when in range).
__int128 mapping_dim_extent(const NodeMapping& mapping, Dim d, int level,
                            int spatial_level);

/// Words of on-chip storage the mapping needs at `level`: input and weight
/// tiles when resident, plus the output tile when the config accounts
/// output residency.
__int128 mapping_footprint_words(const NodeMapping& mapping, int level,
                                 const AcceleratorConfig& config);

ValidationReport validate_strategy(const DeploymentStrategy& strategy,
                                   const WorkloadGraph& graph,
                                   const AcceleratorConfig& config);

struct TraceRow {
  int restart = 0;
  int step = 0;
  double edp = 0.0;
  double p_map = 0.0;
  double p_mem = 0.0;
  double p_align = 0.0;
  double tau = 0.0;
  double lambda = 0.0;
};

struct OptimizeResult {
  DeploymentStrategy strategy;
  CostBreakdown<double> cost;  // exact discrete cost of the chosen strategy
  double edp = 0.0;
  bool feasible = false;
  int best_restart = -1;
  /// Exact cost-model evaluations spent scoring visited discrete strategies
  /// (memoized, at most one per step per restart, plus the final decodes).
  long long discrete_evals = 0;
  std::vector<TraceRow> trace;
  /// Exact decoded EDP per restart (NaN for aborted restarts).
  std::vector<double> restart_edp;
  std::vector<bool> restart_feasible;
};

/// Runs `restarts` independent seeded runs and returns the feasible
/// decoded strategy with the lowest exact EDP; if none is feasible, the
/// best-effort strategy is returned with feasible = false.
OptimizeResult optimize(const WorkloadGraph& graph,
                        const AcceleratorConfig& config,
                        const OptimizerConfig& opt);

void write_trace_csv(const std::vector<TraceRow>& trace,
                     const std::filesystem::path& path);

}  // namespace fusemap
