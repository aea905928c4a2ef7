#pragma once

/// @file penalty.hpp
/// @brief Differentiable constraint penalties and the augmented loss.
///
/// Each penalty is a sum of squared hinges: zero on feasible points,
/// quadratic in the violation, continuously differentiable everywhere.
/// During optimization, fusion-group membership is soft: every contiguous
/// run along an eligible chain contributes its capacity terms weighted by
/// the product of its interior sigmas times (1 - sigma) at both ends, so
/// the continuous penalties reduce to the discrete group definition at
/// sigma in {0, 1}.

#include <tuple>
#include <vector>

#include <fusemap/accelerator.hpp>
#include <fusemap/cost.hpp>
#include <fusemap/relax.hpp>
#include <fusemap/workload.hpp>

namespace fusemap {

/// Everything the penalties need from either scalar route: the (selected)
/// factors feeding the cost model, the pre-selection continuous factors the
/// penalties differentiate through, and the fusion strengths. Magnitude
/// penalties (validity, spatial, capacity) read the smooth table built from
/// the raw continuous T of each slot, so their value never jumps when a
/// straight-through selection flips. On the double route both tables are
/// the decoded integer factors themselves.
template <typename S>
struct RelaxedView {
  std::vector<NodeFactors<S>> factors;
  /// Raw continuous factor table per node, same layout as factors.
  std::vector<NodeFactors<S>> smooth;
  /// Continuous T of every slot plus each derived DRAM quotient, any order
  /// (each is penalized toward T >= 1).
  std::vector<S> continuous_all;
  /// Per node: continuous spatial T per configured spatial dimension.
  std::vector<std::vector<S>> continuous_spatial;
  /// Per fusion slot, in MappingParams::fusion order.
  std::vector<S> sigma;
};

/// Sum of max(0, 1 - T)^2 over every continuous factor value.
template <typename S, typename Ctx>
S p_valid(const RelaxedView<S>& view, const Ctx& ctx) {
  S acc = ctx.constant(0.0);
  for (const S& t : view.continuous_all) {
    acc = acc + ctx.relu_sq(ctx.constant(1.0) - t);
  }
  return acc;
}

/// Per node, max(0, product of spatial factors - N_PE)^2.
template <typename S, typename Ctx>
S p_spatial(const RelaxedView<S>& view, const AcceleratorConfig& config,
            const Ctx& ctx) {
  S acc = ctx.constant(0.0);
  for (const std::vector<S>& spatial : view.continuous_spatial) {
    S prod = ctx.constant(1.0);
    for (const S& t : spatial) prod = prod * t;
    acc = acc + ctx.relu_sq(prod - ctx.constant(
                                        static_cast<double>(config.pe_count)));
  }
  return acc;
}

/// Tile words the node keeps resident at one on-chip level: inputs and
/// weights, plus outputs when the config opts in.
template <typename S, typename Ctx>
S node_footprint(const NodeFactors<S>& f, int level,
                 const AcceleratorConfig& config, const Ctx& ctx) {
  S acc = ctx.constant(0.0);
  for (Role role : {Role::Input, Role::Weight}) {
    if (config.level(level).holds(role)) {
      acc = acc + tile_size(f, level, role, ctx);
    }
  }
  if (config.include_output_residency &&
      config.level(level).holds(Role::Output)) {
    acc = acc + tile_size(f, level, Role::Output, ctx);
  }
  return acc;
}

/// Capacity penalty over soft fusion groups: for every candidate group
/// (contiguous chain run, or a lone node) and every bounded on-chip level,
/// max(0, SizeReq - capacity)^2 weighted by the group's membership weight.
template <typename S, typename Ctx>
S p_mem(const RelaxedView<S>& view, const std::vector<FusionChain>& chains,
        const AcceleratorConfig& config, const Ctx& ctx) {
  S total = ctx.constant(0.0);
  S one = ctx.constant(1.0);

  auto group_term = [&](const std::vector<int>& members, const S& weight) {
    for (int i = 0; i < config.dram_level(); ++i) {
      if (!config.level(i).capacity_words) continue;
      S req = ctx.constant(0.0);
      for (int v : members) {
        req = req + node_footprint(view.smooth[v], i, config, ctx);
      }
      S capacity =
          ctx.constant(static_cast<double>(*config.level(i).capacity_words));
      total = total + weight * ctx.relu_sq(req - capacity);
    }
  };

  std::vector<bool> chained(view.smooth.size(), false);
  for (const FusionChain& chain : chains) {
    for (int v : chain.nodes) chained[v] = true;
  }
  for (size_t v = 0; v < view.smooth.size(); ++v) {
    if (!chained[v]) group_term({static_cast<int>(v)}, one);
  }
  for (const FusionChain& chain : chains) {
    int len = static_cast<int>(chain.nodes.size());
    for (int a = 0; a < len; ++a) {
      for (int b = a; b < len; ++b) {
        S weight = one;
        if (a > 0) weight = weight * (one - view.sigma[chain.fusion_slots[a - 1]]);
        for (int j = a; j < b; ++j) {
          weight = weight * view.sigma[chain.fusion_slots[j]];
        }
        if (b < len - 1) {
          weight = weight * (one - view.sigma[chain.fusion_slots[b]]);
        }
        std::vector<int> members(chain.nodes.begin() + a,
                                 chain.nodes.begin() + b + 1);
        group_term(members, weight);
      }
    }
  }
  return total;
}

/// Alignment penalty: for each eligible edge, sigma times the squared
/// distance between the producer's output tile shape (P, Q, K extents at
/// the accumulator level) and the consumer's input tile shape (P, Q, C
/// extents at the input staging level).
template <typename S, typename Ctx>
S p_align(const RelaxedView<S>& view, const std::vector<FusionSlot>& fusion,
          const AcceleratorConfig& config, const Ctx& ctx) {
  S total = ctx.constant(0.0);
  int out_level = innermost_resident_level(config, Role::Output);
  int in_level = staging_level(config, Role::Input);
  for (size_t e = 0; e < fusion.size(); ++e) {
    const NodeFactors<S>& prod = view.smooth[fusion[e].producer];
    const NodeFactors<S>& cons = view.smooth[fusion[e].consumer];
    S dp = dim_tile_extent(prod, Dim::P, out_level, ctx) -
           dim_tile_extent(cons, Dim::P, in_level, ctx);
    S dq = dim_tile_extent(prod, Dim::Q, out_level, ctx) -
           dim_tile_extent(cons, Dim::Q, in_level, ctx);
    S dk = dim_tile_extent(prod, Dim::K, out_level, ctx) -
           dim_tile_extent(cons, Dim::C, in_level, ctx);
    total = total + view.sigma[e] * (dp * dp + dq * dq + dk * dk);
  }
  return total;
}

template <typename S>
struct LossTerms {
  S edp;
  S p_map;
  S p_mem;
  S p_align;
  double lambda = 0.0;
  S loss;
};

/// loss = EDP / EDP0 + lambda * (P_valid + P_spatial + P_mem + P_align).
/// EDP0 is the initial-point EDP of the run, fixed across steps so lambda
/// stays workload-independent.
template <typename S, typename Ctx>
LossTerms<S> augmented_loss(const CostBreakdown<S>& breakdown,
                            const RelaxedView<S>& view,
                            const std::vector<FusionChain>& chains,
                            const std::vector<FusionSlot>& fusion,
                            const AcceleratorConfig& config, double lambda,
                            double edp0, const Ctx& ctx) {
  LossTerms<S> out;
  out.edp = breakdown.edp;
  out.p_map = p_valid(view, ctx) + p_spatial(view, config, ctx);
  out.p_mem = p_mem(view, chains, config, ctx);
  out.p_align = p_align(view, fusion, config, ctx);
  out.lambda = lambda;
  out.loss = out.edp / ctx.constant(edp0) +
             ctx.constant(lambda) * (out.p_map + out.p_mem + out.p_align);
  return out;
}

}  // namespace fusemap
