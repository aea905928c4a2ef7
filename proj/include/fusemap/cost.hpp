#pragma once

/// @file cost.hpp
/// @brief Differentiable analytical cost model: per-level traffic, roofline
///        latency, energy, and EDP over a workload graph.
///
/// Every formula is templated over the scalar type so one set of equations
/// serves both optimization (ad::Expr on a tape) and exact discrete
/// evaluation (double). A small context object supplies the scalar-specific
/// primitives (constants, max).
///
/// Traffic semantics, per tensor role:
///  - Inputs/weights flow downward along their resident levels: filling a
///    lower resident level from the next resident level above charges a
///    fill at the lower level and a read at the upper one, of
///    tile_size(lower) * fetch_count(lower) words. The tile is re-fetched
///    on every iteration of the full outer temporal nest. At the innermost
///    resident level the PE array reads Ops / Bcast words.
///  - Outputs flow upward: the accumulator level absorbs Ops / Reduce
///    partial-sum writes, and each completed output tile is written to the
///    next resident level above once per non-reduction outer iteration.
///  - Fusion scales the producer's DRAM write-back and the consumer's DRAM
///    fill by (1 - sigma) and adds an on-chip copy of sigma times the
///    write-back baseline, charged at both endpoints of the copy.

#include <algorithm>
#include <array>
#include <stdexcept>
#include <tuple>
#include <vector>

#include <fusemap/accelerator.hpp>
#include <fusemap/autodiff.hpp>
#include <fusemap/workload.hpp>

namespace fusemap {

/// Scalar context for plain doubles (exact discrete evaluation).
struct DoubleCtx {
  using Scalar = double;
  double constant(double v) const { return v; }
  double max(const std::vector<double>& xs) const {
    return *std::max_element(xs.begin(), xs.end());
  }
  double relu_sq(double x) const {
    double m = std::max(0.0, x);
    return m * m;
  }
};

/// Scalar context building onto an autodiff tape.
struct TapeCtx {
  using Scalar = ad::Expr;
  ad::Tape* tape = nullptr;
  ad::Expr constant(double v) const { return tape->constant(v); }
  ad::Expr max(const std::vector<ad::Expr>& xs) const {
    return tape->max(xs);
  }
  ad::Expr relu_sq(ad::Expr x) const { return tape->relu_sq(x); }
};

/// All tiling factors of one node, any scalar type. Temporal factors cover
/// every level including the derived DRAM factor; spatial factors apply at
/// the config's spatial level and are 1 for non-spatial dimensions.
template <typename S>
struct NodeFactors {
  int num_levels = 0;
  int spatial_level = 0;
  std::vector<S> temporal;         // [level * kNumDims + dim]
  std::array<S, kNumDims> spatial;
  S ops;                           // product of every factor (padded extent)

  const S& t(int level, Dim d) const {
    return temporal.at(static_cast<size_t>(level) * kNumDims +
                       static_cast<size_t>(d));
  }
  const S& s(Dim d) const { return spatial[static_cast<size_t>(d)]; }
};

enum class TrafficKind { Fill, Read, WriteBack, Copy };
inline constexpr int kNumTrafficKinds = 4;
const char* traffic_kind_name(TrafficKind k);

template <typename S>
struct TrafficTable {
  int num_levels = 0;
  std::vector<S> entries;  // [level][role][kind], dense

  static TrafficTable zero(int num_levels, const S& zero_value) {
    TrafficTable t;
    t.num_levels = num_levels;
    t.entries.assign(
        static_cast<size_t>(num_levels) * kNumRoles * kNumTrafficKinds,
        zero_value);
    return t;
  }
  S& at(int level, Role role, TrafficKind kind) {
    return entries.at((static_cast<size_t>(level) * kNumRoles +
                       static_cast<size_t>(role)) *
                          kNumTrafficKinds +
                      static_cast<size_t>(kind));
  }
  const S& at(int level, Role role, TrafficKind kind) const {
    return const_cast<TrafficTable*>(this)->at(level, role, kind);
  }
};

template <typename S>
struct NodeCost {
  TrafficTable<S> traffic;
  S ops;
  S pes_effective;
  S latency;
  S energy;
};

template <typename S>
struct CostBreakdown {
  std::vector<NodeCost<S>> nodes;
  S total_latency;
  S total_energy;
  S edp;
};

/// Levels at which a role is resident, ascending.
std::vector<int> resident_levels(const AcceleratorConfig& config, Role role);

/// Innermost on-chip level holding the role (copy source for outputs).
int innermost_resident_level(const AcceleratorConfig& config, Role role);

/// Highest on-chip level holding the role (staging level for inputs).
int staging_level(const AcceleratorConfig& config, Role role);

// ---------------------------------------------------------------------------
// Closed-form traffic components (Eqs. 4-12 semantics).
// ---------------------------------------------------------------------------

/// Tile extent of one dimension at `level`: product of the dimension's
/// temporal factors at levels 0..level, times its spatial factor when the
/// spatial level is within that range.
template <typename S, typename Ctx>
S dim_tile_extent(const NodeFactors<S>& f, Dim d, int level, const Ctx& ctx) {
  S acc = ctx.constant(1.0);
  for (int m = 0; m <= level; ++m) acc = acc * f.t(m, d);
  if (f.spatial_level <= level) acc = acc * f.s(d);
  return acc;
}

/// Words of the role's tile resident at `level`: product of the role's
/// dimension tile extents at that level.
template <typename S, typename Ctx>
S tile_size(const NodeFactors<S>& f, int level, Role role, const Ctx& ctx) {
  S acc = ctx.constant(1.0);
  for (Dim d : tensor_dims(role)) {
    acc = acc * dim_tile_extent(f, d, level, ctx);
  }
  return acc;
}

/// Iterations of the temporal nest strictly above `level`, over all
/// problem dimensions: the number of times the level's tile is fetched.
template <typename S, typename Ctx>
S fetch_count(const NodeFactors<S>& f, int level, const Ctx& ctx) {
  S acc = ctx.constant(1.0);
  for (Dim d : kAllDims) {
    for (int m = level + 1; m < f.num_levels; ++m) acc = acc * f.t(m, d);
  }
  return acc;
}

/// Like fetch_count but excluding reduction dimensions: output tiles are
/// completed (and written) once per non-reduction outer iteration, since
/// partial sums stay in the accumulator.
template <typename S, typename Ctx>
S write_count(const NodeFactors<S>& f, int level, const Ctx& ctx) {
  S acc = ctx.constant(1.0);
  for (Dim d : kAllDims) {
    if (is_reduction_dim(d)) continue;
    for (int m = level + 1; m < f.num_levels; ++m) acc = acc * f.t(m, d);
  }
  return acc;
}

/// Spatial broadcast factor (inputs/weights) or reduction factor (outputs):
/// product of spatial factors over dimensions NOT indexing the role.
template <typename S, typename Ctx>
S bcast_factor(const NodeFactors<S>& f, Role role, const Ctx& ctx) {
  S acc = ctx.constant(1.0);
  const std::vector<Dim>& dims = tensor_dims(role);
  for (Dim d : kAllDims) {
    if (std::find(dims.begin(), dims.end(), d) == dims.end()) {
      acc = acc * f.s(d);
    }
  }
  return acc;
}

template <typename S, typename Ctx>
S pes_effective(const NodeFactors<S>& f, const Ctx& ctx) {
  S acc = ctx.constant(1.0);
  for (Dim d : kAllDims) acc = acc * f.s(d);
  return acc;
}

/// Baseline (fusion-free) traffic table for one node.
template <typename S, typename Ctx>
TrafficTable<S> node_traffic(const NodeFactors<S>& f,
                             const AcceleratorConfig& config, const Ctx& ctx) {
  TrafficTable<S> table =
      TrafficTable<S>::zero(config.num_levels(), ctx.constant(0.0));
  for (Role role : {Role::Input, Role::Weight}) {
    std::vector<int> chain = resident_levels(config, role);
    for (size_t j = 0; j + 1 < chain.size(); ++j) {
      S amount = tile_size(f, chain[j], role, ctx) *
                 fetch_count(f, chain[j], ctx);
      table.at(chain[j], role, TrafficKind::Fill) =
          table.at(chain[j], role, TrafficKind::Fill) + amount;
      table.at(chain[j + 1], role, TrafficKind::Read) =
          table.at(chain[j + 1], role, TrafficKind::Read) + amount;
    }
    S pe_reads = f.ops / bcast_factor(f, role, ctx);
    table.at(chain.front(), role, TrafficKind::Read) =
        table.at(chain.front(), role, TrafficKind::Read) + pe_reads;
  }
  {
    Role role = Role::Output;
    std::vector<int> chain = resident_levels(config, role);
    for (size_t j = 0; j + 1 < chain.size(); ++j) {
      S amount =
          tile_size(f, chain[j], role, ctx) * write_count(f, chain[j], ctx);
      table.at(chain[j + 1], role, TrafficKind::WriteBack) =
          table.at(chain[j + 1], role, TrafficKind::WriteBack) + amount;
    }
    S accum = f.ops / bcast_factor(f, role, ctx);
    table.at(chain.front(), role, TrafficKind::WriteBack) =
        table.at(chain.front(), role, TrafficKind::WriteBack) + accum;
  }
  return table;
}

/// Scales the fusion boundary between producer and consumer tables by
/// sigma: DRAM write-back and fill shrink, an on-chip copy appears.
template <typename S, typename Ctx>
void apply_fusion_boundary(TrafficTable<S>& producer,
                           TrafficTable<S>& consumer, const S& sigma,
                           const AcceleratorConfig& config, const Ctx& ctx) {
  int dram = config.dram_level();
  int copy_src = innermost_resident_level(config, Role::Output);
  int copy_dst = staging_level(config, Role::Input);
  S one = ctx.constant(1.0);

  S wb0 = producer.at(dram, Role::Output, TrafficKind::WriteBack);
  producer.at(dram, Role::Output, TrafficKind::WriteBack) = (one - sigma) * wb0;
  producer.at(copy_src, Role::Output, TrafficKind::Copy) =
      producer.at(copy_src, Role::Output, TrafficKind::Copy) + sigma * wb0;
  producer.at(copy_dst, Role::Output, TrafficKind::Copy) =
      producer.at(copy_dst, Role::Output, TrafficKind::Copy) + sigma * wb0;

  S fill0 = consumer.at(copy_dst, Role::Input, TrafficKind::Fill);
  consumer.at(copy_dst, Role::Input, TrafficKind::Fill) = (one - sigma) * fill0;
  consumer.at(dram, Role::Input, TrafficKind::Read) = (one - sigma) * fill0;
}

/// Sum of every traffic kind and role at one level (Access(L_i)).
template <typename S, typename Ctx>
S level_access(const TrafficTable<S>& table, int level, const Ctx& ctx) {
  S acc = ctx.constant(0.0);
  for (Role role : kAllRoles) {
    for (int k = 0; k < kNumTrafficKinds; ++k) {
      acc = acc + table.at(level, role, static_cast<TrafficKind>(k));
    }
  }
  return acc;
}

/// Roofline latency: compute time or the slowest memory level.
template <typename S, typename Ctx>
S node_latency(const TrafficTable<S>& table, const S& ops,
               const S& pes_effective, const AcceleratorConfig& config,
               const Ctx& ctx) {
  std::vector<S> terms;
  terms.push_back(ops / pes_effective);
  for (int i = 0; i < config.num_levels(); ++i) {
    terms.push_back(level_access(table, i, ctx) /
                    ctx.constant(config.level(i).bandwidth_words_per_cycle));
  }
  return ctx.max(terms);
}

template <typename S, typename Ctx>
S node_energy(const TrafficTable<S>& table, const S& ops,
              const AcceleratorConfig& config, const Ctx& ctx) {
  S acc = ops * ctx.constant(config.energy_per_op_pj);
  for (int i = 0; i < config.num_levels(); ++i) {
    acc = acc + level_access(table, i, ctx) *
                    ctx.constant(config.level(i).epa_pj_per_word);
  }
  return acc;
}

/// Whole-graph cost: per-node tables with fusion boundaries applied,
/// summed latency and energy, and their product as EDP.
/// `fusion` holds (producer index, consumer index, sigma) triples.
template <typename S, typename Ctx>
CostBreakdown<S> graph_cost(const WorkloadGraph& graph,
                            const std::vector<NodeFactors<S>>& factors,
                            const std::vector<std::tuple<int, int, S>>& fusion,
                            const AcceleratorConfig& config, const Ctx& ctx) {
  if (factors.size() != graph.nodes.size()) {
    throw std::runtime_error("graph_cost: factor count != node count");
  }
  CostBreakdown<S> out;
  std::vector<TrafficTable<S>> tables;
  tables.reserve(factors.size());
  for (const NodeFactors<S>& f : factors) {
    tables.push_back(node_traffic(f, config, ctx));
  }
  for (const auto& [p, c, sigma] : fusion) {
    apply_fusion_boundary(tables[p], tables[c], sigma, config, ctx);
  }
  out.total_latency = ctx.constant(0.0);
  out.total_energy = ctx.constant(0.0);
  for (size_t i = 0; i < factors.size(); ++i) {
    NodeCost<S> nc;
    nc.traffic = std::move(tables[i]);
    nc.ops = factors[i].ops;
    nc.pes_effective = pes_effective(factors[i], ctx);
    nc.latency =
        node_latency(nc.traffic, nc.ops, nc.pes_effective, config, ctx);
    nc.energy = node_energy(nc.traffic, nc.ops, config, ctx);
    out.total_latency = out.total_latency + nc.latency;
    out.total_energy = out.total_energy + nc.energy;
    out.nodes.push_back(std::move(nc));
  }
  out.edp = out.total_energy * out.total_latency;
  return out;
}

}  // namespace fusemap
