#include <fusemap/evaluation.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <fusemap/relax.hpp>

namespace fusemap {

namespace {

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// One coordinate of the temporal nest above some level.
struct OuterCoord {
  long long radix = 1;
  bool reduction = false;
};

// Radices of every temporal loop strictly above `level`, all dimensions.
// Coordinates with radix 1 are dropped; they never advance.
std::vector<OuterCoord> outer_coords(const NodeMapping& mapping, int level) {
  std::vector<OuterCoord> coords;
  for (Dim d : kAllDims) {
    for (int m = level + 1; m < mapping.num_levels; ++m) {
      long long f = mapping.t(m, d);
      if (f > 1) coords.push_back({f, is_reduction_dim(d)});
    }
  }
  return coords;
}

struct OuterVisitCounts {
  double total = 0.0;       // every iteration of the outer nest
  double completions = 0.0; // iterations with all reduction coordinates at 0
};

// Walks the outer nest one iteration at a time with an odometer.
OuterVisitCounts walk_outer_nest(const std::vector<OuterCoord>& coords,
                                 double max_iterations) {
  OuterVisitCounts counts;
  std::vector<long long> ctr(coords.size(), 0);
  long long reductions_nonzero = 0;
  for (;;) {
    counts.total += 1.0;
    if (reductions_nonzero == 0) counts.completions += 1.0;
    if (counts.total > max_iterations) {
      throw std::runtime_error("loopnest_count: outer nest exceeds guard");
    }
    size_t p = 0;
    while (p < coords.size()) {
      ++ctr[p];
      if (coords[p].reduction && ctr[p] == 1) ++reductions_nonzero;
      if (ctr[p] < coords[p].radix) break;
      if (coords[p].reduction) --reductions_nonzero;
      ctr[p] = 0;
      ++p;
    }
    if (p == coords.size()) break;
  }
  return counts;
}

long long cum_extent_ll(const NodeMapping& mapping, Dim d, int level,
                        int spatial_level) {
  long long acc = 1;
  for (int m = 0; m <= level; ++m) acc *= mapping.t(m, d);
  if (spatial_level <= level) acc *= mapping.s(d);
  return acc;
}

std::vector<int> levels_holding(const AcceleratorConfig& config, Role role) {
  std::vector<int> out;
  for (int i = 0; i < config.num_levels(); ++i) {
    if (config.level(i).holds(role)) out.push_back(i);
  }
  return out;
}

}  // namespace

OracleCounts loopnest_count(const LayerNode& node, const NodeMapping& mapping,
                            const AcceleratorConfig& config,
                            double max_macs) {
  if (mapping.num_levels != config.num_levels()) {
    throw std::runtime_error("loopnest_count: mapping level count mismatch");
  }
  __int128 macs_i = 1;
  for (Dim d : kAllDims) {
    for (int m = 0; m < mapping.num_levels; ++m) macs_i *= mapping.t(m, d);
    macs_i *= mapping.s(d);
    if (static_cast<double>(macs_i) > max_macs) {
      throw std::runtime_error(
          "loopnest_count: padded MAC count exceeds the guard");
    }
  }
  (void)node;

  OracleCounts out;
  out.macs = static_cast<double>(macs_i);
  out.traffic = TrafficTable<double>::zero(config.num_levels(), 0.0);

  for (Role role : {Role::Input, Role::Weight}) {
    std::vector<int> chain = levels_holding(config, role);
    for (size_t j = 0; j + 1 < chain.size(); ++j) {
      int lower = chain[j];
      OuterVisitCounts visits =
          walk_outer_nest(outer_coords(mapping, lower), max_macs);
      double tile = 1.0;
      for (Dim d : tensor_dims(role)) {
        tile *= static_cast<double>(
            cum_extent_ll(mapping, d, lower, config.spatial_level));
      }
      double amount = tile * visits.total;
      out.traffic.at(lower, role, TrafficKind::Fill) += amount;
      out.traffic.at(chain[j + 1], role, TrafficKind::Read) += amount;
    }
    double bcast = 1.0;
    for (Dim d : kAllDims) {
      const std::vector<Dim>& dims = tensor_dims(role);
      if (std::find(dims.begin(), dims.end(), d) == dims.end()) {
        bcast *= static_cast<double>(mapping.s(d));
      }
    }
    out.traffic.at(chain.front(), role, TrafficKind::Read) += out.macs / bcast;
  }

  {
    Role role = Role::Output;
    std::vector<int> chain = levels_holding(config, role);
    for (size_t j = 0; j + 1 < chain.size(); ++j) {
      int lower = chain[j];
      OuterVisitCounts visits =
          walk_outer_nest(outer_coords(mapping, lower), max_macs);
      double tile = 1.0;
      for (Dim d : tensor_dims(role)) {
        tile *= static_cast<double>(
            cum_extent_ll(mapping, d, lower, config.spatial_level));
      }
      out.traffic.at(chain[j + 1], role, TrafficKind::WriteBack) +=
          tile * visits.completions;
    }
    double reduce = 1.0;
    for (Dim d : kAllDims) {
      if (is_reduction_dim(d)) reduce *= static_cast<double>(mapping.s(d));
    }
    out.traffic.at(chain.front(), role, TrafficKind::WriteBack) +=
        out.macs / reduce;
  }
  return out;
}

NodeMapping random_mapping(const LayerNode& node,
                           const AcceleratorConfig& config, uint64_t seed) {
  std::mt19937_64 rng(mix64(seed));
  NodeMapping mapping;
  int dram = config.dram_level();
  mapping.num_levels = config.num_levels();
  mapping.temporal.assign(static_cast<size_t>(mapping.num_levels) * kNumDims,
                          1);
  mapping.spatial.fill(1);

  auto draw = [&](Dim d) -> long long {
    std::vector<long long> divs = divisors_of(node.dims.extent(d));
    std::uniform_int_distribution<size_t> pick(0, divs.size() - 1);
    return divs[pick(rng)];
  };
  for (int m = 0; m < dram; ++m) {
    for (Dim d : kAllDims) mapping.set_t(m, d, draw(d));
  }
  for (Dim d : config.spatial_dims) mapping.set_s(d, draw(d));
  for (Dim d : kAllDims) {
    long long inner = mapping.s(d);
    for (int m = 0; m < dram; ++m) inner *= mapping.t(m, d);
    long long extent = node.dims.extent(d);
    mapping.set_t(dram, d,
                  inner >= extent ? 1 : (extent + inner - 1) / inner);
  }
  return mapping;
}

DeploymentStrategy random_strategy(const WorkloadGraph& graph,
                                   const AcceleratorConfig& config,
                                   uint64_t seed) {
  DeploymentStrategy strategy;
  for (size_t i = 0; i < graph.nodes.size(); ++i) {
    strategy.nodes.push_back(
        random_mapping(graph.nodes[i], config, mix64(seed) + i));
  }
  std::mt19937_64 rng(mix64(seed ^ 0xa5a5a5a5a5a5a5a5ULL));
  strategy.fusion_edges = eligible_edges(graph);
  for (size_t e = 0; e < strategy.fusion_edges.size(); ++e) {
    strategy.fused.push_back((rng() & 1) != 0);
  }
  strategy.groups =
      fusion_groups(graph, strategy.fusion_edges, strategy.fused);
  strategy.validity = validate_strategy(strategy, graph, config);
  strategy.feasible = strategy.validity.clean();
  return strategy;
}

// ---------------------------------------------------------------------------
// Exhaustive joint enumeration
// ---------------------------------------------------------------------------

namespace {

// Everything the joint loop needs about one candidate mapping of one node,
// with cost precomputed for all four fusion contexts of its endpoints.
struct Candidate {
  NodeMapping mapping;
  double energy[4];   // [in_fused * 2 + out_fused]
  double latency[4];
  bool pe_ok = true;
  std::vector<__int128> footprint;       // per on-chip level
  std::array<__int128, 3> align_out{};   // producer (P, Q, K) tile
  std::array<__int128, 3> align_in{};    // consumer (P, Q, C) tile
};

Candidate make_candidate(const NodeMapping& mapping,
                         const AcceleratorConfig& config) {
  DoubleCtx ctx;
  Candidate cand;
  cand.mapping = mapping;
  NodeFactors<double> f = factors_from_mapping(mapping, config);
  double pes = pes_effective(f, ctx);
  cand.pe_ok = pes <= static_cast<double>(config.pe_count) + 0.5;

  TrafficTable<double> base = node_traffic(f, config, ctx);
  for (int in_fused = 0; in_fused < 2; ++in_fused) {
    for (int out_fused = 0; out_fused < 2; ++out_fused) {
      TrafficTable<double> table = base;
      TrafficTable<double> scratch =
          TrafficTable<double>::zero(config.num_levels(), 0.0);
      if (out_fused) apply_fusion_boundary(table, scratch, 1.0, config, ctx);
      if (in_fused) apply_fusion_boundary(scratch, table, 1.0, config, ctx);
      int k = in_fused * 2 + out_fused;
      cand.energy[k] = node_energy(table, f.ops, config, ctx);
      cand.latency[k] = node_latency(table, f.ops, pes, config, ctx);
    }
  }

  int dram = config.dram_level();
  for (int lvl = 0; lvl < dram; ++lvl) {
    cand.footprint.push_back(mapping_footprint_words(mapping, lvl, config));
  }
  int out_level = innermost_resident_level(config, Role::Output);
  int in_level = staging_level(config, Role::Input);
  cand.align_out = {
      mapping_dim_extent(mapping, Dim::P, out_level, config.spatial_level),
      mapping_dim_extent(mapping, Dim::Q, out_level, config.spatial_level),
      mapping_dim_extent(mapping, Dim::K, out_level, config.spatial_level)};
  cand.align_in = {
      mapping_dim_extent(mapping, Dim::P, in_level, config.spatial_level),
      mapping_dim_extent(mapping, Dim::Q, in_level, config.spatial_level),
      mapping_dim_extent(mapping, Dim::C, in_level, config.spatial_level)};
  return cand;
}

// Streams one node's candidate mappings (cross product of divisor choices,
// DRAM quotient derived) through a visitor, never materializing the list.
template <typename Visit>
void for_each_candidate(const LayerNode& node, const NodeSlots& slots,
                        const AcceleratorConfig& config, Visit&& visit) {
  std::vector<size_t> digit(slots.slots.size(), 0);
  int dram = config.dram_level();
  NodeMapping mapping;
  mapping.num_levels = config.num_levels();
  for (;;) {
    mapping.temporal.assign(
        static_cast<size_t>(mapping.num_levels) * kNumDims, 1);
    mapping.spatial.fill(1);
    for (size_t s = 0; s < slots.slots.size(); ++s) {
      const DivisorSlot& slot = slots.slots[s];
      long long factor = slot.divisors[digit[s]];
      if (slot.spatial) {
        mapping.set_s(slot.dim, factor);
      } else {
        mapping.set_t(slot.level, slot.dim, factor);
      }
    }
    for (Dim d : kAllDims) {
      long long inner = mapping.s(d);
      for (int m = 0; m < dram; ++m) inner *= mapping.t(m, d);
      long long extent = node.dims.extent(d);
      mapping.set_t(dram, d,
                    inner >= extent ? 1 : (extent + inner - 1) / inner);
    }
    visit(mapping);

    size_t p = 0;
    while (p < digit.size()) {
      if (++digit[p] < slots.slots[p].divisors.size()) break;
      digit[p] = 0;
      ++p;
    }
    if (p == digit.size()) break;
  }
}

// Depth-first joint enumeration: node candidates are built once per prefix
// and shared across every deeper combination, so memory stays O(nodes).
struct JointEnumerator {
  const WorkloadGraph& graph;
  const AcceleratorConfig& config;
  const MappingParams& params;
  const std::vector<std::pair<int, int>>& edges;
  std::vector<int> in_edge, out_edge;
  std::vector<long long> capacity;  // per on-chip level, -1 = unbounded
  int dram;

  std::vector<Candidate> current;
  // Nodes with few candidates are materialized once instead of being
  // rebuilt for every combination of the nodes above them.
  std::vector<std::vector<Candidate>> cache;
  ExhaustiveResult result;
  double best_edp = std::numeric_limits<double>::infinity();
  bool best_feasible = false;
  bool have_best = false;
  std::vector<NodeMapping> best_mappings;
  std::vector<bool> best_bits;

  JointEnumerator(const WorkloadGraph& g, const AcceleratorConfig& c,
                  const MappingParams& p,
                  const std::vector<std::pair<int, int>>& e)
      : graph(g), config(c), params(p), edges(e), dram(c.dram_level()) {
    in_edge.assign(g.nodes.size(), -1);
    out_edge.assign(g.nodes.size(), -1);
    for (size_t i = 0; i < e.size(); ++i) {
      out_edge[static_cast<size_t>(e[i].first)] = static_cast<int>(i);
      in_edge[static_cast<size_t>(e[i].second)] = static_cast<int>(i);
    }
    capacity.assign(static_cast<size_t>(dram), -1);
    for (int lvl = 0; lvl < dram; ++lvl) {
      if (c.level(lvl).capacity_words) {
        capacity[static_cast<size_t>(lvl)] = *c.level(lvl).capacity_words;
      }
    }
    current.resize(g.nodes.size());
    cache.resize(g.nodes.size());
  }

  void run() {
    constexpr double kCacheLimit = 4096;
    for (size_t i = 1; i < graph.nodes.size(); ++i) {
      double count = 1.0;
      for (const DivisorSlot& slot : params.nodes[i].slots) {
        count *= static_cast<double>(slot.divisors.size());
      }
      if (count <= kCacheLimit) {
        for_each_candidate(graph.nodes[i], params.nodes[i], config,
                           [&](const NodeMapping& mapping) {
                             cache[i].push_back(
                                 make_candidate(mapping, config));
                           });
      }
    }
    descend(0);
  }

  void descend(size_t node_index) {
    if (node_index == graph.nodes.size()) {
      score_fusion_patterns();
      return;
    }
    if (!cache[node_index].empty()) {
      for (const Candidate& cand : cache[node_index]) {
        current[node_index] = cand;
        descend(node_index + 1);
      }
      return;
    }
    for_each_candidate(graph.nodes[node_index], params.nodes[node_index],
                       config, [&](const NodeMapping& mapping) {
                         current[node_index] = make_candidate(mapping, config);
                         descend(node_index + 1);
                       });
  }

  void score_fusion_patterns() {
    size_t num_bits = edges.size();
    std::vector<bool> bits(num_bits, false);
    for (;;) {
      score_one(bits);
      size_t p = 0;
      while (p < num_bits) {
        bits[p] = !bits[p];
        if (bits[p]) break;
        ++p;
      }
      if (p == num_bits) break;
    }
  }

  void score_one(const std::vector<bool>& bits) {
    ++result.combinations;
    bool feasible = true;
    double energy = 0.0, latency = 0.0;
    for (size_t v = 0; v < current.size(); ++v) {
      int fi = (in_edge[v] >= 0 && bits[static_cast<size_t>(in_edge[v])]) ? 1
                                                                          : 0;
      int fo =
          (out_edge[v] >= 0 && bits[static_cast<size_t>(out_edge[v])]) ? 1 : 0;
      energy += current[v].energy[fi * 2 + fo];
      latency += current[v].latency[fi * 2 + fo];
      feasible = feasible && current[v].pe_ok;
    }
    if (feasible) {
      for (size_t v = 0; v < current.size() && feasible; ++v) {
        bool head =
            in_edge[v] < 0 || !bits[static_cast<size_t>(in_edge[v])];
        if (!head) continue;
        // Walk this fused run: accumulate footprints, check alignment.
        std::array<__int128, 8> run_foot{};
        int u = static_cast<int>(v);
        for (;;) {
          for (int lvl = 0; lvl < dram; ++lvl) {
            run_foot[static_cast<size_t>(lvl)] +=
                current[static_cast<size_t>(u)]
                    .footprint[static_cast<size_t>(lvl)];
          }
          int e = out_edge[static_cast<size_t>(u)];
          if (e < 0 || !bits[static_cast<size_t>(e)]) break;
          int next = edges[static_cast<size_t>(e)].second;
          if (current[static_cast<size_t>(u)].align_out !=
              current[static_cast<size_t>(next)].align_in) {
            feasible = false;
            break;
          }
          u = next;
        }
        for (int lvl = 0; lvl < dram && feasible; ++lvl) {
          long long cap = capacity[static_cast<size_t>(lvl)];
          if (cap >= 0 && run_foot[static_cast<size_t>(lvl)] > cap) {
            feasible = false;
          }
        }
      }
    }
    if (feasible) ++result.feasible_count;
    double edp = energy * latency;
    bool better =
        !have_best || (feasible != best_feasible ? feasible : edp < best_edp);
    if (better) {
      have_best = true;
      best_edp = edp;
      best_feasible = feasible;
      best_mappings.clear();
      for (const Candidate& cand : current) {
        best_mappings.push_back(cand.mapping);
      }
      best_bits = bits;
    }
  }
};

}  // namespace

ExhaustiveResult exhaustive_best(const WorkloadGraph& graph,
                                 const AcceleratorConfig& config,
                                 double guard) {
  if (config.dram_level() > 8) {
    throw std::runtime_error("exhaustive_best: more than 8 on-chip levels");
  }
  MappingParams params = make_mapping_params(graph, config);
  std::vector<std::pair<int, int>> edges = eligible_edges(graph);

  double space = std::pow(2.0, static_cast<double>(edges.size()));
  for (const NodeSlots& node : params.nodes) {
    for (const DivisorSlot& slot : node.slots) {
      space *= static_cast<double>(slot.divisors.size());
    }
    if (space > guard) break;
  }
  if (space > guard) {
    throw std::runtime_error(
        "exhaustive_best: joint space exceeds the guard of " +
        std::to_string(static_cast<long long>(guard)) + " combinations");
  }

  JointEnumerator enumerator(graph, config, params, edges);
  enumerator.run();

  DeploymentStrategy strategy;
  strategy.nodes = enumerator.best_mappings;
  strategy.fusion_edges = edges;
  strategy.fused = enumerator.best_bits;
  strategy.groups =
      fusion_groups(graph, strategy.fusion_edges, strategy.fused);
  strategy.validity = validate_strategy(strategy, graph, config);
  strategy.feasible = strategy.validity.clean();

  ExhaustiveResult result = enumerator.result;
  result.strategy = strategy;
  result.feasible = enumerator.best_feasible;
  result.edp = evaluate_strategy(strategy, graph, config).edp;
  return result;
}

// ---------------------------------------------------------------------------
// Stochastic baselines
// ---------------------------------------------------------------------------

namespace {

struct GenomeSpace {
  MappingParams params;  // slot structure with divisor lists
  std::vector<std::pair<int, int>> edges;
  size_t slot_genes = 0;

  size_t size() const { return slot_genes + edges.size(); }
};

GenomeSpace make_space(const WorkloadGraph& graph,
                       const AcceleratorConfig& config) {
  GenomeSpace space;
  space.params = make_mapping_params(graph, config);
  space.edges = eligible_edges(graph);
  for (const NodeSlots& node : space.params.nodes) {
    space.slot_genes += node.slots.size();
  }
  return space;
}

DeploymentStrategy genome_to_strategy(const std::vector<int>& genome,
                                      const GenomeSpace& space,
                                      const WorkloadGraph& graph,
                                      const AcceleratorConfig& config) {
  DeploymentStrategy strategy;
  int dram = config.dram_level();
  size_t g = 0;
  for (size_t i = 0; i < graph.nodes.size(); ++i) {
    NodeMapping mapping;
    mapping.num_levels = config.num_levels();
    mapping.temporal.assign(
        static_cast<size_t>(mapping.num_levels) * kNumDims, 1);
    mapping.spatial.fill(1);
    for (const DivisorSlot& slot : space.params.nodes[i].slots) {
      long long factor = slot.divisors[static_cast<size_t>(genome[g++])];
      if (slot.spatial) {
        mapping.set_s(slot.dim, factor);
      } else {
        mapping.set_t(slot.level, slot.dim, factor);
      }
    }
    for (Dim d : kAllDims) {
      long long inner = mapping.s(d);
      for (int m = 0; m < dram; ++m) inner *= mapping.t(m, d);
      long long extent = graph.nodes[i].dims.extent(d);
      mapping.set_t(dram, d,
                    inner >= extent ? 1 : (extent + inner - 1) / inner);
    }
    strategy.nodes.push_back(std::move(mapping));
  }
  strategy.fusion_edges = space.edges;
  for (size_t e = 0; e < space.edges.size(); ++e) {
    strategy.fused.push_back(genome[g++] != 0);
  }
  strategy.groups =
      fusion_groups(graph, strategy.fusion_edges, strategy.fused);
  strategy.validity = validate_strategy(strategy, graph, config);
  strategy.feasible = strategy.validity.clean();
  return strategy;
}

std::vector<int> random_genome(const GenomeSpace& space, std::mt19937_64& rng) {
  std::vector<int> genome;
  genome.reserve(space.size());
  for (const NodeSlots& node : space.params.nodes) {
    for (const DivisorSlot& slot : node.slots) {
      std::uniform_int_distribution<int> pick(
          0, static_cast<int>(slot.divisors.size()) - 1);
      genome.push_back(pick(rng));
    }
  }
  for (size_t e = 0; e < space.edges.size(); ++e) {
    genome.push_back(static_cast<int>(rng() & 1));
  }
  return genome;
}

constexpr double kViolationPenalty = 1e24;

struct Evaluated {
  std::vector<int> genome;
  double fitness = std::numeric_limits<double>::infinity();
  double edp = std::numeric_limits<double>::quiet_NaN();
  bool feasible = false;
};

Evaluated evaluate_genome(const std::vector<int>& genome,
                          const GenomeSpace& space, const WorkloadGraph& graph,
                          const AcceleratorConfig& config) {
  Evaluated out;
  out.genome = genome;
  DeploymentStrategy strategy =
      genome_to_strategy(genome, space, graph, config);
  out.edp = evaluate_strategy(strategy, graph, config).edp;
  out.feasible = strategy.feasible;
  out.fitness = out.edp + kViolationPenalty *
                              static_cast<double>(
                                  strategy.validity.violations.size());
  return out;
}

}  // namespace

SearchResult ga_search(const WorkloadGraph& graph,
                       const AcceleratorConfig& config, long long budget,
                       uint64_t seed, const GaParams& params) {
  if (budget < 1) throw std::runtime_error("ga_search: budget must be >= 1");
  GenomeSpace space = make_space(graph, config);
  std::mt19937_64 rng(mix64(seed ^ 0x6a09e667f3bcc908ULL));

  SearchResult result;
  Evaluated best;
  bool have_best = false;
  auto consider = [&](const Evaluated& e) {
    bool better = !have_best || (e.feasible != best.feasible
                                     ? e.feasible
                                     : e.fitness < best.fitness);
    if (better) {
      best = e;
      have_best = true;
    }
  };
  auto record = [&]() {
    result.convergence.push_back(
        {result.evals,
         best.feasible ? best.edp : std::numeric_limits<double>::quiet_NaN()});
  };

  std::vector<Evaluated> population;
  int pop_size = std::max(2, params.population);
  for (int i = 0; i < pop_size && result.evals < budget; ++i) {
    population.push_back(
        evaluate_genome(random_genome(space, rng), space, graph, config));
    ++result.evals;
    consider(population.back());
  }
  record();

  auto tournament = [&]() -> const Evaluated& {
    std::uniform_int_distribution<size_t> pick(0, population.size() - 1);
    size_t winner = pick(rng);
    for (int i = 1; i < params.tournament; ++i) {
      size_t challenger = pick(rng);
      if (population[challenger].fitness < population[winner].fitness) {
        winner = challenger;
      }
    }
    return population[winner];
  };

  std::uniform_real_distribution<double> coin(0.0, 1.0);
  while (result.evals < budget) {
    std::vector<Evaluated> offspring;
    std::vector<size_t> order(population.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return population[a].fitness < population[b].fitness;
    });
    for (int i = 0; i < params.elites && i < static_cast<int>(order.size());
         ++i) {
      offspring.push_back(population[order[static_cast<size_t>(i)]]);
    }
    while (static_cast<int>(offspring.size()) < pop_size &&
           result.evals < budget) {
      std::vector<int> child = tournament().genome;
      if (coin(rng) < params.crossover_rate) {
        const std::vector<int>& other = tournament().genome;
        for (size_t g = 0; g < child.size(); ++g) {
          if (rng() & 1) child[g] = other[g];
        }
      }
      size_t g = 0;
      for (const NodeSlots& node : space.params.nodes) {
        for (const DivisorSlot& slot : node.slots) {
          if (coin(rng) < params.mutation_rate) {
            std::uniform_int_distribution<int> pick(
                0, static_cast<int>(slot.divisors.size()) - 1);
            child[g] = pick(rng);
          }
          ++g;
        }
      }
      for (; g < child.size(); ++g) {
        if (coin(rng) < params.mutation_rate) child[g] = 1 - child[g];
      }
      offspring.push_back(evaluate_genome(child, space, graph, config));
      ++result.evals;
      consider(offspring.back());
    }
    population = std::move(offspring);
    record();
  }

  DeploymentStrategy strategy =
      genome_to_strategy(best.genome, space, graph, config);
  result.strategy = strategy;
  result.edp = best.edp;
  result.feasible = best.feasible;
  return result;
}

SearchResult random_search(const WorkloadGraph& graph,
                           const AcceleratorConfig& config, long long budget,
                           uint64_t seed) {
  if (budget < 1) {
    throw std::runtime_error("random_search: budget must be >= 1");
  }
  GenomeSpace space = make_space(graph, config);
  std::mt19937_64 rng(mix64(seed ^ 0xbb67ae8584caa73bULL));

  SearchResult result;
  Evaluated best;
  bool have_best = false;
  long long stride = std::max<long long>(1, budget / 100);
  for (long long i = 0; i < budget; ++i) {
    Evaluated e =
        evaluate_genome(random_genome(space, rng), space, graph, config);
    ++result.evals;
    bool better = !have_best ||
                  (e.feasible != best.feasible ? e.feasible
                                               : e.fitness < best.fitness);
    if (better) {
      best = e;
      have_best = true;
    }
    if (i % stride == stride - 1 || i + 1 == budget) {
      result.convergence.push_back(
          {result.evals, best.feasible
                             ? best.edp
                             : std::numeric_limits<double>::quiet_NaN()});
    }
  }
  result.strategy = genome_to_strategy(best.genome, space, graph, config);
  result.edp = best.edp;
  result.feasible = best.feasible;
  return result;
}

SearchResult gradient_search(const WorkloadGraph& graph,
                             const AcceleratorConfig& config,
                             OptimizerConfig opt, long long budget) {
  if (budget < 1) {
    throw std::runtime_error("gradient_search: budget must be >= 1");
  }
  // Each optimizer step is budgeted as two model evaluations: the relaxed
  // forward pass plus the (memoized, quota-capped) exact scoring of the
  // discrete strategy the step visited. Long runs beat wide restarts here:
  // the annealing schedules stretch with the step count, and divisor
  // transitions stop carrying usable gradient once tau decays, so short runs
  // freeze before large spatial factors are reachable.
  constexpr long long kMinRunSteps = 2500;
  opt.restarts = static_cast<int>(std::clamp<long long>(
      budget / (2 * kMinRunSteps), 1, opt.restarts));
  opt.steps = static_cast<int>(
      std::max<long long>(1, budget / (2 * opt.restarts)));
  OptimizeResult res = optimize(graph, config, opt);

  SearchResult result;
  result.strategy = res.strategy;
  result.edp = res.edp;
  result.feasible = res.feasible;
  result.evals = static_cast<long long>(opt.steps) * opt.restarts +
                 res.discrete_evals;

  // Convergence: running minimum of the relaxed-model EDP across restarts,
  // sampled every few steps; the final point is the decoded exact EDP.
  std::vector<double> best_at_step(static_cast<size_t>(opt.steps),
                                   std::numeric_limits<double>::infinity());
  for (const TraceRow& row : res.trace) {
    if (row.step >= 0 && row.step < opt.steps &&
        std::isfinite(row.edp)) {
      size_t s = static_cast<size_t>(row.step);
      best_at_step[s] = std::min(best_at_step[s], row.edp);
    }
  }
  double running = std::numeric_limits<double>::infinity();
  int stride = std::max(1, opt.steps / 50);
  for (int s = 0; s < opt.steps; ++s) {
    running = std::min(running, best_at_step[static_cast<size_t>(s)]);
    if (s % stride == stride - 1) {
      result.convergence.push_back(
          {static_cast<long long>(s + 1) * opt.restarts * 2,
           std::isfinite(running)
               ? running
               : std::numeric_limits<double>::quiet_NaN()});
    }
  }
  result.convergence.push_back({result.evals, result.edp});
  return result;
}

RankCorrelation rank_correlation(const std::vector<double>& a,
                                 const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw std::runtime_error("rank_correlation: size mismatch");
  }
  size_t n = a.size();
  if (n < 2) {
    throw std::runtime_error("rank_correlation: need at least two samples");
  }

  RankCorrelation out;
  // Kendall tau-b.
  long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      double da = a[i] - a[j];
      double db = b[i] - b[j];
      if (da == 0 && db == 0) {
        ++ties_a;
        ++ties_b;
      } else if (da == 0) {
        ++ties_a;
      } else if (db == 0) {
        ++ties_b;
      } else if ((da > 0) == (db > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  double n0 = 0.5 * static_cast<double>(n) * (static_cast<double>(n) - 1.0);
  double denom = std::sqrt((n0 - static_cast<double>(ties_a)) *
                           (n0 - static_cast<double>(ties_b)));
  out.kendall_tau =
      denom > 0 ? static_cast<double>(concordant - discordant) / denom : 0.0;

  // Spearman rho on average ranks.
  auto ranks = [n](const std::vector<double>& x) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t i, size_t j) { return x[i] < x[j]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
      double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) +
                   1.0;
      for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> ra = ranks(a), rb = ranks(b);
  double mean = 0.5 * (static_cast<double>(n) + 1.0);
  double cov = 0, va = 0, vb = 0;
  for (size_t i = 0; i < n; ++i) {
    double xa = ra[i] - mean, xb = rb[i] - mean;
    cov += xa * xb;
    va += xa * xa;
    vb += xb * xb;
  }
  out.spearman_rho = (va > 0 && vb > 0) ? cov / std::sqrt(va * vb) : 0.0;
  return out;
}

}  // namespace fusemap
