#include <fusemap/optimizer.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

namespace fusemap {

namespace {

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string i128_to_string(__int128 v) {
  if (v == 0) return "0";
  bool neg = v < 0;
  unsigned __int128 u = neg ? -static_cast<unsigned __int128>(v) : v;
  std::string s;
  while (u > 0) {
    s.push_back(static_cast<char>('0' + static_cast<int>(u % 10)));
    u /= 10;
  }
  if (neg) s.push_back('-');
  std::reverse(s.begin(), s.end());
  return s;
}

}  // namespace

void OptimizerConfig::validate() const {
  if (steps < 1) throw std::runtime_error("optimizer config: steps must be >= 1");
  if (restarts < 1) {
    throw std::runtime_error("optimizer config: restarts must be >= 1");
  }
  if (learning_rate <= 0) {
    throw std::runtime_error("optimizer config: learning_rate must be > 0");
  }
  if (alpha <= 0) throw std::runtime_error("optimizer config: alpha must be > 0");
  if (tau_min <= 0 || tau0 < tau_min) {
    throw std::runtime_error("optimizer config: need tau0 >= tau_min > 0");
  }
  if (anneal_fraction <= 0 || anneal_fraction > 1) {
    throw std::runtime_error(
        "optimizer config: anneal_fraction must be in (0, 1]");
  }
  if (sigma_threshold <= 0 || sigma_threshold >= 1) {
    throw std::runtime_error(
        "optimizer config: sigma_threshold must be in (0, 1)");
  }
  if (lambda0 < 0 || lambda_max < lambda0) {
    throw std::runtime_error(
        "optimizer config: need lambda_max >= lambda0 >= 0");
  }
}

OptimizerConfig optimizer_config_from_json_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(
        std::string("optimizer config: JSON parse error: ") + e.what());
  }
  OptimizerConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) {
      field = j.at(key).get<std::decay_t<decltype(field)>>();
    }
  };
  get("steps", c.steps);
  get("restarts", c.restarts);
  get("learning_rate", c.learning_rate);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("epsilon", c.epsilon);
  get("seed", c.seed);
  get("alpha", c.alpha);
  get("tau0", c.tau0);
  get("tau_min", c.tau_min);
  get("anneal_fraction", c.anneal_fraction);
  get("lambda0", c.lambda0);
  get("lambda_max", c.lambda_max);
  get("sigma_threshold", c.sigma_threshold);
  c.validate();
  return c;
}

OptimizerConfig load_optimizer_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("optimizer config: cannot open file: " +
                             path.string());
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return optimizer_config_from_json_string(buf.str());
}

std::string optimizer_config_to_json_string(const OptimizerConfig& c) {
  nlohmann::json j;
  j["steps"] = c.steps;
  j["restarts"] = c.restarts;
  j["learning_rate"] = c.learning_rate;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["epsilon"] = c.epsilon;
  j["seed"] = c.seed;
  j["alpha"] = c.alpha;
  j["tau0"] = c.tau0;
  j["tau_min"] = c.tau_min;
  j["anneal_fraction"] = c.anneal_fraction;
  j["lambda0"] = c.lambda0;
  j["lambda_max"] = c.lambda_max;
  j["sigma_threshold"] = c.sigma_threshold;
  return j.dump(2);
}

double lambda_schedule(int step, int total_steps, double lambda0,
                       double lambda_max) {
  double half = 0.5 * static_cast<double>(total_steps);
  if (half <= 0) return lambda_max;
  double frac = std::min(1.0, static_cast<double>(step) / half);
  return lambda0 + frac * (lambda_max - lambda0);
}

MappingParams init_params(const WorkloadGraph& graph,
                          const AcceleratorConfig& config, uint64_t seed) {
  MappingParams params = make_mapping_params(graph, config);
  std::mt19937_64 rng(mix64(seed));
  std::uniform_real_distribution<double> jitter(-std::log(1.2), std::log(1.2));
  for (NodeSlots& node : params.nodes) {
    for (DivisorSlot& slot : node.slots) {
      if (slot.extent > 1) slot.log_t += jitter(rng);
    }
  }
  return params;
}

LossBuild build_loss(ad::Tape& tape, const MappingParams& params,
                     const WorkloadGraph& graph,
                     const AcceleratorConfig& config, SelectMode mode,
                     double alpha, double tau, double lambda, double edp0) {
  TapeCtx ctx{&tape};
  LossBuild out;
  int dram = config.dram_level();

  std::vector<NodeFactors<ad::Expr>> factors;
  for (size_t i = 0; i < graph.nodes.size(); ++i) {
    const NodeSlots& node_slots = params.nodes[i];
    std::vector<SlotBuild> builds;
    builds.reserve(node_slots.slots.size());
    for (const DivisorSlot& slot : node_slots.slots) {
      builds.push_back(build_slot(tape, slot, alpha, tau, mode));
    }

    // Three parallel factor tables: f carries the straight-through
    // selections the cost model runs on; fs carries the raw continuous T so
    // magnitude penalties stay continuously differentiable (a hard selection
    // jumping between divisors under noise would turn every hinge into a
    // cliff); fm carries the noise-free mixture the alignment penalty
    // compares, which can reach exact divisor agreement as tau anneals.
    NodeFactors<ad::Expr> f;
    f.num_levels = config.num_levels();
    f.spatial_level = config.spatial_level;
    f.temporal.assign(static_cast<size_t>(config.num_levels()) * kNumDims,
                      ctx.constant(1.0));
    f.spatial.fill(ctx.constant(1.0));
    NodeFactors<ad::Expr> fs = f;
    NodeFactors<ad::Expr> fm = f;
    std::vector<ad::Expr> spatial_continuous;
    for (size_t s = 0; s < node_slots.slots.size(); ++s) {
      const DivisorSlot& slot = node_slots.slots[s];
      if (slot.spatial) {
        f.spatial[static_cast<size_t>(slot.dim)] = builds[s].factor;
        fs.spatial[static_cast<size_t>(slot.dim)] = builds[s].t_continuous;
        fm.spatial[static_cast<size_t>(slot.dim)] = builds[s].mixture;
        spatial_continuous.push_back(builds[s].t_continuous);
      } else {
        size_t at = static_cast<size_t>(slot.level) * kNumDims +
                    static_cast<size_t>(slot.dim);
        f.temporal[at] = builds[s].factor;
        fs.temporal[at] = builds[s].t_continuous;
        fm.temporal[at] = builds[s].mixture;
      }
      out.view.continuous_all.push_back(builds[s].t_continuous);
    }

    // Derived DRAM factor: the exact coverage quotient. It may dip below 1
    // when inner factors over-cover; p_valid sees the smooth quotient via
    // continuous_all and steers it back toward >= 1 as lambda ramps, so
    // over-coverage is a soft violation here rather than a hard padding
    // wall. Decode snaps it to ceil, at which point any residual padding
    // becomes real traffic.
    f.ops = ctx.constant(1.0);
    for (Dim d : kAllDims) {
      double extent =
          static_cast<double>(graph.nodes[i].dims.extent(d));
      ad::Expr inner = ctx.constant(1.0);
      ad::Expr inner_smooth = ctx.constant(1.0);
      ad::Expr inner_mixed = ctx.constant(1.0);
      for (int m = 0; m < dram; ++m) {
        inner = inner * f.t(m, d);
        inner_smooth = inner_smooth * fs.t(m, d);
        inner_mixed = inner_mixed * fm.t(m, d);
      }
      inner = inner * f.s(d);
      inner_smooth = inner_smooth * fs.s(d);
      inner_mixed = inner_mixed * fm.s(d);
      ad::Expr derived = ctx.constant(extent) / inner;
      ad::Expr derived_smooth = ctx.constant(extent) / inner_smooth;
      size_t at =
          static_cast<size_t>(dram) * kNumDims + static_cast<size_t>(d);
      f.temporal[at] = derived;
      fs.temporal[at] = derived_smooth;
      fm.temporal[at] = ctx.constant(extent) / inner_mixed;
      f.ops = f.ops * inner * derived;
      out.view.continuous_all.push_back(derived_smooth);
    }
    fs.ops = f.ops;
    fm.ops = f.ops;

    out.slots.push_back(std::move(builds));
    out.view.continuous_spatial.push_back(std::move(spatial_continuous));
    out.view.smooth.push_back(std::move(fs));
    out.view.mixed.push_back(std::move(fm));
    factors.push_back(std::move(f));
  }

  std::vector<std::tuple<int, int, ad::Expr>> fusion_triples;
  for (const FusionSlot& slot : params.fusion) {
    FusionBuild fb = build_fusion(tape, slot);
    out.view.sigma.push_back(fb.sigma);
    fusion_triples.emplace_back(slot.producer, slot.consumer, fb.sigma);
    out.fusion.push_back(fb);
  }

  out.view.factors = std::move(factors);
  out.cost = graph_cost(graph, out.view.factors, fusion_triples, config, ctx);
  std::vector<FusionChain> chains = fusion_chains(graph, params);
  out.loss = augmented_loss(out.cost, out.view, chains, params.fusion, config,
                            lambda, edp0, ctx);
  return out;
}

NodeFactors<double> factors_from_mapping(const NodeMapping& mapping,
                                         const AcceleratorConfig& config) {
  NodeFactors<double> f;
  f.num_levels = config.num_levels();
  f.spatial_level = config.spatial_level;
  f.temporal.resize(static_cast<size_t>(f.num_levels) * kNumDims, 1.0);
  f.spatial.fill(1.0);
  f.ops = 1.0;
  for (Dim d : kAllDims) {
    for (int m = 0; m < f.num_levels; ++m) {
      double v = static_cast<double>(mapping.t(m, d));
      f.temporal[static_cast<size_t>(m) * kNumDims + static_cast<size_t>(d)] =
          v;
      f.ops *= v;
    }
    double sv = static_cast<double>(mapping.s(d));
    f.spatial[static_cast<size_t>(d)] = sv;
    f.ops *= sv;
  }
  return f;
}

RelaxedView<double> view_from_strategy(const DeploymentStrategy& strategy,
                                       const AcceleratorConfig& config) {
  RelaxedView<double> view;
  int dram = config.dram_level();
  for (const NodeMapping& mapping : strategy.nodes) {
    view.factors.push_back(factors_from_mapping(mapping, config));
    view.smooth.push_back(view.factors.back());
    view.mixed.push_back(view.factors.back());
    // Mirror the free-slot order: temporal below DRAM, then spatial dims.
    for (int m = 0; m < dram; ++m) {
      for (Dim d : kAllDims) {
        view.continuous_all.push_back(static_cast<double>(mapping.t(m, d)));
      }
    }
    std::vector<double> spatial;
    for (Dim d : config.spatial_dims) {
      double v = static_cast<double>(mapping.s(d));
      view.continuous_all.push_back(v);
      spatial.push_back(v);
    }
    // Decoded DRAM factors are integers >= 1, so these terms are always
    // penalty-free; they keep the view aligned with the loss tape layout.
    for (Dim d : kAllDims) {
      view.continuous_all.push_back(static_cast<double>(mapping.t(dram, d)));
    }
    view.continuous_spatial.push_back(std::move(spatial));
  }
  for (bool fused : strategy.fused) view.sigma.push_back(fused ? 1.0 : 0.0);
  return view;
}

CostBreakdown<double> evaluate_strategy(const DeploymentStrategy& strategy,
                                        const WorkloadGraph& graph,
                                        const AcceleratorConfig& config) {
  DoubleCtx ctx;
  std::vector<NodeFactors<double>> factors;
  factors.reserve(strategy.nodes.size());
  for (const NodeMapping& m : strategy.nodes) {
    factors.push_back(factors_from_mapping(m, config));
  }
  std::vector<std::tuple<int, int, double>> fusion;
  for (size_t e = 0; e < strategy.fusion_edges.size(); ++e) {
    fusion.emplace_back(strategy.fusion_edges[e].first,
                        strategy.fusion_edges[e].second,
                        strategy.fused[e] ? 1.0 : 0.0);
  }
  return graph_cost(graph, factors, fusion, config, ctx);
}

// Per-parameter gradient clip. Penalty gradients at full lambda are a few
// hundred; anything far beyond that is a relaxation artifact, not signal.
constexpr double kGradClip = 10.0;

StepStats opt_step(MappingParams& params, AdamState& adam,
                   const WorkloadGraph& graph, const AcceleratorConfig& config,
                   const OptimizerConfig& opt, uint64_t noise_seed,
                   int step_index, double edp0) {
  resample_noise(params, noise_seed, step_index);
  params.step = step_index;
  params.tau = anneal_tau(step_index, opt.steps, opt.tau0, opt.tau_min,
                          opt.anneal_fraction);
  double lambda =
      lambda_schedule(step_index, opt.steps, opt.lambda0, opt.lambda_max);

  ad::Tape tape;
  LossBuild build = build_loss(tape, params, graph, config, SelectMode::Hard,
                               opt.alpha, params.tau, lambda, edp0);

  StepStats stats;
  stats.tau = params.tau;
  stats.lambda = lambda;
  stats.loss = build.loss.loss.value();
  stats.edp = build.cost.edp.value();
  stats.p_map = build.loss.p_map.value();
  stats.p_mem = build.loss.p_mem.value();
  stats.p_align = build.loss.p_align.value();
  if (!std::isfinite(stats.loss)) {
    stats.finite = false;
    return stats;
  }

  ad::GradientMap grads = tape.backward(build.loss.loss);

  // Flatten raw parameters: node slots in order, then fusion raws.
  std::vector<double*> raw;
  std::vector<double> grad;
  for (size_t i = 0; i < params.nodes.size(); ++i) {
    for (size_t s = 0; s < params.nodes[i].slots.size(); ++s) {
      raw.push_back(&params.nodes[i].slots[s].log_t);
      grad.push_back(grads.at(build.slots[i][s].log_t_param));
    }
  }
  for (size_t e = 0; e < params.fusion.size(); ++e) {
    raw.push_back(&params.fusion[e].raw);
    grad.push_back(grads.at(build.fusion[e].raw_param));
  }
  for (double& g : grad) {
    if (!std::isfinite(g)) {
      stats.finite = false;
      return stats;
    }
    // Clip before the moment update: one spiked step through a near-tie
    // softmax would otherwise poison the second moment and freeze the
    // parameter for the rest of the run.
    g = std::clamp(g, -kGradClip, kGradClip);
  }

  if (adam.m.empty()) {
    adam.m.assign(raw.size(), 0.0);
    adam.v.assign(raw.size(), 0.0);
  }
  adam.t += 1;
  double bc1 = 1.0 - std::pow(opt.beta1, adam.t);
  double bc2 = 1.0 - std::pow(opt.beta2, adam.t);
  size_t num_slot_raws = raw.size() - params.fusion.size();
  for (size_t k = 0; k < raw.size(); ++k) {
    adam.m[k] = opt.beta1 * adam.m[k] + (1.0 - opt.beta1) * grad[k];
    adam.v[k] = opt.beta2 * adam.v[k] + (1.0 - opt.beta2) * grad[k] * grad[k];
    double mhat = adam.m[k] / bc1;
    double vhat = adam.v[k] / bc2;
    *raw[k] -= opt.learning_rate * mhat / (std::sqrt(vhat) + opt.epsilon);
    if (k < num_slot_raws) {
      // Numeric guard: keep exp() well inside range.
      *raw[k] = std::clamp(*raw[k], -30.0, 30.0);
    } else {
      // Fusion raws saturate the logistic: past a few units the sigma
      // gradient underflows and the decision can never recover, even after
      // the tile shapes align and fusion becomes profitable. The bound keeps
      // sigma responsive in both directions and keeps the alignment pull on
      // the tile raws (weighted by sigma) alive while misaligned.
      *raw[k] = std::clamp(*raw[k], -2.0, 2.0);
    }
  }
  return stats;
}

DeploymentStrategy decode(const MappingParams& params,
                          const WorkloadGraph& graph,
                          const AcceleratorConfig& config,
                          const OptimizerConfig& opt) {
  DeploymentStrategy strategy;
  int dram = config.dram_level();
  for (size_t i = 0; i < graph.nodes.size(); ++i) {
    NodeMapping mapping;
    mapping.num_levels = config.num_levels();
    mapping.temporal.assign(
        static_cast<size_t>(config.num_levels()) * kNumDims, 1);
    mapping.spatial.fill(1);
    for (const DivisorSlot& slot : params.nodes[i].slots) {
      long long factor = argmax_divisor(slot, opt.alpha);
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
      mapping.set_t(dram, d, std::max<long long>(1, (extent + inner - 1) / inner));
    }
    strategy.nodes.push_back(std::move(mapping));
  }

  for (const FusionSlot& slot : params.fusion) {
    strategy.fusion_edges.emplace_back(slot.producer, slot.consumer);
    strategy.fused.push_back(logistic(slot.raw) > opt.sigma_threshold);
  }

  strategy.groups =
      fusion_groups(graph, strategy.fusion_edges, strategy.fused);
  strategy.validity = validate_strategy(strategy, graph, config);
  strategy.feasible = strategy.validity.clean();
  return strategy;
}

std::vector<std::vector<int>> fusion_groups(
    const WorkloadGraph& graph,
    const std::vector<std::pair<int, int>>& fusion_edges,
    const std::vector<bool>& fused) {
  // Eligible edges form vertex-disjoint chains, so fused runs are chains too.
  std::vector<int> next(graph.nodes.size(), -1);
  std::vector<int> prev(graph.nodes.size(), -1);
  for (size_t e = 0; e < fusion_edges.size(); ++e) {
    if (!fused[e]) continue;
    next[fusion_edges[e].first] = fusion_edges[e].second;
    prev[fusion_edges[e].second] = fusion_edges[e].first;
  }
  std::vector<std::vector<int>> groups;
  for (size_t v = 0; v < graph.nodes.size(); ++v) {
    if (prev[v] >= 0) continue;
    std::vector<int> group;
    for (int u = static_cast<int>(v); u >= 0; u = next[u]) group.push_back(u);
    groups.push_back(std::move(group));
  }
  std::sort(groups.begin(), groups.end(),
            [](const std::vector<int>& a, const std::vector<int>& b) {
              return a.front() < b.front();
            });
  return groups;
}

__int128 mapping_dim_extent(const NodeMapping& mapping, Dim d, int level,
                            int spatial_level) {
  __int128 acc = 1;
  for (int k = 0; k <= level; ++k) acc *= mapping.t(k, d);
  if (spatial_level <= level) acc *= mapping.s(d);
  return acc;
}

__int128 mapping_footprint_words(const NodeMapping& mapping, int level,
                                 const AcceleratorConfig& config) {
  __int128 acc = 0;
  for (Role role : {Role::Input, Role::Weight}) {
    if (!config.level(level).holds(role)) continue;
    __int128 tile = 1;
    for (Dim d : tensor_dims(role)) {
      tile *= mapping_dim_extent(mapping, d, level, config.spatial_level);
    }
    acc += tile;
  }
  if (config.include_output_residency &&
      config.level(level).holds(Role::Output)) {
    __int128 tile = 1;
    for (Dim d : tensor_dims(Role::Output)) {
      tile *= mapping_dim_extent(mapping, d, level, config.spatial_level);
    }
    acc += tile;
  }
  return acc;
}

ValidationReport validate_strategy(const DeploymentStrategy& strategy,
                                   const WorkloadGraph& graph,
                                   const AcceleratorConfig& config) {
  ValidationReport report;
  auto flag = [&](std::string msg) { report.violations.push_back(std::move(msg)); };

  if (strategy.nodes.size() != graph.nodes.size()) {
    flag("structure: strategy has " + std::to_string(strategy.nodes.size()) +
         " node mappings for " + std::to_string(graph.nodes.size()) +
         " graph nodes");
    return report;
  }
  int dram = config.dram_level();
  bool spatial_dim[kNumDims] = {};
  for (Dim d : config.spatial_dims) spatial_dim[static_cast<int>(d)] = true;

  for (size_t i = 0; i < strategy.nodes.size(); ++i) {
    const NodeMapping& m = strategy.nodes[i];
    const std::string& id = graph.nodes[i].id;
    if (m.num_levels != config.num_levels()) {
      flag("structure: node '" + id + "' mapping has " +
           std::to_string(m.num_levels) + " levels, config has " +
           std::to_string(config.num_levels()));
      continue;
    }
    for (Dim d : kAllDims) {
      long long extent = graph.nodes[i].dims.extent(d);
      __int128 inner = 1;
      for (int lvl = 0; lvl < dram; ++lvl) {
        long long f = m.t(lvl, d);
        if (f < 1) {
          flag("factor: node '" + id + "' dimension " + dim_name(d) +
               ": non-positive temporal factor at L" + std::to_string(lvl));
        } else if (extent % f != 0) {
          flag("factor: node '" + id + "' dimension " + dim_name(d) +
               ": temporal factor " + std::to_string(f) + " at L" +
               std::to_string(lvl) + " does not divide extent " +
               std::to_string(extent));
        }
        inner *= std::max<long long>(1, f);
      }
      long long s = m.s(d);
      if (s < 1) {
        flag("factor: node '" + id + "' dimension " + dim_name(d) +
             ": non-positive spatial factor");
      } else {
        if (extent % s != 0) {
          flag("factor: node '" + id + "' dimension " + dim_name(d) +
               ": spatial factor " + std::to_string(s) +
               " does not divide extent " + std::to_string(extent));
        }
        if (s != 1 && !spatial_dim[static_cast<int>(d)]) {
          flag("factor: node '" + id + "' dimension " + dim_name(d) +
               ": spatial factor " + std::to_string(s) +
               " on a non-spatial dimension");
        }
        inner *= s;
      }
      // ceil(extent / inner), robust to inner exceeding the extent
      long long derived =
          (inner >= extent)
              ? 1
              : (extent + static_cast<long long>(inner) - 1) /
                    static_cast<long long>(inner);
      if (m.t(dram, d) != derived) {
        flag("coverage: node '" + id + "' dimension " + dim_name(d) +
             ": DRAM factor " + std::to_string(m.t(dram, d)) +
             " is not the coverage quotient " + std::to_string(derived));
      }
      __int128 total = inner * m.t(dram, d);
      if (total < extent) {
        flag("coverage: node '" + id + "' dimension " + dim_name(d) +
             ": factor product " + i128_to_string(total) + " < extent " +
             std::to_string(extent));
      }
    }
    __int128 spatial_prod = 1;
    for (Dim d : kAllDims) spatial_prod *= m.s(d);
    if (spatial_prod > config.pe_count) {
      flag("PE bound: node '" + id + "': spatial product " +
           i128_to_string(spatial_prod) + " > " +
           std::to_string(config.pe_count));
    }
  }

  // Fusion edges must be the graph's eligible edges.
  std::vector<std::pair<int, int>> eligible = eligible_edges(graph);
  if (strategy.fusion_edges != eligible) {
    flag("structure: fusion edges do not match the graph's eligible edges");
  }
  if (strategy.fused.size() != strategy.fusion_edges.size()) {
    flag("structure: fused flag count does not match fusion edge count");
    return report;
  }

  // Capacity per group at every bounded on-chip level.
  for (const std::vector<int>& group : strategy.groups) {
    for (int lvl = 0; lvl < dram; ++lvl) {
      if (!config.level(lvl).capacity_words) continue;
      __int128 req = 0;
      for (int v : group) {
        req += mapping_footprint_words(strategy.nodes[v], lvl, config);
      }
      if (req > *config.level(lvl).capacity_words) {
        std::string members;
        for (int v : group) {
          if (!members.empty()) members += ",";
          members += graph.nodes[v].id;
        }
        flag("capacity: group [" + members + "] at L" + std::to_string(lvl) +
             ": requires " + i128_to_string(req) + " words > " +
             std::to_string(*config.level(lvl).capacity_words));
      }
    }
  }

  // Tile alignment across fused pairs.
  int out_level = innermost_resident_level(config, Role::Output);
  int in_level = staging_level(config, Role::Input);
  for (size_t e = 0; e < strategy.fusion_edges.size(); ++e) {
    if (!strategy.fused[e]) continue;
    auto [p, c] = strategy.fusion_edges[e];
    __int128 op = mapping_dim_extent(strategy.nodes[p], Dim::P, out_level,
                                      config.spatial_level);
    __int128 oq = mapping_dim_extent(strategy.nodes[p], Dim::Q, out_level,
                                      config.spatial_level);
    __int128 ok = mapping_dim_extent(strategy.nodes[p], Dim::K, out_level,
                                      config.spatial_level);
    __int128 ip = mapping_dim_extent(strategy.nodes[c], Dim::P, in_level,
                                      config.spatial_level);
    __int128 iq = mapping_dim_extent(strategy.nodes[c], Dim::Q, in_level,
                                      config.spatial_level);
    __int128 ic = mapping_dim_extent(strategy.nodes[c], Dim::C, in_level,
                                      config.spatial_level);
    if (op != ip || oq != iq || ok != ic) {
      flag("alignment: edge " + graph.nodes[p].id + "->" + graph.nodes[c].id +
           ": output tile (" + i128_to_string(op) + "," + i128_to_string(oq) +
           "," + i128_to_string(ok) + ") != input tile (" +
           i128_to_string(ip) + "," + i128_to_string(iq) + "," +
           i128_to_string(ic) + ")");
    }
  }
  return report;
}

namespace {

struct RestartOutcome {
  DeploymentStrategy strategy;
  double edp = std::numeric_limits<double>::quiet_NaN();
  bool feasible = false;
  bool aborted = false;
  long long discrete_evals = 0;
  std::vector<TraceRow> trace;
};

std::string strategy_signature(const DeploymentStrategy& s) {
  std::string sig;
  for (const NodeMapping& m : s.nodes) {
    for (int lvl = 0; lvl < m.num_levels; ++lvl)
      for (Dim d : kAllDims)
        sig += std::to_string(m.t(lvl, d)) + ",";
    for (Dim d : kAllDims) sig += std::to_string(m.s(d)) + ",";
  }
  for (bool f : s.fused) sig += f ? "F" : "u";
  return sig;
}

// The discrete strategy the straight-through forward actually evaluated at
// the current step: argmax over noised logits, so noise-driven selection
// flips are preserved instead of being rounded back to the quiet argmax.
DeploymentStrategy noisy_decode(const MappingParams& params,
                                const WorkloadGraph& graph,
                                const AcceleratorConfig& config,
                                const OptimizerConfig& opt) {
  DeploymentStrategy strategy;
  int dram = config.dram_level();
  for (size_t i = 0; i < graph.nodes.size(); ++i) {
    NodeMapping mapping;
    mapping.num_levels = config.num_levels();
    mapping.temporal.assign(
        static_cast<size_t>(config.num_levels()) * kNumDims, 1);
    mapping.spatial.fill(1);
    for (const DivisorSlot& slot : params.nodes[i].slots) {
      double t = std::exp(slot.log_t);
      size_t best = 0;
      double best_score = -std::numeric_limits<double>::infinity();
      for (size_t j = 0; j < slot.divisors.size(); ++j) {
        double gap = t - static_cast<double>(slot.divisors[j]);
        double score = -opt.alpha * gap * gap;
        if (j < slot.noise.size()) score += slot.noise[j];
        if (score >= best_score) {
          best_score = score;
          best = j;
        }
      }
      long long factor = slot.divisors[best];
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
                    std::max<long long>(1, (extent + inner - 1) / inner));
    }
    strategy.nodes.push_back(std::move(mapping));
  }
  for (const FusionSlot& slot : params.fusion) {
    strategy.fusion_edges.emplace_back(slot.producer, slot.consumer);
    strategy.fused.push_back(logistic(slot.raw) > opt.sigma_threshold);
  }
  strategy.groups =
      fusion_groups(graph, strategy.fusion_edges, strategy.fused);
  strategy.validity = validate_strategy(strategy, graph, config);
  strategy.feasible = strategy.validity.clean();
  return strategy;
}

RestartOutcome run_restart(const WorkloadGraph& graph,
                           const AcceleratorConfig& config,
                           const OptimizerConfig& opt, int restart) {
  RestartOutcome outcome;
  uint64_t sub_seed = mix64(opt.seed ^ mix64(static_cast<uint64_t>(restart) +
                                             0x5851f42d4c957f2dULL));
  MappingParams params = init_params(graph, config, sub_seed);

  // Normalization constant: EDP of the initial point, noise-free.
  double edp0 = 1.0;
  {
    ad::Tape tape;
    LossBuild probe = build_loss(tape, params, graph, config, SelectMode::Hard,
                                 opt.alpha, opt.tau0, 0.0, 1.0);
    double v = probe.cost.edp.value();
    if (std::isfinite(v) && v > 0) edp0 = v;
  }

  // The loss surface is explored under annealing noise, so the lowest point a
  // run visits is often not its final point, and the per-step relaxed EDP is
  // a biased stand-in for the discrete cost (fractional DRAM quotients, noise
  // flips). Score the discrete strategy each step actually selected (and its
  // quiet argmax twin) with the exact model, memoized by integer signature so
  // repeat visits cost nothing, and keep the best. Exact evaluations are
  // charged against the search budget by the caller, which sizes `steps`
  // accordingly; the quota caps them at one per step.
  AdamState adam;
  std::unordered_map<std::string, double> exact_memo;
  long long eval_quota = opt.steps;
  double best_cand_edp = std::numeric_limits<double>::infinity();
  bool best_cand_feasible = false;
  DeploymentStrategy best_cand;
  bool have_cand = false;
  auto consider = [&](DeploymentStrategy& cand) {
    std::string sig = strategy_signature(cand);
    auto it = exact_memo.find(sig);
    double cand_edp;
    if (it != exact_memo.end()) {
      cand_edp = it->second;
    } else {
      if (eval_quota <= 0) return;
      --eval_quota;
      ++outcome.discrete_evals;
      cand_edp = evaluate_strategy(cand, graph, config).edp;
      exact_memo.emplace(std::move(sig), cand_edp);
    }
    bool better = !have_cand || (cand.feasible != best_cand_feasible
                                     ? cand.feasible
                                     : cand_edp < best_cand_edp);
    if (better) {
      best_cand = std::move(cand);
      best_cand_edp = cand_edp;
      best_cand_feasible = best_cand.feasible;
      have_cand = true;
    }
  };
  for (int step = 0; step < opt.steps; ++step) {
    resample_noise(params, sub_seed, step);
    DeploymentStrategy at_step = noisy_decode(params, graph, config, opt);
    DeploymentStrategy quiet_step = decode(params, graph, config, opt);
    StepStats stats =
        opt_step(params, adam, graph, config, opt, sub_seed, step, edp0);
    TraceRow row;
    row.restart = restart;
    row.step = step;
    row.edp = stats.edp;
    row.p_map = stats.p_map;
    row.p_mem = stats.p_mem;
    row.p_align = stats.p_align;
    row.tau = stats.tau;
    row.lambda = stats.lambda;
    outcome.trace.push_back(row);
    if (!stats.finite) {
      outcome.aborted = true;
      return outcome;
    }
    consider(at_step);
    consider(quiet_step);
  }

  zero_noise(params);
  outcome.strategy = decode(params, graph, config, opt);
  outcome.feasible = outcome.strategy.feasible;
  outcome.edp = evaluate_strategy(outcome.strategy, graph, config).edp;
  ++outcome.discrete_evals;
  if (have_cand) {
    bool better = (best_cand_feasible != outcome.feasible)
                      ? best_cand_feasible
                      : best_cand_edp < outcome.edp;
    if (better) {
      outcome.strategy = std::move(best_cand);
      outcome.feasible = best_cand_feasible;
      outcome.edp = best_cand_edp;
    }
  }
  return outcome;
}

}  // namespace

OptimizeResult optimize(const WorkloadGraph& graph,
                        const AcceleratorConfig& config,
                        const OptimizerConfig& opt) {
  opt.validate();
  config.validate();

  std::vector<std::future<RestartOutcome>> futures;
  futures.reserve(opt.restarts);
  for (int r = 0; r < opt.restarts; ++r) {
    futures.push_back(std::async(std::launch::async, run_restart,
                                 std::cref(graph), std::cref(config),
                                 std::cref(opt), r));
  }
  std::vector<RestartOutcome> outcomes;
  outcomes.reserve(opt.restarts);
  for (auto& f : futures) outcomes.push_back(f.get());

  OptimizeResult result;
  int best = -1;
  bool best_feasible = false;
  for (int r = 0; r < opt.restarts; ++r) {
    const RestartOutcome& o = outcomes[r];
    for (const TraceRow& row : o.trace) result.trace.push_back(row);
    result.restart_edp.push_back(o.edp);
    result.restart_feasible.push_back(o.feasible);
    result.discrete_evals += o.discrete_evals;
    if (o.aborted) continue;
    bool better;
    if (best < 0) {
      better = true;
    } else if (o.feasible != best_feasible) {
      better = o.feasible;
    } else {
      better = o.edp < outcomes[best].edp;
    }
    if (better) {
      best = r;
      best_feasible = o.feasible;
    }
  }
  if (best < 0) {
    throw std::runtime_error(
        "optimize: every restart aborted with non-finite loss");
  }
  result.strategy = outcomes[best].strategy;
  result.feasible = outcomes[best].feasible;
  result.edp = outcomes[best].edp;
  result.best_restart = best;
  result.cost = evaluate_strategy(result.strategy, graph, config);
  return result;
}

std::string strategy_to_json_string(const DeploymentStrategy& strategy,
                                    const WorkloadGraph& graph) {
  nlohmann::json j;
  j["nodes"] = nlohmann::json::array();
  for (size_t i = 0; i < strategy.nodes.size(); ++i) {
    const NodeMapping& m = strategy.nodes[i];
    nlohmann::json jn;
    jn["id"] = graph.nodes[i].id;
    jn["temporal"] = nlohmann::json::array();
    for (int lvl = 0; lvl < m.num_levels; ++lvl) {
      nlohmann::json jl;
      jl["level"] = lvl;
      for (Dim d : kAllDims) jl["factors"][dim_name(d)] = m.t(lvl, d);
      jn["temporal"].push_back(std::move(jl));
    }
    for (Dim d : kAllDims) jn["spatial"][dim_name(d)] = m.s(d);
    j["nodes"].push_back(std::move(jn));
  }
  j["fusion"] = nlohmann::json::array();
  for (size_t e = 0; e < strategy.fusion_edges.size(); ++e) {
    j["fusion"].push_back(
        {{"producer", graph.nodes[strategy.fusion_edges[e].first].id},
         {"consumer", graph.nodes[strategy.fusion_edges[e].second].id},
         {"fused", static_cast<bool>(strategy.fused[e])}});
  }
  j["groups"] = nlohmann::json::array();
  for (const std::vector<int>& group : strategy.groups) {
    nlohmann::json jg = nlohmann::json::array();
    for (int v : group) jg.push_back(graph.nodes[v].id);
    j["groups"].push_back(std::move(jg));
  }
  j["feasible"] = strategy.feasible;
  j["violations"] = strategy.validity.violations;
  return j.dump(2);
}

DeploymentStrategy strategy_from_json_string(const std::string& text,
                                             const WorkloadGraph& graph) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("strategy: JSON parse error: ") +
                             e.what());
  }
  DeploymentStrategy strategy;
  strategy.nodes.resize(graph.nodes.size());
  for (const auto& jn : j.at("nodes")) {
    int idx = graph.node_index(jn.at("id").get<std::string>());
    if (idx < 0) {
      throw std::runtime_error("strategy: unknown node '" +
                               jn.at("id").get<std::string>() + "'");
    }
    NodeMapping m;
    const auto& jt = jn.at("temporal");
    m.num_levels = static_cast<int>(jt.size());
    m.temporal.assign(static_cast<size_t>(m.num_levels) * kNumDims, 1);
    m.spatial.fill(1);
    for (const auto& jl : jt) {
      int lvl = jl.at("level").get<int>();
      for (Dim d : kAllDims) {
        m.set_t(lvl, d, jl.at("factors").at(dim_name(d)).get<long long>());
      }
    }
    for (Dim d : kAllDims) {
      m.set_s(d, jn.at("spatial").at(dim_name(d)).get<long long>());
    }
    strategy.nodes[idx] = std::move(m);
  }
  for (const auto& jf : j.at("fusion")) {
    int p = graph.node_index(jf.at("producer").get<std::string>());
    int c = graph.node_index(jf.at("consumer").get<std::string>());
    strategy.fusion_edges.emplace_back(p, c);
    strategy.fused.push_back(jf.at("fused").get<bool>());
  }
  for (const auto& jg : j.at("groups")) {
    std::vector<int> group;
    for (const auto& jid : jg) {
      group.push_back(graph.node_index(jid.get<std::string>()));
    }
    strategy.groups.push_back(std::move(group));
  }
  strategy.feasible = j.value("feasible", false);
  if (j.contains("violations")) {
    for (const auto& jv : j.at("violations")) {
      strategy.validity.violations.push_back(jv.get<std::string>());
    }
  }
  return strategy;
}

void write_trace_csv(const std::vector<TraceRow>& trace,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("trace: cannot open file for writing: " +
                             path.string());
  }
  out << "restart,step,edp,p_map,p_mem,p_align,tau,lambda\n";
  out.precision(17);
  for (const TraceRow& row : trace) {
    out << row.restart << ',' << row.step << ',' << row.edp << ','
        << row.p_map << ',' << row.p_mem << ',' << row.p_align << ','
        << row.tau << ',' << row.lambda << '\n';
  }
}

}  // namespace fusemap
