#include <fusemap/relax.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace fusemap {

std::vector<long long> divisors_of(long long n) {
  if (n < 1) throw std::runtime_error("divisors_of: n must be positive");
  std::vector<long long> lo, hi;
  for (long long d = 1; d * d <= n; ++d) {
    if (n % d == 0) {
      lo.push_back(d);
      if (d != n / d) hi.push_back(n / d);
    }
  }
  lo.insert(lo.end(), hi.rbegin(), hi.rend());
  return lo;
}

std::vector<std::pair<int, int>> eligible_edges(const WorkloadGraph& graph) {
  std::vector<std::pair<int, int>> out;
  for (const auto& [src, dst] : graph.edges) {
    int p = graph.node_index(src);
    int c = graph.node_index(dst);
    if (graph.consumers(p).size() == 1 && graph.producers(c).size() == 1) {
      out.emplace_back(p, c);
    }
  }
  return out;
}

std::vector<FusionChain> fusion_chains(const WorkloadGraph& graph,
                                       const MappingParams& params) {
  // Eligible edges give every node at most one eligible successor and one
  // eligible predecessor, so they partition into simple chains.
  size_t n = graph.nodes.size();
  std::vector<int> next_slot(n, -1), prev_slot(n, -1);
  for (size_t f = 0; f < params.fusion.size(); ++f) {
    next_slot[params.fusion[f].producer] = static_cast<int>(f);
    prev_slot[params.fusion[f].consumer] = static_cast<int>(f);
  }
  std::vector<FusionChain> chains;
  for (size_t i = 0; i < n; ++i) {
    if (prev_slot[i] >= 0 || next_slot[i] < 0) continue;  // not a chain head
    FusionChain chain;
    int node = static_cast<int>(i);
    chain.nodes.push_back(node);
    while (next_slot[node] >= 0) {
      int f = next_slot[node];
      chain.fusion_slots.push_back(f);
      node = params.fusion[f].consumer;
      chain.nodes.push_back(node);
    }
    chains.push_back(std::move(chain));
  }
  return chains;
}

MappingParams make_mapping_params(const WorkloadGraph& graph,
                                  const AcceleratorConfig& config) {
  MappingParams params;
  int dram = config.dram_level();
  for (const LayerNode& node : graph.nodes) {
    NodeSlots slots;
    // Free slots per dimension: temporal at every level below DRAM plus a
    // spatial slot for spatial dimensions.
    std::array<int, kNumDims> free_count{};
    for (Dim d : kAllDims) free_count[static_cast<int>(d)] = dram;
    for (Dim d : config.spatial_dims) ++free_count[static_cast<int>(d)];

    auto make_slot = [&](Dim d, int level, bool spatial) {
      DivisorSlot s;
      s.dim = d;
      s.level = level;
      s.spatial = spatial;
      s.extent = node.dims.extent(d);
      s.divisors = divisors_of(s.extent);
      s.log_t = std::log(static_cast<double>(s.extent)) /
                static_cast<double>(free_count[static_cast<int>(d)]);
      s.noise.assign(s.divisors.size(), 0.0);
      return s;
    };
    for (int m = 0; m < dram; ++m) {
      for (Dim d : kAllDims) slots.slots.push_back(make_slot(d, m, false));
    }
    for (Dim d : config.spatial_dims) {
      slots.slots.push_back(make_slot(d, config.spatial_level, true));
    }
    params.nodes.push_back(std::move(slots));
  }
  for (auto [p, c] : eligible_edges(graph)) {
    FusionSlot f;
    f.producer = p;
    f.consumer = c;
    f.raw = 0.0;
    params.fusion.push_back(f);
  }
  return params;
}

double anneal_tau(int step, int total_steps, double tau0, double tau_min,
                  double anneal_fraction) {
  if (step < 0) throw std::runtime_error("anneal_tau: negative step");
  double horizon = anneal_fraction * static_cast<double>(total_steps);
  if (horizon <= 0.0) return tau_min;
  double kappa = std::log(tau0 / tau_min) / horizon;
  return std::max(tau_min, tau0 * std::exp(-kappa * static_cast<double>(step)));
}

namespace {

uint64_t mix64(uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double uniform_open(std::mt19937_64& rng) {
  // (0,1): 53 random bits shifted into the mantissa, offset by half an ulp.
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

void resample_noise(MappingParams& params, uint64_t seed, int step) {
  std::mt19937_64 rng(mix64(seed ^ mix64(static_cast<uint64_t>(step))));
  for (NodeSlots& node : params.nodes) {
    for (DivisorSlot& slot : node.slots) {
      for (double& g : slot.noise) {
        g = -std::log(-std::log(uniform_open(rng)));
      }
    }
  }
}

void zero_noise(MappingParams& params) {
  for (NodeSlots& node : params.nodes) {
    for (DivisorSlot& slot : node.slots) {
      std::fill(slot.noise.begin(), slot.noise.end(), 0.0);
    }
  }
}

std::vector<double> divisor_logits(double t,
                                   const std::vector<long long>& divisors,
                                   double alpha) {
  std::vector<double> logits(divisors.size());
  for (size_t j = 0; j < divisors.size(); ++j) {
    double gap = t - static_cast<double>(divisors[j]);
    logits[j] = -alpha * gap * gap;
  }
  return logits;
}

std::vector<double> gumbel_softmax(const std::vector<double>& logits,
                                   const std::vector<double>& noise,
                                   double tau) {
  if (logits.size() != noise.size()) {
    throw std::runtime_error("gumbel_softmax: noise length mismatch");
  }
  if (tau <= 0.0) throw std::runtime_error("gumbel_softmax: tau must be > 0");
  std::vector<double> z(logits.size());
  double zmax = -std::numeric_limits<double>::infinity();
  for (size_t j = 0; j < logits.size(); ++j) {
    z[j] = (logits[j] + noise[j]) / tau;
    zmax = std::max(zmax, z[j]);
  }
  double total = 0.0;
  for (double& v : z) {
    v = std::exp(v - zmax);
    total += v;
  }
  for (double& v : z) v /= total;
  return z;
}

double expected_divisor(const std::vector<double>& probs,
                        const std::vector<long long>& divisors) {
  double acc = 0.0;
  for (size_t j = 0; j < probs.size(); ++j) {
    acc += probs[j] * static_cast<double>(divisors[j]);
  }
  return acc;
}

long long argmax_divisor(const DivisorSlot& slot, double alpha) {
  double t = std::exp(slot.log_t);
  std::vector<double> logits = divisor_logits(t, slot.divisors, alpha);
  size_t best = 0;
  for (size_t j = 1; j < logits.size(); ++j) {
    // >= so ties resolve to the larger divisor (ascending order).
    if (logits[j] >= logits[best]) best = j;
  }
  return slot.divisors[best];
}

std::vector<double> slot_probabilities(const DivisorSlot& slot, double alpha,
                                       double tau) {
  double t = std::exp(slot.log_t);
  return gumbel_softmax(divisor_logits(t, slot.divisors, alpha), slot.noise,
                        tau);
}

double logistic(double raw) { return 1.0 / (1.0 + std::exp(-raw)); }

SlotBuild build_slot(ad::Tape& tape, const DivisorSlot& slot, double alpha,
                     double tau, SelectMode mode) {
  SlotBuild out;
  out.log_t_param = tape.param(slot.log_t);
  out.t_continuous = tape.exp(out.log_t_param);

  // Expected divisor under softmax((l_j + g_j) / tau), numerically stable
  // (shift by the max before exponentiating). Scores are returned for the
  // straight-through selection.
  auto expected = [&](bool with_noise, std::vector<ad::Expr>* scores_out) {
    std::vector<ad::Expr> scores;
    scores.reserve(slot.divisors.size());
    for (size_t j = 0; j < slot.divisors.size(); ++j) {
      ad::Expr gap = out.t_continuous - static_cast<double>(slot.divisors[j]);
      ad::Expr logit = -alpha * (gap * gap);
      ad::Expr noisy = with_noise ? logit + slot.noise[j] : logit;
      scores.push_back(noisy / tau);
    }
    ad::Expr shift = tape.max(scores);
    std::vector<ad::Expr> expz;
    expz.reserve(scores.size());
    ad::Expr denom = tape.constant(0.0);
    for (ad::Expr sc : scores) {
      ad::Expr e = tape.exp(sc - shift);
      expz.push_back(e);
      denom = denom + e;
    }
    ad::Expr soft = tape.constant(0.0);
    for (size_t j = 0; j < expz.size(); ++j) {
      soft = soft + (expz[j] / denom) * static_cast<double>(slot.divisors[j]);
    }
    if (scores_out) *scores_out = std::move(scores);
    return soft;
  };

  std::vector<ad::Expr> scores;
  ad::Expr soft = expected(true, &scores);

  if (mode == SelectMode::Soft) {
    out.factor = soft;
    return out;
  }
  std::vector<double> choices(slot.divisors.begin(), slot.divisors.end());
  out.factor = tape.select_hard(soft, scores, choices);
  return out;
}

FusionBuild build_fusion(ad::Tape& tape, const FusionSlot& slot) {
  FusionBuild out;
  out.raw_param = tape.param(slot.raw);
  out.sigma = 1.0 / (1.0 + tape.exp(-out.raw_param));
  return out;
}

}  // namespace fusemap
