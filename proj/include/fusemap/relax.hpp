#pragma once

/// @file relax.hpp
/// @brief Continuous relaxation of discrete mapping decisions.
///
/// Tiling factors are divisor-valued: each (dimension, level) slot carries
/// the divisors of the dimension extent, a continuous value T stored in
/// log-space, and frozen Gumbel noise. A Gumbel-Softmax over
/// distance-to-divisor logits gives a differentiable surrogate; a
/// straight-through selection keeps the forward value an exact divisor.
/// Fusion decisions are logistic-squashed unconstrained reals, one per
/// eligible producer-consumer edge.

#include <cstdint>
#include <utility>
#include <vector>

#include <fusemap/accelerator.hpp>
#include <fusemap/autodiff.hpp>
#include <fusemap/workload.hpp>

namespace fusemap {

/// All positive divisors of n, ascending.
std::vector<long long> divisors_of(long long n);

/// One relaxed divisor choice: temporal factor T_{t,d,m} or spatial factor
/// T_{s,d} at the spatial level.
struct DivisorSlot {
  Dim dim = Dim::N;
  int level = 0;
  bool spatial = false;
  long long extent = 1;
  std::vector<long long> divisors;
  /// Trainable continuous value, stored as log T so T stays positive.
  double log_t = 0.0;
  /// Frozen Gumbel(0,1) noise for the current step, one per divisor.
  std::vector<double> noise;
};

/// Relaxed fusion decision for one eligible edge; sigma = logistic(raw).
struct FusionSlot {
  int producer = -1;
  int consumer = -1;
  double raw = 0.0;
};

/// Per-node slot set: temporal slots for every dimension at every level
/// below DRAM (level ascending, dimension ascending), then spatial slots
/// for the configured spatial dimensions. The DRAM temporal factor is not
/// a slot; it is derived to cover the extent.
struct NodeSlots {
  std::vector<DivisorSlot> slots;
};

/// Full trainable state for one optimization run. Confined to one restart.
struct MappingParams {
  std::vector<NodeSlots> nodes;
  std::vector<FusionSlot> fusion;
  double tau = 5.0;
  int step = 0;
};

/// Edges whose producer has exactly one consumer and whose consumer has
/// exactly one producer, in graph edge order. All other edges are fixed
/// unfused.
std::vector<std::pair<int, int>> eligible_edges(const WorkloadGraph& graph);

/// A maximal chain of nodes linked by eligible edges. `fusion_slots[i]`
/// indexes MappingParams::fusion for the edge nodes[i] -> nodes[i+1].
struct FusionChain {
  std::vector<int> nodes;
  std::vector<int> fusion_slots;
};

std::vector<FusionChain> fusion_chains(const WorkloadGraph& graph,
                                       const MappingParams& params);

/// Creates the slot structure with unperturbed geometric initialization:
/// each free slot of a dimension starts at extent^(1/num_free_slots).
MappingParams make_mapping_params(const WorkloadGraph& graph,
                                  const AcceleratorConfig& config);

/// tau(step) = max(tau_min, tau0 * exp(-kappa * step)) with kappa solving
/// tau(anneal_fraction * total_steps) = tau_min. Monotone non-increasing.
double anneal_tau(int step, int total_steps, double tau0, double tau_min,
                  double anneal_fraction);

/// Draws fresh Gumbel(0,1) noise for every slot, reproducible from
/// (seed, step); freezes it in the slots for the duration of the step.
void resample_noise(MappingParams& params, uint64_t seed, int step);

/// Evaluation mode: all noise zero.
void zero_noise(MappingParams& params);

/// l_j = -alpha * (t - d_j)^2.
std::vector<double> divisor_logits(double t,
                                   const std::vector<long long>& divisors,
                                   double alpha);

/// p_j = softmax((l_j + g_j) / tau); sums to 1.
std::vector<double> gumbel_softmax(const std::vector<double>& logits,
                                   const std::vector<double>& noise,
                                   double tau);

/// d_hat = sum_j p_j d_j.
double expected_divisor(const std::vector<double>& probs,
                        const std::vector<long long>& divisors);

/// Zero-noise hard pick for decoding: argmax logit, ties to the larger
/// divisor.
long long argmax_divisor(const DivisorSlot& slot, double alpha);

/// Probabilities at the slot's current T and noise for a given tau.
std::vector<double> slot_probabilities(const DivisorSlot& slot, double alpha,
                                       double tau);

double logistic(double raw);

/// Hard: straight-through (forward = argmax divisor, backward through the
/// expected divisor). Soft: the expected divisor itself, for gradient
/// checking by finite differences.
enum class SelectMode { Hard, Soft };

/// Tape handles produced when one slot is built onto a tape.
struct SlotBuild {
  ad::Expr log_t_param;
  ad::Expr t_continuous;
  ad::Expr factor;
  /// Noise-free counterpart of factor: in Hard mode a straight-through
  /// select over the quiet scores (forward is exactly the argmax divisor),
  /// in Soft mode the noise-free expected divisor.
  ad::Expr mixture;
};

SlotBuild build_slot(ad::Tape& tape, const DivisorSlot& slot, double alpha,
                     double tau, SelectMode mode);

struct FusionBuild {
  ad::Expr raw_param;
  ad::Expr sigma;
};

FusionBuild build_fusion(ad::Tape& tape, const FusionSlot& slot);

}  // namespace fusemap
