#pragma once

/// @file accelerator.hpp
/// @brief Parameterized description of a systolic-array accelerator:
///        memory hierarchy, PE array size, and per-access energy.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <fusemap/workload.hpp>

namespace fusemap {

/// One level of the memory hierarchy. Index 0 is the PE register file and
/// the highest index is DRAM.
struct MemoryLevel {
  int index = 0;
  /// Capacity in words; empty means unbounded (DRAM).
  std::optional<long long> capacity_words;
  double bandwidth_words_per_cycle = 1.0;
  double epa_pj_per_word = 1.0;
  /// Roles that may be resident at this level.
  std::vector<Role> resident_roles;

  bool holds(Role r) const;
};

/// Full accelerator description. Immutable after load; safe to share
/// read-only across concurrent optimization restarts.
struct AcceleratorConfig {
  std::vector<MemoryLevel> levels;
  long long pe_count = 1;
  double energy_per_op_pj = 1.0;
  /// Level index whose tiling factors are mapped spatially across the array.
  int spatial_level = 0;
  /// Dimensions eligible for spatial mapping at spatial_level.
  std::vector<Dim> spatial_dims = {Dim::K, Dim::C};
  /// When true, capacity checks also count output tiles at their resident
  /// on-chip levels; off by default (only inputs and weights are counted).
  bool include_output_residency = false;

  int num_levels() const { return static_cast<int>(levels.size()); }
  int dram_level() const { return num_levels() - 1; }
  const MemoryLevel& level(int i) const { return levels.at(i); }

  /// Throws std::runtime_error describing the first violated invariant.
  void validate() const;

  bool operator==(const AcceleratorConfig& other) const;
};

/// Built-in configurations selectable by name.
AcceleratorConfig gemmini_large();
AcceleratorConfig gemmini_small();

/// Returns the preset for "gemmini-large" or "gemmini-small"; throws on
/// unknown names.
AcceleratorConfig accelerator_preset(const std::string& name);

AcceleratorConfig load_accelerator(const std::filesystem::path& path);
AcceleratorConfig accelerator_from_json_string(const std::string& text);
std::string accelerator_to_json_string(const AcceleratorConfig& config);
void save_accelerator(const AcceleratorConfig& config,
                      const std::filesystem::path& path);

}  // namespace fusemap
