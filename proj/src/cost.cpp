#include <fusemap/cost.hpp>

namespace fusemap {

const char* traffic_kind_name(TrafficKind k) {
  static constexpr const char* names[] = {"fill", "read", "writeback", "copy"};
  return names[static_cast<int>(k)];
}

std::vector<int> resident_levels(const AcceleratorConfig& config, Role role) {
  std::vector<int> out;
  for (int i = 0; i < config.num_levels(); ++i) {
    if (config.level(i).holds(role)) out.push_back(i);
  }
  if (out.size() < 2) {
    throw std::runtime_error(
        std::string("cost: role ") + role_name(role) +
        " must be resident at two or more levels (including DRAM)");
  }
  return out;
}

int innermost_resident_level(const AcceleratorConfig& config, Role role) {
  return resident_levels(config, role).front();
}

int staging_level(const AcceleratorConfig& config, Role role) {
  std::vector<int> levels = resident_levels(config, role);
  for (auto it = levels.rbegin(); it != levels.rend(); ++it) {
    if (*it < config.dram_level()) return *it;
  }
  throw std::runtime_error(std::string("cost: role ") + role_name(role) +
                           " has no on-chip resident level");
}

}  // namespace fusemap
