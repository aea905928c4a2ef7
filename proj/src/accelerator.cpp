#include <fusemap/accelerator.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fusemap {

bool MemoryLevel::holds(Role r) const {
  return std::find(resident_roles.begin(), resident_roles.end(), r) !=
         resident_roles.end();
}

void AcceleratorConfig::validate() const {
  if (levels.size() < 2) {
    throw std::runtime_error("accelerator: missing level (need at least 2)");
  }
  for (size_t i = 0; i < levels.size(); ++i) {
    const MemoryLevel& lv = levels[i];
    if (lv.index != static_cast<int>(i)) {
      throw std::runtime_error("accelerator: level indices must be 0.." +
                               std::to_string(levels.size() - 1) +
                               " in order; got " + std::to_string(lv.index) +
                               " at position " + std::to_string(i));
    }
    if (lv.bandwidth_words_per_cycle <= 0) {
      throw std::runtime_error("accelerator: non-positive bandwidth at L" +
                               std::to_string(lv.index));
    }
    if (lv.epa_pj_per_word <= 0) {
      throw std::runtime_error("accelerator: non-positive EPA at L" +
                               std::to_string(lv.index));
    }
    if (lv.capacity_words && *lv.capacity_words <= 0) {
      throw std::runtime_error("accelerator: non-positive capacity at L" +
                               std::to_string(lv.index));
    }
  }
  // Unbounded counts as infinite, so only bounded-after-bounded can violate.
  for (size_t i = 1; i < levels.size(); ++i) {
    const auto& lo = levels[i - 1].capacity_words;
    const auto& hi = levels[i].capacity_words;
    if (lo && hi && *hi < *lo) {
      throw std::runtime_error(
          "accelerator: capacity ordering violation: L" +
          std::to_string(levels[i].index) + " (" + std::to_string(*hi) +
          " words) smaller than L" + std::to_string(levels[i - 1].index) +
          " (" + std::to_string(*lo) + " words)");
    }
    if (!lo && hi) {
      throw std::runtime_error(
          "accelerator: capacity ordering violation: bounded L" +
          std::to_string(levels[i].index) + " above unbounded L" +
          std::to_string(levels[i - 1].index));
    }
  }
  if (pe_count < 1) {
    throw std::runtime_error("accelerator: pe_count must be >= 1");
  }
  if (energy_per_op_pj <= 0) {
    throw std::runtime_error("accelerator: energy_per_op_pj must be positive");
  }
  if (spatial_level < 0 || spatial_level >= dram_level()) {
    throw std::runtime_error(
        "accelerator: spatial_level must lie strictly below DRAM");
  }
  if (spatial_dims.empty()) {
    throw std::runtime_error("accelerator: spatial_dims must be non-empty");
  }
  for (Role r : kAllRoles) {
    bool found = false;
    for (int i = 0; i < dram_level(); ++i) {
      if (levels[i].holds(r)) found = true;
    }
    if (!found) {
      throw std::runtime_error(std::string("accelerator: role ") +
                               role_name(r) +
                               " not resident at any level below DRAM");
    }
  }
}

bool AcceleratorConfig::operator==(const AcceleratorConfig& other) const {
  if (levels.size() != other.levels.size() || pe_count != other.pe_count ||
      energy_per_op_pj != other.energy_per_op_pj ||
      spatial_level != other.spatial_level ||
      spatial_dims != other.spatial_dims ||
      include_output_residency != other.include_output_residency) {
    return false;
  }
  for (size_t i = 0; i < levels.size(); ++i) {
    const MemoryLevel& a = levels[i];
    const MemoryLevel& b = other.levels[i];
    if (a.index != b.index || a.capacity_words != b.capacity_words ||
        a.bandwidth_words_per_cycle != b.bandwidth_words_per_cycle ||
        a.epa_pj_per_word != b.epa_pj_per_word ||
        a.resident_roles != b.resident_roles) {
      return false;
    }
  }
  return true;
}

namespace {

// Reference EPA and bandwidth figures for the built-in presets. The access
// energies grow roughly an order of magnitude per level, with DRAM two
// orders above the scratchpad; on-chip levels are wide enough that DRAM
// bandwidth is the usual bottleneck.
AcceleratorConfig make_gemmini(long long rows, long long l1_words,
                               long long l2_words, double dram_bw) {
  AcceleratorConfig cfg;
  cfg.pe_count = rows * rows;
  cfg.energy_per_op_pj = 0.5;
  cfg.spatial_level = 0;
  cfg.spatial_dims = {Dim::K, Dim::C};

  MemoryLevel l0;
  l0.index = 0;
  l0.capacity_words = 2 * cfg.pe_count;
  l0.bandwidth_words_per_cycle = static_cast<double>(cfg.pe_count);
  l0.epa_pj_per_word = 0.1;
  l0.resident_roles = {Role::Input, Role::Weight};

  MemoryLevel l1;
  l1.index = 1;
  l1.capacity_words = l1_words;
  l1.bandwidth_words_per_cycle = static_cast<double>(2 * rows);
  l1.epa_pj_per_word = 1.0;
  l1.resident_roles = {Role::Output};

  MemoryLevel l2;
  l2.index = 2;
  l2.capacity_words = l2_words;
  l2.bandwidth_words_per_cycle = static_cast<double>(2 * rows);
  l2.epa_pj_per_word = 2.0;
  l2.resident_roles = {Role::Input, Role::Weight};

  MemoryLevel l3;
  l3.index = 3;
  l3.capacity_words = std::nullopt;
  l3.bandwidth_words_per_cycle = dram_bw;
  l3.epa_pj_per_word = 100.0;
  l3.resident_roles = {Role::Input, Role::Weight, Role::Output};

  cfg.levels = {l0, l1, l2, l3};
  cfg.validate();
  return cfg;
}

Role role_from_string(const std::string& s) {
  if (s == "I") return Role::Input;
  if (s == "W") return Role::Weight;
  if (s == "O") return Role::Output;
  throw std::runtime_error("accelerator: unknown role '" + s + "'");
}

Dim dim_from_string(const std::string& s) {
  for (Dim d : kAllDims) {
    if (s == dim_name(d)) return d;
  }
  throw std::runtime_error("accelerator: unknown dimension '" + s + "'");
}

AcceleratorConfig config_from_json(const nlohmann::json& j) {
  AcceleratorConfig cfg;
  if (!j.is_object() || !j.contains("levels")) {
    throw std::runtime_error("accelerator: missing level list");
  }
  cfg.pe_count = j.at("pe_count").get<long long>();
  cfg.energy_per_op_pj = j.at("energy_per_op_pj").get<double>();
  cfg.spatial_level = j.at("spatial_level").get<int>();
  cfg.levels.clear();
  for (const auto& jl : j.at("levels")) {
    MemoryLevel lv;
    lv.index = jl.at("index").get<int>();
    if (jl.contains("capacity_words") && !jl.at("capacity_words").is_null()) {
      lv.capacity_words = jl.at("capacity_words").get<long long>();
    }
    lv.bandwidth_words_per_cycle =
        jl.at("bandwidth_words_per_cycle").get<double>();
    lv.epa_pj_per_word = jl.at("epa_pj_per_word").get<double>();
    for (const auto& jr : jl.at("resident_roles")) {
      lv.resident_roles.push_back(role_from_string(jr.get<std::string>()));
    }
    cfg.levels.push_back(std::move(lv));
  }
  std::sort(cfg.levels.begin(), cfg.levels.end(),
            [](const MemoryLevel& a, const MemoryLevel& b) {
              return a.index < b.index;
            });
  if (j.contains("spatial_dims")) {
    cfg.spatial_dims.clear();
    for (const auto& jd : j.at("spatial_dims")) {
      cfg.spatial_dims.push_back(dim_from_string(jd.get<std::string>()));
    }
  }
  if (j.contains("include_output_residency")) {
    cfg.include_output_residency = j.at("include_output_residency").get<bool>();
  }
  cfg.validate();
  return cfg;
}

}  // namespace

AcceleratorConfig gemmini_large() {
  return make_gemmini(32, 65536, 524288, 16.0);
}

AcceleratorConfig gemmini_small() {
  return make_gemmini(16, 8192, 8192, 8.0);
}

AcceleratorConfig accelerator_preset(const std::string& name) {
  if (name == "gemmini-large") return gemmini_large();
  if (name == "gemmini-small") return gemmini_small();
  throw std::runtime_error("accelerator: unknown preset '" + name +
                           "' (expected gemmini-large or gemmini-small)");
}

AcceleratorConfig accelerator_from_json_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("accelerator: JSON parse error: ") +
                             e.what());
  }
  return config_from_json(j);
}

AcceleratorConfig load_accelerator(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("accelerator: cannot open file: " +
                             path.string());
  }
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return accelerator_from_json_string(buf.str());
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::string accelerator_to_json_string(const AcceleratorConfig& config) {
  nlohmann::json j;
  j["pe_count"] = config.pe_count;
  j["energy_per_op_pj"] = config.energy_per_op_pj;
  j["spatial_level"] = config.spatial_level;
  j["spatial_dims"] = nlohmann::json::array();
  for (Dim d : config.spatial_dims) j["spatial_dims"].push_back(dim_name(d));
  j["include_output_residency"] = config.include_output_residency;
  j["levels"] = nlohmann::json::array();
  for (const MemoryLevel& lv : config.levels) {
    nlohmann::json jl;
    jl["index"] = lv.index;
    if (lv.capacity_words) {
      jl["capacity_words"] = *lv.capacity_words;
    } else {
      jl["capacity_words"] = nullptr;
    }
    jl["bandwidth_words_per_cycle"] = lv.bandwidth_words_per_cycle;
    jl["epa_pj_per_word"] = lv.epa_pj_per_word;
    jl["resident_roles"] = nlohmann::json::array();
    for (Role r : lv.resident_roles) {
      jl["resident_roles"].push_back(role_name(r));
    }
    j["levels"].push_back(std::move(jl));
  }
  return j.dump(2);
}

void save_accelerator(const AcceleratorConfig& config,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("accelerator: cannot open file for writing: " +
                             path.string());
  }
  out << accelerator_to_json_string(config) << "\n";
}

}  // namespace fusemap
