#pragma once

/**
 * @file workload.hpp
 * @brief DNN workload description: layers, problem dimensions, and the
 *        producer/consumer graph.
 *
 * Every layer is expressed in a unified 7-dimensional problem space
 * {N, K, C, P, Q, R, S}: batch, output channels, input channels, output
 * height, output width, kernel height, kernel width.  GEMM layers use
 * P = Q = R = S = 1.
 */

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fusemap {

enum class Dim : int { N = 0, K, C, P, Q, R, S };

inline constexpr int kNumDims = 7;

inline constexpr std::array<Dim, kNumDims> kAllDims = {
    Dim::N, Dim::K, Dim::C, Dim::P, Dim::Q, Dim::R, Dim::S};

const char* dim_name(Dim d);

/// Tensor operands of a layer: input activations, weights, outputs.
enum class Role : int { Input = 0, Weight, Output };

inline constexpr int kNumRoles = 3;

inline constexpr std::array<Role, kNumRoles> kAllRoles = {
    Role::Input, Role::Weight, Role::Output};

const char* role_name(Role r);

/// Problem dimensions a tensor is indexed by.  Fixed per role: the input
/// footprint ignores kernel halo so all three sets are pure index sets.
const std::vector<Dim>& tensor_dims(Role r);

/// True when d does not index the output (C, R, S) and is therefore reduced.
bool is_reduction_dim(Dim d);

struct LayerDims {
  long long n = 1, k = 1, c = 1, p = 1, q = 1, r = 1, s = 1;

  long long extent(Dim d) const;
  void set_extent(Dim d, long long v);

  /// Total MAC count: product of all seven extents.
  long long ops() const;

  bool operator==(const LayerDims&) const = default;
};

struct LayerNode {
  enum class Kind { Conv, Gemm };

  std::string id;
  Kind kind = Kind::Conv;
  LayerDims dims;

  bool operator==(const LayerNode&) const = default;
};

/// DAG of layers.  Nodes are kept in file order; topological order is
/// computed on validation and cached.
struct WorkloadGraph {
  std::vector<LayerNode> nodes;
  std::vector<std::pair<std::string, std::string>> edges;  // producer, consumer

  int node_index(const std::string& id) const;  // -1 when absent
  const LayerNode& node(int idx) const { return nodes.at(idx); }

  std::vector<int> consumers(int node_idx) const;
  std::vector<int> producers(int node_idx) const;

  /// Topological order over node indices (computed by validate()).
  const std::vector<int>& topological_order() const { return topo_; }

  /// Checks ids, edge endpoints, extents, acyclicity.  Throws
  /// std::runtime_error naming the offending node/edge.
  void validate();

  bool operator==(const WorkloadGraph& o) const {
    return nodes == o.nodes && edges == o.edges;
  }

 private:
  std::vector<int> topo_;
};

WorkloadGraph load_workload(const std::filesystem::path& path);
WorkloadGraph workload_from_json_string(const std::string& text);
std::string workload_to_json_string(const WorkloadGraph& graph);
void save_workload(const WorkloadGraph& graph,
                   const std::filesystem::path& path);

}  // namespace fusemap
