#include <fusemap/workload.hpp>

#include <algorithm>
#include <deque>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace fusemap {

const char* dim_name(Dim d) {
  static constexpr const char* names[] = {"n", "k", "c", "p", "q", "r", "s"};
  return names[static_cast<int>(d)];
}

const char* role_name(Role r) {
  static constexpr const char* names[] = {"I", "W", "O"};
  return names[static_cast<int>(r)];
}

const std::vector<Dim>& tensor_dims(Role r) {
  static const std::vector<Dim> input = {Dim::N, Dim::C, Dim::P, Dim::Q};
  static const std::vector<Dim> weight = {Dim::K, Dim::C, Dim::R, Dim::S};
  static const std::vector<Dim> output = {Dim::N, Dim::K, Dim::P, Dim::Q};
  switch (r) {
    case Role::Input: return input;
    case Role::Weight: return weight;
    case Role::Output: return output;
  }
  throw std::logic_error("unknown tensor role");
}

bool is_reduction_dim(Dim d) {
  return d == Dim::C || d == Dim::R || d == Dim::S;
}

long long LayerDims::extent(Dim d) const {
  switch (d) {
    case Dim::N: return n;
    case Dim::K: return k;
    case Dim::C: return c;
    case Dim::P: return p;
    case Dim::Q: return q;
    case Dim::R: return r;
    case Dim::S: return s;
  }
  throw std::logic_error("unknown dimension");
}

void LayerDims::set_extent(Dim d, long long v) {
  switch (d) {
    case Dim::N: n = v; return;
    case Dim::K: k = v; return;
    case Dim::C: c = v; return;
    case Dim::P: p = v; return;
    case Dim::Q: q = v; return;
    case Dim::R: r = v; return;
    case Dim::S: s = v; return;
  }
  throw std::logic_error("unknown dimension");
}

long long LayerDims::ops() const { return n * k * c * p * q * r * s; }

int WorkloadGraph::node_index(const std::string& id) const {
  for (size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

std::vector<int> WorkloadGraph::consumers(int node_idx) const {
  std::vector<int> out;
  const std::string& id = nodes.at(node_idx).id;
  for (const auto& [src, dst] : edges) {
    if (src == id) out.push_back(node_index(dst));
  }
  return out;
}

std::vector<int> WorkloadGraph::producers(int node_idx) const {
  std::vector<int> out;
  const std::string& id = nodes.at(node_idx).id;
  for (const auto& [src, dst] : edges) {
    if (dst == id) out.push_back(node_index(src));
  }
  return out;
}

void WorkloadGraph::validate() {
  std::unordered_set<std::string> seen;
  for (const auto& node : nodes) {
    if (node.id.empty()) {
      throw std::runtime_error("workload: node with empty id");
    }
    if (!seen.insert(node.id).second) {
      throw std::runtime_error("workload: duplicate node id '" + node.id + "'");
    }
    for (Dim d : kAllDims) {
      if (node.dims.extent(d) < 1) {
        throw std::runtime_error("workload: node '" + node.id +
                                 "' has non-positive extent for dimension " +
                                 dim_name(d));
      }
    }
    if (node.kind == LayerNode::Kind::Gemm) {
      const auto& dm = node.dims;
      if (dm.p != 1 || dm.q != 1 || dm.r != 1 || dm.s != 1) {
        throw std::runtime_error("workload: GEMM node '" + node.id +
                                 "' must have p=q=r=s=1");
      }
    }
  }
  for (const auto& [src, dst] : edges) {
    if (node_index(src) < 0) {
      throw std::runtime_error("workload: edge (" + src + " -> " + dst +
                               ") names unknown producer '" + src + "'");
    }
    if (node_index(dst) < 0) {
      throw std::runtime_error("workload: edge (" + src + " -> " + dst +
                               ") names unknown consumer '" + dst + "'");
    }
  }

  // Kahn's algorithm; leftover nodes indicate a cycle.
  std::vector<int> indeg(nodes.size(), 0);
  std::vector<std::vector<int>> adj(nodes.size());
  for (const auto& [src, dst] : edges) {
    int u = node_index(src);
    int v = node_index(dst);
    adj[u].push_back(v);
    ++indeg[v];
  }
  std::deque<int> ready;
  for (size_t i = 0; i < nodes.size(); ++i) {
    if (indeg[i] == 0) ready.push_back(static_cast<int>(i));
  }
  topo_.clear();
  while (!ready.empty()) {
    int u = ready.front();
    ready.pop_front();
    topo_.push_back(u);
    for (int v : adj[u]) {
      if (--indeg[v] == 0) ready.push_back(v);
    }
  }
  if (topo_.size() != nodes.size()) {
    for (size_t i = 0; i < nodes.size(); ++i) {
      if (indeg[i] > 0) {
        throw std::runtime_error("workload: cycle detected involving node '" +
                                 nodes[i].id + "'");
      }
    }
    throw std::runtime_error("workload: cycle detected");
  }
}

namespace {

LayerNode::Kind kind_from_string(const std::string& s) {
  if (s == "CONV" || s == "conv") return LayerNode::Kind::Conv;
  if (s == "GEMM" || s == "gemm") return LayerNode::Kind::Gemm;
  throw std::runtime_error("workload: unknown layer kind '" + s + "'");
}

std::string kind_to_string(LayerNode::Kind k) {
  return k == LayerNode::Kind::Conv ? "CONV" : "GEMM";
}

WorkloadGraph graph_from_json(const nlohmann::json& j) {
  WorkloadGraph g;
  if (!j.is_object() || !j.contains("nodes")) {
    throw std::runtime_error("workload: expected object with 'nodes'");
  }
  for (const auto& jn : j.at("nodes")) {
    LayerNode node;
    node.id = jn.at("id").get<std::string>();
    node.kind = kind_from_string(jn.at("kind").get<std::string>());
    const auto& jd = jn.at("dims");
    for (Dim d : kAllDims) {
      if (jd.contains(dim_name(d))) {
        node.dims.set_extent(d, jd.at(dim_name(d)).get<long long>());
      }
    }
    g.nodes.push_back(std::move(node));
  }
  if (j.contains("edges")) {
    for (const auto& je : j.at("edges")) {
      g.edges.emplace_back(je.at(0).get<std::string>(),
                           je.at(1).get<std::string>());
    }
  }
  g.validate();
  return g;
}

}  // namespace

WorkloadGraph workload_from_json_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("workload: JSON parse error: ") +
                             e.what());
  }
  return graph_from_json(j);
}

WorkloadGraph load_workload(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("workload: cannot open file: " + path.string());
  }
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return workload_from_json_string(buf.str());
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::string workload_to_json_string(const WorkloadGraph& graph) {
  nlohmann::json j;
  j["nodes"] = nlohmann::json::array();
  for (const auto& node : graph.nodes) {
    nlohmann::json jd;
    for (Dim d : kAllDims) jd[dim_name(d)] = node.dims.extent(d);
    j["nodes"].push_back(
        {{"id", node.id}, {"kind", kind_to_string(node.kind)}, {"dims", jd}});
  }
  j["edges"] = nlohmann::json::array();
  for (const auto& [src, dst] : graph.edges) {
    j["edges"].push_back({src, dst});
  }
  return j.dump(2);
}

void save_workload(const WorkloadGraph& graph,
                   const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("workload: cannot open file for writing: " +
                             path.string());
  }
  out << workload_to_json_string(graph) << "\n";
}

}  // namespace fusemap
