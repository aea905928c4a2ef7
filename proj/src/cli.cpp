#include <fusemap/cli.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <fusemap/accelerator.hpp>
#include <fusemap/evaluation.hpp>
#include <fusemap/optimizer.hpp>
#include <fusemap/workload.hpp>

namespace fusemap::cli {

namespace fs = std::filesystem;

void write_manifest(const RunManifest& manifest, const fs::path& path) {
  nlohmann::json j;
  j["workload"] = manifest.workload;
  j["hardware"] = manifest.hardware;
  j["optimizer_config"] = manifest.optimizer_config;
  j["output_dir"] = manifest.output_dir;
  j["seed"] = manifest.seed;
  j["command"] = manifest.command;
  j["tool_version"] = manifest.tool_version;
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write manifest: " + path.string());
  }
  out << j.dump(2) << "\n";
}

namespace {

AcceleratorConfig load_hardware(const std::string& spec) {
  if (spec == "gemmini-large" || spec == "gemmini-small") {
    return accelerator_preset(spec);
  }
  if (fs::exists(spec)) return load_accelerator(spec);
  throw std::runtime_error("unknown hardware preset or missing file: " + spec);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path.string());
  out << text;
  if (text.empty() || text.back() != '\n') out << "\n";
}

const char* role_letter(Role role) {
  switch (role) {
    case Role::Input: return "I";
    case Role::Weight: return "W";
    case Role::Output: return "O";
  }
  return "?";
}

nlohmann::json cost_to_json(const CostBreakdown<double>& cost,
                            const WorkloadGraph& graph) {
  nlohmann::json j;
  j["total_energy_pj"] = cost.total_energy;
  j["total_latency_cycles"] = cost.total_latency;
  j["edp"] = cost.edp;
  j["nodes"] = nlohmann::json::array();
  for (size_t i = 0; i < cost.nodes.size(); ++i) {
    const NodeCost<double>& nc = cost.nodes[i];
    nlohmann::json jn;
    jn["id"] = graph.nodes[i].id;
    jn["ops"] = nc.ops;
    jn["pes_effective"] = nc.pes_effective;
    jn["latency_cycles"] = nc.latency;
    jn["energy_pj"] = nc.energy;
    jn["traffic"] = nlohmann::json::array();
    for (int lvl = 0; lvl < nc.traffic.num_levels; ++lvl) {
      for (Role role : kAllRoles) {
        for (int k = 0; k < kNumTrafficKinds; ++k) {
          double words =
              nc.traffic.at(lvl, role, static_cast<TrafficKind>(k));
          if (words == 0.0) continue;
          jn["traffic"].push_back(
              {{"level", lvl},
               {"role", role_letter(role)},
               {"kind", traffic_kind_name(static_cast<TrafficKind>(k))},
               {"words", words}});
        }
      }
    }
    j["nodes"].push_back(std::move(jn));
  }
  return j;
}

struct CommonOptions {
  std::string workload;
  std::string hardware = "gemmini-large";
  std::string out_dir = ".";
  uint64_t seed = 0;
};

RunManifest make_manifest(const CommonOptions& common,
                          const std::string& command,
                          const std::string& config_path = "") {
  RunManifest m;
  m.workload = common.workload;
  m.hardware = common.hardware;
  m.optimizer_config = config_path;
  m.output_dir = common.out_dir;
  m.seed = common.seed;
  m.command = command;
  return m;
}

// ---------------------------------------------------------------------------
// optimize
// ---------------------------------------------------------------------------

struct OptimizeOptions {
  CommonOptions common;
  std::string config_path;
  // Flag overrides; negative sentinel means "not set" for the doubles that
  // must be positive, and -1 for the ints.
  int steps = -1;
  int restarts = -1;
  double learning_rate = -1;
  double alpha = -1;
  double tau0 = -1;
  double tau_min = -1;
  double anneal_fraction = -1;
  double lambda0 = -1;
  double lambda_max = -1;
  double sigma_threshold = -1;
  bool seed_given = false;
};

int cmd_optimize(const OptimizeOptions& o) {
  WorkloadGraph graph = load_workload(o.common.workload);
  AcceleratorConfig hw = load_hardware(o.common.hardware);
  OptimizerConfig cfg;
  if (!o.config_path.empty()) cfg = load_optimizer_config(o.config_path);
  if (o.steps >= 0) cfg.steps = o.steps;
  if (o.restarts >= 0) cfg.restarts = o.restarts;
  if (o.learning_rate >= 0) cfg.learning_rate = o.learning_rate;
  if (o.alpha >= 0) cfg.alpha = o.alpha;
  if (o.tau0 >= 0) cfg.tau0 = o.tau0;
  if (o.tau_min >= 0) cfg.tau_min = o.tau_min;
  if (o.anneal_fraction >= 0) cfg.anneal_fraction = o.anneal_fraction;
  if (o.lambda0 >= 0) cfg.lambda0 = o.lambda0;
  if (o.lambda_max >= 0) cfg.lambda_max = o.lambda_max;
  if (o.sigma_threshold >= 0) cfg.sigma_threshold = o.sigma_threshold;
  if (o.seed_given) cfg.seed = o.common.seed;
  cfg.validate();

  fs::create_directories(o.common.out_dir);
  OptimizeResult result = optimize(graph, hw, cfg);

  fs::path out(o.common.out_dir);
  write_text(out / "strategy.json",
             strategy_to_json_string(result.strategy, graph));
  write_text(out / "cost.json", cost_to_json(result.cost, graph).dump(2));
  write_trace_csv(result.trace, out / "trace.csv");
  RunManifest manifest = make_manifest(o.common, "optimize", o.config_path);
  manifest.seed = cfg.seed;
  write_manifest(manifest, out / "manifest.json");

  std::cout << "edp=" << result.edp << " feasible=" << std::boolalpha
            << result.feasible << " best_restart=" << result.best_restart
            << "\n";
  if (!result.feasible) {
    std::cout << "best-effort result violates constraints:\n";
    for (const std::string& v : result.strategy.validity.violations) {
      std::cout << "  " << v << "\n";
    }
  }
  return result.feasible ? 0 : 2;
}

// ---------------------------------------------------------------------------
// oracle-check
// ---------------------------------------------------------------------------

struct OracleOptions {
  CommonOptions common;
  int samples = 100;
  bool corrupt_model = false;
};

int cmd_oracle_check(const OracleOptions& o) {
  WorkloadGraph graph = load_workload(o.common.workload);
  AcceleratorConfig hw = load_hardware(o.common.hardware);
  if (o.samples < 1) throw std::runtime_error("--samples must be >= 1");

  DoubleCtx ctx;
  nlohmann::json mismatches = nlohmann::json::array();
  long long cells = 0, matched = 0;
  std::array<long long, kNumTrafficKinds> kind_cells{}, kind_matched{};
  long long mac_matched = 0;

  for (int sample = 0; sample < o.samples; ++sample) {
    const LayerNode& node =
        graph.nodes[static_cast<size_t>(sample) % graph.nodes.size()];
    NodeMapping mapping =
        random_mapping(node, hw, o.common.seed + static_cast<uint64_t>(sample));
    OracleCounts oracle = loopnest_count(node, mapping, hw);

    NodeFactors<double> factors = factors_from_mapping(mapping, hw);
    TrafficTable<double> model = node_traffic(factors, hw, ctx);
    if (o.corrupt_model) {
      // Test hook: skew one closed form so the check must fail.
      model.at(0, Role::Weight, TrafficKind::Fill) *= 1.01;
    }

    if (factors.ops == oracle.macs) ++mac_matched;
    for (int lvl = 0; lvl < hw.num_levels(); ++lvl) {
      for (Role role : kAllRoles) {
        for (int k = 0; k < kNumTrafficKinds; ++k) {
          TrafficKind kind = static_cast<TrafficKind>(k);
          double m = model.at(lvl, role, kind);
          double r = oracle.traffic.at(lvl, role, kind);
          ++cells;
          ++kind_cells[static_cast<size_t>(k)];
          if (m == r) {
            ++matched;
            ++kind_matched[static_cast<size_t>(k)];
          } else if (mismatches.size() < 100) {
            mismatches.push_back({{"sample", sample},
                                  {"node", node.id},
                                  {"level", lvl},
                                  {"role", role_letter(role)},
                                  {"kind", traffic_kind_name(kind)},
                                  {"model", m},
                                  {"oracle", r}});
          }
        }
      }
    }
  }

  bool all_match = matched == cells && mac_matched == o.samples;
  nlohmann::json report;
  report["samples"] = o.samples;
  report["cells_compared"] = cells;
  report["cells_matched"] = matched;
  report["macs_matched"] = mac_matched;
  report["all_match"] = all_match;
  for (int k = 0; k < kNumTrafficKinds; ++k) {
    const char* name = traffic_kind_name(static_cast<TrafficKind>(k));
    report["per_kind"][name] = {
        {"compared", kind_cells[static_cast<size_t>(k)]},
        {"matched", kind_matched[static_cast<size_t>(k)]}};
  }
  report["mismatches"] = mismatches;

  fs::create_directories(o.common.out_dir);
  fs::path out(o.common.out_dir);
  write_text(out / "oracle_report.json", report.dump(2));
  write_manifest(make_manifest(o.common, "oracle-check"),
                 out / "manifest.json");

  std::cout << "oracle-check: " << matched << "/" << cells
            << " traffic cells matched, " << mac_matched << "/" << o.samples
            << " MAC totals matched\n";
  return all_match ? 0 : 1;
}

// ---------------------------------------------------------------------------
// exhaustive
// ---------------------------------------------------------------------------

struct ExhaustiveOptions {
  CommonOptions common;
  double guard = 1e7;
};

int cmd_exhaustive(const ExhaustiveOptions& o) {
  WorkloadGraph graph = load_workload(o.common.workload);
  AcceleratorConfig hw = load_hardware(o.common.hardware);

  ExhaustiveResult result = exhaustive_best(graph, hw, o.guard);

  nlohmann::json j;
  j["edp"] = result.edp;
  j["feasible"] = result.feasible;
  j["combinations"] = result.combinations;
  j["feasible_count"] = result.feasible_count;
  j["strategy"] =
      nlohmann::json::parse(strategy_to_json_string(result.strategy, graph));

  fs::create_directories(o.common.out_dir);
  fs::path out(o.common.out_dir);
  write_text(out / "reference.json", j.dump(2));
  write_manifest(make_manifest(o.common, "exhaustive"), out / "manifest.json");

  std::cout << "exhaustive: edp=" << result.edp
            << " feasible=" << std::boolalpha << result.feasible << " ("
            << result.feasible_count << "/" << result.combinations
            << " combinations feasible)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// baseline
// ---------------------------------------------------------------------------

struct BaselineOptions {
  CommonOptions common;
  std::string methods = "grad,ga,random";
  long long budget = 5000;
  int seeds = 5;
};

int cmd_baseline(const BaselineOptions& o) {
  WorkloadGraph graph = load_workload(o.common.workload);
  AcceleratorConfig hw = load_hardware(o.common.hardware);
  if (o.budget < 1) throw std::runtime_error("--budget must be >= 1");
  if (o.seeds < 1) throw std::runtime_error("--seeds must be >= 1");

  std::vector<std::string> methods;
  {
    std::stringstream ss(o.methods);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      if (item != "grad" && item != "ga" && item != "random") {
        throw std::runtime_error("unknown method '" + item +
                                 "' (expected grad, ga, random)");
      }
      methods.push_back(item);
    }
    if (methods.empty()) throw std::runtime_error("--methods list is empty");
  }

  fs::create_directories(o.common.out_dir);
  fs::path out(o.common.out_dir);
  std::ofstream table(out / "baseline.csv");
  std::ofstream curves(out / "convergence.csv");
  if (!table || !curves) {
    throw std::runtime_error("cannot write baseline outputs in " +
                             o.common.out_dir);
  }
  table << "method,seed,edp,feasible,evals\n";
  curves << "method,seed,evals,best_edp\n";
  table.precision(17);
  curves.precision(17);

  nlohmann::json summary;
  std::cout << "method      median_edp        best_edp          feasible\n";
  for (const std::string& method : methods) {
    std::vector<double> edps;
    int feasible_count = 0;
    for (int s = 0; s < o.seeds; ++s) {
      uint64_t seed = o.common.seed + static_cast<uint64_t>(s);
      SearchResult result;
      if (method == "grad") {
        OptimizerConfig cfg;
        cfg.seed = seed;
        result = gradient_search(graph, hw, cfg, o.budget);
      } else if (method == "ga") {
        result = ga_search(graph, hw, o.budget, seed);
      } else {
        result = random_search(graph, hw, o.budget, seed);
      }
      edps.push_back(result.edp);
      feasible_count += result.feasible ? 1 : 0;
      table << method << ',' << seed << ',' << result.edp << ','
            << (result.feasible ? 1 : 0) << ',' << result.evals << '\n';
      for (const SearchPoint& point : result.convergence) {
        curves << method << ',' << seed << ',' << point.evals << ','
               << point.best_edp << '\n';
      }
    }
    std::vector<double> sorted = edps;
    std::sort(sorted.begin(), sorted.end());
    double median = sorted[sorted.size() / 2];
    if (sorted.size() % 2 == 0) {
      median = 0.5 * (median + sorted[sorted.size() / 2 - 1]);
    }
    summary[method] = {{"edps", edps},
                       {"median_edp", median},
                       {"best_edp", sorted.front()},
                       {"feasible", feasible_count}};
    std::cout.precision(10);
    std::cout << method << (method.size() < 6 ? "\t\t" : "\t") << median
              << "\t" << sorted.front() << "\t" << feasible_count << "/"
              << o.seeds << "\n";
  }
  write_text(out / "baseline.json", summary.dump(2));
  write_manifest(make_manifest(o.common, "baseline"), out / "manifest.json");
  return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportOptions {
  std::vector<std::string> runs;
  std::string out_file = "report.csv";
  bool zscore = false;
};

int cmd_report(const ReportOptions& o) {
  if (o.runs.empty()) throw std::runtime_error("no run directories given");

  struct Row {
    std::string run, command, workload, hardware;
    uint64_t seed = 0;
    double energy = 0, latency = 0, edp = 0;
  };
  std::vector<Row> rows;
  for (const std::string& dir : o.runs) {
    fs::path cost_path = fs::path(dir) / "cost.json";
    fs::path manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream cost_in(cost_path), manifest_in(manifest_path);
    if (!cost_in || !manifest_in) {
      throw std::runtime_error("run directory '" + dir +
                               "' is missing cost.json or manifest.json");
    }
    nlohmann::json jc, jm;
    try {
      cost_in >> jc;
      manifest_in >> jm;
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("malformed JSON in run '" + dir +
                               "': " + e.what());
    }
    Row row;
    row.run = dir;
    row.command = jm.value("command", "");
    row.workload = jm.value("workload", "");
    row.hardware = jm.value("hardware", "");
    row.seed = jm.value("seed", uint64_t{0});
    row.energy = jc.at("total_energy_pj").get<double>();
    row.latency = jc.at("total_latency_cycles").get<double>();
    row.edp = jc.at("edp").get<double>();
    rows.push_back(std::move(row));
  }

  double e_mean = 0, l_mean = 0;
  for (const Row& r : rows) {
    e_mean += r.energy;
    l_mean += r.latency;
  }
  e_mean /= static_cast<double>(rows.size());
  l_mean /= static_cast<double>(rows.size());
  double e_var = 0, l_var = 0;
  for (const Row& r : rows) {
    e_var += (r.energy - e_mean) * (r.energy - e_mean);
    l_var += (r.latency - l_mean) * (r.latency - l_mean);
  }
  double e_std = std::sqrt(e_var / static_cast<double>(rows.size()));
  double l_std = std::sqrt(l_var / static_cast<double>(rows.size()));

  std::ofstream out(o.out_file);
  if (!out) throw std::runtime_error("cannot write " + o.out_file);
  out.precision(17);
  out << "run,command,workload,hardware,seed,total_energy_pj,"
         "total_latency_cycles,edp";
  if (o.zscore) out << ",energy_z,latency_z";
  out << "\n";
  for (const Row& r : rows) {
    out << r.run << ',' << r.command << ',' << r.workload << ','
        << r.hardware << ',' << r.seed << ',' << r.energy << ',' << r.latency
        << ',' << r.edp;
    if (o.zscore) {
      out << ',' << (e_std > 0 ? (r.energy - e_mean) / e_std : 0.0) << ','
          << (l_std > 0 ? (r.latency - l_mean) / l_std : 0.0);
    }
    out << "\n";
  }
  std::cout << "report: " << rows.size() << " runs -> " << o.out_file << "\n";
  return 0;
}

void add_common(CLI::App* sub, CommonOptions& common, bool needs_workload) {
  if (needs_workload) {
    sub->add_option("--workload", common.workload, "Workload graph JSON path")
        ->required();
    sub->add_option("--hw", common.hardware,
                    "Hardware preset name (gemmini-large, gemmini-small) or "
                    "config JSON path");
  }
  sub->add_option("--out", common.out_dir, "Output directory");
  sub->add_option("--seed", common.seed, "Random seed");
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{
      "Joint tiling and fusion optimizer for systolic-array accelerators"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  OptimizeOptions opt;
  CLI::App* sub_opt = app.add_subcommand(
      "optimize", "Gradient-optimize a deployment strategy");
  add_common(sub_opt, opt.common, true);
  sub_opt->add_option("--config", opt.config_path,
                      "Optimizer config JSON path");
  sub_opt->add_option("--steps", opt.steps, "Descent steps per restart");
  sub_opt->add_option("--restarts", opt.restarts, "Random restarts");
  sub_opt->add_option("--lr", opt.learning_rate, "Adam learning rate");
  sub_opt->add_option("--alpha", opt.alpha, "Divisor logit sharpness");
  sub_opt->add_option("--tau0", opt.tau0, "Initial softmax temperature");
  sub_opt->add_option("--tau-min", opt.tau_min, "Final softmax temperature");
  sub_opt->add_option("--anneal-fraction", opt.anneal_fraction,
                      "Fraction of steps spent annealing");
  sub_opt->add_option("--lambda0", opt.lambda0, "Initial penalty weight");
  sub_opt->add_option("--lambda-max", opt.lambda_max, "Final penalty weight");
  sub_opt->add_option("--sigma-threshold", opt.sigma_threshold,
                      "Fusion decode threshold");

  OracleOptions orc;
  CLI::App* sub_orc = app.add_subcommand(
      "oracle-check", "Compare closed-form traffic against loop-nest counts");
  add_common(sub_orc, orc.common, true);
  sub_orc->add_option("--samples", orc.samples, "Random tilings to compare");
  sub_orc
      ->add_flag("--corrupt-model", orc.corrupt_model,
                 "Skew one closed form (negative-test hook)")
      ->group("");

  ExhaustiveOptions exh;
  CLI::App* sub_exh = app.add_subcommand(
      "exhaustive", "Enumerate the full joint space for a reference optimum");
  add_common(sub_exh, exh.common, true);
  sub_exh->add_option("--guard", exh.guard,
                      "Maximum joint combinations to enumerate");

  BaselineOptions bas;
  CLI::App* sub_bas = app.add_subcommand(
      "baseline", "Compare search methods at an equal evaluation budget");
  add_common(sub_bas, bas.common, true);
  sub_bas->add_option("--methods", bas.methods,
                      "Comma-separated subset of grad,ga,random");
  sub_bas->add_option("--budget", bas.budget,
                      "Cost-model evaluations per method");
  sub_bas->add_option("--seeds", bas.seeds, "Seeds per method");

  ReportOptions rep;
  CLI::App* sub_rep = app.add_subcommand(
      "report", "Merge run directories into a cross-run CSV");
  sub_rep->add_option("runs", rep.runs, "Run directories")->required();
  sub_rep->add_option("--out", rep.out_file, "Output CSV path");
  sub_rep->add_flag("--zscore", rep.zscore,
                    "Append z-score normalized energy/latency columns");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    opt.seed_given = sub_opt->count("--seed") > 0;
    if (sub_opt->parsed()) return cmd_optimize(opt);
    if (sub_orc->parsed()) return cmd_oracle_check(orc);
    if (sub_exh->parsed()) return cmd_exhaustive(exh);
    if (sub_bas->parsed()) return cmd_baseline(bas);
    if (sub_rep->parsed()) return cmd_report(rep);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand given\n";
  return 1;
}

}  // namespace fusemap::cli
