// posthoc: command-line front end for TDP lower bounds, cluster tables,
// confidence curves and simulation studies.
//
// Exit codes: 0 success, 2 parameter errors, 3 format / I/O / data errors, 1 anything else.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "posthoc/posthoc.hpp"

namespace fs = std::filesystem;
using namespace posthoc;

namespace {

struct Options {
  double alpha = 0.05;
  std::uint64_t seed = 0;
  std::size_t b = 1000, b_train = 1000, b_calib = 500;
  std::size_t delta = 27;
  std::size_t kmax = 0;
  int connectivity = 26;
  std::vector<double> z{3.0, 3.5, 4.0, 4.5, 5.0};
  std::vector<std::string> formats{"csv", "json", "svg"};
  std::string out = "posthoc_out";
  std::string input;
  std::string sidedness = "two-sided";
  std::vector<std::string> methods{"ARI", "Notip", "pARI"};
  unsigned threads = default_threads();
  std::size_t curve_points = 0;

  // simulation
  std::vector<std::uint32_t> grid{30, 30, 30};
  float voxel_mm = 3.0f;
  std::size_t subjects = 20;
  double sigma = 2.0;
  std::vector<std::string> regions;
  std::optional<double> pi0;

  // subcommand specific
  std::string templates;
  std::string bundle;
  std::vector<std::size_t> indices;
  std::string indices_file;
  double z_new = 0.0;
  std::size_t cluster = 0;
  std::size_t reps = 500;
};

BenchConfig bench_config(const Options& o) {
  BenchConfig cfg;
  cfg.methods.clear();
  for (const auto& name : o.methods) {
    try {
      cfg.methods.push_back(template_kind_from_string(name));
    } catch (const FormatError&) {
      throw ParamError("unknown method '" + name + "' (expected Simes, ARI, pARI or Notip)");
    }
  }
  cfg.alpha = o.alpha;
  cfg.B = o.b;
  cfg.b_train = o.b_train;
  cfg.b_calib = o.b_calib;
  cfg.delta = o.delta;
  cfg.kmax = o.kmax;
  cfg.z_list = o.z;
  cfg.connectivity = o.connectivity;
  cfg.sidedness = sidedness_from_string(o.sidedness);
  cfg.seed = o.seed;
  cfg.curve_points = o.curve_points;
  cfg.threads = std::max(1u, o.threads);
  validate(cfg);
  return cfg;
}

SignalRegion parse_region(const std::string& spec) {
  std::vector<double> v;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ParamError("bad --region '" + spec + "' (expected x,y,z,radius,effect)");
    }
  }
  if (v.size() != 5) throw ParamError("bad --region '" + spec + "' (expected x,y,z,radius,effect)");
  return {{v[0], v[1], v[2]}, v[3], v[4]};
}

SimConfig sim_config(const Options& o) {
  SimConfig cfg;
  if (o.grid.size() == 1) cfg.dims = {o.grid[0], o.grid[0], o.grid[0]};
  else if (o.grid.size() == 3) cfg.dims = {o.grid[0], o.grid[1], o.grid[2]};
  else throw ParamError("--grid takes one or three sizes");
  for (auto d : cfg.dims)
    if (d == 0) throw ParamError("grid sizes must be positive");
  cfg.voxel_mm = o.voxel_mm;
  cfg.n_subjects = o.subjects;
  cfg.sigma = o.sigma;
  for (const auto& r : o.regions) cfg.regions.push_back(parse_region(r));
  cfg.pi0 = o.pi0;
  cfg.seed = o.seed;
  cfg.threads = std::max(1u, o.threads);
  return cfg;
}

struct Dataset {
  SubjectStack stack;
  nlohmann::json source;
};

/// The --input PHDAT file, or a simulated dataset from the simulation flags.
Dataset load_dataset(const Options& o) {
  if (!o.input.empty()) return {read_phdat(o.input), {{"phdat", o.input}}};
  const auto cfg = sim_config(o);
  auto sim = simulate_dataset(cfg);
  return {std::move(sim.stack), {{"simulation", to_json(cfg)}, {"pi0", sim.pi0}}};
}

TemplateSet load_or_calibrate(const Options& o, const SubjectStack& stack, std::span<const double> p,
                              const BenchConfig& cfg, nlohmann::json& details) {
  if (o.templates.empty()) {
    auto c = calibrate_methods(stack, p, cfg);
    details = c.details;
    return c.templates;
  }
  auto set = templates_from_json(read_json_file(o.templates));
  for (const auto& [name, t] : set)
    if (t.K() > stack.m()) throw ParamError("template '" + name + "' is longer than the dataset");
  details = {{"templates_file", o.templates}};
  return set;
}

std::set<std::string> format_set(const Options& o) { return {o.formats.begin(), o.formats.end()}; }

fs::path out_dir(const Options& o) {
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec || !fs::is_directory(o.out)) throw IoError("cannot create output directory " + o.out);
  return o.out;
}

nlohmann::json base_config(const Options& o, const BenchConfig& cfg, const Dataset& d) {
  return {{"bench", to_json(cfg)}, {"source", d.source}, {"m", d.stack.m()}, {"n_subjects", d.stack.n_subjects()},
          {"voxel_volume_mm3", d.stack.mask().grid().voxel_volume()}, {"threads", o.threads}};
}

// ---- subcommands -------------------------------------------------------------

int cmd_simulate(const Options& o) {
  const auto cfg = sim_config(o);
  const auto sim = simulate_dataset(cfg);
  const auto dir = out_dir(o);
  write_phdat(sim.stack, dir / "sim.phdat");
  std::vector<std::size_t> signal;
  for (std::size_t v = 0; v < sim.h0.size(); ++v)
    if (!sim.h0[v]) signal.push_back(v);
  write_json_file(dir / "sim_truth.json", {{"config", to_json(cfg)}, {"m", sim.stack.m()}, {"pi0", sim.pi0}, {"signal_voxels", signal}});
  std::cout << "wrote " << (dir / "sim.phdat").string() << " (m=" << sim.stack.m() << ", n=" << sim.stack.n_subjects()
            << ", pi0=" << sim.pi0 << ")\n";
  return 0;
}

int cmd_nullcache(const Options& o) {
  const auto d = load_dataset(o);
  NullOptions opts;
  opts.sidedness = sidedness_from_string(o.sidedness);
  opts.threads = std::max(1u, o.threads);
  const auto null = sign_flip_null(d.stack, o.b, o.seed, opts);
  const auto path = out_dir(o) / "null.pnul";
  write_pnul(null, path);
  std::cout << "wrote " << path.string() << " (B=" << null.B << ", m=" << null.m << ", seed=" << null.seed << ")\n";
  return 0;
}

int cmd_calibrate(const Options& o) {
  const auto cfg = bench_config(o);
  const auto d = load_dataset(o);
  const auto maps = observed_maps(d.stack, cfg.sidedness);
  const auto c = calibrate_methods(d.stack, maps.p.values(), cfg);
  nlohmann::json templates = nlohmann::json::object();
  for (const auto& [name, t] : c.templates) templates[name] = to_json(t);
  const auto path = out_dir(o) / "templates.json";
  write_json_file(path, {{"config", base_config(o, cfg, d)}, {"calibration", c.details}, {"templates", templates}});
  for (const auto& [name, t] : c.templates) {
    std::cout << name << ": K=" << t.K();
    if (t.lambda_star) std::cout << " lambda*=" << format_double(*t.lambda_star);
    if (t.hommel) std::cout << " h=" << *t.hommel;
    std::cout << '\n';
  }
  std::cout << "wrote " << path.string() << '\n';
  return 0;
}

std::vector<std::size_t> read_indices(const Options& o) {
  std::vector<std::size_t> idx = o.indices;
  if (!o.indices_file.empty()) {
    std::ifstream in(o.indices_file);
    if (!in) throw IoError("cannot open " + o.indices_file);
    std::string token;
    while (in >> token) {
      for (auto& ch : token)
        if (ch == ',') ch = ' ';
      std::stringstream ss(token);
      long long v;
      while (ss >> v) {
        if (v < 0) throw ParamError("negative voxel index in " + o.indices_file);
        idx.push_back(static_cast<std::size_t>(v));
      }
      if (!ss.eof()) throw FormatError("non-numeric token in " + o.indices_file);
    }
  }
  return idx;
}

int cmd_bound(const Options& o) {
  const auto cfg = bench_config(o);
  const auto d = load_dataset(o);
  const Selection sel(read_indices(o), d.stack.m());
  const auto maps = observed_maps(d.stack, cfg.sidedness);
  nlohmann::json details;
  const auto templates = load_or_calibrate(o, d.stack, maps.p.values(), cfg, details);
  nlohmann::json bounds = nlohmann::json::object();
  for (const auto& [name, t] : templates) bounds[name] = tdp_bound(maps.p.values(), sel.indices(), t.thresholds);
  const nlohmann::json result = {{"config", base_config(o, cfg, d)}, {"calibration", details}, {"size", sel.size()}, {"bounds", bounds}};
  if (!o.out.empty() && o.out != "-") write_json_file(out_dir(o) / "bound.json", result);
  std::cout << bounds.dump() << '\n';
  return 0;
}

int cmd_clusters(const Options& o) {
  const auto cfg = bench_config(o);
  const auto d = load_dataset(o);
  const auto maps = observed_maps(d.stack, cfg.sidedness);
  nlohmann::json details;
  const auto templates = load_or_calibrate(o, d.stack, maps.p.values(), cfg, details);
  auto config = base_config(o, cfg, d);
  config["calibration"] = details;
  const auto dir = out_dir(o);
  const auto formats = format_set(o);
  for (double z : cfg.z_list) {
    const auto table = cluster_table(extract_clusters(maps.z, z, cfg.connectivity), maps.p.values(), templates, z, cfg.connectivity);
    const std::string stem = "clusters_z" + z_tag(z);
    if (formats.count("csv")) write_text_file(dir / (stem + ".csv"), clusters_csv(table, config));
    if (formats.count("json")) {
      auto j = to_json(table);
      j["config"] = config;
      write_json_file(dir / (stem + ".json"), j);
    }
    std::cout << "z=" << format_double(z) << ": " << table.clusters.size() << " clusters, " << table.reportable_count()
              << " with detected signal\n";
  }
  return 0;
}

int cmd_drill(const Options& o) {
  const auto cfg = bench_config(o);
  if (cfg.z_list.size() != 1) throw ParamError("drill takes a single parent threshold in --z");
  if (o.cluster == 0) throw ParamError("drill needs --cluster <id>");
  const auto d = load_dataset(o);
  const auto maps = observed_maps(d.stack, cfg.sidedness);
  const double z = cfg.z_list.front();
  const auto parents = extract_clusters(maps.z, z, cfg.connectivity);
  if (o.cluster > parents.size()) throw IndexError("no cluster " + std::to_string(o.cluster) + " at z=" + format_double(z));
  nlohmann::json details;
  const auto templates = load_or_calibrate(o, d.stack, maps.p.values(), cfg, details);
  const auto children = drill_down(parents[o.cluster - 1], maps.z, o.z_new, cfg.connectivity);
  const auto table = cluster_table(children, maps.p.values(), templates, o.z_new, cfg.connectivity);
  auto config = base_config(o, cfg, d);
  config["calibration"] = details;
  config["drill"] = {{"parent_z", z}, {"parent_id", o.cluster}, {"z_new", o.z_new}};
  const auto dir = out_dir(o);
  const std::string stem = "drill_z" + z_tag(z) + "_c" + std::to_string(o.cluster) + "_z" + z_tag(o.z_new);
  const auto formats = format_set(o);
  if (formats.count("csv")) write_text_file(dir / (stem + ".csv"), clusters_csv(table, config));
  if (formats.count("json")) {
    auto j = to_json(table);
    j["config"] = config;
    write_json_file(dir / (stem + ".json"), j);
  }
  std::cout << "cluster " << o.cluster << " at z=" << format_double(z) << " splits into " << children.size()
            << " clusters at z=" << format_double(o.z_new) << '\n';
  return 0;
}

int cmd_curve(const Options& o) {
  const auto cfg = bench_config(o);
  const auto d = load_dataset(o);
  const auto maps = observed_maps(d.stack, cfg.sidedness);
  nlohmann::json details;
  const auto templates = load_or_calibrate(o, d.stack, maps.p.values(), cfg, details);
  std::vector<std::size_t> ks;
  if (cfg.curve_points) ks = log_spaced_ks(d.stack.m(), cfg.curve_points);
  const auto curve = confidence_curve(maps.z, maps.p.values(), templates, ks);
  auto config = base_config(o, cfg, d);
  config["calibration"] = details;
  const auto dir = out_dir(o);
  const auto formats = format_set(o);
  if (formats.count("csv")) write_text_file(dir / "curve.csv", curve_csv(curve, config));
  if (formats.count("json")) {
    auto j = to_json(curve);
    j["config"] = config;
    write_json_file(dir / "curve.json", j);
  }
  if (formats.count("svg")) write_text_file(dir / "curve.svg", curve_svg(curve, config));
  std::cout << "curve over " << curve.ks.size() << " values of k written to " << dir.string() << '\n';
  return 0;
}

int cmd_bench(const Options& o) {
  const auto cfg = bench_config(o);
  const auto d = load_dataset(o);
  const auto bundle = run_benchmark(d.stack, cfg, d.source);
  const auto written = emit_report(bundle, format_set(o), o.out);
  for (const auto& t : bundle.tables)
    std::cout << "z=" << format_double(t.z_threshold) << ": " << t.clusters.size() << " clusters, "
              << t.reportable_count() << " with detected signal\n";
  std::cout << written.size() << " files written to " << o.out << '\n';
  return 0;
}

int cmd_coverage(const Options& o) {
  const auto cfg = bench_config(o);
  const auto sim = sim_config(o);
  const auto report = coverage_experiment(sim, cfg, o.reps, [&](std::size_t r) {
    if ((r + 1) % 50 == 0) std::cerr << "replication " << r + 1 << "/" << o.reps << '\n';
  });
  const auto path = out_dir(o) / "coverage.json";
  write_json_file(path, to_json(report));
  for (std::size_t i = 0; i < report.methods.size(); ++i)
    std::cout << report.methods[i] << ": " << report.violations[i] << "/" << report.n_reps << " violations, frequency "
              << format_double(report.frequency[i]) << " (Wilson 95% [" << report.wilson[i].lo << ", "
              << report.wilson[i].hi << "]), budget " << report.budget << '\n';
  return 0;
}

int cmd_report(const Options& o) {
  if (o.bundle.empty()) throw ParamError("report needs --bundle <bundle.json>");
  const auto bundle = bundle_from_json(read_json_file(o.bundle));
  const auto written = emit_report(bundle, format_set(o), o.out);
  std::cout << written.size() << " files written to " << o.out << '\n';
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post hoc TDP lower bounds (Simes, ARI, pARI, Notip) for group-level statistical maps"};
  app.require_subcommand(1);
  Options o;

  app.add_option("--alpha", o.alpha, "Confidence budget alpha")->capture_default_str();
  app.add_option("--seed", o.seed, "Random seed")->capture_default_str();
  app.add_option("--b", o.b, "Sign-flip randomizations for pARI (and nullcache)")->capture_default_str();
  app.add_option("--b-train", o.b_train, "Notip training randomizations")->capture_default_str();
  app.add_option("--b-calib", o.b_calib, "Notip calibration randomizations")->capture_default_str();
  app.add_option("--delta", o.delta, "pARI delta")->capture_default_str();
  app.add_option("--kmax", o.kmax, "Notip template length K (0 = 2% of m)")->capture_default_str();
  app.add_option("--connectivity", o.connectivity, "Cluster connectivity")->check(CLI::IsMember({6, 18, 26}))->capture_default_str();
  app.add_option("--z", o.z, "Cluster-forming thresholds")->delimiter(',')->capture_default_str();
  app.add_option("--format", o.formats, "Output formats")->delimiter(',')->check(CLI::IsMember({"csv", "json", "svg"}))->capture_default_str();
  app.add_option("--out", o.out, "Output directory")->capture_default_str();
  app.add_option("--input", o.input, "PHDAT input (simulated data when omitted)");
  app.add_option("--threads", o.threads, "Worker threads")->capture_default_str();
  app.add_option("--sidedness", o.sidedness, "two-sided or one-sided")->check(CLI::IsMember({"two-sided", "one-sided"}))->capture_default_str();
  app.add_option("--methods", o.methods, "Methods: Simes, ARI, pARI, Notip")->delimiter(',')->capture_default_str();
  app.add_option("--templates", o.templates, "templates.json from 'calibrate' (otherwise calibrate on the fly)");
  app.add_option("--curve-points", o.curve_points, "Log-spaced curve points (0 = every k)")->capture_default_str();
  app.add_option("--grid", o.grid, "Simulation grid size (n or nx,ny,nz)")->delimiter(',')->capture_default_str();
  app.add_option("--voxel-mm", o.voxel_mm, "Simulation voxel size (mm)")->capture_default_str();
  app.add_option("--subjects", o.subjects, "Simulated subjects")->capture_default_str();
  app.add_option("--sigma", o.sigma, "Simulation smoothing sd (voxels)")->capture_default_str();
  app.add_option("--region", o.regions, "Signal sphere x,y,z,radius,effect (repeatable)");
  app.add_option("--pi0", o.pi0, "Null proportion target when no region is given");

  auto* simulate = app.add_subcommand("simulate", "Write a synthetic PHDAT dataset and its ground truth");
  auto* nullcache = app.add_subcommand("nullcache", "Compute and cache a sign-flip null matrix (PNUL1)");
  auto* calibrate = app.add_subcommand("calibrate", "Calibrate templates and write templates.json");
  auto* bound = app.add_subcommand("bound", "TDP lower bound of a voxel set");
  bound->add_option("--indices", o.indices, "Masked voxel indices")->delimiter(',');
  bound->add_option("--indices-file", o.indices_file, "File of masked voxel indices");
  auto* clusters = app.add_subcommand("clusters", "Cluster tables at each --z");
  auto* drill = app.add_subcommand("drill", "Re-threshold one cluster at a higher z");
  drill->add_option("--cluster", o.cluster, "Parent cluster id")->required();
  drill->add_option("--z-new", o.z_new, "New threshold")->required();
  auto* curve = app.add_subcommand("curve", "Confidence curve over top-k sets");
  auto* bench = app.add_subcommand("bench", "Full benchmark: tables, curve, scatter");
  auto* coverage = app.add_subcommand("coverage", "Simulation coverage experiment");
  coverage->add_option("--reps", o.reps, "Replications")->capture_default_str();
  auto* report = app.add_subcommand("report", "Re-render a saved bundle.json");
  report->add_option("--bundle", o.bundle, "bundle.json from 'bench'")->required();
  for (auto* sub : {simulate, nullcache, calibrate, bound, clusters, drill, curve, bench, coverage, report}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*simulate) return cmd_simulate(o);
    if (*nullcache) return cmd_nullcache(o);
    if (*calibrate) return cmd_calibrate(o);
    if (*bound) return cmd_bound(o);
    if (*clusters) return cmd_clusters(o);
    if (*drill) return cmd_drill(o);
    if (*curve) return cmd_curve(o);
    if (*bench) return cmd_bench(o);
    if (*coverage) return cmd_coverage(o);
    if (*report) return cmd_report(o);
  } catch (const ParamError& e) {
    std::cerr << "parameter error: " << e.what() << '\n';
    return 2;
  } catch (const IndexError& e) {
    std::cerr << "parameter error: " << e.what() << '\n';
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "parameter error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
