#ifndef POSTHOC_PIPELINE_HPP
#define POSTHOC_PIPELINE_HPP

// End-to-end runs: calibrate every requested method on one dataset, then
// cluster tables, confidence curve and size scatter; plus the simulation
// coverage experiment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "posthoc/clusters.hpp"
#include "posthoc/report.hpp"
#include "posthoc/simulate.hpp"
#include "posthoc/stats.hpp"
#include "posthoc/tdp.hpp"
#include "posthoc/template_io.hpp"
#include "posthoc/templates.hpp"

namespace posthoc {

struct BenchConfig {
  std::vector<TemplateKind> methods{TemplateKind::ari, TemplateKind::notip, TemplateKind::pari};
  double alpha = 0.05;
  std::size_t B = 1000;       // pARI calibration rows
  std::size_t b_train = 1000; // Notip training rows
  std::size_t b_calib = 500;  // Notip calibration rows
  std::size_t delta = 27;
  std::size_t kmax = 0;       // Notip K, 0 = 2% of m
  std::size_t template_k = 0; // Simes / ARI / pARI length, 0 = m
  std::vector<double> z_list{3.0, 3.5, 4.0, 4.5, 5.0};
  int connectivity = 26;
  Sidedness sidedness = Sidedness::two_sided;
  std::uint64_t seed = 0;
  std::size_t curve_points = 0; // 0 = every k in [m]
  unsigned threads = default_threads();
};

inline void validate(const BenchConfig& cfg) {
  detail::check_alpha(cfg.alpha);
  check_connectivity(cfg.connectivity);
  if (cfg.methods.empty()) throw ParamError("no methods requested");
  for (std::size_t i = 0; i < cfg.z_list.size(); ++i) {
    if (!std::isfinite(cfg.z_list[i])) throw ParamError("z thresholds must be finite");
    if (i > 0 && !(cfg.z_list[i] > cfg.z_list[i - 1])) throw ParamError("z thresholds must be strictly ascending");
  }
}

/// Notip learns its curves from a second, independent sign-flip round.
inline std::uint64_t notip_training_seed(std::uint64_t seed) { return mix_seed(seed ^ 0x4E6F746970ull); }

inline nlohmann::json to_json(const BenchConfig& cfg) {
  std::vector<std::string> methods;
  for (auto k : cfg.methods) methods.push_back(to_string(k));
  return {{"methods", methods},
          {"alpha", cfg.alpha},
          {"B", cfg.B},
          {"B_train", cfg.b_train},
          {"B_calib", cfg.b_calib},
          {"delta", cfg.delta},
          {"kmax", cfg.kmax},
          {"template_k", cfg.template_k},
          {"z", cfg.z_list},
          {"connectivity", cfg.connectivity},
          {"sidedness", to_string(cfg.sidedness)},
          {"seed", cfg.seed},
          {"notip_training_seed", notip_training_seed(cfg.seed)},
          {"curve_points", cfg.curve_points}};
}

inline nlohmann::json to_json(const SimConfig& cfg) {
  nlohmann::json regions = nlohmann::json::array();
  for (const auto& r : cfg.regions) regions.push_back({{"center", r.center}, {"radius", r.radius}, {"effect", r.effect}});
  nlohmann::json j = {{"dims", cfg.dims},       {"voxel_mm", cfg.voxel_mm}, {"n_subjects", cfg.n_subjects},
                      {"sigma", cfg.sigma},     {"regions", regions},       {"seed", cfg.seed},
                      {"pi0_effect", cfg.pi0_effect}};
  j["pi0_target"] = cfg.pi0 ? nlohmann::json(*cfg.pi0) : nlohmann::json(nullptr);
  return j;
}

struct CalibratedMethods {
  TemplateSet templates;
  nlohmann::json details = nlohmann::json::object();
};

/// One template per requested method. pARI and Notip calibration share the
/// rows of a single sign-flip matrix (same seed, common prefix).
inline CalibratedMethods calibrate_methods(const SubjectStack& stack, std::span<const double> p, const BenchConfig& cfg) {
  validate(cfg);
  const std::size_t m = stack.m();
  if (p.size() != m) throw ParamError("p-value vector does not match the stack");
  const std::size_t full_k = cfg.template_k == 0 ? m : cfg.template_k;
  const std::size_t notip_k = cfg.kmax == 0 ? notip_default_k(m) : cfg.kmax;
  const auto wants = [&](TemplateKind k) { return std::find(cfg.methods.begin(), cfg.methods.end(), k) != cfg.methods.end(); };

  CalibratedMethods out;
  if (wants(TemplateKind::simes)) {
    out.templates.emplace("Simes", simes_template(m, cfg.alpha, full_k));
    out.details["Simes"] = {{"K", full_k}};
  }
  if (wants(TemplateKind::ari)) {
    auto t = ari_template(p, cfg.alpha, full_k);
    out.details["ARI"] = {{"K", full_k}, {"hommel", *t.hommel}};
    out.templates.emplace("ARI", std::move(t));
  }
  const bool pari = wants(TemplateKind::pari);
  const bool notip = wants(TemplateKind::notip);
  if (!pari && !notip) return out;

  if (notip_k > m) throw ParamError("Notip K exceeds the number of voxels");
  NullOptions opts;
  opts.sidedness = cfg.sidedness;
  opts.threads = cfg.threads;
  const std::size_t rows = std::max(pari ? cfg.B : 0, notip ? cfg.b_calib : 0);
  opts.width = pari ? 0 : notip_k;
  const auto calib = sign_flip_null(stack, rows, cfg.seed, opts);

  if (pari) {
    auto res = calibrate_pari(calib.view().head(cfg.B), cfg.delta, cfg.alpha, full_k, cfg.threads);
    out.details["pARI"] = {{"K", full_k}, {"delta", cfg.delta}, {"lambda_star", res.lambda_star},
                           {"k_alpha", res.k_alpha}, {"B", cfg.B}, {"seed", cfg.seed}};
    out.templates.emplace("pARI", std::move(res.tmpl));
  }
  if (notip) {
    NullOptions train_opts = opts;
    train_opts.width = notip_k;
    train_opts.identity_first = false;
    const auto train = sign_flip_null(stack, cfg.b_train, notip_training_seed(cfg.seed), train_opts);
    const auto family = learn_notip_templates(train, notip_k);
    auto res = calibrate_notip(family, calib.view().head(cfg.b_calib), cfg.alpha, cfg.threads);
    out.details["Notip"] = {{"K", notip_k},         {"lambda_star", res.lambda_star}, {"curve_index", res.curve_index},
                            {"k_alpha", res.k_alpha}, {"B_train", cfg.b_train},     {"B_calib", cfg.b_calib},
                            {"training_seed", notip_training_seed(cfg.seed)},           {"calibration_seed", cfg.seed}};
    out.templates.emplace("Notip", std::move(res.tmpl));
  }
  return out;
}

/// About `count` distinct k values in [1, m], geometrically spaced, always including 1 and m.
inline std::vector<std::size_t> log_spaced_ks(std::size_t m, std::size_t count) {
  if (m == 0) throw ParamError("m must be positive");
  std::set<std::size_t> ks{1, m};
  for (std::size_t i = 0; count > 1 && i < count; ++i) {
    const double e = static_cast<double>(i) / static_cast<double>(count - 1);
    ks.insert(std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(std::pow(static_cast<double>(m), e))), 1, m));
  }
  return {ks.begin(), ks.end()};
}

struct ObservedMaps {
  StatMap z;
  PValueVector p;
};

inline ObservedMaps observed_maps(const SubjectStack& stack, Sidedness side) {
  const auto flips = identity_flips(stack.n_subjects());
  return {one_sample_z(stack, flips), one_sample_p(stack, flips, side)};
}

/// Calibration, cluster tables for every z, confidence curve and scatter records.
/// `source` describes where the data came from and is copied into the config block.
inline ReportBundle run_benchmark(const SubjectStack& stack, const BenchConfig& cfg, const nlohmann::json& source = {}) {
  validate(cfg);
  const auto maps = observed_maps(stack, cfg.sidedness);
  const auto calibrated = calibrate_methods(stack, maps.p.values(), cfg);

  ReportBundle bundle;
  bundle.config = {{"bench", to_json(cfg)}, {"source", source}, {"calibration", calibrated.details}, {"m", stack.m()},
                   {"n_subjects", stack.n_subjects()}, {"voxel_volume_mm3", stack.mask().grid().voxel_volume()}};
  for (double z : cfg.z_list) {
    auto table = cluster_table(extract_clusters(maps.z, z, cfg.connectivity), maps.p.values(), calibrated.templates, z,
                               cfg.connectivity);
    for (std::size_t i = 0; i < table.clusters.size(); ++i)
      for (std::size_t k = 0; k < table.methods.size(); ++k)
        bundle.scatter.push_back({z, table.clusters[i].id, table.clusters[i].size_mm3, table.methods[k], table.bounds[i][k]});
    bundle.tables.push_back(std::move(table));
  }
  std::vector<std::size_t> ks;
  if (cfg.curve_points != 0) ks = log_spaced_ks(stack.m(), cfg.curve_points);
  bundle.curve = confidence_curve(maps.z, maps.p.values(), calibrated.templates, ks);
  return bundle;
}

// ---- coverage ---------------------------------------------------------------

struct Interval {
  double lo = 0.0, hi = 1.0;
};

/// Wilson score interval for a binomial proportion (95% by default).
inline Interval wilson_interval(std::size_t successes, std::size_t n, double z = 1.959963984540054) {
  if (n == 0) return {};
  const double nn = static_cast<double>(n);
  const double ph = static_cast<double>(successes) / nn;
  const double denom = 1.0 + z * z / nn;
  const double centre = (ph + z * z / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(ph * (1.0 - ph) / nn + z * z / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

/// For each template: does some checked set (top-k for k in ks, clusters at each z)
/// get a bound above its true TDP?
inline std::map<std::string, bool> checked_family_violations(const StatMap& zmap, std::span<const double> p,
                                                             std::span<const std::uint8_t> h0,
                                                             const TemplateSet& templates,
                                                             const std::vector<std::size_t>& ks,
                                                             const std::vector<double>& z_list, int connectivity) {
  std::map<std::string, bool> violated;
  for (const auto& [name, t] : templates) violated[name] = false;

  const auto order = top_k_order(zmap.z);
  std::vector<std::size_t> signal_prefix(zmap.m() + 1, 0);
  for (std::size_t i = 0; i < order.size(); ++i) signal_prefix[i + 1] = signal_prefix[i] + (h0[order[i]] ? 0 : 1);
  const auto curve = confidence_curve(zmap, p, templates, ks);
  for (std::size_t mi = 0; mi < curve.methods.size(); ++mi)
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const double truth = static_cast<double>(signal_prefix[ks[i]]) / static_cast<double>(ks[i]);
      if (curve.bounds[mi][i] > truth) violated[curve.methods[mi]] = true;
    }

  for (double z : z_list)
    for (const auto& c : extract_clusters(zmap, z, connectivity)) {
      const double truth = true_tdp(c.voxels, h0);
      for (const auto& [name, t] : templates)
        if (!violated[name] && tdp_bound(p, c.voxels, t.thresholds) > truth) violated[name] = true;
    }
  return violated;
}

struct CoverageReport {
  std::size_t n_reps = 0;
  double alpha = 0.0;
  double budget = 0.0; // alpha + 3 Monte-Carlo sd
  std::vector<std::string> methods;
  std::vector<std::size_t> violations;
  std::vector<double> frequency;
  std::vector<Interval> wilson;
  std::vector<double> pi0;                 // per replication
  std::vector<std::vector<bool>> violated; // [rep][method]
  nlohmann::json config;
};

inline nlohmann::json to_json(const CoverageReport& r) {
  nlohmann::json methods = nlohmann::json::object();
  for (std::size_t i = 0; i < r.methods.size(); ++i)
    methods[r.methods[i]] = {{"violations", r.violations[i]},
                             {"frequency", r.frequency[i]},
                             {"wilson95", {r.wilson[i].lo, r.wilson[i].hi}},
                             {"within_budget", r.frequency[i] <= r.budget}};
  return {{"config", r.config}, {"n_reps", r.n_reps}, {"alpha", r.alpha}, {"budget", r.budget}, {"methods", methods}};
}

/// Replication r simulates with a seed derived from (sim.seed, r) and calibrates
/// with one derived from (bench.seed, r); results are reduced in replication order.
inline CoverageReport coverage_experiment(const SimConfig& sim, const BenchConfig& bench, std::size_t n_reps,
                                          const std::function<void(std::size_t)>& progress = {}) {
  if (n_reps < 100) throw ParamError("coverage experiments need at least 100 replications");
  validate(bench);
  CoverageReport report;
  report.n_reps = n_reps;
  report.alpha = bench.alpha;
  report.budget = bench.alpha + 3.0 * std::sqrt(bench.alpha * (1.0 - bench.alpha) / static_cast<double>(n_reps));
  report.config = {{"sim", to_json(sim)}, {"bench", to_json(bench)}, {"n_reps", n_reps}, {"family_top_k_points", 50}};

  for (std::size_t r = 0; r < n_reps; ++r) {
    SimConfig s = sim;
    s.seed = mix_seed(sim.seed + 0x9E3779B97F4A7C15ull * (r + 1));
    BenchConfig b = bench;
    b.seed = mix_seed(bench.seed + 0xD1B54A32D192ED03ull * (r + 1));
    const auto data = simulate_dataset(s);
    const auto maps = observed_maps(data.stack, b.sidedness);
    const auto calibrated = calibrate_methods(data.stack, maps.p.values(), b);
    const auto ks = log_spaced_ks(data.stack.m(), 50);
    const auto v = checked_family_violations(maps.z, maps.p.values(), data.h0, calibrated.templates, ks, b.z_list,
                                             b.connectivity);
    if (report.methods.empty()) {
      for (const auto& [name, flag] : v) report.methods.push_back(name);
      report.violations.assign(report.methods.size(), 0);
    }
    std::vector<bool> row;
    for (std::size_t i = 0; i < report.methods.size(); ++i) {
      const bool flag = v.at(report.methods[i]);
      row.push_back(flag);
      report.violations[i] += flag ? 1 : 0;
    }
    report.violated.push_back(std::move(row));
    report.pi0.push_back(data.pi0);
    if (progress) progress(r);
  }
  for (auto count : report.violations) {
    report.frequency.push_back(static_cast<double>(count) / static_cast<double>(n_reps));
    report.wilson.push_back(wilson_interval(count, n_reps));
  }
  return report;
}

} // namespace posthoc

#endif
