#ifndef POSTHOC_REPORT_HPP
#define POSTHOC_REPORT_HPP

// Report bundle and its CSV / JSON / SVG renderings. Every file carries the
// effective configuration: CSV as leading '#' lines, JSON as a "config" block,
// SVG inside <desc>.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "posthoc/clusters.hpp"
#include "posthoc/error.hpp"
#include "posthoc/tdp.hpp"

namespace posthoc {

struct ScatterRecord {
  double z = 0.0;
  std::size_t cluster_id = 0;
  double size_mm3 = 0.0;
  std::string method;
  double bound = 0.0;
};

struct ReportBundle {
  nlohmann::json config = nlohmann::json::object();
  std::vector<ClusterTable> tables;
  ConfidenceCurve curve;
  std::vector<ScatterRecord> scatter;
};

/// z values marked on confidence-curve plots.
inline const std::vector<double>& curve_reference_z() {
  static const std::vector<double> z{3.0, 3.5, 4.0, 4.5};
  return z;
}

/// Shortest round-trip decimal form.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Table style: truncated (not rounded) to two decimals, trailing zeros dropped.
inline std::string format_truncated(double v) {
  const double t = std::floor(v * 100.0 + 1e-9) / 100.0;
  return format_double(std::round(t * 100.0) / 100.0);
}

// ---- JSON -------------------------------------------------------------------

inline nlohmann::json to_json(const Cluster& c) {
  return {{"id", c.id},
          {"peak_voxel", c.peak_voxel},
          {"peak_world", c.peak_world},
          {"peak_stat", c.peak_stat},
          {"size_voxels", c.voxels.size()},
          {"size_mm3", c.size_mm3},
          {"z_threshold", c.z_threshold},
          {"voxels", c.voxels}};
}

inline Cluster cluster_from_json(const nlohmann::json& j) {
  Cluster c;
  c.id = j.at("id").get<std::size_t>();
  c.peak_voxel = j.at("peak_voxel").get<std::size_t>();
  c.peak_world = j.at("peak_world").get<Vec3>();
  c.peak_stat = j.at("peak_stat").get<double>();
  c.size_mm3 = j.at("size_mm3").get<double>();
  c.z_threshold = j.at("z_threshold").get<double>();
  c.voxels = j.at("voxels").get<std::vector<std::size_t>>();
  return c;
}

inline nlohmann::json to_json(const ClusterTable& t) {
  nlohmann::json clusters = nlohmann::json::array();
  for (std::size_t i = 0; i < t.clusters.size(); ++i) {
    auto c = to_json(t.clusters[i]);
    nlohmann::json b = nlohmann::json::object();
    for (std::size_t k = 0; k < t.methods.size(); ++k) b[t.methods[k]] = t.bounds[i][k];
    c["bounds"] = b;
    c["reportable"] = static_cast<bool>(t.reportable[i]);
    std::vector<std::string> best;
    for (std::size_t k = 0; k < t.methods.size(); ++k)
      if (t.best[i][k]) best.push_back(t.methods[k]);
    c["best"] = best;
    clusters.push_back(std::move(c));
  }
  return {{"z_threshold", t.z_threshold}, {"connectivity", t.connectivity}, {"methods", t.methods}, {"clusters", clusters}};
}

inline ClusterTable cluster_table_from_json(const nlohmann::json& j) {
  ClusterTable t;
  t.z_threshold = j.at("z_threshold").get<double>();
  t.connectivity = j.at("connectivity").get<int>();
  t.methods = j.at("methods").get<std::vector<std::string>>();
  for (const auto& c : j.at("clusters")) {
    t.clusters.push_back(cluster_from_json(c));
    std::vector<double> row;
    for (const auto& name : t.methods) row.push_back(c.at("bounds").at(name).get<double>());
    const auto best = c.at("best").get<std::vector<std::string>>();
    std::vector<bool> flags;
    for (const auto& name : t.methods) flags.push_back(std::find(best.begin(), best.end(), name) != best.end());
    t.reportable.push_back(c.at("reportable").get<bool>());
    t.best.push_back(std::move(flags));
    t.bounds.push_back(std::move(row));
  }
  return t;
}

inline nlohmann::json to_json(const ConfidenceCurve& c) {
  nlohmann::json bounds = nlohmann::json::object();
  for (std::size_t i = 0; i < c.methods.size(); ++i) bounds[c.methods[i]] = c.bounds[i];
  return {{"ks", c.ks}, {"z_at_k", c.z_at_k}, {"methods", c.methods}, {"bounds", bounds}, {"reference_z", curve_reference_z()}};
}

inline ConfidenceCurve confidence_curve_from_json(const nlohmann::json& j) {
  ConfidenceCurve c;
  c.ks = j.at("ks").get<std::vector<std::size_t>>();
  c.z_at_k = j.at("z_at_k").get<std::vector<double>>();
  c.methods = j.at("methods").get<std::vector<std::string>>();
  for (const auto& name : c.methods) c.bounds.push_back(j.at("bounds").at(name).get<std::vector<double>>());
  return c;
}

inline nlohmann::json to_json(const ReportBundle& b) {
  nlohmann::json tables = nlohmann::json::array();
  for (const auto& t : b.tables) tables.push_back(to_json(t));
  nlohmann::json scatter = nlohmann::json::array();
  for (const auto& s : b.scatter)
    scatter.push_back({{"z", s.z}, {"cluster_id", s.cluster_id}, {"size_mm3", s.size_mm3}, {"method", s.method}, {"bound", s.bound}});
  return {{"config", b.config}, {"cluster_tables", tables}, {"curve", to_json(b.curve)}, {"scatter", scatter}};
}

inline ReportBundle bundle_from_json(const nlohmann::json& j) {
  try {
    ReportBundle b;
    b.config = j.at("config");
    for (const auto& t : j.at("cluster_tables")) b.tables.push_back(cluster_table_from_json(t));
    b.curve = confidence_curve_from_json(j.at("curve"));
    for (const auto& s : j.at("scatter"))
      b.scatter.push_back({s.at("z").get<double>(), s.at("cluster_id").get<std::size_t>(), s.at("size_mm3").get<double>(),
                           s.at("method").get<std::string>(), s.at("bound").get<double>()});
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report bundle: ") + e.what());
  }
}

// ---- CSV --------------------------------------------------------------------

inline std::string config_comment(const nlohmann::json& config) { return "# config: " + config.dump() + "\n"; }

/// Human-facing table: reportable clusters only, bounds truncated to two decimals.
inline std::string clusters_csv(const ClusterTable& t, const nlohmann::json& config) {
  std::ostringstream out;
  out << config_comment(config);
  out << "# z_threshold: " << format_double(t.z_threshold) << ", connectivity: " << t.connectivity
      << ", clusters: " << t.clusters.size() << ", reportable: " << t.reportable_count() << "\n";
  out << "ID,X,Y,Z,PeakStat,Size_mm3";
  for (const auto& name : t.methods) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < t.clusters.size(); ++i) {
    if (!t.reportable[i]) continue;
    const auto& c = t.clusters[i];
    out << c.id << ',' << format_double(c.peak_world[0]) << ',' << format_double(c.peak_world[1]) << ','
        << format_double(c.peak_world[2]) << ',' << format_truncated(c.peak_stat) << ',' << format_double(c.size_mm3);
    for (double b : t.bounds[i]) out << ',' << format_truncated(b);
    out << '\n';
  }
  return out.str();
}

inline std::string curve_csv(const ConfidenceCurve& c, const nlohmann::json& config) {
  std::ostringstream out;
  out << config_comment(config);
  out << "# reference_z:";
  for (double z : curve_reference_z()) out << ' ' << format_double(z);
  out << "\nk,z_at_k";
  for (const auto& name : c.methods) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < c.ks.size(); ++i) {
    out << c.ks[i] << ',' << format_double(c.z_at_k[i]);
    for (const auto& b : c.bounds) out << ',' << format_double(b[i]);
    out << '\n';
  }
  return out.str();
}

inline std::string scatter_csv(const std::vector<ScatterRecord>& records, const nlohmann::json& config) {
  std::ostringstream out;
  out << config_comment(config);
  out << "z,cluster_id,size_mm3,method,bound\n";
  for (const auto& r : records)
    out << format_double(r.z) << ',' << r.cluster_id << ',' << format_double(r.size_mm3) << ',' << r.method << ','
        << format_double(r.bound) << '\n';
  return out.str();
}

// ---- SVG --------------------------------------------------------------------

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    case '\'': out += "&apos;"; break;
    default: out += c;
    }
  }
  return out;
}

inline const char* method_colour(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  return palette[i % 6];
}

struct Panel {
  double left, top, width, height;
  double x_lo, x_hi; // log10 domain
  double sx(double logx) const { return left + (logx - x_lo) / (x_hi - x_lo) * width; }
  double sy(double y) const { return top + (1.0 - y) * height; }
};

inline void svg_axes(std::ostringstream& out, const Panel& p, const std::string& xlabel, const std::string& title) {
  out << "<rect x=\"" << p.left << "\" y=\"" << p.top << "\" width=\"" << p.width << "\" height=\"" << p.height
      << "\" fill=\"none\" stroke=\"#000\"/>\n";
  for (int e = static_cast<int>(std::ceil(p.x_lo)); e <= static_cast<int>(std::floor(p.x_hi)); ++e) {
    const double x = p.sx(e);
    out << "<line x1=\"" << x << "\" y1=\"" << p.top + p.height << "\" x2=\"" << x << "\" y2=\"" << p.top + p.height + 5
        << "\" stroke=\"#000\"/>\n";
    out << "<text x=\"" << x << "\" y=\"" << p.top + p.height + 18 << "\" font-size=\"11\" text-anchor=\"middle\">1e" << e
        << "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double y = p.sy(i / 4.0);
    out << "<line x1=\"" << p.left - 5 << "\" y1=\"" << y << "\" x2=\"" << p.left << "\" y2=\"" << y << "\" stroke=\"#000\"/>\n";
    out << "<text x=\"" << p.left - 8 << "\" y=\"" << y + 4 << "\" font-size=\"11\" text-anchor=\"end\">"
        << format_double(i / 4.0) << "</text>\n";
  }
  out << "<text x=\"" << p.left + p.width / 2 << "\" y=\"" << p.top + p.height + 34
      << "\" font-size=\"12\" text-anchor=\"middle\">" << xml_escape(xlabel) << "</text>\n";
  out << "<text x=\"" << p.left + p.width / 2 << "\" y=\"" << p.top - 8 << "\" font-size=\"13\" text-anchor=\"middle\">"
      << xml_escape(title) << "</text>\n";
}

inline void svg_legend(std::ostringstream& out, const std::vector<std::string>& methods, double x, double y) {
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const double yy = y + 16.0 * static_cast<double>(i);
    out << "<rect x=\"" << x << "\" y=\"" << yy - 9 << "\" width=\"10\" height=\"10\" fill=\"" << method_colour(i)
        << "\"/>\n<text x=\"" << x + 14 << "\" y=\"" << yy << "\" font-size=\"11\">" << xml_escape(methods[i]) << "</text>\n";
  }
}

inline std::string svg_open(double width, double height, const nlohmann::json& config, const std::string& title) {
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n<title>" << xml_escape(title)
      << "</title>\n<desc>" << xml_escape(config.dump()) << "</desc>\n<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n";
  return out.str();
}

} // namespace detail

/// TDP lower bound against log k, with dotted verticals where |Z| crosses the reference values.
inline std::string curve_svg(const ConfidenceCurve& c, const nlohmann::json& config) {
  std::ostringstream out;
  out << detail::svg_open(720, 440, config, "TDP lower bound of the top-k voxels");
  const double kmax = c.ks.empty() ? 10.0 : static_cast<double>(c.ks.back());
  const detail::Panel p{70, 30, 520, 340, 0.0, std::max(1.0, std::log10(kmax))};
  detail::svg_axes(out, p, "k (voxels with the largest |Z|)", "Confidence curve");
  for (double z : curve_reference_z()) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < c.ks.size(); ++i)
      if (c.z_at_k[i] >= z) k = c.ks[i];
    if (k == 0) continue;
    const double x = p.sx(std::log10(static_cast<double>(k)));
    out << "<line x1=\"" << x << "\" y1=\"" << p.top << "\" x2=\"" << x << "\" y2=\"" << p.top + p.height
        << "\" stroke=\"#555\" stroke-dasharray=\"2,3\"/>\n<text x=\"" << x + 2 << "\" y=\"" << p.top + 12
        << "\" font-size=\"10\">z=" << format_double(z) << "</text>\n";
  }
  for (std::size_t mi = 0; mi < c.methods.size(); ++mi) {
    out << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << detail::method_colour(mi) << "\" points=\"";
    for (std::size_t i = 0; i < c.ks.size(); ++i)
      out << p.sx(std::log10(static_cast<double>(c.ks[i]))) << ',' << p.sy(c.bounds[mi][i]) << ' ';
    out << "\"/>\n";
  }
  detail::svg_legend(out, c.methods, p.left + p.width + 15, p.top + 10);
  out << "</svg>\n";
  return out.str();
}

/// One panel per cluster-forming threshold: bound against cluster size (log mm3).
inline std::string scatter_svg(const std::vector<ScatterRecord>& records, const nlohmann::json& config) {
  std::set<double> zs;
  std::vector<std::string> methods;
  double size_hi = 10.0, size_lo = 1e30;
  for (const auto& r : records) {
    zs.insert(r.z);
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    size_hi = std::max(size_hi, r.size_mm3);
    size_lo = std::min(size_lo, r.size_mm3);
  }
  if (size_lo > size_hi) size_lo = 1.0;
  const double x_lo = std::floor(std::log10(std::max(size_lo, 1e-3)));
  const double x_hi = std::max(x_lo + 1.0, std::ceil(std::log10(size_hi)));
  const double panel_w = 260, panel_h = 220;
  const std::size_t panels = std::max<std::size_t>(1, zs.size());
  std::ostringstream out;
  out << detail::svg_open(70 + panels * (panel_w + 50) + 100, panel_h + 90, config, "TDP lower bound against cluster size");
  std::size_t pi = 0;
  for (double z : zs) {
    const detail::Panel p{70 + static_cast<double>(pi) * (panel_w + 50), 30, panel_w, panel_h, x_lo, x_hi};
    detail::svg_axes(out, p, "cluster size (mm3)", "z = " + format_double(z));
    for (const auto& r : records) {
      if (r.z != z) continue;
      const auto mi = static_cast<std::size_t>(std::find(methods.begin(), methods.end(), r.method) - methods.begin());
      out << "<circle cx=\"" << p.sx(std::log10(std::max(r.size_mm3, 1e-3))) << "\" cy=\"" << p.sy(r.bound)
          << "\" r=\"3\" fill-opacity=\"0.7\" fill=\"" << detail::method_colour(mi) << "\"/>\n";
    }
    ++pi;
  }
  if (zs.empty())
    detail::svg_axes(out, detail::Panel{70, 30, panel_w, panel_h, x_lo, x_hi}, "cluster size (mm3)", "no clusters");
  detail::svg_legend(out, methods, 70 + static_cast<double>(panels) * (panel_w + 50), 40);
  out << "</svg>\n";
  return out.str();
}

// ---- files ------------------------------------------------------------------

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::string z_tag(double z) { return format_double(z); }

/// Writes the requested formats ("csv", "json", "svg") into out_dir; returns the paths written.
inline std::vector<std::filesystem::path> emit_report(const ReportBundle& bundle, const std::set<std::string>& formats,
                                                      const std::filesystem::path& out_dir) {
  for (const auto& f : formats)
    if (f != "csv" && f != "json" && f != "svg") throw ParamError("unknown report format '" + f + "'");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir.string());

  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& text) {
    const auto path = out_dir / name;
    write_text_file(path, text);
    written.push_back(path);
  };
  if (formats.count("csv")) {
    for (const auto& t : bundle.tables) put("clusters_z" + z_tag(t.z_threshold) + ".csv", clusters_csv(t, bundle.config));
    put("curve.csv", curve_csv(bundle.curve, bundle.config));
    put("scatter.csv", scatter_csv(bundle.scatter, bundle.config));
  }
  if (formats.count("json")) {
    for (const auto& t : bundle.tables) {
      nlohmann::json j = to_json(t);
      j["config"] = bundle.config;
      put("clusters_z" + z_tag(t.z_threshold) + ".json", j.dump(2) + "\n");
    }
    nlohmann::json curve = to_json(bundle.curve);
    curve["config"] = bundle.config;
    put("curve.json", curve.dump(2) + "\n");
    put("bundle.json", to_json(bundle).dump(1) + "\n");
  }
  if (formats.count("svg")) {
    put("curve.svg", curve_svg(bundle.curve, bundle.config));
    put("scatter.svg", scatter_svg(bundle.scatter, bundle.config));
  }
  return written;
}

} // namespace posthoc

#endif
