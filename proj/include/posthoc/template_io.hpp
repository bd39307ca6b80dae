#ifndef POSTHOC_TEMPLATE_IO_HPP
#define POSTHOC_TEMPLATE_IO_HPP

// JSON form of a template: {kind, alpha, K, delta?, lambda_star?, hommel?, thresholds: [...]}.
// Doubles are written with round-trip precision, so a reloaded template is bit-identical.

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "json.hpp"

#include "posthoc/templates.hpp"

namespace posthoc {

inline nlohmann::json to_json(const Template& t) {
  nlohmann::json j;
  j["kind"] = t.name();
  j["alpha"] = t.alpha;
  j["K"] = t.K();
  if (t.delta) j["delta"] = *t.delta;
  if (t.lambda_star) j["lambda_star"] = *t.lambda_star;
  if (t.hommel) j["hommel"] = *t.hommel;
  j["thresholds"] = t.thresholds;
  return j;
}

inline Template template_from_json(const nlohmann::json& j) {
  try {
    Template t;
    t.kind = template_kind_from_string(j.at("kind").get<std::string>());
    t.alpha = j.at("alpha").get<double>();
    t.thresholds = j.at("thresholds").get<std::vector<double>>();
    if (j.at("K").get<std::size_t>() != t.thresholds.size()) throw FormatError("template K does not match thresholds");
    if (j.contains("delta")) t.delta = j["delta"].get<std::size_t>();
    if (j.contains("lambda_star")) t.lambda_star = j["lambda_star"].get<double>();
    if (j.contains("hommel")) t.hommel = j["hommel"].get<std::size_t>();
    validate(t);
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed template JSON: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("invalid template: ") + e.what());
  }
}

using TemplateSet = std::map<std::string, Template>;

/// {"templates": {name: template, ...}} plus whatever metadata the caller adds.
inline TemplateSet templates_from_json(const nlohmann::json& j) {
  TemplateSet out;
  if (!j.contains("templates") || !j["templates"].is_object()) throw FormatError("missing 'templates' object");
  for (const auto& [name, value] : j["templates"].items()) out.emplace(name, template_from_json(value.contains("template") ? value["template"] : value));
  return out;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

} // namespace posthoc

#endif
