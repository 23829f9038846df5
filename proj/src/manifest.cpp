#include "evact/manifest.hpp"

#include "binary_io.hpp"
#include "evact/errors.hpp"

#include <json.hpp>

namespace evact {

Manifest read_manifest(const std::filesystem::path& path) {
  const std::string text = detail::read_file(path);
  Manifest m;
  try {
    const auto doc = nlohmann::json::parse(text);
    for (const auto& c : doc.value("classes", nlohmann::json::array())) {
      m.classes.push_back(ClassInfo{c.at("name").get<std::string>(), c.value("motion", true)});
    }
    const auto base = path.parent_path();
    for (const auto& e : doc.at("clips")) {
      ManifestEntry entry;
      std::filesystem::path p = e.at("path").get<std::string>();
      entry.path = p.is_absolute() ? p : base / p;
      entry.label = e.at("label").get<int>();
      entry.subject_id = e.value("subject_id", "");
      entry.config_id = e.value("config_id", "");
      if (entry.label < 0) throw ValidationError("negative label in " + path.string());
      if (!m.classes.empty() && entry.label >= static_cast<int>(m.classes.size())) {
        throw ValidationError("label " + std::to_string(entry.label) + " out of range in " +
                              path.string());
      }
      m.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  nlohmann::ordered_json doc;
  doc["classes"] = nlohmann::json::array();
  for (const ClassInfo& c : manifest.classes) {
    doc["classes"].push_back({{"name", c.name}, {"motion", c.motion}});
  }
  doc["clips"] = nlohmann::json::array();
  const auto base = std::filesystem::absolute(path).parent_path();
  for (const ManifestEntry& e : manifest.entries) {
    const auto abs = std::filesystem::absolute(e.path);
    auto rel = abs.lexically_relative(base);
    if (rel.empty() || *rel.begin() == "..") rel = abs;
    doc["clips"].push_back({{"path", rel.generic_string()},
                            {"label", e.label},
                            {"subject_id", e.subject_id},
                            {"config_id", e.config_id}});
  }
  detail::write_file_atomic(path, doc.dump(2) + "\n");
}

}  // namespace evact
