#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace evact {

struct ClassInfo {
  std::string name;
  bool motion{true};
};

struct ManifestEntry {
  std::filesystem::path path;  // absolute after reading
  int label{0};
  std::string subject_id;
  std::string config_id;
};

// JSON document:
//   {"classes": [{"name": ..., "motion": bool}, ...],
//    "clips": [{"path": ..., "label": int, "subject_id": ..., "config_id": ...}, ...]}
// Clip paths are stored relative to the manifest's directory.
struct Manifest {
  std::vector<ClassInfo> classes;
  std::vector<ManifestEntry> entries;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

}  // namespace evact
