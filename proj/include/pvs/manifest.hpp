#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvs/eval.hpp"

namespace pvs {

enum class Provenance { kGold, kPseudo };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct ManifestCase {
  std::string id;
  std::string dataset;
  std::filesystem::path image;
  std::optional<std::filesystem::path> image2;  // second channel (FLAIR)
  std::optional<std::filesystem::path> labels;
  std::optional<std::filesystem::path> parcellation;
  std::optional<std::filesystem::path> wmh;
  std::optional<std::vector<std::int64_t>> annotated_slices;
  std::optional<eval::Burden> burden;
  Provenance provenance = Provenance::kGold;

  friend bool operator==(const ManifestCase&, const ManifestCase&) = default;
};

struct Manifest {
  std::vector<ManifestCase> cases;
  /// Hash of the configuration of the step that wrote this manifest.
  std::string fingerprint;
  /// Hash of the preprocessing configuration the images went through.
  std::string preprocess_fingerprint;

  const ManifestCase* find(const std::string& id) const;
  /// Unique ids; with check_files, every referenced file must exist and
  /// image2 must share the image grid.
  void validate(bool check_files) const;
  bool has_second_channel() const;
};

/// Relative paths are written relative to base_dir when they lie inside it.
nlohmann::json to_json(const Manifest& m, const std::filesystem::path& base_dir = {});
/// Relative paths are resolved against base_dir.
Manifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

Manifest load_manifest(const std::filesystem::path& path);
/// Canonical JSON (sorted keys, 2-space indent, trailing newline).
void save_manifest(const Manifest& m, const std::filesystem::path& path);

/// Sorted-key JSON text used for hashing and for every file we write.
std::string canonical_dump(const nlohmann::json& j);
std::string sha256_hex(const std::string& bytes);
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace pvs
