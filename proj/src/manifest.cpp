#include "pvs/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <openssl/evp.h>

#include "pvs/nifti.hpp"

namespace pvs {
namespace fs = std::filesystem;

std::string to_string(Provenance p) { return p == Provenance::kPseudo ? "pseudo" : "gold"; }

Provenance provenance_from_string(const std::string& s) {
  if (s == "gold") return Provenance::kGold;
  if (s == "pseudo") return Provenance::kPseudo;
  throw std::invalid_argument("provenance must be \"gold\" or \"pseudo\", got " + s);
}

const ManifestCase* Manifest::find(const std::string& id) const {
  for (const auto& c : cases) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

bool Manifest::has_second_channel() const {
  return !cases.empty() && cases.front().image2.has_value();
}

void Manifest::validate(bool check_files) const {
  std::set<std::string> ids;
  for (const auto& c : cases) {
    if (c.id.empty()) throw std::invalid_argument("manifest case with an empty id");
    if (!ids.insert(c.id).second) throw std::invalid_argument("duplicate case id " + c.id);
    if (c.image2.has_value() != has_second_channel()) {
      throw std::invalid_argument("case " + c.id + ": image2 present on some cases only");
    }
    if (!check_files) continue;
    auto need = [&](const fs::path& p, const char* what) {
      if (!fs::exists(p)) {
        throw std::invalid_argument("case " + c.id + ": " + what + " " + p.string() +
                                    " does not exist");
      }
    };
    need(c.image, "image");
    for (const auto* p : {&c.image2, &c.labels, &c.parcellation, &c.wmh}) {
      if (*p) need(**p, "file");
    }
    if (c.image2) {
      const auto a = nifti::read_header(c.image);
      const auto b = nifti::read_header(*c.image2);
      require_same_grid(a.grid, b.grid, "case " + c.id + " image2");
    }
  }
}

namespace {

std::string path_out(const fs::path& p, const fs::path& base) {
  if (!base.empty() && p.is_absolute()) {
    const fs::path rel = p.lexically_relative(base);
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  }
  return p.generic_string();
}

fs::path path_in(const std::string& s, const fs::path& base) {
  fs::path p(s);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal();
}

}  // namespace

nlohmann::json to_json(const Manifest& m, const fs::path& base_dir) {
  const fs::path base = base_dir.empty() ? fs::path{} : fs::absolute(base_dir).lexically_normal();
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : m.cases) {
    nlohmann::json j{{"id", c.id},
                     {"dataset", c.dataset},
                     {"image", path_out(c.image, base)},
                     {"provenance", to_string(c.provenance)}};
    if (c.image2) j["image2"] = path_out(*c.image2, base);
    if (c.labels) j["labels"] = path_out(*c.labels, base);
    if (c.parcellation) j["parcellation"] = path_out(*c.parcellation, base);
    if (c.wmh) j["wmh"] = path_out(*c.wmh, base);
    if (c.annotated_slices) j["annotated_slices"] = *c.annotated_slices;
    if (c.burden) j["burden"] = eval::to_string(*c.burden);
    cases.push_back(std::move(j));
  }
  return {{"cases", cases},
          {"fingerprint", m.fingerprint},
          {"preprocess_fingerprint", m.preprocess_fingerprint}};
}

Manifest manifest_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  Manifest m;
  if (!j.is_object() || !j.contains("cases") || !j.at("cases").is_array()) {
    throw std::invalid_argument("manifest must be an object with a \"cases\" array");
  }
  m.fingerprint = j.value("fingerprint", "");
  m.preprocess_fingerprint = j.value("preprocess_fingerprint", "");
  static const std::set<std::string> known{"id",     "dataset", "image",  "image2",
                                           "labels", "parcellation", "wmh",
                                           "annotated_slices", "burden", "provenance"};
  for (const auto& cj : j.at("cases")) {
    for (const auto& [key, value] : cj.items()) {
      if (!known.contains(key)) throw std::invalid_argument("unknown manifest field " + key);
    }
    ManifestCase c;
    c.id = cj.at("id").get<std::string>();
    c.dataset = cj.value("dataset", "default");
    c.image = path_in(cj.at("image").get<std::string>(), base_dir);
    auto opt = [&](const char* key, std::optional<fs::path>& out) {
      if (cj.contains(key) && !cj.at(key).is_null()) {
        out = path_in(cj.at(key).get<std::string>(), base_dir);
      }
    };
    opt("image2", c.image2);
    opt("labels", c.labels);
    opt("parcellation", c.parcellation);
    opt("wmh", c.wmh);
    if (cj.contains("annotated_slices") && !cj.at("annotated_slices").is_null()) {
      c.annotated_slices = cj.at("annotated_slices").get<std::vector<std::int64_t>>();
    }
    if (cj.contains("burden") && !cj.at("burden").is_null()) {
      c.burden = eval::burden_from_string(cj.at("burden").get<std::string>());
    }
    c.provenance = provenance_from_string(cj.value("provenance", "gold"));
    m.cases.push_back(std::move(c));
  }
  m.validate(false);
  return m;
}

std::string canonical_dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

void write_json_file(const nlohmann::json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << canonical_dump(j);
  if (!os) throw std::runtime_error("error writing " + path.string());
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

Manifest load_manifest(const fs::path& path) {
  return manifest_from_json(read_json_file(path), fs::absolute(path).parent_path());
}

void save_manifest(const Manifest& m, const fs::path& path) {
  write_json_file(to_json(m, fs::absolute(path).parent_path()), path);
}

}  // namespace pvs
