#include "pvs/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace pvs::nn {
namespace {

constexpr char kMagic[8] = {'P', 'V', 'S', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

nlohmann::json config_json(const NetConfig& c) {
  return {{"in_channels", c.in_channels},   {"num_classes", c.num_classes},
          {"stages", c.stages},             {"base_channels", c.base_channels},
          {"max_channels", c.max_channels}, {"patch_size", c.patch_size},
          {"blocks_per_stage", c.blocks_per_stage}, {"zscore_input", c.zscore_input}};
}

NetConfig config_from(const nlohmann::json& j) {
  NetConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.stages = j.at("stages").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.max_channels = j.at("max_channels").get<int>();
  c.patch_size = j.at("patch_size").get<std::array<int, 3>>();
  c.blocks_per_stage = j.at("blocks_per_stage").get<int>();
  c.zscore_input = j.at("zscore_input").get<bool>();
  return c;
}

void write_floats(std::ofstream& os, const std::vector<float>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(float)));
}

std::vector<float> read_floats(std::ifstream& is, std::size_t n) {
  std::vector<float> v(n);
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw std::runtime_error("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto& m = ck.model;
  if (m.params.size() != m.layout.total) {
    throw std::invalid_argument("checkpoint: parameter vector does not match layout");
  }
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : m.layout.segments) {
    segs.push_back({{"name", s.name}, {"offset", s.offset}, {"size", s.size}});
  }
  nlohmann::json h{{"format", "pvs-checkpoint"},
                   {"version", 1},
                   {"config", config_json(m.config)},
                   {"seed", m.seed},
                   {"epoch", ck.epoch},
                   {"lr", ck.lr},
                   {"param_count", m.params.size()},
                   {"segments", segs},
                   {"adam", ck.adam.has_value()},
                   {"ema", ck.ema},
                   {"best_ema", ck.best_ema},
                   {"epochs_since_improvement", ck.epochs_since_improvement}};
  if (ck.adam) h["adam_step"] = ck.adam->step;
  const std::string text = h.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_floats(os, m.params);
  if (ck.adam) {
    if (ck.adam->m.size() != m.params.size() || ck.adam->v.size() != m.params.size()) {
      throw std::invalid_argument("checkpoint: Adam moments do not match parameters");
    }
    write_floats(os, ck.adam->m);
    write_floats(os, ck.adam->v);
  }
  if (!os) throw std::runtime_error("error writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint");
  }
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!is || len > (1u << 26)) throw std::runtime_error("checkpoint header corrupt");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("checkpoint truncated");
  const auto h = nlohmann::json::parse(text);

  Checkpoint ck;
  ck.model.config = config_from(h.at("config"));
  ck.model.seed = h.at("seed").get<std::uint64_t>();
  ck.model.layout = make_layout(ck.model.config);
  ck.epoch = h.at("epoch").get<int>();
  ck.lr = h.at("lr").get<double>();
  ck.ema = h.at("ema").get<std::vector<double>>();
  ck.best_ema = h.at("best_ema").get<double>();
  ck.epochs_since_improvement = h.at("epochs_since_improvement").get<int>();
  const auto n = h.at("param_count").get<std::size_t>();
  if (n != ck.model.layout.total) {
    throw std::runtime_error("checkpoint parameter count does not match its config");
  }
  const auto& segs = h.at("segments");
  if (segs.size() != ck.model.layout.segments.size()) {
    throw std::runtime_error("checkpoint segment table does not match its config");
  }
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto& s = ck.model.layout.segments[i];
    if (segs[i].at("name") != s.name || segs[i].at("offset") != s.offset ||
        segs[i].at("size") != s.size) {
      throw std::runtime_error("checkpoint segment " + s.name + " does not match");
    }
  }
  ck.model.params = read_floats(is, n);
  if (h.at("adam").get<bool>()) {
    AdamMoments a;
    a.step = h.at("adam_step").get<std::int64_t>();
    a.m = read_floats(is, n);
    a.v = read_floats(is, n);
    ck.adam = std::move(a);
  }
  return ck;
}

}  // namespace pvs::nn
