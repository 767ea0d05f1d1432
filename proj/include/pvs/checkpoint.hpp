#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "pvs/net.hpp"

namespace pvs::nn {

/// Adam first/second moments and the step counter.
struct AdamMoments {
  std::int64_t step = 0;
  std::vector<float> m;
  std::vector<float> v;

  friend bool operator==(const AdamMoments&, const AdamMoments&) = default;
};

struct Checkpoint {
  NetModel<float> model;
  int epoch = 0;
  double lr = 0.0;
  std::optional<AdamMoments> adam;
  // Learning-rate plateau bookkeeping, so a resumed run decays on schedule.
  std::vector<double> ema;
  double best_ema = 0.0;
  int epochs_since_improvement = 0;
};

/// JSON header (config, seed, epoch, segment table) followed by the raw
/// little-endian float32 parameters and, if present, the Adam moments.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pvs::nn
