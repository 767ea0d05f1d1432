#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pvs::nn {

/// Topology of the residual-encoder U-Net.
struct NetConfig {
  int in_channels = 1;
  /// Output classes including background.
  int num_classes = 3;
  int stages = 4;
  int base_channels = 8;
  int max_channels = 64;
  /// Spatial patch (x, y, z); each axis divisible by 2^(stages-1).
  std::array<int, 3> patch_size{32, 32, 32};
  int blocks_per_stage = 2;
  /// Inputs are z-scored per case before the network sees them (training
  /// and inference alike).
  bool zscore_input = true;

  void validate() const;
  int channels(int stage) const;
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// A named slice of the flat parameter vector.
struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct ParamLayout {
  std::vector<Segment> segments;
  std::size_t total = 0;

  const Segment& at(const std::string& name) const;
};

ParamLayout make_layout(const NetConfig& cfg);

template <typename T>
struct NetModel {
  NetConfig config;
  std::uint64_t seed = 0;
  ParamLayout layout;
  std::vector<T> params;

  std::span<T> segment(const std::string& name) {
    const auto& s = layout.at(name);
    return {params.data() + s.offset, s.size};
  }
  std::span<const T> segment(const std::string& name) const {
    const auto& s = layout.at(name);
    return {params.data() + s.offset, s.size};
  }
};

/// He fan-in normal initialization of kernels; norm scales 1, shifts and
/// biases 0. Values are drawn in double so float and double models built
/// from one seed agree up to rounding.
template <typename T>
NetModel<T> build_model(const NetConfig& cfg, std::uint64_t seed);

template <typename To, typename From>
NetModel<To> cast_model(const NetModel<From>& m) {
  NetModel<To> out;
  out.config = m.config;
  out.seed = m.seed;
  out.layout = m.layout;
  out.params.assign(m.params.begin(), m.params.end());
  return out;
}

/// Channel-major dense tensor for one batch item: data[c][z][y][x].
template <typename T>
struct Tensor {
  int channels = 0;
  std::array<int, 3> dims{0, 0, 0};
  std::vector<T> data;

  Tensor() = default;
  Tensor(int c, const std::array<int, 3>& d)
      : channels(c),
        dims(d),
        data(static_cast<std::size_t>(c) * d[0] * d[1] * d[2], T{}) {}

  std::size_t voxels() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  T* channel(int c) { return data.data() + c * voxels(); }
  const T* channel(int c) const { return data.data() + c * voxels(); }
};

template <typename T>
struct ForwardCache;

/// Forward/backward evaluation of a NetModel. The model must outlive the
/// network object and must not change while a cache from forward() is live.
template <typename T>
class UNet {
 public:
  explicit UNet(const NetModel<T>& model);
  ~UNet();
  UNet(const UNet&) = delete;
  UNet& operator=(const UNet&) = delete;

  /// Logits (num_classes channels) with the input's spatial dims. When a
  /// cache is given, the activations needed by backward() are kept in it.
  Tensor<T> forward(const Tensor<T>& input, ForwardCache<T>* cache = nullptr) const;

  /// Accumulates dLoss/dparams into grad (same length as model.params).
  void backward(const ForwardCache<T>& cache, const Tensor<T>& dlogits,
                std::span<T> grad) const;

  const NetModel<T>& model() const { return model_; }

 private:
  const NetModel<T>& model_;
};

/// Opaque activation store filled by UNet::forward.
template <typename T>
struct ForwardCache {
  ForwardCache();
  ~ForwardCache();
  ForwardCache(ForwardCache&&) noexcept;
  ForwardCache& operator=(ForwardCache&&) noexcept;

  struct Impl;
  std::unique_ptr<Impl> impl;
};

/// Per-voxel softmax over channels.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

}  // namespace pvs::nn
