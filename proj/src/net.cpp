#include "pvs/net.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>

namespace pvs::nn {
namespace {

constexpr double kNormEps = 1e-5;
constexpr double kLeak = 0.01;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

using Dims3 = std::array<int, 3>;

std::size_t count(const Dims3& d) {
  return static_cast<std::size_t>(d[0]) * d[1] * d[2];
}

struct ConvGeom {
  int k = 3;
  int stride = 1;
  int pad = 1;

  Dims3 out_dims(const Dims3& in) const {
    Dims3 o{};
    for (int a = 0; a < 3; ++a) o[a] = (in[a] + 2 * pad - k) / stride + 1;
    return o;
  }
};

// Rows of the column matrix are ordered (ci, kz, ky, kx); columns are output
// voxels. Entries that fall outside the input are zero.
template <typename T>
void im2col(const T* x, int cin, const Dims3& in, const ConvGeom& g,
            const Dims3& out, T* col) {
  const std::size_t n_in = count(in);
  const std::size_t n_out = count(out);
  std::size_t row = 0;
  for (int ci = 0; ci < cin; ++ci) {
    const T* xc = x + ci * n_in;
    for (int kz = 0; kz < g.k; ++kz) {
      for (int ky = 0; ky < g.k; ++ky) {
        for (int kx = 0; kx < g.k; ++kx, ++row) {
          T* dst = col + row * n_out;
          for (int oz = 0; oz < out[2]; ++oz) {
            const int iz = oz * g.stride + kz - g.pad;
            for (int oy = 0; oy < out[1]; ++oy) {
              T* d = dst + (static_cast<std::size_t>(oz) * out[1] + oy) * out[0];
              const int iy = oy * g.stride + ky - g.pad;
              if (iz < 0 || iz >= in[2] || iy < 0 || iy >= in[1]) {
                std::fill(d, d + out[0], T{});
                continue;
              }
              const T* s = xc + (static_cast<std::size_t>(iz) * in[1] + iy) * in[0];
              if (g.stride == 1) {
                const int shift = kx - g.pad;
                const int lo = std::max(0, -shift);
                const int hi = std::min(out[0], in[0] - shift);
                std::fill(d, d + lo, T{});
                std::copy(s + lo + shift, s + hi + shift, d + lo);
                std::fill(d + std::max(hi, lo), d + out[0], T{});
              } else {
                for (int ox = 0; ox < out[0]; ++ox) {
                  const int ix = ox * g.stride + kx - g.pad;
                  d[ox] = (ix >= 0 && ix < in[0]) ? s[ix] : T{};
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int cin, const Dims3& in, const ConvGeom& g,
            const Dims3& out, T* dx) {
  const std::size_t n_in = count(in);
  const std::size_t n_out = count(out);
  std::size_t row = 0;
  for (int ci = 0; ci < cin; ++ci) {
    T* xc = dx + ci * n_in;
    for (int kz = 0; kz < g.k; ++kz) {
      for (int ky = 0; ky < g.k; ++ky) {
        for (int kx = 0; kx < g.k; ++kx, ++row) {
          const T* src = col + row * n_out;
          for (int oz = 0; oz < out[2]; ++oz) {
            const int iz = oz * g.stride + kz - g.pad;
            if (iz < 0 || iz >= in[2]) continue;
            for (int oy = 0; oy < out[1]; ++oy) {
              const int iy = oy * g.stride + ky - g.pad;
              if (iy < 0 || iy >= in[1]) continue;
              const T* s = src + (static_cast<std::size_t>(oz) * out[1] + oy) * out[0];
              T* d = xc + (static_cast<std::size_t>(iz) * in[1] + iy) * in[0];
              for (int ox = 0; ox < out[0]; ++ox) {
                const int ix = ox * g.stride + kx - g.pad;
                if (ix >= 0 && ix < in[0]) d[ix] += s[ox];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& scratch(int slot) {
  thread_local std::array<std::vector<T>, 2> buffers;
  return buffers[static_cast<std::size_t>(slot)];
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, std::span<const T> w, int cout,
                       const ConvGeom& g) {
  const Dims3 out = g.out_dims(x.dims);
  Tensor<T> y(cout, out);
  const auto krows = static_cast<Eigen::Index>(x.channels) * g.k * g.k * g.k;
  const auto n_out = static_cast<Eigen::Index>(count(out));
  ConstMapMat<T> W(w.data(), cout, krows);
  MapMat<T> Y(y.data.data(), cout, n_out);
  if (g.k == 1 && g.stride == 1 && g.pad == 0) {
    Y.noalias() = W * ConstMapMat<T>(x.data.data(), krows, n_out);
    return y;
  }
  auto& col = scratch<T>(0);
  col.resize(static_cast<std::size_t>(krows * n_out));
  im2col(x.data.data(), x.channels, x.dims, g, out, col.data());
  Y.noalias() = W * ConstMapMat<T>(col.data(), krows, n_out);
  return y;
}

// dw += dY col^T; returns dX when wanted.
template <typename T>
Tensor<T> conv_backward(const Tensor<T>& x, const Tensor<T>& dy,
                        std::span<const T> w, std::span<T> dw,
                        const ConvGeom& g, bool want_dx) {
  const int cout = dy.channels;
  const auto krows = static_cast<Eigen::Index>(x.channels) * g.k * g.k * g.k;
  const auto n_out = static_cast<Eigen::Index>(dy.voxels());
  ConstMapMat<T> W(w.data(), cout, krows);
  MapMat<T> dW(dw.data(), cout, krows);
  ConstMapMat<T> dY(dy.data.data(), cout, n_out);
  const bool pointwise = g.k == 1 && g.stride == 1 && g.pad == 0;

  if (pointwise) {
    dW.noalias() += dY * ConstMapMat<T>(x.data.data(), krows, n_out).transpose();
  } else {
    auto& col = scratch<T>(0);
    col.resize(static_cast<std::size_t>(krows * n_out));
    im2col(x.data.data(), x.channels, x.dims, g, dy.dims, col.data());
    dW.noalias() += dY * ConstMapMat<T>(col.data(), krows, n_out).transpose();
  }
  Tensor<T> dx;
  if (!want_dx) return dx;
  dx = Tensor<T>(x.channels, x.dims);
  if (pointwise) {
    MapMat<T>(dx.data.data(), krows, n_out).noalias() = W.transpose() * dY;
    return dx;
  }
  auto& dcol = scratch<T>(1);
  dcol.resize(static_cast<std::size_t>(krows * n_out));
  MapMat<T>(dcol.data(), krows, n_out).noalias() = W.transpose() * dY;
  col2im(dcol.data(), x.channels, x.dims, g, dy.dims, dx.data.data());
  return dx;
}

// Transposed convolution, kernel 2, stride 2. Weight rows are (co, oz, oy, ox),
// columns input channels.
template <typename T>
Tensor<T> up_forward(const Tensor<T>& x, std::span<const T> w,
                     std::span<const T> b, int cout) {
  const Dims3 out{2 * x.dims[0], 2 * x.dims[1], 2 * x.dims[2]};
  const auto n_in = static_cast<Eigen::Index>(x.voxels());
  RowMat<T> y8 = ConstMapMat<T>(w.data(), cout * 8, x.channels) *
                 ConstMapMat<T>(x.data.data(), x.channels, n_in);
  Tensor<T> y(cout, out);
  for (int co = 0; co < cout; ++co) {
    T* yc = y.channel(co);
    for (int o = 0; o < 8; ++o) {
      const int ox = o & 1, oy = (o >> 1) & 1, oz = (o >> 2) & 1;
      const T* src = y8.data() + (static_cast<std::size_t>(co) * 8 + o) * n_in;
      std::size_t v = 0;
      for (int z = 0; z < x.dims[2]; ++z) {
        for (int yy = 0; yy < x.dims[1]; ++yy) {
          T* d = yc + (static_cast<std::size_t>(2 * z + oz) * out[1] + 2 * yy + oy) *
                          out[0] + ox;
          for (int xx = 0; xx < x.dims[0]; ++xx, ++v) d[2 * xx] = src[v] + b[co];
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> up_backward(const Tensor<T>& x, const Tensor<T>& dy,
                      std::span<const T> w, std::span<T> dw, std::span<T> db) {
  const int cout = dy.channels;
  const auto n_in = static_cast<Eigen::Index>(x.voxels());
  RowMat<T> dy8(cout * 8, n_in);
  for (int co = 0; co < cout; ++co) {
    const T* dc = dy.channel(co);
    double bsum = 0.0;
    for (std::size_t i = 0; i < dy.voxels(); ++i) bsum += dc[i];
    db[co] += static_cast<T>(bsum);
    for (int o = 0; o < 8; ++o) {
      const int ox = o & 1, oy = (o >> 1) & 1, oz = (o >> 2) & 1;
      T* dst = dy8.data() + (static_cast<std::size_t>(co) * 8 + o) * n_in;
      std::size_t v = 0;
      for (int z = 0; z < x.dims[2]; ++z) {
        for (int yy = 0; yy < x.dims[1]; ++yy) {
          const T* s = dc +
                       (static_cast<std::size_t>(2 * z + oz) * dy.dims[1] + 2 * yy + oy) *
                           dy.dims[0] +
                       ox;
          for (int xx = 0; xx < x.dims[0]; ++xx, ++v) dst[v] = s[2 * xx];
        }
      }
    }
  }
  ConstMapMat<T> X(x.data.data(), x.channels, n_in);
  MapMat<T>(dw.data(), cout * 8, x.channels).noalias() += dy8 * X.transpose();
  Tensor<T> dx(x.channels, x.dims);
  MapMat<T>(dx.data.data(), x.channels, n_in).noalias() =
      ConstMapMat<T>(w.data(), cout * 8, x.channels).transpose() * dy8;
  return dx;
}

template <typename T>
struct NormCache {
  Tensor<T> xhat;
  std::vector<double> inv_std;
};

// Instance normalization (population variance), in place on h.
template <typename T>
void norm_forward(Tensor<T>& h, std::span<const T> gamma, std::span<const T> beta,
                  NormCache<T>* cache) {
  const std::size_t n = h.voxels();
  if (cache != nullptr) {
    cache->xhat = Tensor<T>(h.channels, h.dims);
    cache->inv_std.assign(static_cast<std::size_t>(h.channels), 0.0);
  }
  for (int c = 0; c < h.channels; ++c) {
    T* p = h.channel(c);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += p[i];
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (p[i] - mean) * (p[i] - mean);
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(n) + kNormEps);
    T* xh = cache != nullptr ? cache->xhat.channel(c) : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      const T v = static_cast<T>((p[i] - mean) * inv);
      if (xh != nullptr) xh[i] = v;
      p[i] = gamma[c] * v + beta[c];
    }
    if (cache != nullptr) cache->inv_std[static_cast<std::size_t>(c)] = inv;
  }
}

// Returns dh given dn = dLoss/d(normalized output); accumulates dgamma, dbeta.
template <typename T>
Tensor<T> norm_backward(const NormCache<T>& cache, const Tensor<T>& dn,
                        std::span<const T> gamma, std::span<T> dgamma,
                        std::span<T> dbeta) {
  const std::size_t n = dn.voxels();
  const auto nd = static_cast<double>(n);
  Tensor<T> dh(dn.channels, dn.dims);
  for (int c = 0; c < dn.channels; ++c) {
    const T* g = dn.channel(c);
    const T* xh = cache.xhat.channel(c);
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_g += g[i];
      sum_gx += static_cast<double>(g[i]) * xh[i];
    }
    dgamma[c] += static_cast<T>(sum_gx);
    dbeta[c] += static_cast<T>(sum_g);
    const double gm = gamma[c];
    const double inv = cache.inv_std[static_cast<std::size_t>(c)];
    // dxhat = g * gamma; dh = inv/n (n dxhat - sum dxhat - xhat sum(dxhat xhat))
    const double s1 = gm * sum_g;
    const double s2 = gm * sum_gx;
    T* out = dh.channel(c);
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = static_cast<T>(inv / nd * (nd * gm * g[i] - s1 - xh[i] * s2));
    }
  }
  return dh;
}

template <typename T>
void leaky_relu(Tensor<T>& t) {
  for (auto& v : t.data) v = v > T{} ? v : static_cast<T>(kLeak) * v;
}

template <typename T>
void leaky_relu_backward(const Tensor<T>& pre, Tensor<T>& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    if (!(pre.data[i] > T{})) grad.data[i] *= static_cast<T>(kLeak);
  }
}

std::string entry_name(int s) {
  return s == 0 ? "enc0.stem" : "enc" + std::to_string(s) + ".down";
}
std::string res_name(int s, int r) {
  return "enc" + std::to_string(s) + ".res" + std::to_string(r);
}
std::string dec_name(int s) { return "dec" + std::to_string(s); }

}  // namespace

// ---------------------------------------------------------------------------

void NetConfig::validate() const {
  if (in_channels < 1 || num_classes < 2 || stages < 1 || base_channels < 1 ||
      max_channels < base_channels || blocks_per_stage < 1) {
    throw std::invalid_argument("invalid network configuration");
  }
  const int div = 1 << (stages - 1);
  for (int p : patch_size) {
    if (p < 1 || p % div != 0) {
      throw std::invalid_argument("patch size must be divisible by 2^(stages-1) = " +
                                  std::to_string(div));
    }
  }
}

int NetConfig::channels(int stage) const {
  long c = static_cast<long>(base_channels) << stage;
  return static_cast<int>(std::min<long>(c, max_channels));
}

const Segment& ParamLayout::at(const std::string& name) const {
  for (const auto& s : segments) {
    if (s.name == name) return s;
  }
  throw std::out_of_range("no parameter segment named " + name);
}

ParamLayout make_layout(const NetConfig& cfg) {
  cfg.validate();
  ParamLayout l;
  auto add = [&](const std::string& name, std::size_t n) {
    l.segments.push_back({name, l.total, n});
    l.total += n;
  };
  auto conv_norm = [&](const std::string& name, int cin, int cout) {
    add(name + ".w", static_cast<std::size_t>(cout) * cin * 27);
    add(name + ".norm.g", static_cast<std::size_t>(cout));
    add(name + ".norm.b", static_cast<std::size_t>(cout));
  };
  for (int s = 0; s < cfg.stages; ++s) {
    const int cin = s == 0 ? cfg.in_channels : cfg.channels(s - 1);
    conv_norm(entry_name(s), cin, cfg.channels(s));
    for (int r = 0; r < cfg.blocks_per_stage; ++r) {
      conv_norm(res_name(s, r), cfg.channels(s), cfg.channels(s));
    }
  }
  for (int s = cfg.stages - 2; s >= 0; --s) {
    const int c = cfg.channels(s);
    add(dec_name(s) + ".up.w", static_cast<std::size_t>(cfg.channels(s + 1)) * c * 8);
    add(dec_name(s) + ".up.b", static_cast<std::size_t>(c));
    conv_norm(dec_name(s) + ".conv", 2 * c, c);
  }
  add("head.w", static_cast<std::size_t>(cfg.num_classes) * cfg.channels(0));
  add("head.b", static_cast<std::size_t>(cfg.num_classes));
  return l;
}

template <typename T>
NetModel<T> build_model(const NetConfig& cfg, std::uint64_t seed) {
  NetModel<T> m;
  m.config = cfg;
  m.seed = seed;
  m.layout = make_layout(cfg);
  m.params.assign(m.layout.total, T{});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto he = [&](const std::string& name, double fan_in) {
    const double sd = std::sqrt(2.0 / fan_in);
    for (auto& v : m.segment(name)) v = static_cast<T>(normal(rng) * sd);
  };
  auto ones = [&](const std::string& name) {
    for (auto& v : m.segment(name)) v = T{1};
  };
  for (int s = 0; s < cfg.stages; ++s) {
    const int cin = s == 0 ? cfg.in_channels : cfg.channels(s - 1);
    he(entry_name(s) + ".w", cin * 27.0);
    ones(entry_name(s) + ".norm.g");
    for (int r = 0; r < cfg.blocks_per_stage; ++r) {
      he(res_name(s, r) + ".w", cfg.channels(s) * 27.0);
      ones(res_name(s, r) + ".norm.g");
    }
  }
  for (int s = cfg.stages - 2; s >= 0; --s) {
    he(dec_name(s) + ".up.w", cfg.channels(s + 1));
    he(dec_name(s) + ".conv.w", 2.0 * cfg.channels(s) * 27.0);
    ones(dec_name(s) + ".conv.norm.g");
  }
  he("head.w", cfg.channels(0));
  return m;
}

// ---------------------------------------------------------------------------

template <typename T>
struct BlockCache {
  Tensor<T> input;
  NormCache<T> norm;
  Tensor<T> pre;  // argument of the leaky rectifier
};

template <typename T>
struct ForwardCache<T>::Impl {
  std::vector<std::vector<BlockCache<T>>> enc;  // [stage][entry, res...]
  std::vector<Tensor<T>> up_input;              // indexed by decoder stage
  std::vector<BlockCache<T>> dec;               // indexed by decoder stage
  Tensor<T> head_input;
};

template <typename T>
ForwardCache<T>::ForwardCache() : impl(std::make_unique<Impl>()) {}
template <typename T>
ForwardCache<T>::~ForwardCache() = default;
template <typename T>
ForwardCache<T>::ForwardCache(ForwardCache&&) noexcept = default;
template <typename T>
ForwardCache<T>& ForwardCache<T>::operator=(ForwardCache&&) noexcept = default;

template <typename T>
UNet<T>::UNet(const NetModel<T>& model) : model_(model) {
  model_.config.validate();
  if (model_.params.size() != model_.layout.total) {
    throw std::invalid_argument("parameter vector does not match layout");
  }
}

template <typename T>
UNet<T>::~UNet() = default;

namespace {

template <typename T>
Tensor<T> block_forward(const NetModel<T>& m, const std::string& name,
                        const Tensor<T>& x, int cout, int stride, bool residual,
                        BlockCache<T>* cache) {
  ConvGeom g{3, stride, 1};
  Tensor<T> h = conv_forward<T>(x, m.segment(name + ".w"), cout, g);
  norm_forward<T>(h, m.segment(name + ".norm.g"), m.segment(name + ".norm.b"),
                  cache != nullptr ? &cache->norm : nullptr);
  if (residual) {
    for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += x.data[i];
  }
  if (cache != nullptr) {
    cache->input = x;
    cache->pre = h;
  }
  leaky_relu(h);
  return h;
}

template <typename T>
Tensor<T> block_backward(const NetModel<T>& m, const std::string& name,
                         const BlockCache<T>& cache, Tensor<T> dy, int stride,
                         bool residual, std::span<T> grad, bool want_dx) {
  auto seg = [&](const std::string& s) {
    const auto& sg = m.layout.at(name + s);
    return std::span<T>(grad.data() + sg.offset, sg.size);
  };
  leaky_relu_backward(cache.pre, dy);
  Tensor<T> dh = norm_backward<T>(cache.norm, dy, m.segment(name + ".norm.g"),
                                  seg(".norm.g"), seg(".norm.b"));
  Tensor<T> dx = conv_backward<T>(cache.input, dh, m.segment(name + ".w"),
                                  seg(".w"), ConvGeom{3, stride, 1},
                                  want_dx || residual);
  if (residual) {
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dy.data[i];
  }
  return dx;
}

}  // namespace

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& input, ForwardCache<T>* cache) const {
  const NetConfig& cfg = model_.config;
  if (input.channels != cfg.in_channels || input.dims != cfg.patch_size ||
      input.data.size() != input.voxels() * static_cast<std::size_t>(input.channels)) {
    throw std::invalid_argument("network input shape does not match the config");
  }
  typename ForwardCache<T>::Impl* c = cache != nullptr ? cache->impl.get() : nullptr;
  const int S = cfg.stages;
  if (c != nullptr) {
    c->enc.assign(static_cast<std::size_t>(S), {});
    c->up_input.assign(static_cast<std::size_t>(S), {});
    c->dec.assign(static_cast<std::size_t>(S), {});
  }

  std::vector<Tensor<T>> skips(static_cast<std::size_t>(S));
  Tensor<T> cur = input;
  for (int s = 0; s < S; ++s) {
    auto* stage = c != nullptr ? &c->enc[static_cast<std::size_t>(s)] : nullptr;
    if (stage != nullptr) stage->resize(1 + static_cast<std::size_t>(cfg.blocks_per_stage));
    cur = block_forward(model_, entry_name(s), cur, cfg.channels(s), s == 0 ? 1 : 2,
                        false, stage != nullptr ? &(*stage)[0] : nullptr);
    for (int r = 0; r < cfg.blocks_per_stage; ++r) {
      cur = block_forward(model_, res_name(s, r), cur, cfg.channels(s), 1, true,
                          stage != nullptr ? &(*stage)[1 + r] : nullptr);
    }
    if (s < S - 1) skips[static_cast<std::size_t>(s)] = cur;
  }
  for (int s = S - 2; s >= 0; --s) {
    const int ch = cfg.channels(s);
    const std::string dn = dec_name(s);
    if (c != nullptr) c->up_input[static_cast<std::size_t>(s)] = cur;
    Tensor<T> up = up_forward<T>(cur, model_.segment(dn + ".up.w"),
                                 model_.segment(dn + ".up.b"), ch);
    const auto& skip = skips[static_cast<std::size_t>(s)];
    Tensor<T> cat(2 * ch, up.dims);
    std::copy(up.data.begin(), up.data.end(), cat.data.begin());
    std::copy(skip.data.begin(), skip.data.end(),
              cat.data.begin() + static_cast<long>(up.data.size()));
    cur = block_forward(model_, dn + ".conv", cat, ch, 1, false,
                        c != nullptr ? &c->dec[static_cast<std::size_t>(s)] : nullptr);
  }
  if (c != nullptr) c->head_input = cur;

  Tensor<T> logits = conv_forward<T>(cur, model_.segment("head.w"), cfg.num_classes,
                                     ConvGeom{1, 1, 0});
  auto hb = model_.segment("head.b");
  for (int k = 0; k < cfg.num_classes; ++k) {
    T* p = logits.channel(k);
    for (std::size_t i = 0; i < logits.voxels(); ++i) p[i] += hb[k];
  }
  return logits;
}

template <typename T>
void UNet<T>::backward(const ForwardCache<T>& cache, const Tensor<T>& dlogits,
                       std::span<T> grad) const {
  const NetConfig& cfg = model_.config;
  if (grad.size() != model_.params.size()) {
    throw std::invalid_argument("gradient buffer has the wrong length");
  }
  const auto& c = *cache.impl;
  if (c.enc.size() != static_cast<std::size_t>(cfg.stages)) {
    throw std::invalid_argument("backward called without a forward cache");
  }
  auto seg = [&](const std::string& name) {
    const auto& s = model_.layout.at(name);
    return std::span<T>(grad.data() + s.offset, s.size);
  };
  const int S = cfg.stages;

  auto hb = seg("head.b");
  for (int k = 0; k < cfg.num_classes; ++k) {
    const T* p = dlogits.channel(k);
    double sum = 0.0;
    for (std::size_t i = 0; i < dlogits.voxels(); ++i) sum += p[i];
    hb[k] += static_cast<T>(sum);
  }
  Tensor<T> dcur = conv_backward<T>(c.head_input, dlogits, model_.segment("head.w"),
                                    seg("head.w"), ConvGeom{1, 1, 0}, true);

  std::vector<Tensor<T>> dskips(static_cast<std::size_t>(S));
  for (int s = 0; s <= S - 2; ++s) {
    const int ch = cfg.channels(s);
    const std::string dn = dec_name(s);
    Tensor<T> dcat = block_backward(model_, dn + ".conv", c.dec[static_cast<std::size_t>(s)],
                                    std::move(dcur), 1, false, grad, true);
    Tensor<T> dup(ch, dcat.dims);
    Tensor<T> dskip(ch, dcat.dims);
    std::copy(dcat.data.begin(), dcat.data.begin() + static_cast<long>(dup.data.size()),
              dup.data.begin());
    std::copy(dcat.data.begin() + static_cast<long>(dup.data.size()), dcat.data.end(),
              dskip.data.begin());
    dskips[static_cast<std::size_t>(s)] = std::move(dskip);
    dcur = up_backward<T>(c.up_input[static_cast<std::size_t>(s)], dup,
                          model_.segment(dn + ".up.w"), seg(dn + ".up.w"),
                          seg(dn + ".up.b"));
  }
  for (int s = S - 1; s >= 0; --s) {
    if (s < S - 1) {
      const auto& ds = dskips[static_cast<std::size_t>(s)];
      for (std::size_t i = 0; i < dcur.data.size(); ++i) dcur.data[i] += ds.data[i];
    }
    const auto& stage = c.enc[static_cast<std::size_t>(s)];
    for (int r = cfg.blocks_per_stage - 1; r >= 0; --r) {
      dcur = block_backward(model_, res_name(s, r), stage[1 + static_cast<std::size_t>(r)],
                            std::move(dcur), 1, true, grad, true);
    }
    dcur = block_backward(model_, entry_name(s), stage[0], std::move(dcur),
                          s == 0 ? 1 : 2, false, grad, s > 0);
  }
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  Tensor<T> u(logits.channels, logits.dims);
  const std::size_t n = logits.voxels();
  const int K = logits.channels;
  for (std::size_t i = 0; i < n; ++i) {
    T mx = logits.channel(0)[i];
    for (int k = 1; k < K; ++k) mx = std::max(mx, logits.channel(k)[i]);
    double sum = 0.0;
    for (int k = 0; k < K; ++k) {
      const double e = std::exp(static_cast<double>(logits.channel(k)[i] - mx));
      u.channel(k)[i] = static_cast<T>(e);
      sum += e;
    }
    for (int k = 0; k < K; ++k) {
      u.channel(k)[i] = static_cast<T>(u.channel(k)[i] / sum);
    }
  }
  return u;
}

template NetModel<float> build_model<float>(const NetConfig&, std::uint64_t);
template NetModel<double> build_model<double>(const NetConfig&, std::uint64_t);
template struct ForwardCache<float>;
template struct ForwardCache<double>;
template class UNet<float>;
template class UNet<double>;
template Tensor<float> softmax<float>(const Tensor<float>&);
template Tensor<double> softmax<double>(const Tensor<double>&);

}  // namespace pvs::nn
