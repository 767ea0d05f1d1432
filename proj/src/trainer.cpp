#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "pvs/loss.hpp"
#include "pvs/preprocess.hpp"
#include "pvs/train.hpp"

namespace pvs::train {
namespace {

nn::Checkpoint make_checkpoint(const nn::NetModel<float>& model, int epoch,
                               const LRState& lr, const AdamState& adam) {
  nn::Checkpoint ck;
  ck.model = model;
  ck.epoch = epoch;
  ck.lr = lr.current_lr;
  if (adam.step > 0) ck.adam = adam;
  ck.ema = lr.ema;
  ck.best_ema = lr.best_ema;
  ck.epochs_since_improvement = lr.epochs_since_improvement;
  return ck;
}

std::string record_line(const EpochRecord& r) {
  return nlohmann::json{{"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"ema", r.ema},
                        {"lr", r.lr}}
      .dump();
}

}  // namespace

Volume normalize_input(const Volume& vol) {
  // Unclipped: percentile clipping would flatten the sparse dark tubes.
  double sum = 0.0;
  for (float v : vol.data) sum += v;
  const double n = static_cast<double>(vol.size());
  const double mean = sum / n;
  double ss = 0.0;
  for (float v : vol.data) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  if (!(sd > 0.0)) return vol;
  Volume out(vol.grid);
  for (std::size_t i = 0; i < vol.size(); ++i) {
    out[i] = static_cast<float>((vol[i] - mean) / sd);
  }
  return out;
}

std::vector<Volume> network_input(const std::vector<Volume>& channels, const nn::NetConfig& net) {
  if (!net.zscore_input) return channels;
  std::vector<Volume> out;
  for (const auto& c : channels) out.push_back(normalize_input(c));
  return out;
}

TrainResult train(const std::vector<TrainingCase>& cases, const nn::NetConfig& net,
                  const TrainConfig& cfg, const AugmentConfig& aug,
                  std::span<const int> foreground, const TrainOptions& opts) {
  cfg.validate();
  aug.validate();
  net.validate();
  std::vector<TrainingCase> normalized;
  if (net.zscore_input) {
    for (const auto& c : cases) {
      normalized.push_back(c);
      normalized.back().channels = network_input(c.channels, net);
    }
  }
  std::vector<const TrainingCase*> usable;
  for (const auto& c : net.zscore_input ? normalized : cases) {
    if (static_cast<int>(c.channels.size()) != net.in_channels) {
      throw std::invalid_argument("case " + c.id + " has " +
                                  std::to_string(c.channels.size()) +
                                  " channels, network expects " +
                                  std::to_string(net.in_channels));
    }
    if (c.has_supervision()) usable.push_back(&c);
  }
  if (usable.empty()) {
    throw std::invalid_argument("training data has no labeled (non-ignore) voxel");
  }
  for (int k : foreground) {
    if (k <= 0 || k >= net.num_classes) {
      throw std::invalid_argument("foreground class outside the network's classes");
    }
  }

  TrainResult res;
  int start = 0;
  if (opts.resume) {
    const auto& ck = *opts.resume;
    if (!(ck.model.config == net)) {
      throw std::invalid_argument("resume checkpoint was trained with another topology");
    }
    res.model = ck.model;
    if (ck.adam) res.adam = *ck.adam;
    res.lr.current_lr = ck.lr;
    res.lr.ema = ck.ema;
    res.lr.best_ema = ck.best_ema;
    res.lr.epochs_since_improvement = ck.epochs_since_improvement;
    start = ck.epoch;
  } else {
    res.model = nn::build_model<float>(net, cfg.seed);
    res.lr = LRState::initial(cfg);
  }
  res.epochs_done = start;

  std::ofstream log_file;
  if (opts.out_dir) {
    std::filesystem::create_directories(*opts.out_dir);
    log_file.open(*opts.out_dir / "train_log.jsonl",
                  start > 0 ? std::ios::app : std::ios::trunc);
  }
  double lowest_ema = res.lr.ema.empty() ? INFINITY
                                         : *std::min_element(res.lr.ema.begin(), res.lr.ema.end());

  for (int epoch = start; epoch < cfg.epochs; ++epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffu),
                      static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<std::size_t> pick_case(0, usable.size() - 1);
    const double lr = res.lr.current_lr;
    double loss_sum = 0.0;
    int redraws = 0;
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
      std::vector<nn::Tensor<float>> images;
      std::vector<std::vector<std::uint8_t>> labels;
      for (int s = 0; s < cfg.batch_size; ++s) {
        const TrainingCase& c = *usable[pick_case(rng)];
        Patch p = sample_patch(c, net.patch_size, cfg.fg_oversample, rng);
        p = augment(p, aug, rng);
        images.push_back(std::move(p.image));
        labels.push_back(std::move(p.labels));
      }
      // An augmented patch can lose every supervised voxel; draw again.
      const bool any = std::any_of(labels.begin(), labels.end(), [](const auto& l) {
        return std::any_of(l.begin(), l.end(), [](auto v) { return v != label::kIgnore; });
      });
      if (!any) {
        if (++redraws > 10000) {
          throw std::runtime_error("sampled patches never contain a labeled voxel");
        }
        --b;
        continue;
      }
      const nn::LossAndGrad g = nn::gradients(res.model, images, labels, foreground);
      if (!std::isfinite(g.total)) {
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch));
      }
      adam_step(res.model.params, g.grad, res.adam, lr, cfg);
      loss_sum += g.total;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / cfg.batches_per_epoch;
    res.lr = lr_update(std::move(res.lr), rec.mean_loss, cfg);
    rec.ema = res.lr.ema.back();
    rec.lr = lr;
    res.log.push_back(rec);
    res.epochs_done = epoch + 1;
    const std::string line = record_line(rec);
    if (opts.log != nullptr) *opts.log << line << '\n' << std::flush;
    if (log_file.is_open()) log_file << line << '\n' << std::flush;
    if (rec.ema < lowest_ema) {
      lowest_ema = rec.ema;
      res.best_epoch = epoch;
      if (opts.out_dir) {
        nn::save_checkpoint(*opts.out_dir / "best.ckpt",
                            make_checkpoint(res.model, epoch + 1, res.lr, res.adam));
      }
    }
  }
  if (opts.out_dir) {
    nn::save_checkpoint(*opts.out_dir / "final.ckpt",
                        make_checkpoint(res.model, res.epochs_done, res.lr, res.adam));
  }
  return res;
}

// ---- inference ----

std::vector<std::int64_t> window_starts(std::int64_t dim, int patch) {
  if (dim <= patch) return {0};
  const double step = patch / 2.0;
  const auto n = static_cast<std::int64_t>(std::ceil((dim - patch) / step)) + 1;
  std::vector<std::int64_t> out;
  for (std::int64_t i = 0; i < n; ++i) {
    out.push_back(std::llround(static_cast<double>(i) * (dim - patch) / (n - 1)));
  }
  return out;
}

std::vector<double> gaussian_importance(const std::array<int, 3>& p) {
  std::vector<double> w(static_cast<std::size_t>(p[0]) * p[1] * p[2]);
  std::array<double, 3> c{}, s{};
  for (int a = 0; a < 3; ++a) {
    c[a] = (p[a] - 1) / 2.0;
    s[a] = p[a] / 8.0;
  }
  std::size_t n = 0;
  for (int z = 0; z < p[2]; ++z)
    for (int y = 0; y < p[1]; ++y)
      for (int x = 0; x < p[0]; ++x) {
        const double q = (x - c[0]) * (x - c[0]) / (2 * s[0] * s[0]) +
                         (y - c[1]) * (y - c[1]) / (2 * s[1] * s[1]) +
                         (z - c[2]) * (z - c[2]) / (2 * s[2] * s[2]);
        w[n++] = std::exp(-q);
      }
  return w;
}

std::vector<std::array<std::int64_t, 3>> sliding_windows(const Dims& dims,
                                                         const std::array<int, 3>& patch) {
  const auto xs = window_starts(dims[0], patch[0]);
  const auto ys = window_starts(dims[1], patch[1]);
  const auto zs = window_starts(dims[2], patch[2]);
  std::vector<std::array<std::int64_t, 3>> out;
  for (auto z : zs)
    for (auto y : ys)
      for (auto x : xs) out.push_back({x, y, z});
  return out;
}

std::vector<std::vector<double>> infer_scores(
    const nn::NetModel<float>& model, const std::vector<Volume>& channels,
    const std::vector<std::array<std::int64_t, 3>>& windows) {
  const nn::NetConfig& cfg = model.config;
  if (static_cast<int>(channels.size()) != cfg.in_channels) {
    throw std::invalid_argument("model expects " + std::to_string(cfg.in_channels) +
                                " image channels, got " + std::to_string(channels.size()));
  }
  for (const auto& c : channels) require_same_grid(c.grid, channels.front().grid, "inference");
  const std::vector<Volume> input = network_input(channels, cfg);
  const Dims& d = channels.front().dims();
  const auto& ps = cfg.patch_size;
  Dims pd{};
  for (int a = 0; a < 3; ++a) pd[a] = std::max<std::int64_t>(d[a], ps[a]);
  const std::size_t n_pad = static_cast<std::size_t>(pd[0] * pd[1] * pd[2]);
  const int K = cfg.num_classes;

  std::vector<double> acc(n_pad * K, 0.0);
  std::vector<double> wsum(n_pad, 0.0);
  const std::vector<double> gw = gaussian_importance(ps);
  nn::UNet<float> net(model);
  for (const auto& w : windows) {
    for (int a = 0; a < 3; ++a) {
      if (w[a] < 0 || w[a] + ps[a] > pd[a]) throw std::invalid_argument("window outside volume");
    }
    nn::Tensor<float> x(cfg.in_channels, ps);
    std::size_t n = 0;
    for (int z = 0; z < ps[2]; ++z)
      for (int y = 0; y < ps[1]; ++y)
        for (int xx = 0; xx < ps[0]; ++xx, ++n) {
          const std::int64_t i = w[0] + xx, j = w[1] + y, k = w[2] + z;
          if (i >= d[0] || j >= d[1] || k >= d[2]) continue;  // zero padding
          const std::size_t src = static_cast<std::size_t>(i + d[0] * (j + d[1] * k));
          for (int c = 0; c < cfg.in_channels; ++c) x.channel(c)[n] = input[c][src];
        }
    const nn::Tensor<float> u = nn::softmax(net.forward(x));
    n = 0;
    for (int z = 0; z < ps[2]; ++z)
      for (int y = 0; y < ps[1]; ++y)
        for (int xx = 0; xx < ps[0]; ++xx, ++n) {
          const std::size_t dst =
              static_cast<std::size_t>(w[0] + xx + pd[0] * (w[1] + y + pd[1] * (w[2] + z)));
          wsum[dst] += gw[n];
          for (int k = 0; k < K; ++k) acc[dst * K + k] += gw[n] * u.channel(k)[n];
        }
  }
  std::vector<std::vector<double>> scores(static_cast<std::size_t>(K),
                                          std::vector<double>(channels.front().size(), 0.0));
  for (std::int64_t k = 0; k < d[2]; ++k)
    for (std::int64_t j = 0; j < d[1]; ++j)
      for (std::int64_t i = 0; i < d[0]; ++i) {
        const std::size_t src = static_cast<std::size_t>(i + pd[0] * (j + pd[1] * k));
        const std::size_t dst = static_cast<std::size_t>(i + d[0] * (j + d[1] * k));
        if (!(wsum[src] > 0.0)) throw std::invalid_argument("windows do not cover the volume");
        for (int c = 0; c < K; ++c) scores[c][dst] = acc[src * K + c] / wsum[src];
      }
  return scores;
}

LabelMap infer(const nn::NetModel<float>& model, const std::vector<Volume>& channels) {
  if (channels.empty()) throw std::invalid_argument("inference needs an image");
  const auto& d = channels.front().dims();
  Dims pd{};
  for (int a = 0; a < 3; ++a) pd[a] = std::max<std::int64_t>(d[a], model.config.patch_size[a]);
  const auto scores = infer_scores(model, channels, sliding_windows(pd, model.config.patch_size));
  LabelMap out(channels.front().grid, 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int best = 0;
    for (int k = 1; k < model.config.num_classes; ++k) {
      if (scores[k][i] > scores[best][i]) best = k;
    }
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace pvs::train
