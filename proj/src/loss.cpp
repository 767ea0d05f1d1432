#include "pvs/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "pvs/volume.hpp"

namespace pvs::nn {
namespace {

std::size_t kept_voxels(const LossInputs& li) {
  std::size_t n = 0;
  for (auto l : li.labels) {
    if (l != label::kIgnore) ++n;
  }
  return n;
}

std::size_t at(const LossInputs& li, int b, int k, std::size_t i) {
  return (static_cast<std::size_t>(b) * li.classes + k) * li.voxels + i;
}

struct DiceTerms {
  std::vector<double> inter, denom;  // per foreground class
};

DiceTerms dice_terms(const LossInputs& li) {
  DiceTerms t;
  t.inter.assign(li.foreground.size(), 0.0);
  t.denom.assign(li.foreground.size(), 0.0);
  for (std::size_t f = 0; f < li.foreground.size(); ++f) {
    const int k = li.foreground[f];
    for (int b = 0; b < li.batch; ++b) {
      for (std::size_t i = 0; i < li.voxels; ++i) {
        const auto l = li.labels[static_cast<std::size_t>(b) * li.voxels + i];
        if (l == label::kIgnore) continue;
        const double u = li.u[at(li, b, k, i)];
        const double v = l == k ? 1.0 : 0.0;
        t.inter[f] += u * v;
        t.denom[f] += u + v;
      }
    }
  }
  return t;
}

}  // namespace

void LossInputs::validate() const {
  if (batch < 1 || classes < 2 || voxels == 0) {
    throw std::invalid_argument("loss: empty batch");
  }
  const std::size_t n = static_cast<std::size_t>(batch) * voxels;
  if (u.size() != n * static_cast<std::size_t>(classes) || labels.size() != n) {
    throw std::invalid_argument("loss: u / labels size mismatch");
  }
  if (foreground.empty()) throw std::invalid_argument("loss: empty foreground set");
  for (int k : foreground) {
    if (k <= 0 || k >= classes) {
      throw std::invalid_argument("loss: foreground class " + std::to_string(k) +
                                  " out of range");
    }
  }
  for (auto l : labels) {
    if (l != label::kIgnore && l >= classes) {
      throw std::invalid_argument("loss: label " + std::to_string(l) +
                                  " exceeds the class count");
    }
  }
  if (kept_voxels(*this) == 0) {
    throw std::invalid_argument("loss: every voxel is ignored");
  }
}

double dice_loss(const LossInputs& li) {
  li.validate();
  const DiceTerms t = dice_terms(li);
  double sum = 0.0;
  for (std::size_t f = 0; f < t.inter.size(); ++f) {
    if (t.denom[f] > 0.0) sum += t.inter[f] / t.denom[f];
  }
  return -2.0 / static_cast<double>(li.foreground.size()) * sum;
}

double cross_entropy_loss(const LossInputs& li) {
  li.validate();
  double sum = 0.0;
  for (int b = 0; b < li.batch; ++b) {
    for (std::size_t i = 0; i < li.voxels; ++i) {
      const auto l = li.labels[static_cast<std::size_t>(b) * li.voxels + i];
      if (l == label::kIgnore) continue;
      sum -= std::log(std::max(li.u[at(li, b, l, i)], kLogClamp));
    }
  }
  return sum / static_cast<double>(kept_voxels(li));
}

double total_loss(const LossInputs& li) {
  return dice_loss(li) + cross_entropy_loss(li);
}

std::vector<double> loss_grad_u(const LossInputs& li, const LossWeights& w) {
  li.validate();
  std::vector<double> du(li.u.size(), 0.0);
  if (w.dice != 0.0) {
    const DiceTerms t = dice_terms(li);
    const double scale = -2.0 / static_cast<double>(li.foreground.size()) * w.dice;
    for (std::size_t f = 0; f < li.foreground.size(); ++f) {
      const double d = t.denom[f];
      if (!(d > 0.0)) continue;
      const int k = li.foreground[f];
      for (int b = 0; b < li.batch; ++b) {
        for (std::size_t i = 0; i < li.voxels; ++i) {
          const auto l = li.labels[static_cast<std::size_t>(b) * li.voxels + i];
          if (l == label::kIgnore) continue;
          const double v = l == k ? 1.0 : 0.0;
          du[at(li, b, k, i)] += scale * (v * d - t.inter[f]) / (d * d);
        }
      }
    }
  }
  if (w.ce != 0.0) {
    const double m = static_cast<double>(kept_voxels(li));
    for (int b = 0; b < li.batch; ++b) {
      for (std::size_t i = 0; i < li.voxels; ++i) {
        const auto l = li.labels[static_cast<std::size_t>(b) * li.voxels + i];
        if (l == label::kIgnore) continue;
        const std::size_t idx = at(li, b, l, i);
        // The clamp is flat below epsilon.
        if (li.u[idx] >= kLogClamp) du[idx] -= w.ce / (m * li.u[idx]);
      }
    }
  }
  return du;
}

std::vector<double> softmax_backward(std::span<const double> u,
                                     std::span<const double> du, int classes,
                                     std::size_t voxels) {
  if (u.size() != du.size() || u.size() % (static_cast<std::size_t>(classes) * voxels) != 0) {
    throw std::invalid_argument("softmax_backward: size mismatch");
  }
  const std::size_t batch = u.size() / (static_cast<std::size_t>(classes) * voxels);
  std::vector<double> dz(u.size(), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * classes * voxels;
    for (std::size_t i = 0; i < voxels; ++i) {
      double dot = 0.0;
      for (int k = 0; k < classes; ++k) {
        const std::size_t idx = base + k * voxels + i;
        dot += du[idx] * u[idx];
      }
      for (int k = 0; k < classes; ++k) {
        const std::size_t idx = base + k * voxels + i;
        dz[idx] = u[idx] * (du[idx] - dot);
      }
    }
  }
  return dz;
}

namespace {

template <typename T>
LossInputs make_inputs(const NetModel<T>& model, const UNet<T>& net,
                       const std::vector<Tensor<T>>& images,
                       const std::vector<std::vector<std::uint8_t>>& labels,
                       std::span<const int> foreground,
                       std::vector<ForwardCache<T>>* caches) {
  if (images.empty() || images.size() != labels.size()) {
    throw std::invalid_argument("gradients: images and labels differ in batch size");
  }
  LossInputs li;
  li.batch = static_cast<int>(images.size());
  li.classes = model.config.num_classes;
  li.voxels = images.front().voxels();
  li.foreground.assign(foreground.begin(), foreground.end());
  li.u.reserve(li.voxels * li.classes * images.size());
  if (caches != nullptr) caches->resize(images.size());
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (labels[b].size() != li.voxels) {
      throw std::invalid_argument("gradients: label patch size mismatch");
    }
    Tensor<T> logits =
        net.forward(images[b], caches != nullptr ? &(*caches)[b] : nullptr);
    Tensor<T> u = softmax(logits);
    li.u.insert(li.u.end(), u.data.begin(), u.data.end());
    li.labels.insert(li.labels.end(), labels[b].begin(), labels[b].end());
  }
  return li;
}

}  // namespace

template <typename T>
LossAndGrad gradients(const NetModel<T>& model, const std::vector<Tensor<T>>& images,
                      const std::vector<std::vector<std::uint8_t>>& labels,
                      std::span<const int> foreground, const LossWeights& w) {
  UNet<T> net(model);
  std::vector<ForwardCache<T>> caches;
  LossInputs li = make_inputs(model, net, images, labels, foreground, &caches);
  LossAndGrad out;
  out.dice = dice_loss(li);
  out.ce = cross_entropy_loss(li);
  out.total = w.dice * out.dice + w.ce * out.ce;

  const std::vector<double> du = loss_grad_u(li, w);
  const std::vector<double> dz = softmax_backward(li.u, du, li.classes, li.voxels);
  std::vector<T> grad(model.params.size(), T{});
  const std::size_t per_item = static_cast<std::size_t>(li.classes) * li.voxels;
  for (std::size_t b = 0; b < images.size(); ++b) {
    Tensor<T> dlogits(li.classes, images[b].dims);
    for (std::size_t i = 0; i < per_item; ++i) {
      dlogits.data[i] = static_cast<T>(dz[b * per_item + i]);
    }
    net.backward(caches[b], dlogits, grad);
  }
  out.grad.assign(grad.begin(), grad.end());
  return out;
}

template <typename T>
double batch_loss(const NetModel<T>& model, const std::vector<Tensor<T>>& images,
                  const std::vector<std::vector<std::uint8_t>>& labels,
                  std::span<const int> foreground, const LossWeights& w) {
  UNet<T> net(model);
  LossInputs li = make_inputs<T>(model, net, images, labels, foreground, nullptr);
  double total = 0.0;
  if (w.dice != 0.0) total += w.dice * dice_loss(li);
  if (w.ce != 0.0) total += w.ce * cross_entropy_loss(li);
  return total;
}

template LossAndGrad gradients<float>(const NetModel<float>&,
                                      const std::vector<Tensor<float>>&,
                                      const std::vector<std::vector<std::uint8_t>>&,
                                      std::span<const int>, const LossWeights&);
template LossAndGrad gradients<double>(const NetModel<double>&,
                                       const std::vector<Tensor<double>>&,
                                       const std::vector<std::vector<std::uint8_t>>&,
                                       std::span<const int>, const LossWeights&);
template double batch_loss<float>(const NetModel<float>&,
                                  const std::vector<Tensor<float>>&,
                                  const std::vector<std::vector<std::uint8_t>>&,
                                  std::span<const int>, const LossWeights&);
template double batch_loss<double>(const NetModel<double>&,
                                   const std::vector<Tensor<double>>&,
                                   const std::vector<std::vector<std::uint8_t>>&,
                                   std::span<const int>, const LossWeights&);

}  // namespace pvs::nn
