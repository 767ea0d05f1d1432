#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pvs/net.hpp"

namespace pvs::nn {

/// Softmax output and targets for a whole batch. u is laid out
/// [batch][class][voxel]; labels [batch][voxel] hold class ids, 255 = ignore.
/// The one-hot target v is implied by labels.
struct LossInputs {
  int batch = 0;
  int classes = 0;
  std::size_t voxels = 0;
  std::vector<double> u;
  std::vector<std::uint8_t> labels;
  /// Classes averaged by the dice term (background excluded).
  std::vector<int> foreground{1, 2};

  void validate() const;
};

struct LossWeights {
  double dice = 1.0;
  double ce = 1.0;
};

constexpr double kLogClamp = 1e-12;

double dice_loss(const LossInputs& li);
double cross_entropy_loss(const LossInputs& li);
double total_loss(const LossInputs& li);

/// d(weighted loss)/du, same layout as li.u. Zero on ignored voxels.
std::vector<double> loss_grad_u(const LossInputs& li, const LossWeights& w = {});

/// Gradient through the per-voxel softmax: dz_j = u_j (g_j - sum_k g_k u_k).
std::vector<double> softmax_backward(std::span<const double> u,
                                     std::span<const double> du, int classes,
                                     std::size_t voxels);

struct LossAndGrad {
  double dice = 0.0;
  double ce = 0.0;
  double total = 0.0;
  std::vector<double> grad;  // parameter-shaped
};

/// Loss of the batch and its exact gradient w.r.t. model.params.
/// images[b] has in_channels x patch voxels; labels[b] has patch voxels.
template <typename T>
LossAndGrad gradients(const NetModel<T>& model, const std::vector<Tensor<T>>& images,
                      const std::vector<std::vector<std::uint8_t>>& labels,
                      std::span<const int> foreground, const LossWeights& w = {});

/// Loss only (no backward pass).
template <typename T>
double batch_loss(const NetModel<T>& model, const std::vector<Tensor<T>>& images,
                  const std::vector<std::vector<std::uint8_t>>& labels,
                  std::span<const int> foreground, const LossWeights& w = {});

}  // namespace pvs::nn
