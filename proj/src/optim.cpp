#include <cmath>
#include <stdexcept>
#include <string>

#include "pvs/train.hpp"

namespace pvs::train {

void TrainConfig::validate() const {
  if (!(initial_lr > 0.0) || batch_size < 1 || batches_per_epoch < 1 || epochs < 0 ||
      !(lr_decay_factor > 1.0) || lr_patience_epochs < 1 || !(lr_min_improvement >= 0.0) ||
      !(ema_alpha > 0.0 && ema_alpha < 1.0) || !(fg_oversample >= 0.0 && fg_oversample <= 1.0) ||
      !(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) ||
      !(adam_eps > 0.0)) {
    throw std::invalid_argument("invalid training configuration");
  }
}

LRState LRState::initial(const TrainConfig& cfg) {
  LRState s;
  s.current_lr = cfg.initial_lr;
  return s;
}

LRState lr_update(LRState s, double epoch_loss, const TrainConfig& cfg) {
  if (!std::isfinite(epoch_loss)) {
    throw std::invalid_argument("lr_update: non-finite epoch loss");
  }
  if (s.ema.empty()) {
    s.ema.push_back(epoch_loss);
    s.best_ema = epoch_loss;
    s.epochs_since_improvement = 0;
    return s;
  }
  const double a = cfg.ema_alpha;
  const double ema = a * s.ema.back() + (1.0 - a) * epoch_loss;
  s.ema.push_back(ema);
  if (ema < s.best_ema - cfg.lr_min_improvement) {
    s.best_ema = ema;
    s.epochs_since_improvement = 0;
  } else {
    ++s.epochs_since_improvement;
  }
  if (s.epochs_since_improvement >= cfg.lr_patience_epochs) {
    s.current_lr /= cfg.lr_decay_factor;
    s.epochs_since_improvement = 0;
  }
  return s;
}

void adam_step(std::span<float> params, std::span<const double> grads, AdamState& st,
               double lr, const TrainConfig& cfg) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("adam_step: gradient length does not match parameters");
  }
  if (st.m.empty() && st.v.empty() && st.step == 0) {
    st.m.assign(params.size(), 0.0f);
    st.v.assign(params.size(), 0.0f);
  }
  if (st.m.size() != params.size() || st.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: moment length does not match parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw std::runtime_error("adam_step: non-finite gradient at parameter " +
                               std::to_string(i) + " (step " + std::to_string(st.step + 1) +
                               ")");
    }
  }
  ++st.step;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m = b1 * st.m[i] + (1.0 - b1) * g;
    const double v = b2 * st.v[i] + (1.0 - b2) * g * g;
    st.m[i] = static_cast<float>(m);
    st.v[i] = static_cast<float>(v);
    const double mhat = m / c1;
    const double vhat = v / c2;
    params[i] = static_cast<float>(params[i] - lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
  }
}

}  // namespace pvs::train
