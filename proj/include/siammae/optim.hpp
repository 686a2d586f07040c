#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "siammae/errors.hpp"
#include "siammae/vit.hpp"

namespace siammae {

// Linear warmup from 0 to base over warmup_steps, then cosine decay to
// exactly 0 at total_steps. Evaluated per step.
inline double lr_at(int64_t step, int64_t total_steps, int64_t warmup_steps, double base_lr) {
  if (warmup_steps > total_steps) throw UsageError("warmup longer than the schedule");
  if (step < 0 || step > total_steps) throw UsageError("schedule step out of range");
  if (step == total_steps) return 0.0;
  if (warmup_steps > 0 && step <= warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps == warmup_steps) return base_lr;
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
};

// Decoupled weight decay with bias-corrected moments. Decay applies only to
// parameters flagged for it (weight matrices; not biases/norms/embeddings).
template <typename S>
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(const ParamList<S>& params, AdamWConfig cfg = {}) : cfg_(cfg) {
    slots_.reserve(params.size());
    for (const auto& p : params)
      slots_.push_back(Slot{std::vector<S>(p.tensor.value().size(), S(0)),
                            std::vector<S>(p.tensor.value().size(), S(0))});
  }

  int64_t step_count() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

  // Applies one update using the gradients currently stored on the params.
  void step(ParamList<S>& params, double lr) {
    if (params.size() != slots_.size())
      throw ShapeError("optimizer state does not match parameter list");
    double clip_scale = 1.0;
    if (cfg_.grad_clip > 0) {
      double sq = 0;
      for (auto& p : params)
        for (S g : p.tensor.grad()) sq += static_cast<double>(g) * g;
      const double norm = std::sqrt(sq);
      if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      auto& vals = p.tensor.raw_value();
      const auto& grad = p.tensor.grad();
      auto& slot = slots_[i];
      const double wd = p.decay ? cfg_.weight_decay : 0.0;
      for (size_t j = 0; j < vals.size(); ++j) {
        const double g = static_cast<double>(grad[j]) * clip_scale;
        if (!std::isfinite(g))
          throw NumericError("non-finite gradient in " + p.name + "; step aborted");
        const double m = cfg_.beta1 * slot.m[j] + (1.0 - cfg_.beta1) * g;
        const double v = cfg_.beta2 * slot.v[j] + (1.0 - cfg_.beta2) * g * g;
        slot.m[j] = static_cast<S>(m);
        slot.v[j] = static_cast<S>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        vals[j] = static_cast<S>(vals[j] -
                                 lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * vals[j]));
      }
    }
  }

  // Serialization access for checkpoints.
  struct Slot {
    std::vector<S> m, v;
  };
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  AdamWConfig cfg_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

}  // namespace siammae
