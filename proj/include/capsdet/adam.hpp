#pragma once

#include <cstdint>
#include <vector>

#include "capsdet/tensor.hpp"

namespace capsdet {

struct AdamConfig {
    double lr = 0.003;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected ADAM over a fixed set of parameter slots. Moments are
// allocated on first step; the slot layout must not change afterwards.
class Adam {
  public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    // In-place update. decay[i] adds an L2 term decay[i] * params[i] to the
    // gradient before the moment update (pass empty for none). All gradients
    // are validated finite before any parameter is touched, so a bad step
    // leaves params and moments unchanged.
    void step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
              const std::vector<double>& decay = {});

    int64_t step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

    // Checkpoint access.
    std::vector<Tensor>& moments_m() { return m_; }
    std::vector<Tensor>& moments_v() { return v_; }
    const std::vector<Tensor>& moments_m() const { return m_; }
    const std::vector<Tensor>& moments_v() const { return v_; }
    void restore(int64_t step, std::vector<Tensor> m, std::vector<Tensor> v);

  private:
    AdamConfig cfg_;
    int64_t step_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace capsdet
