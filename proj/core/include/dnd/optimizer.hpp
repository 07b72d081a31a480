#pragma once

#include <vector>

#include "dnd/config.hpp"
#include "dnd/transformer.hpp"

namespace dnd {

// Cosine decay from lr_max to lr_min over `total_steps`, with optional
// linear warmup. Steps are 1-based.
double cosine_lr(const OptimizerConfig& cfg, std::size_t step, std::size_t total_steps);

// Adam moments with decoupled weight decay and global-norm clipping.
class AdamW {
  public:
    AdamW(std::vector<NamedTensor> params, OptimizerConfig cfg);

    // Returns the pre-clip global gradient norm.
    double step(double lr);
    void zero_grad();
    double global_grad_norm() const;
    std::size_t steps_taken() const { return t_; }

  private:
    std::vector<NamedTensor> params_;
    OptimizerConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace dnd
