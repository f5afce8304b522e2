#pragma once

#include "thumbnet/core/error.hpp"

namespace thumbnet {

// Training hyperparameters shared by the loss composition and the trainer.
// Defaults follow the reference recipe: SGD with momentum on all stages, a
// softened-distillation temperature of 2, and a hundredfold learning-rate
// reduction for parameter groups that arrive pretrained.
struct Hyperparams {
  double alpha = 1.0;              // feature-mimicking weight
  double beta = 0.5;               // distillation weight
  double theta = 1e-4;             // weight decay, applied as (theta/2) * l2_reg
  double tau = 2.0;                // distillation temperature
  double lambda_mm = 0.1;          // weight of the std term in the moment loss
  double base_lr = 0.1;
  double momentum = 0.9;
  double finetune_lr_factor = 0.01;  // lr multiplier for pretrained groups

  void validate() const {
    if (!(tau >= 1.0)) throw UsageError("Hyperparams: tau must be >= 1");
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(theta >= 0.0) || !(lambda_mm >= 0.0))
      throw UsageError("Hyperparams: loss weights must be >= 0");
    if (!(base_lr >= 0.0)) throw UsageError("Hyperparams: base_lr must be >= 0");
    if (!(momentum >= 0.0) || momentum >= 1.0)
      throw UsageError("Hyperparams: momentum must be in [0, 1)");
    if (!(finetune_lr_factor > 0.0) || finetune_lr_factor > 1.0)
      throw UsageError("Hyperparams: finetune_lr_factor must be in (0, 1]");
  }
};

}  // namespace thumbnet
