#pragma once

#include <cmath>
#include <cstddef>
#include <limits>

#include "thumbnet/core/error.hpp"

namespace thumbnet {

// Divide-on-plateau learning-rate schedule for a nonnegative loss: an
// observation improves when it beats the best seen by a relative margin;
// after `patience` consecutive non-improving observations the rate is
// multiplied by `factor`, at most `max_decays` times over a run.
class PlateauDetector {
 public:
  explicit PlateauDetector(double rel_tol = 1e-3, std::size_t patience = 3,
                           std::size_t max_decays = 2, double factor = 0.1)
      : rel_tol_(rel_tol), patience_(patience), max_decays_(max_decays), factor_(factor) {
    if (!(rel_tol > 0.0) || rel_tol >= 1.0)
      throw UsageError("PlateauDetector: rel_tol must be in (0, 1)");
    if (!(factor > 0.0) || factor >= 1.0)
      throw UsageError("PlateauDetector: factor must be in (0, 1)");
    if (patience == 0) throw UsageError("PlateauDetector: patience must be positive");
  }

  // Feeds one validation-loss observation and returns the learning rate to
  // use from here on. Non-finite losses never count as improvements.
  double observe(double loss, double lr) {
    if (std::isfinite(loss) && loss < best_ * (1.0 - rel_tol_)) {
      best_ = loss;
      since_best_ = 0;
      return lr;
    }
    ++since_best_;
    if (since_best_ >= patience_ && decays_ < max_decays_) {
      ++decays_;
      since_best_ = 0;
      return lr * factor_;
    }
    return lr;
  }

  std::size_t decays() const { return decays_; }
  double best() const { return best_; }

 private:
  double rel_tol_;
  std::size_t patience_;
  std::size_t max_decays_;
  double factor_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t since_best_ = 0;
  std::size_t decays_ = 0;
};

}  // namespace thumbnet
