#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace asw {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay over a flat parameter vector.
class AdamW {
 public:
  AdamW(std::size_t size, AdamWConfig config) : config_(config), m_(size, 0.0), v_(size, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads);
  std::uint64_t steps() const noexcept { return t_; }

 private:
  AdamWConfig config_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace asw
