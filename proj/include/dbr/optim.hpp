#pragma once

#include <span>
#include <string>
#include <vector>

#include "dbr/tensor.hpp"

namespace dbr {

enum class OptimizerKind { Sgd, Momentum, Adam };

OptimizerKind optimizer_kind_from_string(const std::string& s);
std::string to_string(OptimizerKind k);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double lr = 1e-3;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Updates parameters in place from a flat gradient vector. Throws on
// non-finite gradients, naming the offending parameter.
class Optimizer {
  public:
    Optimizer(OptimizerConfig config, int64_t size)
        : config_(config), m_(size, 0.0), v_(size, 0.0) {}

    void step(ParamStore& store, std::span<const double> grads);
    int64_t step_count() const { return step_; }
    const OptimizerConfig& config() const { return config_; }

  private:
    OptimizerConfig config_;
    std::vector<double> m_;
    std::vector<double> v_;
    int64_t step_ = 0;
};

}  // namespace dbr
