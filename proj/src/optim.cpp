#include "dbr/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dbr {

OptimizerKind optimizer_kind_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "momentum") return OptimizerKind::Momentum;
    if (s == "adam") return OptimizerKind::Adam;
    throw ConfigError("unknown optimizer '" + s + "' (expected sgd|momentum|adam)");
}

std::string to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::Sgd: return "sgd";
        case OptimizerKind::Momentum: return "momentum";
        case OptimizerKind::Adam: return "adam";
    }
    return "?";
}

void Optimizer::step(ParamStore& store, std::span<const double> grads) {
    if (static_cast<int64_t>(grads.size()) != store.total_size())
        throw std::invalid_argument("Optimizer::step: gradient size mismatch");

    for (int64_t i = 0; i < static_cast<int64_t>(grads.size()); ++i) {
        if (!std::isfinite(grads[i]))
            throw std::runtime_error("Optimizer::step: non-finite gradient in parameter '" + store.name_at(i) +
                                     "'");
    }

    ++step_;
    int64_t off = 0;
    for (auto& p : store.params()) {
        double* w = p->value.data();
        const double* g = grads.data() + off;
        const int64_t n = p->size();
        switch (config_.kind) {
            case OptimizerKind::Sgd:
                for (int64_t i = 0; i < n; ++i) w[i] -= config_.lr * g[i];
                break;
            case OptimizerKind::Momentum: {
                double* m = m_.data() + off;
                for (int64_t i = 0; i < n; ++i) {
                    m[i] = config_.momentum * m[i] + g[i];
                    w[i] -= config_.lr * m[i];
                }
                break;
            }
            case OptimizerKind::Adam: {
                double* m = m_.data() + off;
                double* v = v_.data() + off;
                const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
                const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
                for (int64_t i = 0; i < n; ++i) {
                    m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
                    v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
                    const double mhat = m[i] / bc1;
                    const double vhat = v[i] / bc2;
                    w[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
                }
                break;
            }
        }
        off += n;
    }
}

}  // namespace dbr
