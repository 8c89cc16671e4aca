#include "kprnet/train.hpp"

#include <cmath>

#include "kprnet/errors.hpp"
#include "kprnet/kitti_io.hpp"

namespace kpr {

void TrainConfig::validate() const {
    if (base_lr <= 0.0) throw ArgumentError("train config: base_lr must be positive");
    if (warmup_iters < 0) throw ArgumentError("train config: warmup_iters must be >= 0");
    if (epochs < 1) throw ArgumentError("train config: epochs must be >= 1");
    if (batch_size < 1) throw ArgumentError("train config: batch_size must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0)
        throw ArgumentError("train config: momentum must be in [0, 1)");
    if (flip_prob < 0.0 || flip_prob > 1.0)
        throw ArgumentError("train config: flip_prob must be in [0, 1]");
}

double lr_at(long step, long total_steps, const TrainConfig& cfg) {
    if (step < 0 || step > total_steps)
        throw ArgumentError("lr_at: step out of [0, total_steps]");
    if (total_steps <= cfg.warmup_iters)
        throw ArgumentError("lr_at: total_steps must exceed warmup_iters");
    if (step < cfg.warmup_iters)
        return cfg.base_lr * static_cast<double>(step) / cfg.warmup_iters;
    double progress = static_cast<double>(step - cfg.warmup_iters) /
                      static_cast<double>(total_steps - cfg.warmup_iters);
    return cfg.base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

std::pair<double, Tensor> cross_entropy(const Tensor& logits,
                                        const std::vector<std::uint8_t>& targets) {
    if (logits.rank() != 2 || logits.dim(0) != targets.size())
        throw ArgumentError("cross_entropy: logits/targets length mismatch");
    const std::size_t n = logits.dim(0);
    const std::size_t c = logits.dim(1);
    Tensor grad{n, c};
    double loss = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::uint8_t t = targets[i];
        if (t == kIgnoreLabel) continue;
        if (t >= c) throw ArgumentError("cross_entropy: target out of range");
        ++counted;
        const double* row = logits.data() + i * c;
        double mx = row[0];
        for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, row[k]);
        double sum = 0.0;
        for (std::size_t k = 0; k < c; ++k) sum += std::exp(row[k] - mx);
        double log_sum = std::log(sum) + mx;
        loss += log_sum - row[t];
        double* g = grad.data() + i * c;
        for (std::size_t k = 0; k < c; ++k) g[k] = std::exp(row[k] - log_sum);
        g[t] -= 1.0;
    }
    if (counted == 0) return {0.0, grad};  // grad stays all-zero
    double inv = 1.0 / static_cast<double>(counted);
    grad.scale_(inv);
    return {loss * inv, grad};
}

void SGD::step(const std::vector<Param*>& params, double lr) {
    if (buffers_.empty()) {
        buffers_.reserve(params.size());
        for (const Param* p : params) buffers_.push_back(Tensor::zeros_like(p->value));
    }
    if (buffers_.size() != params.size())
        throw ArgumentError("sgd: parameter list changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        if (!p.trainable) continue;
        Tensor& buf = buffers_[i];
        if (!buf.same_shape(p.value)) throw ArgumentError("sgd: buffer shape mismatch");
        if (!p.grad.same_shape(p.value)) throw ArgumentError("sgd: gradient shape mismatch");
        const double wd = p.decay ? weight_decay_ : 0.0;
        for (std::size_t j = 0; j < buf.size(); ++j) {
            double g = p.grad[j] + wd * p.value[j];
            buf[j] = momentum_ * buf[j] + g;
            p.value[j] -= lr * buf[j];
        }
    }
    ++steps_;
}

}  // namespace kpr
