#ifndef KPRNET_TRAIN_HPP
#define KPRNET_TRAIN_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "kprnet/net2d.hpp"
#include "kprnet/tensor.hpp"

namespace kpr {

struct TrainConfig {
    double base_lr = 0.01875;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int epochs = 120;
    int warmup_iters = 1000;
    int batch_size = 24;
    int crop_width = 1025;
    double flip_prob = 0.5;
    std::uint64_t seed = 0;
    int upsample_h = 145;  // 289x4097 is the wider protocol option
    int upsample_w = 2049;
    int checkpoint_every_epochs = 1;

    void validate() const;
};

// Linear warmup from zero, then cosine decay to zero over the remaining
// steps. Continuous at the warmup boundary with value base_lr.
double lr_at(long step, long total_steps, const TrainConfig& cfg);

// Mean of -log softmax(logits)[target] over non-ignore points; the ignore
// sentinel contributes neither loss nor gradient. Returns (loss, grad).
std::pair<double, Tensor> cross_entropy(const Tensor& logits,
                                        const std::vector<std::uint8_t>& targets);

// SGD with momentum and decoupled-from-BN weight decay:
//   g <- grad + wd * param (only where Param::decay)
//   buf <- momentum * buf + g
//   param <- param - lr * buf
class SGD {
  public:
    SGD(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

    void step(const std::vector<Param*>& params, double lr);
    long steps_taken() const { return steps_; }

  private:
    double momentum_;
    double weight_decay_;
    std::vector<Tensor> buffers_;
    long steps_ = 0;
};

}  // namespace kpr

#endif
