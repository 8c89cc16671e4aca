#ifndef KPRNET_NET2D_HPP
#define KPRNET_NET2D_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "kprnet/tensor.hpp"

namespace kpr {

// Trainable tensor plus its accumulated gradient. `decay` marks parameters
// subject to weight decay (conv/linear weights; never batchnorm affine or
// biases).
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    bool decay = true;
    bool trainable = true;  // false for batchnorm running statistics

    void zero_grad() {
        if (!grad.same_shape(value)) grad = Tensor::zeros_like(value);
        grad.fill(0.0);
    }
};

enum class PadMode { Zero, CircularWidth };

struct Conv2DSpec {
    int stride = 1;
    int dilation = 1;
    int groups = 1;
    int pad_h = 0;
    int pad_w = 0;
    PadMode pad_mode = PadMode::Zero;
};

// x: C x H x W, kernel: O x (C/groups) x kh x kw. Cross-correlation.
Tensor conv2d_forward(const Tensor& x, const Tensor& kernel, const Conv2DSpec& spec);
void conv2d_backward(const Tensor& grad_y, const Tensor& x, const Tensor& kernel,
                     const Conv2DSpec& spec, Tensor* grad_x, Tensor* grad_kernel);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& grad_y, const Tensor& x);

// Half-pixel bilinear interpolation on C x H x W.
Tensor upsample_bilinear_forward(const Tensor& x, int new_h, int new_w);
Tensor upsample_bilinear_backward(const Tensor& grad_y, int old_h, int old_w);

// Batch normalization over a C x M channel-major view. Training mode uses
// batch statistics and updates running estimates; eval mode requires
// accumulated statistics (StateError otherwise).
class BatchNorm {
  public:
    BatchNorm() = default;
    explicit BatchNorm(int channels, std::string name_prefix = "bn");

    Tensor forward(const Tensor& x_cm, bool training);
    Tensor backward(const Tensor& grad_y_cm);

    void collect(std::vector<Param*>& out);
    bool has_stats() const { return num_batches.value[0] > 0.0; }

    Param gamma, beta;
    Param running_mean, running_var;  // trainable = false
    Param num_batches;                // 1 element; > 0 once stats exist
    double momentum = 0.1;
    double eps = 1e-5;

  private:
    Tensor saved_xhat_;
    Tensor saved_invstd_;  // per channel
};

struct StageConfig {
    int blocks = 2;
    int channels = 64;
    int stride = 2;
    int groups = 4;
};

struct Net2DConfig {
    int in_channels = 2;
    int stem_channels = 32;
    int stem_stride = 2;
    std::vector<StageConfig> stages = {
        {2, 32, 2, 4}, {2, 64, 2, 4}, {2, 128, 2, 4}};
    std::vector<int> aspp_rates = {1, 6, 12, 18};
    int aspp_channels = 64;
    int decoder_channels = 64;
    int out_channels = 64;  // per-pixel feature width F
    bool circular_pad_width = false;

    void validate() const;  // strides multiply to 16, groups divide channels
};

class Net2D;

namespace detail {

class Conv2DLayer {
  public:
    Conv2DLayer() = default;
    Conv2DLayer(std::string name, int in_ch, int out_ch, int ksize, Conv2DSpec spec,
                std::mt19937_64& rng);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_y, bool need_grad_x = true);
    void collect(std::vector<Param*>& out) { out.push_back(&w); }

    Param w;
    Conv2DSpec spec;

  private:
    Tensor saved_x_;
};

class ConvBNReLU {
  public:
    ConvBNReLU() = default;
    ConvBNReLU(std::string name, int in_ch, int out_ch, int ksize, Conv2DSpec spec,
               std::mt19937_64& rng);

    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& grad_y, bool need_grad_x = true);
    void collect(std::vector<Param*>& out);

    Conv2DLayer conv;
    BatchNorm bn;

  private:
    Tensor saved_pre_relu_;
};

// Grouped 3x3 residual block; projection shortcut when shape changes.
class ResidualBlock {
  public:
    ResidualBlock() = default;
    ResidualBlock(std::string name, int in_ch, int out_ch, int stride, int groups,
                  bool circular, std::mt19937_64& rng);

    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& grad_y);
    void collect(std::vector<Param*>& out);

  private:
    ConvBNReLU a_;
    Conv2DLayer b_;
    BatchNorm bn_b_;
    bool has_proj_ = false;
    Conv2DLayer proj_;
    BatchNorm bn_proj_;
    Tensor saved_sum_;
};

class ASPP {
  public:
    ASPP() = default;
    ASPP(int in_ch, const std::vector<int>& rates, int branch_ch, int out_ch,
         bool circular, std::mt19937_64& rng);

    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& grad_y);
    void collect(std::vector<Param*>& out);

  private:
    std::vector<ConvBNReLU> branches_;
    Conv2DLayer pool_conv_;
    ConvBNReLU project_;
    Tensor saved_x_;
    Tensor saved_pool_pre_relu_;
    std::vector<std::size_t> concat_sizes_;
};

// Upsample x2, concat a projected skip tap, fuse with a 3x3 conv.
class FusionLevel {
  public:
    FusionLevel() = default;
    FusionLevel(std::string name, int in_ch, int skip_ch, int skip_proj_ch, int out_ch,
                bool circular, std::mt19937_64& rng);

    Tensor forward(const Tensor& x, const Tensor& skip, bool training);
    // Returns grad wrt x; grad_skip_out receives grad wrt the skip tap.
    Tensor backward(const Tensor& grad_y, Tensor* grad_skip_out);
    void collect(std::vector<Param*>& out);

  private:
    ConvBNReLU skip_proj_;
    ConvBNReLU fuse_;
    int up_h_ = 0, up_w_ = 0;  // skip spatial dims
    int in_h_ = 0, in_w_ = 0;
    std::size_t main_ch_ = 0, skip_out_ch_ = 0;
};

}  // namespace detail

// Encoder (stem + grouped residual stages at strides 4/8/16) -> ASPP at
// stride 16 -> decoder fusing the stride-8 and stride-4 taps -> bilinear
// upsample to input resolution. Input C x H x W, output F x H x W; the
// network pads H,W up to a multiple of 16 internally and crops back.
class Net2D {
  public:
    Net2D(const Net2DConfig& cfg, std::uint64_t seed);

    Tensor forward(const Tensor& x_chw, bool training);
    // Accumulates parameter gradients; returns grad wrt the input.
    Tensor backward(const Tensor& grad_out);

    std::vector<Param*> params();
    void zero_grad();

    const Net2DConfig& config() const { return cfg_; }

  private:
    Net2DConfig cfg_;
    detail::ConvBNReLU stem_;
    std::vector<std::vector<detail::ResidualBlock>> stages_;
    detail::ASPP aspp_;
    detail::FusionLevel fuse8_, fuse4_;
    detail::ConvBNReLU out_conv_;

    // saved per forward
    int in_h_ = 0, in_w_ = 0, pad_h_ = 0, pad_w_ = 0;
    int s4_h_ = 0, s4_w_ = 0;
    std::vector<Tensor> taps_;  // grads accumulate into taps during backward
};

// Transpose helpers between image-major (H x W x C) and channel-major
// (C x H x W) layouts.
Tensor chw_from_hwc(const Tensor& hwc);
Tensor hwc_from_chw(const Tensor& chw);
Tensor transpose2d(const Tensor& m);

Tensor concat_channels(const std::vector<const Tensor*>& parts);
std::vector<Tensor> split_channels(const Tensor& x, const std::vector<std::size_t>& sizes);

// Kaiming fan-in normal init.
void init_kaiming(Tensor& w, std::size_t fan_in, std::mt19937_64& rng);

}  // namespace kpr

#endif
