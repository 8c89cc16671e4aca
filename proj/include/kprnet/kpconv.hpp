#ifndef KPRNET_KPCONV_HPP
#define KPRNET_KPCONV_HPP

#include <array>
#include <cstdint>
#include <vector>

#include "kprnet/net2d.hpp"
#include "kprnet/tensor.hpp"

namespace kpr {

// Fixed kernel-point layout inside the influence ball. Point 0 is always
// the origin; positions are frozen after generation.
struct KernelDisposition {
    std::vector<std::array<double, 3>> positions;
    double sigma = 0.3;   // influence distance, meters
    double radius = 0.6;  // neighborhood radius, meters

    int num_points() const { return static_cast<int>(positions.size()); }
    void validate() const;
};

// Mutual-repulsion layout: K-1 free points minimize summed inverse pairwise
// distances under an attraction-to-center term, then rescale so the mean
// norm of the non-center points is 0.75 * radius. energy_trace, when
// non-null, receives the (non-increasing) energy after each accepted step.
KernelDisposition generate_kernel_points(int k, double radius, double sigma,
                                         std::uint64_t seed,
                                         std::vector<double>* energy_trace = nullptr);

// Per-query support indices within `radius` (boundary inclusive), sorted
// ascending; every point lists itself.
using NeighborLists = std::vector<std::vector<std::uint32_t>>;

// Exact radius search via a uniform voxel grid of cell size = radius.
NeighborLists radius_neighbors(const std::vector<double>& xyz, double radius);

struct KPConvConfig {
    int num_kernel_points = 15;
    double radius = 0.60;
    double sigma = 0.30;
    int in_channels = 64;   // F from net2d
    int out_channels = 128;
    int num_classes = 19;
};

// Single rigid KPConv layer with its BatchNorm -> ReLU -> linear classifier
// head producing per-point logits.
class KPConvLayer {
  public:
    KPConvLayer(const KPConvConfig& cfg, std::uint64_t seed);

    // out(x) = sum_i sum_k max(0, 1 - |y_i - p_k|/sigma) * (f_i . W_k)
    // Accumulation runs neighbors in ascending index, kernels ascending.
    Tensor forward(const Tensor& features, const std::vector<double>& xyz,
                   const NeighborLists& neighbors);
    // Analytic gradients wrt features and weights (positions are frozen).
    Tensor backward(const Tensor& grad_out);

    Tensor head_forward(const Tensor& point_features, bool training);
    Tensor head_backward(const Tensor& grad_logits);

    std::vector<Param*> params();
    void zero_grad();

    const KernelDisposition& disposition() const { return disposition_; }
    const KPConvConfig& config() const { return cfg_; }

    KernelDisposition disposition_;
    Param weights;  // K x C_in x C_out
    BatchNorm head_bn;
    Param cls_w;  // C_out x num_classes
    Param cls_b;  // num_classes

  private:
    KPConvConfig cfg_;
    // saved forward state
    Tensor saved_features_;
    const NeighborLists* saved_neighbors_ = nullptr;
    // per query: (neighbor_slot * K + k, h) for each nonzero influence
    std::vector<std::vector<std::pair<std::uint32_t, double>>> saved_influence_;
    Tensor saved_kernel_sums_;  // N x K x C_in
    Tensor saved_head_pre_relu_;
    Tensor saved_head_relu_;
    bool have_forward_ = false;
};

}  // namespace kpr

#endif
