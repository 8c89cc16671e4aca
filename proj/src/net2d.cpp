#include "kprnet/net2d.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace kpr {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

namespace {

struct ConvDims {
    int c, h, w, o, cg, og, kh, kw, ho, wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& k, const Conv2DSpec& s) {
    if (x.rank() != 3 || k.rank() != 4) throw ArgumentError("conv2d: want CHW input and OIHW kernel");
    ConvDims d;
    d.c = static_cast<int>(x.dim(0));
    d.h = static_cast<int>(x.dim(1));
    d.w = static_cast<int>(x.dim(2));
    d.o = static_cast<int>(k.dim(0));
    d.kh = static_cast<int>(k.dim(2));
    d.kw = static_cast<int>(k.dim(3));
    if (s.groups < 1 || d.c % s.groups != 0 || d.o % s.groups != 0)
        throw ArgumentError("conv2d: groups must divide channels");
    d.cg = d.c / s.groups;
    d.og = d.o / s.groups;
    if (static_cast<int>(k.dim(1)) != d.cg)
        throw ArgumentError("conv2d: kernel input channels do not match input/groups");
    d.ho = (d.h + 2 * s.pad_h - s.dilation * (d.kh - 1) - 1) / s.stride + 1;
    d.wo = (d.w + 2 * s.pad_w - s.dilation * (d.kw - 1) - 1) / s.stride + 1;
    if (d.ho < 1 || d.wo < 1) throw ArgumentError("conv2d: output would be empty");
    return d;
}

// Unrolls one group's receptive fields into a (Cg*kh*kw) x (Ho*Wo) matrix.
void im2col(const Tensor& x, const ConvDims& d, const Conv2DSpec& s, int group, MatRM& cols) {
    cols.resize(static_cast<Eigen::Index>(d.cg) * d.kh * d.kw,
                static_cast<Eigen::Index>(d.ho) * d.wo);
    const bool circ = s.pad_mode == PadMode::CircularWidth;
    for (int ci = 0; ci < d.cg; ++ci) {
        int c = group * d.cg + ci;
        for (int kr = 0; kr < d.kh; ++kr) {
            for (int kc = 0; kc < d.kw; ++kc) {
                Eigen::Index row = (static_cast<Eigen::Index>(ci) * d.kh + kr) * d.kw + kc;
                for (int ho = 0; ho < d.ho; ++ho) {
                    int hi = ho * s.stride - s.pad_h + kr * s.dilation;
                    for (int wo = 0; wo < d.wo; ++wo) {
                        int wi = wo * s.stride - s.pad_w + kc * s.dilation;
                        double v = 0.0;
                        if (hi >= 0 && hi < d.h) {
                            int wic = wi;
                            if (circ) wic = ((wi % d.w) + d.w) % d.w;
                            if (wic >= 0 && wic < d.w) v = x(c, hi, wic);
                        }
                        cols(row, static_cast<Eigen::Index>(ho) * d.wo + wo) = v;
                    }
                }
            }
        }
    }
}

void col2im_add(Tensor& gx, const ConvDims& d, const Conv2DSpec& s, int group,
                const MatRM& cols) {
    const bool circ = s.pad_mode == PadMode::CircularWidth;
    for (int ci = 0; ci < d.cg; ++ci) {
        int c = group * d.cg + ci;
        for (int kr = 0; kr < d.kh; ++kr) {
            for (int kc = 0; kc < d.kw; ++kc) {
                Eigen::Index row = (static_cast<Eigen::Index>(ci) * d.kh + kr) * d.kw + kc;
                for (int ho = 0; ho < d.ho; ++ho) {
                    int hi = ho * s.stride - s.pad_h + kr * s.dilation;
                    if (hi < 0 || hi >= d.h) continue;
                    for (int wo = 0; wo < d.wo; ++wo) {
                        int wi = wo * s.stride - s.pad_w + kc * s.dilation;
                        if (circ) wi = ((wi % d.w) + d.w) % d.w;
                        if (wi < 0 || wi >= d.w) continue;
                        gx(c, hi, wi) += cols(row, static_cast<Eigen::Index>(ho) * d.wo + wo);
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& kernel, const Conv2DSpec& spec) {
    ConvDims d = conv_dims(x, kernel, spec);
    Tensor y{static_cast<std::size_t>(d.o), static_cast<std::size_t>(d.ho),
             static_cast<std::size_t>(d.wo)};
    MatRM cols;
    const Eigen::Index krows = static_cast<Eigen::Index>(d.cg) * d.kh * d.kw;
    for (int g = 0; g < spec.groups; ++g) {
        im2col(x, d, spec, g, cols);
        CMapRM wmat(kernel.data() + static_cast<std::size_t>(g) * d.og * krows, d.og, krows);
        MapRM ymat(y.data() + static_cast<std::size_t>(g) * d.og * d.ho * d.wo, d.og,
                   static_cast<Eigen::Index>(d.ho) * d.wo);
        ymat.noalias() = wmat * cols;
    }
    return y;
}

void conv2d_backward(const Tensor& grad_y, const Tensor& x, const Tensor& kernel,
                     const Conv2DSpec& spec, Tensor* grad_x, Tensor* grad_kernel) {
    ConvDims d = conv_dims(x, kernel, spec);
    if (grad_y.rank() != 3 || static_cast<int>(grad_y.dim(0)) != d.o ||
        static_cast<int>(grad_y.dim(1)) != d.ho || static_cast<int>(grad_y.dim(2)) != d.wo)
        throw ArgumentError("conv2d_backward: grad_y shape mismatch");
    if (grad_x) {
        if (!grad_x->same_shape(x)) *grad_x = Tensor::zeros_like(x);
        else grad_x->fill(0.0);
    }
    if (grad_kernel && !grad_kernel->same_shape(kernel))
        throw ArgumentError("conv2d_backward: grad_kernel shape mismatch");
    MatRM cols, gcols;
    const Eigen::Index krows = static_cast<Eigen::Index>(d.cg) * d.kh * d.kw;
    for (int g = 0; g < spec.groups; ++g) {
        CMapRM gymat(grad_y.data() + static_cast<std::size_t>(g) * d.og * d.ho * d.wo, d.og,
                     static_cast<Eigen::Index>(d.ho) * d.wo);
        if (grad_kernel) {
            im2col(x, d, spec, g, cols);
            MapRM gkmat(grad_kernel->data() + static_cast<std::size_t>(g) * d.og * krows,
                        d.og, krows);
            gkmat.noalias() += gymat * cols.transpose();
        }
        if (grad_x) {
            CMapRM wmat(kernel.data() + static_cast<std::size_t>(g) * d.og * krows, d.og,
                        krows);
            gcols.noalias() = wmat.transpose() * gymat;
            col2im_add(*grad_x, d, spec, g, gcols);
        }
    }
}

Tensor relu_forward(const Tensor& x) {
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] < 0.0) y[i] = 0.0;
    return y;
}

Tensor relu_backward(const Tensor& grad_y, const Tensor& x) {
    if (!grad_y.same_shape(x)) throw ArgumentError("relu_backward: shape mismatch");
    Tensor gx = grad_y;
    for (std::size_t i = 0; i < gx.size(); ++i)
        if (x[i] <= 0.0) gx[i] = 0.0;
    return gx;
}

namespace {

struct LerpAxis {
    std::vector<int> i0, i1;
    std::vector<double> w1;  // weight of i1; i0 gets 1-w1
};

LerpAxis lerp_axis(int n_out, int n_in) {
    LerpAxis a;
    a.i0.resize(n_out);
    a.i1.resize(n_out);
    a.w1.resize(n_out);
    for (int u = 0; u < n_out; ++u) {
        double src = (u + 0.5) * static_cast<double>(n_in) / n_out - 0.5;
        if (src < 0.0) src = 0.0;
        if (src > n_in - 1) src = n_in - 1;
        int i0 = static_cast<int>(std::floor(src));
        a.i0[u] = i0;
        a.i1[u] = std::min(i0 + 1, n_in - 1);
        a.w1[u] = src - i0;
    }
    return a;
}

}  // namespace

Tensor upsample_bilinear_forward(const Tensor& x, int new_h, int new_w) {
    if (x.rank() != 3) throw ArgumentError("upsample_bilinear: want C x H x W");
    const int c = static_cast<int>(x.dim(0)), h = static_cast<int>(x.dim(1)),
              w = static_cast<int>(x.dim(2));
    LerpAxis ra = lerp_axis(new_h, h), ca = lerp_axis(new_w, w);
    Tensor y{static_cast<std::size_t>(c), static_cast<std::size_t>(new_h),
             static_cast<std::size_t>(new_w)};
    for (int ch = 0; ch < c; ++ch)
        for (int u = 0; u < new_h; ++u) {
            int r0 = ra.i0[u], r1 = ra.i1[u];
            double wr = ra.w1[u];
            for (int v = 0; v < new_w; ++v) {
                int c0 = ca.i0[v], c1 = ca.i1[v];
                double wc = ca.w1[v];
                y(ch, u, v) = (1 - wr) * ((1 - wc) * x(ch, r0, c0) + wc * x(ch, r0, c1)) +
                              wr * ((1 - wc) * x(ch, r1, c0) + wc * x(ch, r1, c1));
            }
        }
    return y;
}

Tensor upsample_bilinear_backward(const Tensor& grad_y, int old_h, int old_w) {
    if (grad_y.rank() != 3) throw ArgumentError("upsample_bilinear: want C x H x W");
    const int c = static_cast<int>(grad_y.dim(0)), nh = static_cast<int>(grad_y.dim(1)),
              nw = static_cast<int>(grad_y.dim(2));
    LerpAxis ra = lerp_axis(nh, old_h), ca = lerp_axis(nw, old_w);
    Tensor gx{static_cast<std::size_t>(c), static_cast<std::size_t>(old_h),
              static_cast<std::size_t>(old_w)};
    for (int ch = 0; ch < c; ++ch)
        for (int u = 0; u < nh; ++u) {
            int r0 = ra.i0[u], r1 = ra.i1[u];
            double wr = ra.w1[u];
            for (int v = 0; v < nw; ++v) {
                int c0 = ca.i0[v], c1 = ca.i1[v];
                double wc = ca.w1[v];
                double g = grad_y(ch, u, v);
                gx(ch, r0, c0) += (1 - wr) * (1 - wc) * g;
                gx(ch, r0, c1) += (1 - wr) * wc * g;
                gx(ch, r1, c0) += wr * (1 - wc) * g;
                gx(ch, r1, c1) += wr * wc * g;
            }
        }
    return gx;
}

BatchNorm::BatchNorm(int channels, std::string name_prefix) {
    auto vec = [&](const char* suffix, double init, bool trainable) {
        Param p;
        p.name = name_prefix + suffix;
        p.value = Tensor{static_cast<std::size_t>(channels)};
        p.value.fill(init);
        p.decay = false;
        p.trainable = trainable;
        p.zero_grad();
        return p;
    };
    gamma = vec(".gamma", 1.0, true);
    beta = vec(".beta", 0.0, true);
    running_mean = vec(".running_mean", 0.0, false);
    running_var = vec(".running_var", 1.0, false);
    num_batches.name = name_prefix + ".num_batches";
    num_batches.value = Tensor{1};
    num_batches.decay = false;
    num_batches.trainable = false;
    num_batches.zero_grad();
}

Tensor BatchNorm::forward(const Tensor& x, bool training) {
    const std::size_t c = gamma.value.size();
    if (x.rank() < 1 || x.dim(0) != c) throw ArgumentError("batchnorm: channel mismatch");
    const std::size_t m = x.size() / c;
    Tensor y{x.shape()};
    if (training) {
        saved_xhat_ = Tensor{x.shape()};
        saved_invstd_ = Tensor{c};
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* xr = x.data() + ch * m;
            double mean = 0.0;
            for (std::size_t i = 0; i < m; ++i) mean += xr[i];
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                double d = xr[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(m);
            double invstd = 1.0 / std::sqrt(var + eps);
            saved_invstd_[ch] = invstd;
            double* xh = saved_xhat_.data() + ch * m;
            double* yr = y.data() + ch * m;
            double g = gamma.value[ch], b = beta.value[ch];
            for (std::size_t i = 0; i < m; ++i) {
                xh[i] = (xr[i] - mean) * invstd;
                yr[i] = g * xh[i] + b;
            }
            running_mean.value[ch] = (1.0 - momentum) * running_mean.value[ch] + momentum * mean;
            running_var.value[ch] = (1.0 - momentum) * running_var.value[ch] + momentum * var;
        }
        num_batches.value[0] += 1.0;
    } else {
        if (!has_stats())
            throw StateError("batchnorm: eval mode before any statistics accumulated");
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* xr = x.data() + ch * m;
            double* yr = y.data() + ch * m;
            double invstd = 1.0 / std::sqrt(running_var.value[ch] + eps);
            double g = gamma.value[ch], b = beta.value[ch];
            double mean = running_mean.value[ch];
            for (std::size_t i = 0; i < m; ++i) yr[i] = g * (xr[i] - mean) * invstd + b;
        }
        saved_xhat_ = Tensor();  // backward in eval mode is not supported
    }
    return y;
}

Tensor BatchNorm::backward(const Tensor& grad_y) {
    if (saved_xhat_.empty()) throw StateError("batchnorm backward: no saved training pass");
    if (!grad_y.same_shape(saved_xhat_)) throw ArgumentError("batchnorm backward: shape mismatch");
    const std::size_t c = gamma.value.size();
    const std::size_t m = grad_y.size() / c;
    Tensor gx{grad_y.shape()};
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* gy = grad_y.data() + ch * m;
        const double* xh = saved_xhat_.data() + ch * m;
        double sum_gy = 0.0, sum_gy_xh = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            sum_gy += gy[i];
            sum_gy_xh += gy[i] * xh[i];
        }
        gamma.grad[ch] += sum_gy_xh;
        beta.grad[ch] += sum_gy;
        double g = gamma.value[ch] * saved_invstd_[ch];
        double inv_m = 1.0 / static_cast<double>(m);
        double* gxr = gx.data() + ch * m;
        for (std::size_t i = 0; i < m; ++i)
            gxr[i] = g * (gy[i] - inv_m * sum_gy - inv_m * sum_gy_xh * xh[i]);
    }
    return gx;
}

void BatchNorm::collect(std::vector<Param*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
    out.push_back(&running_mean);
    out.push_back(&running_var);
    out.push_back(&num_batches);
}

void init_kaiming(Tensor& w, std::size_t fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = dist(rng);
}

Tensor chw_from_hwc(const Tensor& hwc) {
    if (hwc.rank() != 3) throw ArgumentError("chw_from_hwc: want rank 3");
    const std::size_t h = hwc.dim(0), w = hwc.dim(1), c = hwc.dim(2);
    Tensor out{c, h, w};
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col)
            for (std::size_t k = 0; k < c; ++k) out(k, r, col) = hwc(r, col, k);
    return out;
}

Tensor hwc_from_chw(const Tensor& chw) {
    if (chw.rank() != 3) throw ArgumentError("hwc_from_chw: want rank 3");
    const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    Tensor out{h, w, c};
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t col = 0; col < w; ++col) out(r, col, k) = chw(k, r, col);
    return out;
}

Tensor transpose2d(const Tensor& m) {
    if (m.rank() != 2) throw ArgumentError("transpose2d: want rank 2");
    Tensor out{m.dim(1), m.dim(0)};
    for (std::size_t i = 0; i < m.dim(0); ++i)
        for (std::size_t j = 0; j < m.dim(1); ++j) out(j, i) = m(i, j);
    return out;
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
    std::size_t c = 0;
    const std::size_t h = parts.at(0)->dim(1), w = parts.at(0)->dim(2);
    for (const Tensor* p : parts) {
        if (p->rank() != 3 || p->dim(1) != h || p->dim(2) != w)
            throw ArgumentError("concat_channels: spatial dims differ");
        c += p->dim(0);
    }
    Tensor out{c, h, w};
    double* dst = out.data();
    for (const Tensor* p : parts) {
        std::copy(p->data(), p->data() + p->size(), dst);
        dst += p->size();
    }
    return out;
}

std::vector<Tensor> split_channels(const Tensor& x, const std::vector<std::size_t>& sizes) {
    std::vector<Tensor> out;
    const std::size_t h = x.dim(1), w = x.dim(2);
    const double* src = x.data();
    for (std::size_t c : sizes) {
        Tensor part{c, h, w};
        std::copy(src, src + part.size(), part.data());
        src += part.size();
        out.push_back(std::move(part));
    }
    if (src != x.data() + x.size()) throw ArgumentError("split_channels: sizes do not sum");
    return out;
}

namespace detail {

Conv2DLayer::Conv2DLayer(std::string name, int in_ch, int out_ch, int ksize, Conv2DSpec sp,
                         std::mt19937_64& rng)
    : spec(sp) {
    w.name = std::move(name) + ".w";
    w.value = Tensor{static_cast<std::size_t>(out_ch),
                     static_cast<std::size_t>(in_ch / sp.groups),
                     static_cast<std::size_t>(ksize), static_cast<std::size_t>(ksize)};
    init_kaiming(w.value, static_cast<std::size_t>(in_ch / sp.groups) * ksize * ksize, rng);
    w.zero_grad();
}

Tensor Conv2DLayer::forward(const Tensor& x) {
    saved_x_ = x;
    return conv2d_forward(x, w.value, spec);
}

Tensor Conv2DLayer::backward(const Tensor& grad_y, bool need_grad_x) {
    Tensor gx;
    conv2d_backward(grad_y, saved_x_, w.value, spec, need_grad_x ? &gx : nullptr, &w.grad);
    return gx;
}

ConvBNReLU::ConvBNReLU(std::string name, int in_ch, int out_ch, int ksize, Conv2DSpec spec,
                       std::mt19937_64& rng)
    : conv(name, in_ch, out_ch, ksize, spec, rng), bn(out_ch, name + ".bn") {}

Tensor ConvBNReLU::forward(const Tensor& x, bool training) {
    saved_pre_relu_ = bn.forward(conv.forward(x), training);
    return relu_forward(saved_pre_relu_);
}

Tensor ConvBNReLU::backward(const Tensor& grad_y, bool need_grad_x) {
    Tensor g = relu_backward(grad_y, saved_pre_relu_);
    g = bn.backward(g);
    return conv.backward(g, need_grad_x);
}

void ConvBNReLU::collect(std::vector<Param*>& out) {
    conv.collect(out);
    bn.collect(out);
}

ResidualBlock::ResidualBlock(std::string name, int in_ch, int out_ch, int stride, int groups,
                             bool circular, std::mt19937_64& rng) {
    Conv2DSpec s3{stride, 1, groups, 1, 1, circular ? PadMode::CircularWidth : PadMode::Zero};
    a_ = ConvBNReLU(name + ".a", in_ch, out_ch, 3, s3, rng);
    Conv2DSpec s3b = s3;
    s3b.stride = 1;
    b_ = Conv2DLayer(name + ".b", out_ch, out_ch, 3, s3b, rng);
    bn_b_ = BatchNorm(out_ch, name + ".b.bn");
    has_proj_ = (stride != 1 || in_ch != out_ch);
    if (has_proj_) {
        Conv2DSpec s1{stride, 1, 1, 0, 0, PadMode::Zero};
        proj_ = Conv2DLayer(name + ".proj", in_ch, out_ch, 1, s1, rng);
        bn_proj_ = BatchNorm(out_ch, name + ".proj.bn");
    }
}

Tensor ResidualBlock::forward(const Tensor& x, bool training) {
    Tensor h = a_.forward(x, training);
    Tensor main = bn_b_.forward(b_.forward(h), training);
    Tensor shortcut = has_proj_ ? bn_proj_.forward(proj_.forward(x), training) : x;
    main.add_(shortcut);
    saved_sum_ = main;
    return relu_forward(main);
}

Tensor ResidualBlock::backward(const Tensor& grad_y) {
    Tensor gsum = relu_backward(grad_y, saved_sum_);
    Tensor g = bn_b_.backward(gsum);
    g = b_.backward(g);
    Tensor gx = a_.backward(g);
    if (has_proj_) {
        Tensor gp = bn_proj_.backward(gsum);
        gx.add_(proj_.backward(gp));
    } else {
        gx.add_(gsum);
    }
    return gx;
}

void ResidualBlock::collect(std::vector<Param*>& out) {
    a_.collect(out);
    b_.collect(out);
    bn_b_.collect(out);
    if (has_proj_) {
        proj_.collect(out);
        bn_proj_.collect(out);
    }
}

ASPP::ASPP(int in_ch, const std::vector<int>& rates, int branch_ch, int out_ch, bool circular,
           std::mt19937_64& rng) {
    PadMode pm = circular ? PadMode::CircularWidth : PadMode::Zero;
    int i = 0;
    for (int r : rates) {
        Conv2DSpec s{1, r, 1, r, r, pm};
        branches_.emplace_back("aspp.rate" + std::to_string(r) + "_" + std::to_string(i++),
                               in_ch, branch_ch, 3, s, rng);
    }
    Conv2DSpec s1{1, 1, 1, 0, 0, PadMode::Zero};
    pool_conv_ = Conv2DLayer("aspp.pool", in_ch, branch_ch, 1, s1, rng);
    int concat_ch = branch_ch * (static_cast<int>(rates.size()) + 1);
    project_ = ConvBNReLU("aspp.project", concat_ch, out_ch, 1, s1, rng);
}

Tensor ASPP::forward(const Tensor& x, bool training) {
    saved_x_ = x;
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::vector<Tensor> outs;
    concat_sizes_.clear();
    for (auto& br : branches_) {
        outs.push_back(br.forward(x, training));
        concat_sizes_.push_back(outs.back().dim(0));
    }
    // global-average-pool branch, broadcast back to the input grid
    Tensor pooled{c, 1, 1};
    const double inv_hw = 1.0 / static_cast<double>(h * w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        const double* row = x.data() + ch * h * w;
        for (std::size_t i = 0; i < h * w; ++i) s += row[i];
        pooled(ch, 0, 0) = s * inv_hw;
    }
    saved_pool_pre_relu_ = pool_conv_.forward(pooled);
    Tensor pact = relu_forward(saved_pool_pre_relu_);
    Tensor broadcast{pact.dim(0), h, w};
    for (std::size_t ch = 0; ch < pact.dim(0); ++ch) {
        double v = pact(ch, 0, 0);
        double* row = broadcast.data() + ch * h * w;
        std::fill(row, row + h * w, v);
    }
    outs.push_back(std::move(broadcast));
    concat_sizes_.push_back(outs.back().dim(0));
    std::vector<const Tensor*> parts;
    for (const Tensor& t : outs) parts.push_back(&t);
    return project_.forward(concat_channels(parts), training);
}

Tensor ASPP::backward(const Tensor& grad_y) {
    Tensor gcat = project_.backward(grad_y);
    std::vector<Tensor> parts = split_channels(gcat, concat_sizes_);
    const std::size_t h = saved_x_.dim(1), w = saved_x_.dim(2);
    Tensor gx = Tensor::zeros_like(saved_x_);
    for (std::size_t b = 0; b < branches_.size(); ++b)
        gx.add_(branches_[b].backward(parts[b]));
    // pool branch: sum over the broadcast, back through relu/conv, spread
    const Tensor& gbc = parts.back();
    Tensor gpact{gbc.dim(0), 1, 1};
    for (std::size_t ch = 0; ch < gbc.dim(0); ++ch) {
        double s = 0.0;
        const double* row = gbc.data() + ch * h * w;
        for (std::size_t i = 0; i < h * w; ++i) s += row[i];
        gpact(ch, 0, 0) = s;
    }
    Tensor gpool = pool_conv_.backward(relu_backward(gpact, saved_pool_pre_relu_));
    const double inv_hw = 1.0 / static_cast<double>(h * w);
    for (std::size_t ch = 0; ch < saved_x_.dim(0); ++ch) {
        double v = gpool(ch, 0, 0) * inv_hw;
        double* row = gx.data() + ch * h * w;
        for (std::size_t i = 0; i < h * w; ++i) row[i] += v;
    }
    return gx;
}

void ASPP::collect(std::vector<Param*>& out) {
    for (auto& b : branches_) b.collect(out);
    pool_conv_.collect(out);
    project_.collect(out);
}

FusionLevel::FusionLevel(std::string name, int in_ch, int skip_ch, int skip_proj_ch,
                         int out_ch, bool circular, std::mt19937_64& rng) {
    Conv2DSpec s1{1, 1, 1, 0, 0, PadMode::Zero};
    skip_proj_ = ConvBNReLU(name + ".skip", skip_ch, skip_proj_ch, 1, s1, rng);
    Conv2DSpec s3{1, 1, 1, 1, 1, circular ? PadMode::CircularWidth : PadMode::Zero};
    fuse_ = ConvBNReLU(name + ".fuse", in_ch + skip_proj_ch, out_ch, 3, s3, rng);
}

Tensor FusionLevel::forward(const Tensor& x, const Tensor& skip, bool training) {
    in_h_ = static_cast<int>(x.dim(1));
    in_w_ = static_cast<int>(x.dim(2));
    up_h_ = static_cast<int>(skip.dim(1));
    up_w_ = static_cast<int>(skip.dim(2));
    Tensor up = upsample_bilinear_forward(x, up_h_, up_w_);
    Tensor sp = skip_proj_.forward(skip, training);
    main_ch_ = up.dim(0);
    skip_out_ch_ = sp.dim(0);
    return fuse_.forward(concat_channels({&up, &sp}), training);
}

Tensor FusionLevel::backward(const Tensor& grad_y, Tensor* grad_skip_out) {
    Tensor gcat = fuse_.backward(grad_y);
    std::vector<Tensor> parts = split_channels(gcat, {main_ch_, skip_out_ch_});
    if (grad_skip_out) *grad_skip_out = skip_proj_.backward(parts[1]);
    return upsample_bilinear_backward(parts[0], in_h_, in_w_);
}

void FusionLevel::collect(std::vector<Param*>& out) {
    skip_proj_.collect(out);
    fuse_.collect(out);
}

}  // namespace detail

void Net2DConfig::validate() const {
    if (in_channels < 1 || stem_channels < 1 || out_channels < 1)
        throw ArgumentError("net2d config: channel counts must be positive");
    int total = stem_stride;
    for (const auto& s : stages) {
        if (s.blocks < 1 || s.channels < 1 || s.stride < 1 || s.groups < 1)
            throw ArgumentError("net2d config: bad stage");
        if (s.channels % s.groups != 0)
            throw ArgumentError("net2d config: groups must divide stage channels");
        total *= s.stride;
    }
    if (total != 16)
        throw ArgumentError("net2d config: stem and stage strides must multiply to 16");
    bool have4 = false, have8 = false;
    int cum = stem_stride;
    for (const auto& s : stages) {
        cum *= s.stride;
        if (cum == 4) have4 = true;
        if (cum == 8) have8 = true;
    }
    if (!have4 || !have8)
        throw ArgumentError("net2d config: need stage outputs at strides 4 and 8 for the decoder");
    if (aspp_rates.empty()) throw ArgumentError("net2d config: need at least one ASPP rate");
}

Net2D::Net2D(const Net2DConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const bool circ = cfg_.circular_pad_width;
    Conv2DSpec stem_spec{cfg_.stem_stride, 1, 1, 1, 1,
                         circ ? PadMode::CircularWidth : PadMode::Zero};
    stem_ = detail::ConvBNReLU("stem", cfg_.in_channels, cfg_.stem_channels, 3, stem_spec, rng);
    int prev = cfg_.stem_channels;
    for (std::size_t si = 0; si < cfg_.stages.size(); ++si) {
        const auto& s = cfg_.stages[si];
        std::vector<detail::ResidualBlock> blocks;
        for (int b = 0; b < s.blocks; ++b) {
            int stride = b == 0 ? s.stride : 1;
            blocks.emplace_back("stage" + std::to_string(si) + ".block" + std::to_string(b),
                                prev, s.channels, stride, s.groups, circ, rng);
            prev = s.channels;
        }
        stages_.push_back(std::move(blocks));
    }
    aspp_ = detail::ASPP(prev, cfg_.aspp_rates, cfg_.aspp_channels, cfg_.decoder_channels,
                         circ, rng);
    // decoder taps: stage outputs at cumulative strides 8 and 4
    int cum = cfg_.stem_stride;
    int ch4 = 0, ch8 = 0;
    for (const auto& s : cfg_.stages) {
        cum *= s.stride;
        if (cum == 4) ch4 = s.channels;
        if (cum == 8) ch8 = s.channels;
    }
    int skip_proj_ch = std::max(cfg_.decoder_channels / 2, 8);
    fuse8_ = detail::FusionLevel("fuse8", cfg_.decoder_channels, ch8, skip_proj_ch,
                                 cfg_.decoder_channels, circ, rng);
    fuse4_ = detail::FusionLevel("fuse4", cfg_.decoder_channels, ch4, skip_proj_ch,
                                 cfg_.decoder_channels, circ, rng);
    Conv2DSpec s3{1, 1, 1, 1, 1, circ ? PadMode::CircularWidth : PadMode::Zero};
    out_conv_ = detail::ConvBNReLU("out", cfg_.decoder_channels, cfg_.out_channels, 3, s3, rng);
}

Tensor Net2D::forward(const Tensor& x_chw, bool training) {
    if (x_chw.rank() != 3 || x_chw.dim(0) != static_cast<std::size_t>(cfg_.in_channels))
        throw ArgumentError("net2d forward: want in_channels x H x W");
    in_h_ = static_cast<int>(x_chw.dim(1));
    in_w_ = static_cast<int>(x_chw.dim(2));
    pad_h_ = (in_h_ + 15) / 16 * 16;
    pad_w_ = (in_w_ + 15) / 16 * 16;
    Tensor x{static_cast<std::size_t>(cfg_.in_channels), static_cast<std::size_t>(pad_h_),
             static_cast<std::size_t>(pad_w_)};
    for (int c = 0; c < cfg_.in_channels; ++c)
        for (int r = 0; r < in_h_; ++r)
            for (int col = 0; col < in_w_; ++col) x(c, r, col) = x_chw(c, r, col);

    Tensor t = stem_.forward(x, training);
    taps_.clear();
    int cum = cfg_.stem_stride;
    int tap4 = -1, tap8 = -1;
    for (std::size_t si = 0; si < stages_.size(); ++si) {
        for (auto& block : stages_[si]) t = block.forward(t, training);
        taps_.push_back(t);
        cum *= cfg_.stages[si].stride;
        if (cum == 4) tap4 = static_cast<int>(si);
        if (cum == 8) tap8 = static_cast<int>(si);
    }
    Tensor a = aspp_.forward(t, training);
    Tensor d8 = fuse8_.forward(a, taps_[tap8], training);
    Tensor d4 = fuse4_.forward(d8, taps_[tap4], training);
    Tensor o = out_conv_.forward(d4, training);
    Tensor full = upsample_bilinear_forward(o, pad_h_, pad_w_);
    if (pad_h_ == in_h_ && pad_w_ == in_w_) return full;
    Tensor out{full.dim(0), static_cast<std::size_t>(in_h_), static_cast<std::size_t>(in_w_)};
    for (std::size_t c = 0; c < full.dim(0); ++c)
        for (int r = 0; r < in_h_; ++r)
            for (int col = 0; col < in_w_; ++col) out(c, r, col) = full(c, r, col);
    return out;
}

Tensor Net2D::backward(const Tensor& grad_out) {
    const std::size_t f = static_cast<std::size_t>(cfg_.out_channels);
    if (grad_out.rank() != 3 || grad_out.dim(0) != f ||
        grad_out.dim(1) != static_cast<std::size_t>(in_h_) ||
        grad_out.dim(2) != static_cast<std::size_t>(in_w_))
        throw ArgumentError("net2d backward: grad shape mismatch");
    Tensor gfull{f, static_cast<std::size_t>(pad_h_), static_cast<std::size_t>(pad_w_)};
    for (std::size_t c = 0; c < f; ++c)
        for (int r = 0; r < in_h_; ++r)
            for (int col = 0; col < in_w_; ++col) gfull(c, r, col) = grad_out(c, r, col);
    Tensor go = upsample_bilinear_backward(gfull, pad_h_ / 4, pad_w_ / 4);
    Tensor gd4 = out_conv_.backward(go);
    int cum = cfg_.stem_stride;
    int tap4 = -1, tap8 = -1;
    for (std::size_t si = 0; si < cfg_.stages.size(); ++si) {
        cum *= cfg_.stages[si].stride;
        if (cum == 4) tap4 = static_cast<int>(si);
        if (cum == 8) tap8 = static_cast<int>(si);
    }
    std::vector<Tensor> tap_grads(stages_.size());
    Tensor gskip;
    Tensor gd8 = fuse4_.backward(gd4, &gskip);
    tap_grads[tap4] = std::move(gskip);
    Tensor ga = fuse8_.backward(gd8, &gskip);
    if (tap_grads[tap8].empty())
        tap_grads[tap8] = std::move(gskip);
    else
        tap_grads[tap8].add_(gskip);
    Tensor g = aspp_.backward(ga);
    for (int si = static_cast<int>(stages_.size()) - 1; si >= 0; --si) {
        if (!tap_grads[si].empty()) g.add_(tap_grads[si]);
        for (int b = static_cast<int>(stages_[si].size()) - 1; b >= 0; --b)
            g = stages_[si][b].backward(g);
    }
    Tensor gx_pad = stem_.backward(g);
    Tensor gx{static_cast<std::size_t>(cfg_.in_channels), static_cast<std::size_t>(in_h_),
              static_cast<std::size_t>(in_w_)};
    for (int c = 0; c < cfg_.in_channels; ++c)
        for (int r = 0; r < in_h_; ++r)
            for (int col = 0; col < in_w_; ++col) gx(c, r, col) = gx_pad(c, r, col);
    return gx;
}

std::vector<Param*> Net2D::params() {
    std::vector<Param*> out;
    stem_.collect(out);
    for (auto& stage : stages_)
        for (auto& block : stage) block.collect(out);
    aspp_.collect(out);
    fuse8_.collect(out);
    fuse4_.collect(out);
    out_conv_.collect(out);
    return out;
}

void Net2D::zero_grad() {
    for (Param* p : params()) p->zero_grad();
}

}  // namespace kpr
