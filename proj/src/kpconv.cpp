#include "kprnet/kpconv.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

#include "kprnet/errors.hpp"

namespace kpr {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

void KernelDisposition::validate() const {
    if (positions.empty()) throw ArgumentError("kernel disposition: need at least one point");
    if (sigma <= 0.0 || radius <= 0.0)
        throw ArgumentError("kernel disposition: sigma and radius must be positive");
    const auto& origin = positions[0];
    if (origin[0] != 0.0 || origin[1] != 0.0 || origin[2] != 0.0)
        throw ArgumentError("kernel disposition: point 0 must be the origin");
    for (const auto& p : positions) {
        double n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        if (n > radius * (1.0 + 1e-9))
            throw ArgumentError("kernel disposition: point outside the influence ball");
    }
    for (std::size_t i = 0; i < positions.size(); ++i)
        for (std::size_t j = i + 1; j < positions.size(); ++j) {
            double dx = positions[i][0] - positions[j][0];
            double dy = positions[i][1] - positions[j][1];
            double dz = positions[i][2] - positions[j][2];
            if (dx * dx + dy * dy + dz * dz == 0.0)
                throw ArgumentError("kernel disposition: coincident kernel points");
        }
}

namespace {

double repulsion_energy(const std::vector<std::array<double, 3>>& p, double radius,
                        double attraction) {
    double e = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        for (std::size_t j = i + 1; j < p.size(); ++j) {
            double dx = p[i][0] - p[j][0], dy = p[i][1] - p[j][1], dz = p[i][2] - p[j][2];
            e += 1.0 / std::sqrt(dx * dx + dy * dy + dz * dz);
        }
        if (i > 0) {
            double n2 = p[i][0] * p[i][0] + p[i][1] * p[i][1] + p[i][2] * p[i][2];
            e += attraction * n2 / (radius * radius);
        }
    }
    return e;
}

}  // namespace

KernelDisposition generate_kernel_points(int k, double radius, double sigma,
                                         std::uint64_t seed,
                                         std::vector<double>* energy_trace) {
    if (k < 1) throw ArgumentError("generate_kernel_points: K must be >= 1");
    if (radius <= 0.0 || sigma <= 0.0)
        throw ArgumentError("generate_kernel_points: radius and sigma must be positive");
    KernelDisposition disp;
    disp.radius = radius;
    disp.sigma = sigma;
    disp.positions.assign(static_cast<std::size_t>(k), {0.0, 0.0, 0.0});
    if (k == 1) return disp;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-radius, radius);
    auto& p = disp.positions;
    for (int i = 1; i < k; ++i) {
        for (;;) {
            std::array<double, 3> cand{uni(rng), uni(rng), uni(rng)};
            double n2 = cand[0] * cand[0] + cand[1] * cand[1] + cand[2] * cand[2];
            if (n2 > radius * radius || n2 < 1e-6 * radius * radius) continue;
            bool ok = true;
            for (int j = 1; j < i; ++j) {
                double dx = cand[0] - p[j][0], dy = cand[1] - p[j][1], dz = cand[2] - p[j][2];
                if (dx * dx + dy * dy + dz * dz < 1e-6 * radius * radius) ok = false;
            }
            if (ok) {
                p[i] = cand;
                break;
            }
        }
    }

    const double attraction = static_cast<double>(k);
    double energy = repulsion_energy(p, radius, attraction);
    if (energy_trace) energy_trace->push_back(energy);
    double lr = 0.01 * radius;
    const double move_tol = 1e-6 * radius;
    for (int iter = 0; iter < 20000; ++iter) {
        // gradient; point 0 is pinned
        std::vector<std::array<double, 3>> grad(p.size(), {0.0, 0.0, 0.0});
        for (std::size_t i = 0; i < p.size(); ++i)
            for (std::size_t j = i + 1; j < p.size(); ++j) {
                double dx = p[i][0] - p[j][0], dy = p[i][1] - p[j][1], dz = p[i][2] - p[j][2];
                double d2 = dx * dx + dy * dy + dz * dz;
                double inv_d3 = 1.0 / (d2 * std::sqrt(d2));
                grad[i][0] -= dx * inv_d3;
                grad[i][1] -= dy * inv_d3;
                grad[i][2] -= dz * inv_d3;
                grad[j][0] += dx * inv_d3;
                grad[j][1] += dy * inv_d3;
                grad[j][2] += dz * inv_d3;
            }
        for (std::size_t i = 1; i < p.size(); ++i)
            for (int a = 0; a < 3; ++a)
                grad[i][a] += 2.0 * attraction * p[i][a] / (radius * radius);

        // backtracking step; energy never increases across accepted steps
        bool accepted = false;
        double max_move = 0.0;
        for (int bt = 0; bt < 60; ++bt) {
            std::vector<std::array<double, 3>> cand = p;
            max_move = 0.0;
            for (std::size_t i = 1; i < p.size(); ++i)
                for (int a = 0; a < 3; ++a) {
                    double step = lr * grad[i][a];
                    cand[i][a] -= step;
                    max_move = std::max(max_move, std::abs(step));
                }
            double cand_energy = repulsion_energy(cand, radius, attraction);
            if (cand_energy <= energy) {
                p = std::move(cand);
                energy = cand_energy;
                lr *= 1.1;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if (!accepted) break;
        if (energy_trace) energy_trace->push_back(energy);
        if (max_move < move_tol) break;
    }

    // rescale so the mean norm of the non-center points is 0.75 * radius
    double mean_norm = 0.0;
    for (std::size_t i = 1; i < p.size(); ++i)
        mean_norm += std::sqrt(p[i][0] * p[i][0] + p[i][1] * p[i][1] + p[i][2] * p[i][2]);
    mean_norm /= static_cast<double>(p.size() - 1);
    if (mean_norm > 0.0) {
        double scale = 0.75 * radius / mean_norm;
        for (std::size_t i = 1; i < p.size(); ++i)
            for (int a = 0; a < 3; ++a) p[i][a] *= scale;
    }
    for (std::size_t i = 1; i < p.size(); ++i) {
        double n = std::sqrt(p[i][0] * p[i][0] + p[i][1] * p[i][1] + p[i][2] * p[i][2]);
        if (n > radius)
            for (int a = 0; a < 3; ++a) p[i][a] *= radius / n;
    }
    disp.validate();
    return disp;
}

NeighborLists radius_neighbors(const std::vector<double>& xyz, double radius) {
    if (radius <= 0.0) throw ArgumentError("radius_neighbors: radius must be positive");
    const std::size_t n = xyz.size() / 3;
    const double inv_cell = 1.0 / radius;
    auto cell_key = [&](double x, double y, double z) {
        auto ix = static_cast<std::int64_t>(std::floor(x * inv_cell));
        auto iy = static_cast<std::int64_t>(std::floor(y * inv_cell));
        auto iz = static_cast<std::int64_t>(std::floor(z * inv_cell));
        const std::int64_t off = 1 << 20;
        return static_cast<std::uint64_t>(((ix + off) << 42) | ((iy + off) << 21) | (iz + off));
    };
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> grid;
    grid.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        grid[cell_key(xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2])].push_back(
            static_cast<std::uint32_t>(i));

    const double r2 = radius * radius;
    NeighborLists lists(n);
    for (std::size_t i = 0; i < n; ++i) {
        double x = xyz[3 * i], y = xyz[3 * i + 1], z = xyz[3 * i + 2];
        auto& list = lists[i];
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz) {
                    auto it = grid.find(cell_key(x + dx * radius, y + dy * radius,
                                                 z + dz * radius));
                    if (it == grid.end()) continue;
                    for (std::uint32_t j : it->second) {
                        double ddx = xyz[3 * j] - x, ddy = xyz[3 * j + 1] - y,
                               ddz = xyz[3 * j + 2] - z;
                        if (ddx * ddx + ddy * ddy + ddz * ddz <= r2) list.push_back(j);
                    }
                }
        std::sort(list.begin(), list.end());
    }
    return lists;
}

KPConvLayer::KPConvLayer(const KPConvConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.in_channels < 1 || cfg.out_channels < 1 || cfg.num_classes < 1)
        throw ArgumentError("kpconv: channel counts must be positive");
    std::mt19937_64 rng(seed);
    disposition_ = generate_kernel_points(cfg.num_kernel_points, cfg.radius, cfg.sigma,
                                          rng());
    weights.name = "kpconv.weights";
    weights.value = Tensor{static_cast<std::size_t>(cfg.num_kernel_points),
                           static_cast<std::size_t>(cfg.in_channels),
                           static_cast<std::size_t>(cfg.out_channels)};
    init_kaiming(weights.value,
                 static_cast<std::size_t>(cfg.num_kernel_points) * cfg.in_channels, rng);
    weights.zero_grad();
    head_bn = BatchNorm(cfg.out_channels, "kpconv.head.bn");
    cls_w.name = "kpconv.cls.w";
    cls_w.value = Tensor{static_cast<std::size_t>(cfg.out_channels),
                         static_cast<std::size_t>(cfg.num_classes)};
    init_kaiming(cls_w.value, static_cast<std::size_t>(cfg.out_channels), rng);
    cls_w.zero_grad();
    cls_b.name = "kpconv.cls.b";
    cls_b.value = Tensor{static_cast<std::size_t>(cfg.num_classes)};
    cls_b.decay = false;
    cls_b.zero_grad();
}

Tensor KPConvLayer::forward(const Tensor& features, const std::vector<double>& xyz,
                            const NeighborLists& neighbors) {
    const std::size_t n = neighbors.size();
    if (features.rank() != 2 || features.dim(0) != n || xyz.size() != 3 * n)
        throw ArgumentError("kpconv forward: features/points/neighbors disagree");
    if (features.dim(1) != static_cast<std::size_t>(cfg_.in_channels))
        throw ArgumentError("kpconv forward: feature width mismatch");
    const int K = cfg_.num_kernel_points;
    const std::size_t cin = static_cast<std::size_t>(cfg_.in_channels);
    const std::size_t cout = static_cast<std::size_t>(cfg_.out_channels);
    const double inv_sigma = 1.0 / disposition_.sigma;

    saved_features_ = features;
    saved_neighbors_ = &neighbors;
    saved_influence_.assign(n, {});
    saved_kernel_sums_ = Tensor{n, static_cast<std::size_t>(K), cin};
    for (std::size_t i = 0; i < n; ++i) {
        double xi = xyz[3 * i], yi = xyz[3 * i + 1], zi = xyz[3 * i + 2];
        auto& influences = saved_influence_[i];
        const auto& list = neighbors[i];
        for (std::size_t slot = 0; slot < list.size(); ++slot) {
            std::uint32_t j = list[slot];
            double dx = xyz[3 * j] - xi, dy = xyz[3 * j + 1] - yi, dz = xyz[3 * j + 2] - zi;
            const double* fj = features.data() + j * cin;
            for (int k = 0; k < K; ++k) {
                const auto& pk = disposition_.positions[k];
                double ex = dx - pk[0], ey = dy - pk[1], ez = dz - pk[2];
                double h = 1.0 - std::sqrt(ex * ex + ey * ey + ez * ez) * inv_sigma;
                if (h <= 0.0) continue;
                influences.emplace_back(static_cast<std::uint32_t>(slot * K + k), h);
                double* sums = saved_kernel_sums_.data() + (i * K + k) * cin;
                for (std::size_t c = 0; c < cin; ++c) sums[c] += h * fj[c];
            }
        }
    }

    Tensor out{n, cout};
    CMapRM s(saved_kernel_sums_.data(), static_cast<Eigen::Index>(n),
             static_cast<Eigen::Index>(K * cin));
    CMapRM w(weights.value.data(), static_cast<Eigen::Index>(K * cin),
             static_cast<Eigen::Index>(cout));
    MapRM o(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cout));
    o.noalias() = s * w;
    have_forward_ = true;
    return out;
}

Tensor KPConvLayer::backward(const Tensor& grad_out) {
    if (!have_forward_) throw StateError("kpconv backward: no saved forward pass");
    const std::size_t n = saved_influence_.size();
    const int K = cfg_.num_kernel_points;
    const std::size_t cin = static_cast<std::size_t>(cfg_.in_channels);
    const std::size_t cout = static_cast<std::size_t>(cfg_.out_channels);
    if (grad_out.rank() != 2 || grad_out.dim(0) != n || grad_out.dim(1) != cout)
        throw ArgumentError("kpconv backward: grad shape mismatch");

    CMapRM g(grad_out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cout));
    CMapRM s(saved_kernel_sums_.data(), static_cast<Eigen::Index>(n),
             static_cast<Eigen::Index>(K * cin));
    MapRM gw(weights.grad.data(), static_cast<Eigen::Index>(K * cin),
             static_cast<Eigen::Index>(cout));
    gw.noalias() += s.transpose() * g;

    Tensor grad_sums{n, static_cast<std::size_t>(K), cin};
    CMapRM w(weights.value.data(), static_cast<Eigen::Index>(K * cin),
             static_cast<Eigen::Index>(cout));
    MapRM gs(grad_sums.data(), static_cast<Eigen::Index>(n),
             static_cast<Eigen::Index>(K * cin));
    gs.noalias() = g * w.transpose();

    Tensor grad_features{n, cin};
    for (std::size_t i = 0; i < n; ++i) {
        const auto& list = (*saved_neighbors_)[i];
        for (const auto& [code, h] : saved_influence_[i]) {
            std::uint32_t j = list[code / K];
            std::uint32_t k = code % K;
            const double* gsum = grad_sums.data() + (i * K + k) * cin;
            double* gf = grad_features.data() + j * cin;
            for (std::size_t c = 0; c < cin; ++c) gf[c] += h * gsum[c];
        }
    }
    return grad_features;
}

Tensor KPConvLayer::head_forward(const Tensor& point_features, bool training) {
    const std::size_t n = point_features.dim(0);
    const std::size_t cout = static_cast<std::size_t>(cfg_.out_channels);
    if (point_features.rank() != 2 || point_features.dim(1) != cout)
        throw ArgumentError("kpconv head: feature width mismatch");
    Tensor normed = transpose2d(head_bn.forward(transpose2d(point_features), training));
    saved_head_pre_relu_ = normed;
    saved_head_relu_ = relu_forward(normed);
    Tensor logits{n, static_cast<std::size_t>(cfg_.num_classes)};
    CMapRM x(saved_head_relu_.data(), static_cast<Eigen::Index>(n),
             static_cast<Eigen::Index>(cout));
    CMapRM cw(cls_w.value.data(), static_cast<Eigen::Index>(cout),
              static_cast<Eigen::Index>(cfg_.num_classes));
    MapRM lm(logits.data(), static_cast<Eigen::Index>(n),
             static_cast<Eigen::Index>(cfg_.num_classes));
    lm.noalias() = x * cw;
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < cfg_.num_classes; ++c) logits(i, c) += cls_b.value[c];
    return logits;
}

Tensor KPConvLayer::head_backward(const Tensor& grad_logits) {
    if (saved_head_relu_.empty()) throw StateError("kpconv head backward: no saved pass");
    const std::size_t n = grad_logits.dim(0);
    const std::size_t cout = static_cast<std::size_t>(cfg_.out_channels);
    CMapRM g(grad_logits.data(), static_cast<Eigen::Index>(n),
             static_cast<Eigen::Index>(cfg_.num_classes));
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < cfg_.num_classes; ++c) cls_b.grad[c] += grad_logits(i, c);
    CMapRM x(saved_head_relu_.data(), static_cast<Eigen::Index>(n),
             static_cast<Eigen::Index>(cout));
    MapRM gcw(cls_w.grad.data(), static_cast<Eigen::Index>(cout),
              static_cast<Eigen::Index>(cfg_.num_classes));
    gcw.noalias() += x.transpose() * g;
    Tensor grad_relu{n, cout};
    MapRM gr(grad_relu.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cout));
    CMapRM cw(cls_w.value.data(), static_cast<Eigen::Index>(cout),
              static_cast<Eigen::Index>(cfg_.num_classes));
    gr.noalias() = g * cw.transpose();
    Tensor grad_pre = relu_backward(grad_relu, saved_head_pre_relu_);
    return transpose2d(head_bn.backward(transpose2d(grad_pre)));
}

std::vector<Param*> KPConvLayer::params() {
    std::vector<Param*> out{&weights};
    head_bn.collect(out);
    out.push_back(&cls_w);
    out.push_back(&cls_b);
    return out;
}

void KPConvLayer::zero_grad() {
    for (Param* p : params()) p->zero_grad();
}

}  // namespace kpr
