// Acceptance suite: one pass/fail line per criterion, exit code = number
// of failed criteria. Everything runs on a single CPU core.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "kprnet/checkpoint.hpp"
#include "kprnet/kitti_io.hpp"
#include "kprnet/kpconv.hpp"
#include "kprnet/metrics.hpp"
#include "kprnet/net2d.hpp"
#include "kprnet/pipeline.hpp"
#include "kprnet/postprocess.hpp"
#include "kprnet/projection.hpp"
#include "kprnet/train.hpp"

using namespace kpr;

namespace {

std::mt19937_64 g_rng(20240817);

double urand(double lo = -1.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(g_rng);
}

Tensor random_tensor(std::vector<std::size_t> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t{std::move(shape)};
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = urand(lo, hi);
    return t;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm3(double x, double y, double z) { return std::sqrt(x * x + y * y + z * z); }

// Central finite differences against analytic gradients; tracks the worst
// relative error across every probe.
struct GradCheck {
    double max_rel = 0.0;
    bool ok = true;

    void compare(double analytic, double fd) {
        double rel = std::abs(analytic - fd) /
                     std::max({std::abs(analytic), std::abs(fd), 1e-4});
        max_rel = std::max(max_rel, rel);
        if (!(rel < 1e-4)) ok = false;
    }
    static double central(double& slot, const std::function<double()>& loss, double h) {
        double saved = slot;
        slot = saved + h;
        double up = loss();
        slot = saved - h;
        double down = loss();
        slot = saved;
        return (up - down) / (2 * h);
    }
    static double rel(double a, double b) {
        return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
    }
    void probe(double& slot, double analytic, const std::function<double()>& loss,
               double h = 1e-5) {
        double fd = central(slot, loss, h);
        // A step crossing a relu kink makes the central difference one-sided.
        // Shrinking h below the distance to the kink removes that artifact,
        // while a genuine gradient bug stays wrong at any step size.
        if (rel(analytic, fd) >= 1e-4) {
            double fd_small = central(slot, loss, h * 1e-2);
            if (rel(analytic, fd_small) < rel(analytic, fd)) fd = fd_small;
        }
        compare(analytic, fd);
    }
};

void add_angular(PointCloud& cloud, double yaw, double pitch, double r, double rem) {
    double horiz = r * std::cos(pitch);
    cloud.xyz.insert(cloud.xyz.end(),
                     {horiz * std::cos(yaw), horiz * std::sin(yaw), r * std::sin(pitch)});
    cloud.remission.push_back(rem);
}

PointCloud random_cloud(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> coord(-50.0, 50.0);
    std::uniform_real_distribution<double> rem(0.0, 1.0);
    PointCloud cloud;
    for (int i = 0; i < n; ++i) {
        cloud.xyz.insert(cloud.xyz.end(),
                         {coord(rng), coord(rng), coord(rng) * 0.2});
        cloud.remission.push_back(rem(rng));
    }
    return cloud;
}

// ------------------------------------------------------------------ oracles

Tensor triple_loop_kpconv(const Tensor& features, const std::vector<double>& xyz,
                          const NeighborLists& neighbors, const KernelDisposition& disp,
                          const Tensor& weights) {
    const std::size_t n = features.dim(0), cin = features.dim(1);
    const std::size_t k = weights.dim(0), cout = weights.dim(2);
    Tensor out{n, cout};
    for (std::size_t q = 0; q < n; ++q)
        for (std::uint32_t j : neighbors[q]) {
            double dx = xyz[3 * j] - xyz[3 * q];
            double dy = xyz[3 * j + 1] - xyz[3 * q + 1];
            double dz = xyz[3 * j + 2] - xyz[3 * q + 2];
            for (std::size_t kk = 0; kk < k; ++kk) {
                double d = norm3(dx - disp.positions[kk][0], dy - disp.positions[kk][1],
                                 dz - disp.positions[kk][2]);
                double h = std::max(0.0, 1.0 - d / disp.sigma);
                if (h == 0.0) continue;
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t co = 0; co < cout; ++co)
                        out(q, co) += h * features(j, ci) * weights(kk, ci, co);
            }
        }
    return out;
}

struct OraclePixel {
    std::size_t winner;
    double range;
};
std::map<std::pair<int, int>, OraclePixel> brute_force_bins(const PointCloud& cloud,
                                                            const ProjectionConfig& cfg) {
    std::map<std::pair<int, int>, OraclePixel> bins;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        double x = cloud.x(i), y = cloud.y(i), z = cloud.z(i);
        double r = norm3(x, y, z);
        if (r == 0.0) continue;
        double pitch = std::asin(z / r);
        if (pitch < -cfg.fov_down || pitch > cfg.fov_up) continue;
        double yaw = std::atan2(y, x);
        int col = std::clamp(
            static_cast<int>(std::floor(0.5 * (1.0 - yaw / M_PI) * cfg.width)), 0,
            cfg.width - 1);
        int row = std::clamp(
            static_cast<int>(std::floor(
                (1.0 - (pitch + cfg.fov_down) / (cfg.fov_up + cfg.fov_down)) * cfg.height)),
            0, cfg.height - 1);
        auto [it, fresh] = bins.try_emplace({row, col}, OraclePixel{i, r});
        if (!fresh && r < it->second.range) it->second = {i, r};
    }
    return bins;
}

RangeImage synth_image(std::mt19937_64& rng, int h, int w, int extra_losers,
                       int extra_dropped) {
    RangeImage img;
    img.height = h;
    img.width = w;
    img.data = Tensor{static_cast<std::size_t>(h), static_cast<std::size_t>(w), 2};
    img.valid.assign(static_cast<std::size_t>(h) * w, 0);
    img.pixel_to_point.assign(static_cast<std::size_t>(h) * w, -1);
    std::uniform_real_distribution<double> range_dist(2.0, 60.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (rng() % 5 == 0) continue;
            std::size_t p = static_cast<std::size_t>(r) * w + c;
            img.valid[p] = 1;
            img.pixel_to_point[p] = static_cast<std::int64_t>(img.ranges.size());
            img.point_to_pixel.push_back({r, c});
            double range = range_dist(rng);
            img.ranges.push_back(range);
            img.data(r, c, 0) = 1.0 / range;
        }
    for (int e = 0; e < extra_losers; ++e) {
        std::size_t p = rng() % img.pixel_to_point.size();
        if (img.pixel_to_point[p] < 0) continue;
        img.point_to_pixel.push_back({static_cast<int>(p) / w, static_cast<int>(p) % w});
        img.ranges.push_back(range_dist(rng) + 10.0);
    }
    for (int e = 0; e < extra_dropped; ++e) {
        img.point_to_pixel.push_back({-1, -1});
        img.ranges.push_back(0.0);
    }
    return img;
}

std::vector<std::uint8_t> brute_force_knn(const std::vector<std::uint8_t>& pixel_labels,
                                          const RangeImage& img, const KnnConfig& cfg) {
    std::vector<std::uint8_t> out(img.num_points(), kIgnoreLabel);
    int half = cfg.window / 2;
    for (std::size_t i = 0; i < img.num_points(); ++i) {
        auto [r, c] = img.point_to_pixel[i];
        if (r < 0) continue;
        std::vector<std::pair<double, std::uint8_t>> window;
        for (int dr = -half; dr <= half; ++dr) {
            if (r + dr < 0 || r + dr >= img.height) continue;
            for (int dc = -half; dc <= half; ++dc) {
                int cc = ((c + dc) % img.width + img.width) % img.width;
                std::size_t p = static_cast<std::size_t>(r + dr) * img.width + cc;
                if (!img.valid[p]) continue;
                double delta = std::abs(
                    img.ranges[static_cast<std::size_t>(img.pixel_to_point[p])] -
                    img.ranges[i]);
                window.emplace_back(delta, pixel_labels[p]);
            }
        }
        std::stable_sort(window.begin(), window.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        if (window.size() > static_cast<std::size_t>(cfg.k))
            window.resize(static_cast<std::size_t>(cfg.k));
        double score[kNumClasses] = {};
        bool voted = false;
        for (const auto& [delta, label] : window) {
            if (cfg.cutoff > 0.0 && delta > cfg.cutoff) continue;
            score[label] +=
                std::exp(-delta * delta / (2 * cfg.sigma_gauss * cfg.sigma_gauss));
            voted = true;
        }
        int winner = -1;
        double best = 0.0;
        for (const auto& [delta, label] : window)
            if (score[label] > best) {
                best = score[label];
                winner = label;
            }
        out[i] = (voted && winner >= 0)
                     ? static_cast<std::uint8_t>(winner)
                     : pixel_labels[static_cast<std::size_t>(r) * img.width + c];
    }
    return out;
}

// ----------------------------------------------------------- toy pipeline

struct ToyData {
    std::vector<Scan> train;
    std::vector<Scan> noisy;  // same geometry + measurement noise, same labels
};

ToyData make_toy_data() {
    ToyData data;
    std::mt19937_64 rng(99);
    std::normal_distribution<double> range_noise(0.0, 0.05);
    std::normal_distribution<double> rem_noise(0.0, 0.01);
    const int rows = 32, per_row = 256;
    for (int s = 0; s < 4; ++s) {
        Scan scan, noisy;
        scan.id = noisy.id = "toy" + std::to_string(s);
        for (int b = 0; b < rows; ++b) {
            double pitch = (-24.0 + 26.0 * (b + 0.5) / rows) * M_PI / 180.0;
            for (int j = 0; j < per_row; ++j) {
                double yaw = M_PI - (j + 0.5) * 2.0 * M_PI / per_row;
                // class signature lives in the two input channels
                int cls = (j / 16) % 4;
                double range = 5.0 + 4.0 * cls +
                               std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
                double rem = 0.2 + 0.2 * cls +
                             std::uniform_real_distribution<double>(-0.02, 0.02)(rng);
                add_angular(scan.cloud, yaw, pitch, range, rem);
                scan.labels.push_back(static_cast<std::uint8_t>(cls));
                add_angular(noisy.cloud, yaw, pitch, range + range_noise(rng),
                            std::max(0.0, rem + rem_noise(rng)));
                noisy.labels.push_back(static_cast<std::uint8_t>(cls));
            }
        }
        data.train.push_back(std::move(scan));
        data.noisy.push_back(std::move(noisy));
    }
    return data;
}

Net2DConfig toy_net() {
    Net2DConfig net;
    net.stem_channels = 16;
    net.stages = {{1, 16, 2, 1}, {1, 32, 2, 1}, {1, 64, 2, 1}};
    net.aspp_rates = {1, 6};
    net.aspp_channels = 32;
    net.decoder_channels = 32;
    net.out_channels = 32;
    return net;
}

KPConvConfig toy_kp() {
    KPConvConfig kp;
    kp.num_kernel_points = 7;
    kp.in_channels = 32;
    kp.out_channels = 32;  // = F, so the 2D-feature head path is usable too
    return kp;
}

TrainConfig toy_train() {
    TrainConfig tc;
    tc.base_lr = 0.05;
    tc.momentum = 0.9;
    tc.weight_decay = 0.0;
    tc.epochs = 125;  // x4 scans, batch 1 => 500 steps
    tc.warmup_iters = 50;
    tc.batch_size = 1;
    tc.crop_width = 256;
    tc.flip_prob = 0.0;
    tc.seed = 1;
    tc.upsample_h = 32;
    tc.upsample_w = 256;
    return tc;
}

ProjectionConfig toy_proj() {
    ProjectionConfig proj;
    proj.height = 32;
    proj.width = 256;
    return proj;  // unfold mode
}

double accuracy(const std::vector<std::uint8_t>& pred,
                const std::vector<std::uint8_t>& gt) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) hit += pred[i] == gt[i];
    return static_cast<double>(hit) / static_cast<double>(gt.size());
}

std::vector<TrainLogEntry> g_toy_log;  // shared between criteria 9 and 10

// --------------------------------------------------------------- criteria

bool criterion_1() {
    const double table[kNumClasses] = {95.5, 54.1, 47.9, 23.6, 42.6, 65.9, 65.0,
                                       16.5, 93.2, 73.9, 80.6, 30.2, 91.7, 68.4,
                                       85.7, 69.8, 71.2, 58.7, 64.1};
    ConfusionMatrix cm;
    for (int c = 0; c < kNumClasses; ++c) {
        // IoU_c = TP / 1000 with the remainder as unmatched false negatives
        auto tp = static_cast<std::uint64_t>(std::llround(10.0 * table[c]));
        cm.add_count(c, c, tp);
        cm.add_ignored_pred(c, 1000 - tp);
    }
    return std::abs(100.0 * cm.miou() - 63.1) <= 0.05;
}

bool criterion_2() {
    TrainConfig cfg;  // base_lr 0.01875, warmup 1000
    const long total = 101000;
    bool ok = lr_at(1000, total, cfg) == 0.01875;
    ok = ok && lr_at(0, total, cfg) == 0.0;
    long mid = 1000 + (total - 1000) / 2;
    ok = ok && std::abs(lr_at(mid, total, cfg) - 0.009375) < 1e-12;
    // continuity at the warmup boundary: linear side limit equals base_lr
    ok = ok && std::abs(lr_at(999, total, cfg) - 0.01875 * 999.0 / 1000.0) < 1e-15;
    ok = ok && std::abs(lr_at(1001, total, cfg) - 0.01875) < 1e-4;
    return ok;
}

bool criterion_3() {
    for (int trial = 0; trial < 100; ++trial) {
        KPConvConfig cfg;
        cfg.num_kernel_points = 1 + int(g_rng() % 8);
        cfg.in_channels = 1 + int(g_rng() % 8);
        cfg.out_channels = 1 + int(g_rng() % 8);
        int n = 1 + int(g_rng() % 64);
        KPConvLayer layer(cfg, 3000 + trial);
        std::vector<double> xyz;
        for (int i = 0; i < 3 * n; ++i) xyz.push_back(urand());
        Tensor f = random_tensor({static_cast<std::size_t>(n),
                                  static_cast<std::size_t>(cfg.in_channels)});
        NeighborLists neighbors = radius_neighbors(xyz, cfg.radius);
        Tensor fast = layer.forward(f, xyz, neighbors);
        Tensor slow = triple_loop_kpconv(f, xyz, neighbors, layer.disposition(),
                                         layer.weights.value);
        for (std::size_t i = 0; i < fast.size(); ++i)
            if (std::abs(fast[i] - slow[i]) / std::max(std::abs(slow[i]), 1.0) > 1e-6)
                return false;
    }
    return true;
}

bool criterion_4() {
    bool all_ok = true;
    GradCheck gc;
    auto finish = [&](const char* op) {
        std::printf("     %-14s max rel %.3g%s\n", op, gc.max_rel,
                    gc.ok ? "" : "  <-- FAIL");
        all_ok = all_ok && gc.ok;
        gc = GradCheck{};
    };

    // conv2d: stride / dilation / groups / circular padding variants
    for (int trial = 0; trial < 20; ++trial) {
        Conv2DSpec spec;
        spec.stride = 1 + int(g_rng() % 2);
        spec.dilation = 1 + int(g_rng() % 2);
        spec.groups = (trial % 4 == 0) ? 2 : 1;
        spec.pad_h = spec.pad_w = 1;
        spec.pad_mode = (trial % 3 == 0) ? PadMode::CircularWidth : PadMode::Zero;
        std::size_t cin = 2 * spec.groups, cout = 2 * spec.groups;
        Tensor x = random_tensor({cin, 6, 8});
        Tensor k = random_tensor({cout, cin / spec.groups, 3, 3});
        Tensor w = random_tensor(conv2d_forward(x, k, spec).shape());
        auto loss = [&] { return dot(w, conv2d_forward(x, k, spec)); };
        Tensor gx, gk = Tensor::zeros_like(k);
        conv2d_backward(w, x, k, spec, &gx, &gk);
        for (int p = 0; p < 3; ++p) {
            std::size_t j = g_rng() % x.size();
            gc.probe(x[j], gx[j], loss);
            std::size_t m = g_rng() % k.size();
            gc.probe(k[m], gk[m], loss);
        }
    }

    finish("conv2d");

    // relu (inputs nudged off the kink)
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x{40};
        for (std::size_t i = 0; i < x.size(); ++i) {
            double v = urand(0.1, 1.0);
            x[i] = (g_rng() % 2) ? v : -v;
        }
        Tensor w = random_tensor({40});
        Tensor gx = relu_backward(w, x);
        auto loss = [&] { return dot(w, relu_forward(x)); };
        for (int p = 0; p < 4; ++p) {
            std::size_t j = g_rng() % x.size();
            gc.probe(x[j], gx[j], loss);
        }
    }

    finish("relu");

    // batchnorm (training mode) over x, gamma, beta
    for (int trial = 0; trial < 20; ++trial) {
        BatchNorm bn(3);
        Tensor x = random_tensor({3, 12});
        Tensor w = random_tensor({3, 12});
        auto loss = [&] { return dot(w, bn.forward(x, true)); };
        std::vector<Param*> ps;
        bn.collect(ps);
        for (Param* p : ps) p->zero_grad();
        bn.forward(x, true);
        Tensor gx = bn.backward(w);
        for (int p = 0; p < 3; ++p) {
            std::size_t j = g_rng() % x.size();
            gc.probe(x[j], gx[j], loss);
        }
        std::size_t c = g_rng() % 3;
        gc.probe(bn.gamma.value[c], bn.gamma.grad[c], loss);
        gc.probe(bn.beta.value[c], bn.beta.grad[c], loss);
    }

    finish("batchnorm");

    // bilinear upsample
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor({2, 4, 5});
        Tensor w = random_tensor({2, 9, 11});
        Tensor gx = upsample_bilinear_backward(w, 4, 5);
        auto loss = [&] { return dot(w, upsample_bilinear_forward(x, 9, 11)); };
        for (int p = 0; p < 4; ++p) {
            std::size_t j = g_rng() % x.size();
            gc.probe(x[j], gx[j], loss);
        }
    }

    finish("bilinear");

    // ASPP module
    for (int trial = 0; trial < 20; ++trial) {
        std::mt19937_64 rng(4000 + trial);
        detail::ASPP aspp(3, {1, 2}, 4, 4, false, rng);
        Tensor x = random_tensor({3, 6, 8});
        Tensor w = random_tensor({4, 6, 8});
        std::vector<Param*> ps;
        aspp.collect(ps);
        for (Param* p : ps) p->zero_grad();
        auto loss = [&] { return dot(w, aspp.forward(x, true)); };
        aspp.forward(x, true);
        Tensor gx = aspp.backward(w);
        for (int p = 0; p < 2; ++p) {
            std::size_t j = g_rng() % x.size();
            gc.probe(x[j], gx[j], loss);
        }
        for (int p = 0; p < 2; ++p) {
            Param* par = ps[g_rng() % ps.size()];
            if (!par->trainable) continue;
            std::size_t j = g_rng() % par->value.size();
            gc.probe(par->value[j], par->grad[j], loss);
        }
    }

    finish("aspp");

    // kpconv features + weights
    for (int trial = 0; trial < 20; ++trial) {
        KPConvConfig cfg;
        cfg.num_kernel_points = 2 + int(g_rng() % 5);
        cfg.in_channels = 2 + int(g_rng() % 3);
        cfg.out_channels = 2 + int(g_rng() % 3);
        int n = 5 + int(g_rng() % 12);
        KPConvLayer layer(cfg, 5000 + trial);
        std::vector<double> xyz;
        for (int i = 0; i < 3 * n; ++i) xyz.push_back(urand(-0.6, 0.6));
        NeighborLists neighbors = radius_neighbors(xyz, cfg.radius);
        Tensor f = random_tensor({static_cast<std::size_t>(n),
                                  static_cast<std::size_t>(cfg.in_channels)});
        Tensor w = random_tensor({static_cast<std::size_t>(n),
                                  static_cast<std::size_t>(cfg.out_channels)});
        auto loss = [&] { return dot(w, layer.forward(f, xyz, neighbors)); };
        layer.zero_grad();
        layer.forward(f, xyz, neighbors);
        Tensor gf = layer.backward(w);
        for (int p = 0; p < 3; ++p) {
            std::size_t j = g_rng() % f.size();
            gc.probe(f[j], gf[j], loss);
            std::size_t m = g_rng() % layer.weights.value.size();
            gc.probe(layer.weights.value[m], layer.weights.grad[m], loss);
        }
    }

    finish("kpconv");

    // classifier head (batchnorm -> relu -> linear) over features and params
    for (int trial = 0; trial < 20; ++trial) {
        KPConvConfig cfg;
        cfg.in_channels = 3;
        cfg.out_channels = 4;
        cfg.num_classes = 5;
        KPConvLayer layer(cfg, 6000 + trial);
        Tensor f = random_tensor({10, 4});
        Tensor w = random_tensor({10, 5});
        auto loss = [&] { return dot(w, layer.head_forward(f, true)); };
        layer.zero_grad();
        layer.head_forward(f, true);
        Tensor gf = layer.head_backward(w);
        for (int p = 0; p < 3; ++p) {
            std::size_t j = g_rng() % f.size();
            gc.probe(f[j], gf[j], loss);
        }
        std::size_t j = g_rng() % layer.cls_w.value.size();
        gc.probe(layer.cls_w.value[j], layer.cls_w.grad[j], loss);
        std::size_t b = g_rng() % layer.cls_b.value.size();
        gc.probe(layer.cls_b.value[b], layer.cls_b.grad[b], loss);
        std::size_t c = g_rng() % layer.head_bn.gamma.value.size();
        gc.probe(layer.head_bn.gamma.value[c], layer.head_bn.gamma.grad[c], loss);
    }

    finish("head");

    // cross-entropy
    for (int trial = 0; trial < 20; ++trial) {
        Tensor logits = random_tensor({12, static_cast<std::size_t>(kNumClasses)}, -3, 3);
        std::vector<std::uint8_t> targets(12);
        for (auto& t : targets)
            t = (g_rng() % 5 == 0) ? kIgnoreLabel
                                   : static_cast<std::uint8_t>(g_rng() % kNumClasses);
        targets[0] = 0;  // keep at least one labeled point
        auto [loss_val, grad] = cross_entropy(logits, targets);
        (void)loss_val;
        auto loss = [&] { return cross_entropy(logits, targets).first; };
        for (int p = 0; p < 5; ++p) {
            std::size_t j = g_rng() % logits.size();
            gc.probe(logits[j], grad[j], loss, 1e-6);
        }
    }

    finish("cross-entropy");

    // full net2d on a 16x32 input
    for (int trial = 0; trial < 20; ++trial) {
        Net2DConfig cfg;
        cfg.stem_channels = 4;
        cfg.stages = {{1, 4, 2, 1}, {1, 8, 2, 1}, {1, 8, 2, 1}};
        cfg.aspp_rates = {1, 2};
        cfg.aspp_channels = 8;
        cfg.decoder_channels = 8;
        cfg.out_channels = 4;
        Net2D net(cfg, 7000 + trial);
        Tensor x = random_tensor({2, 16, 32});
        Tensor w = random_tensor({4, 16, 32});
        auto loss = [&] { return dot(w, net.forward(x, true)); };
        net.zero_grad();
        net.forward(x, true);
        Tensor gx = net.backward(w);
        for (int p = 0; p < 2; ++p) {
            std::size_t j = g_rng() % x.size();
            gc.probe(x[j], gx[j], loss);
        }
        std::vector<Param*> ps = net.params();
        for (int p = 0; p < 2; ++p) {
            Param* par = ps[g_rng() % ps.size()];
            if (!par->trainable) continue;
            std::size_t j = g_rng() % par->value.size();
            gc.probe(par->value[j], par->grad[j], loss);
        }
    }

    finish("net2d");
    return all_ok;
}

bool criterion_5() {
    for (int trial = 0; trial < 200; ++trial) {
        int n = 20 + int(g_rng() % 481);
        double extent = trial % 2 ? 2.0 : 0.8;
        std::vector<double> xyz;
        for (int i = 0; i < 3 * n; ++i) xyz.push_back(urand(-extent, extent));
        double radius = 0.3 + 0.4 * (trial % 5) / 4.0;
        NeighborLists fast = radius_neighbors(xyz, radius);
        for (int i = 0; i < n; ++i) {
            std::vector<std::uint32_t> brute;
            for (int j = 0; j < n; ++j)
                if (norm3(xyz[3 * i] - xyz[3 * j], xyz[3 * i + 1] - xyz[3 * j + 1],
                          xyz[3 * i + 2] - xyz[3 * j + 2]) <= radius)
                    brute.push_back(static_cast<std::uint32_t>(j));
            if (fast[i] != brute) return false;
        }
    }
    return true;
}

bool criterion_6() {
    std::mt19937_64 rng(606);
    ProjectionConfig cfg;
    cfg.mode = ProjectionMode::Spherical;
    cfg.height = 16;
    cfg.width = 64;
    for (int trial = 0; trial < 50; ++trial) {
        PointCloud cloud = random_cloud(rng, 600);
        RangeImage img = project(cloud, cfg);
        auto bins = brute_force_bins(cloud, cfg);
        for (const auto& [pixel, oracle] : bins) {
            auto [r, c] = pixel;
            if (img.winner(r, c) != static_cast<std::int64_t>(oracle.winner)) return false;
            std::size_t i = oracle.winner;
            if (img.data(r, c, 0) != 1.0 / oracle.range) return false;
            if (img.data(r, c, 1) != cloud.remission[i]) return false;
        }
        // every pixel-winning point back-projects to exactly its own values
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            if (!img.point_mapped(i)) continue;
            auto [r, c] = img.point_to_pixel[i];
            if (img.winner(r, c) != static_cast<std::int64_t>(i)) continue;
            if (img.data(r, c, 0) != 1.0 / img.ranges[i]) return false;
            if (img.data(r, c, 1) != cloud.remission[i]) return false;
        }
    }
    return true;
}

bool criterion_7() {
    std::mt19937_64 rng(707);
    for (int rows : {4, 16, 64}) {
        const int per_row = 128;
        PointCloud cloud;
        for (int b = 0; b < rows; ++b) {
            double pitch = (-24.0 + 26.0 * (b + 0.5) / rows) * M_PI / 180.0;
            for (int j = 0; j < per_row; ++j) {
                double yaw = M_PI - (j + 0.5) * 2.0 * M_PI / per_row;
                double jitter = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
                add_angular(cloud, yaw, pitch, 10.0 + jitter, 0.5);
            }
        }
        ProjectionConfig cfg;
        cfg.mode = ProjectionMode::Unfold;
        cfg.height = rows;
        cfg.width = per_row;
        RangeImage img = project(cloud, cfg);
        for (std::size_t i = 0; i < cloud.size(); ++i)
            if (img.point_to_pixel[i][0] != static_cast<int>(i / per_row)) return false;

        // quantization-bunched elevations: unfolding cannot collide more
        ProjectionConfig sph = cfg;
        sph.mode = ProjectionMode::Spherical;
        PointCloud bunched;
        for (int b = 0; b < rows; ++b) {
            double t = (b + 0.5) / rows;
            double pitch = (-24.0 + 26.0 * t * t) * M_PI / 180.0;
            for (int j = 0; j < per_row; ++j) {
                double yaw = M_PI - (j + 0.5) * 2.0 * M_PI / per_row;
                add_angular(bunched, yaw, pitch, 10.0, 0.5);
            }
        }
        std::size_t unfold_coll = projection_stats(project(bunched, cfg)).collisions;
        std::size_t sph_coll = projection_stats(project(bunched, sph)).collisions;
        if (unfold_coll > sph_coll) return false;
    }
    return true;
}

bool criterion_8() {
    std::mt19937_64 rng(808);
    for (int trial = 0; trial < 50; ++trial) {
        RangeImage img = synth_image(rng, 32, 64, 20, 10);
        std::vector<std::uint8_t> labels(32 * 64);
        for (auto& x : labels) x = static_cast<std::uint8_t>(rng() % kNumClasses);
        for (int k : {1, 3, 5})
            for (double cutoff : {0.0, 1.0}) {
                KnnConfig cfg;
                cfg.k = k;
                cfg.cutoff = cutoff;
                cfg.window = 5;
                if (knn_filter(labels, img, cfg) != brute_force_knn(labels, img, cfg))
                    return false;
            }
    }
    return true;
}

bool criterion_9() {
    ToyData data = make_toy_data();
    Model model(toy_net(), toy_kp(), toy_proj(), 1);
    TrainConfig tc = toy_train();
    g_toy_log = train_loop(model, data.train, tc);

    double tail_loss = 0.0;
    for (std::size_t i = g_toy_log.size() - 4; i < g_toy_log.size(); ++i)
        tail_loss += g_toy_log[i].loss;
    tail_loss /= 4.0;

    double train_acc = 0.0, kp_noisy = 0.0, knn_noisy = 0.0;
    for (std::size_t s = 0; s < data.train.size(); ++s) {
        train_acc += accuracy(
            infer_scan(model, data.train[s].cloud, tc.upsample_h, tc.upsample_w).labels,
            data.train[s].labels);
        kp_noisy += accuracy(
            infer_scan(model, data.noisy[s].cloud, tc.upsample_h, tc.upsample_w).labels,
            data.noisy[s].labels);
        knn_noisy += accuracy(infer_scan_2d_knn(model, data.noisy[s].cloud, tc.upsample_h,
                                                tc.upsample_w, KnnConfig{})
                                  .labels,
                              data.noisy[s].labels);
    }
    train_acc /= 4.0;
    kp_noisy /= 4.0;
    knn_noisy /= 4.0;
    std::printf(
        "     (steps %zu, tail loss %.4f, train acc %.4f, noisy acc: point conv %.4f vs "
        "knn lift %.4f)\n",
        g_toy_log.size(), tail_loss, train_acc, kp_noisy, knn_noisy);
    return g_toy_log.size() == 500 && tail_loss < 0.05 && train_acc >= 0.99 &&
           knn_noisy <= kp_noisy;
}

bool criterion_10() {
    if (g_toy_log.empty()) return false;
    ToyData data = make_toy_data();
    Model model(toy_net(), toy_kp(), toy_proj(), 1);
    auto rerun = train_loop(model, data.train, toy_train());
    if (rerun.size() != g_toy_log.size()) return false;
    for (std::size_t i = 0; i < rerun.size(); ++i)
        if (rerun[i].step != g_toy_log[i].step || rerun[i].lr != g_toy_log[i].lr ||
            rerun[i].loss != g_toy_log[i].loss)
            return false;
    return true;
}

bool criterion_11() {
    std::mt19937_64 rng(1111);
    // .bin
    PointCloud cloud;
    for (int i = 0; i < 300; ++i) {
        for (int a = 0; a < 3; ++a)
            cloud.xyz.push_back(static_cast<float>(
                std::uniform_real_distribution<double>(-80.0, 80.0)(rng)));
        cloud.remission.push_back(static_cast<float>(
            std::uniform_real_distribution<double>(0.0, 1.0)(rng)));
    }
    auto bin = write_point_cloud(cloud);
    if (write_point_cloud(read_point_cloud(bin.data(), bin.size())) != bin) return false;

    // .label: raw words survive decode, and prediction files re-encode exactly
    std::vector<std::uint8_t> label_bytes(4 * 200);
    for (auto& b : label_bytes) b = static_cast<std::uint8_t>(rng());
    RawLabels raw = read_labels(label_bytes.data(), label_bytes.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        std::uint32_t word = 0;
        for (int b = 3; b >= 0; --b) word = (word << 8) | label_bytes[4 * i + b];
        if (raw.raw[i] != word) return false;
    }
    const LabelMap& map = LabelMap::semantic_kitti();
    std::vector<std::uint8_t> train_ids(200);
    for (auto& t : train_ids) t = static_cast<std::uint8_t>(rng() % kNumClasses);
    auto pred_bytes = write_predictions(train_ids, map);
    RawLabels pred = read_labels(pred_bytes.data(), pred_bytes.size());
    if (remap(pred, map) != train_ids) return false;
    if (write_predictions(remap(pred, map), map) != pred_bytes) return false;

    // KPRI
    PointCloud pc = random_cloud(rng, 500);
    ProjectionConfig proj;
    proj.height = 16;
    proj.width = 64;
    auto kpri = encode_range_image(project(pc, proj));
    if (encode_range_image(decode_range_image(kpri.data(), kpri.size())) != kpri)
        return false;

    // KPRW
    NamedTensors tensors;
    Tensor a{3, 4}, b{17};
    for (std::size_t i = 0; i < a.size(); ++i)
        a[i] = static_cast<float>(std::uniform_real_distribution<double>(-5, 5)(rng));
    for (std::size_t i = 0; i < b.size(); ++i)
        b[i] = static_cast<float>(std::uniform_real_distribution<double>(-5, 5)(rng));
    tensors.emplace_back("a", std::move(a));
    tensors.emplace_back("block.b", std::move(b));
    auto kprw = encode_checkpoint(tensors);
    if (encode_checkpoint(decode_checkpoint(kprw.data(), kprw.size())) != kprw)
        return false;
    return true;
}

int g_failures = 0;

void run(int idx, const char* what, const std::function<bool()>& fn) {
    bool ok = false;
    std::string note;
    try {
        ok = fn();
    } catch (const std::exception& e) {
        note = std::string(" (exception: ") + e.what() + ")";
    }
    std::printf("[%2d] %s  %s%s\n", idx, ok ? "PASS" : "FAIL", what, note.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

}  // namespace

int main() {
    run(1, "mIoU over a synthetic 19-class confusion summary = 63.1 +/- 0.05",
        criterion_1);
    run(2, "learning-rate schedule closed forms (warmup end 0.01875, cosine midpoint "
           "0.009375)",
        criterion_2);
    run(3, "point convolution matches the triple-loop oracle on 100 random instances",
        criterion_3);
    run(4, "finite-difference gradient checks for every differentiable op (>= 20 trials "
           "each, rel < 1e-4)",
        criterion_4);
    run(5, "voxel-grid radius search equals brute force on 200 random clouds",
        criterion_5);
    run(6, "projection round-trip and argmin-range winners on 50 random clouds",
        criterion_6);
    run(7, "scan unfolding recovers beam rows exactly (4/16/64 rows); collisions <= "
           "spherical",
        criterion_7);
    run(8, "KNN filter matches brute-force voting on 50 images (k in {1,3,5}, cutoff in "
           "{0,1})",
        criterion_8);
    run(9, "toy end-to-end overfit: >= 99% accuracy, loss < 0.05 within 500 steps; KNN "
           "path <= point-conv path on a noisy copy",
        criterion_9);
    run(10, "determinism: retraining with the same seed reproduces the loss log bit for "
            "bit",
        criterion_10);
    run(11, "bin/label/KPRI/KPRW round-trips are bit-exact", criterion_11);

    if (g_failures == 0)
        std::printf("all 11 criteria passed\n");
    else
        std::printf("%d criteria FAILED\n", g_failures);
    return g_failures;
}
