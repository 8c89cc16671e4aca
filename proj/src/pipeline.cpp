#include "kprnet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kprnet/errors.hpp"

namespace kpr {

Model::Model(const Net2DConfig& cfg2d, const KPConvConfig& cfgkp,
             const ProjectionConfig& proj, std::uint64_t seed)
    : net2d(cfg2d, seed), kpconv(cfgkp, seed + 1), projection(proj) {
    if (cfgkp.in_channels != cfg2d.out_channels)
        throw ArgumentError("model: kpconv in_channels must equal net2d out_channels");
    projection.validate();
}

std::vector<Param*> Model::params() {
    std::vector<Param*> out = net2d.params();
    for (Param* p : kpconv.params()) out.push_back(p);
    return out;
}

void Model::zero_grad() {
    for (Param* p : params()) p->zero_grad();
}

NamedTensors Model::state() {
    NamedTensors out;
    for (Param* p : params()) out.emplace_back(p->name, p->value);
    const auto& disp = kpconv.disposition();
    Tensor kp{static_cast<std::size_t>(disp.num_points()), 3};
    for (int i = 0; i < disp.num_points(); ++i)
        for (int a = 0; a < 3; ++a) kp(i, a) = disp.positions[i][a];
    out.emplace_back("kpconv.kernel_points", std::move(kp));
    return out;
}

void Model::load_state(const NamedTensors& tensors) {
    std::vector<Param*> ps = params();
    for (const auto& [name, value] : tensors) {
        if (name == "kpconv.kernel_points") {
            if (value.rank() != 2 || value.dim(1) != 3 ||
                value.dim(0) != static_cast<std::size_t>(kpconv.disposition().num_points()))
                throw FormatError("checkpoint: kernel point shape mismatch");
            for (std::size_t i = 0; i < value.dim(0); ++i)
                for (int a = 0; a < 3; ++a)
                    kpconv.disposition_.positions[i][a] = value(i, a);
            kpconv.disposition_.validate();
            continue;
        }
        auto it = std::find_if(ps.begin(), ps.end(),
                               [&](Param* p) { return p->name == name; });
        if (it == ps.end()) throw FormatError("checkpoint: unknown tensor " + name);
        if (!(*it)->value.same_shape(value))
            throw FormatError("checkpoint: shape mismatch for " + name);
        (*it)->value = value;
    }
}

namespace {

struct KeptPoints {
    std::vector<std::size_t> indices;
    std::vector<double> xyz;
    Tensor features;
    std::vector<std::uint8_t> labels;
};

// In-crop points plus projection-dropped points (the latter carry zero 2D
// features but keep contributing 3D context and receive labels).
KeptPoints gather_kept(const PointCloud& cloud, const std::vector<std::uint8_t>& labels,
                       const RangeImage& original, const RangeImage& augmented,
                       const Tensor& per_point_features) {
    KeptPoints kept;
    const std::size_t n = cloud.size();
    for (std::size_t i = 0; i < n; ++i)
        if (augmented.point_mapped(i) || !original.point_mapped(i))
            kept.indices.push_back(i);
    const std::size_t f = per_point_features.dim(1);
    kept.features = Tensor{kept.indices.size(), f};
    kept.xyz.resize(3 * kept.indices.size());
    kept.labels.resize(kept.indices.size());
    for (std::size_t s = 0; s < kept.indices.size(); ++s) {
        std::size_t i = kept.indices[s];
        for (std::size_t c = 0; c < f; ++c) kept.features(s, c) = per_point_features(i, c);
        kept.xyz[3 * s] = cloud.x(i);
        kept.xyz[3 * s + 1] = cloud.y(i);
        kept.xyz[3 * s + 2] = cloud.z(i);
        kept.labels[s] = labels.empty() ? kIgnoreLabel : labels[i];
    }
    return kept;
}

}  // namespace

double train_scan(Model& model, const Scan& scan, const TrainConfig& cfg,
                  std::mt19937_64& rng, double grad_scale) {
    try {
        RangeImage img = project(scan.cloud, model.projection);
        RangeImage up = upsample_nearest(img, cfg.upsample_h, cfg.upsample_w);
        int crop_w = std::min(cfg.crop_width, up.width);
        RangeImage aug = random_crop(up, crop_w, rng);
        if (std::bernoulli_distribution(cfg.flip_prob)(rng)) aug = horizontal_flip(aug);

        Tensor feat_chw = model.net2d.forward(chw_from_hwc(aug.data), true);
        Tensor feat_hwc = hwc_from_chw(feat_chw);
        Tensor per_point = back_project(feat_hwc, aug);
        KeptPoints kept = gather_kept(scan.cloud, scan.labels, img, aug, per_point);
        if (kept.indices.empty()) return 0.0;

        NeighborLists neighbors =
            radius_neighbors(kept.xyz, model.kpconv.disposition().radius);
        Tensor kp_out = model.kpconv.forward(kept.features, kept.xyz, neighbors);
        Tensor logits = model.kpconv.head_forward(kp_out, true);
        auto [loss, grad_logits] = cross_entropy(logits, kept.labels);

        grad_logits.scale_(grad_scale);
        Tensor grad_kp = model.kpconv.head_backward(grad_logits);
        Tensor grad_kept = model.kpconv.backward(grad_kp);
        Tensor grad_full{per_point.shape()};
        const std::size_t f = grad_full.dim(1);
        for (std::size_t s = 0; s < kept.indices.size(); ++s)
            for (std::size_t c = 0; c < f; ++c)
                grad_full(kept.indices[s], c) = grad_kept(s, c);
        Tensor grad_pixels = back_project_adjoint(grad_full, aug);
        model.net2d.backward(chw_from_hwc(grad_pixels));
        return loss;
    } catch (const std::exception& e) {
        throw std::runtime_error("scan " + scan.id + ": " + e.what());
    }
}

InferenceResult infer_scan(Model& model, const PointCloud& cloud, int upsample_h,
                           int upsample_w) {
    RangeImage img = project(cloud, model.projection);
    RangeImage up = upsample_nearest(img, upsample_h, upsample_w);
    Tensor feat_chw = model.net2d.forward(chw_from_hwc(up.data), false);
    Tensor per_point = back_project(hwc_from_chw(feat_chw), up);
    NeighborLists neighbors = radius_neighbors(cloud.xyz, model.kpconv.disposition().radius);
    Tensor kp_out = model.kpconv.forward(per_point, cloud.xyz, neighbors);
    Tensor logits = model.kpconv.head_forward(kp_out, false);
    InferenceResult result;
    result.labels.resize(cloud.size());
    const std::size_t c = logits.dim(1);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double* row = logits.data() + i * c;
        std::size_t best = 0;
        for (std::size_t k = 1; k < c; ++k)
            if (row[k] > row[best]) best = k;
        result.labels[i] = static_cast<std::uint8_t>(best);
    }
    result.image = std::move(up);
    return result;
}

InferenceResult infer_scan_2d_knn(Model& model, const PointCloud& cloud, int upsample_h,
                                  int upsample_w, const KnnConfig& knn) {
    if (model.net2d.config().out_channels != model.kpconv.config().out_channels)
        throw ArgumentError(
            "2d inference path needs net2d feature width == kpconv out_channels "
            "(the head classifies per-pixel features directly)");
    RangeImage img = project(cloud, model.projection);
    RangeImage up = upsample_nearest(img, upsample_h, upsample_w);
    Tensor feat_chw = model.net2d.forward(chw_from_hwc(up.data), false);
    Tensor feat_hwc = hwc_from_chw(feat_chw);
    const std::size_t hw = feat_hwc.dim(0) * feat_hwc.dim(1);
    const std::size_t f = feat_hwc.dim(2);
    Tensor pixels{hw, f};
    std::copy(feat_hwc.data(), feat_hwc.data() + feat_hwc.size(), pixels.data());
    Tensor logits = model.kpconv.head_forward(pixels, false);
    std::vector<std::uint8_t> pixel_labels(hw);
    const std::size_t c = logits.dim(1);
    for (std::size_t p = 0; p < hw; ++p) {
        const double* row = logits.data() + p * c;
        std::size_t best = 0;
        for (std::size_t k = 1; k < c; ++k)
            if (row[k] > row[best]) best = k;
        pixel_labels[p] = static_cast<std::uint8_t>(best);
    }
    InferenceResult result;
    result.labels = knn_filter(pixel_labels, up, knn);
    result.image = std::move(up);
    return result;
}

std::vector<TrainLogEntry> train_loop(
    Model& model, const std::vector<Scan>& scans, const TrainConfig& cfg,
    const std::function<void(int epoch, double mean_loss)>& on_epoch) {
    cfg.validate();
    if (scans.empty()) throw ArgumentError("train: no scans");
    const long steps_per_epoch =
        (static_cast<long>(scans.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const long total_steps = steps_per_epoch * cfg.epochs;
    if (total_steps <= cfg.warmup_iters)
        throw ArgumentError("train: total steps must exceed warmup_iters");

    std::mt19937_64 rng(cfg.seed);
    SGD optimizer(cfg.momentum, cfg.weight_decay);
    std::vector<Param*> params = model.params();
    std::vector<std::size_t> order(scans.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<TrainLogEntry> log;
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        long epoch_steps = 0;
        for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
            std::size_t chunk = std::min<std::size_t>(cfg.batch_size, order.size() - at);
            model.zero_grad();
            double batch_loss = 0.0;
            const double scale = 1.0 / static_cast<double>(chunk);
            for (std::size_t b = 0; b < chunk; ++b)
                batch_loss += train_scan(model, scans[order[at + b]], cfg, rng, scale);
            batch_loss *= scale;
            double lr = lr_at(step, total_steps, cfg);
            optimizer.step(params, lr);
            log.push_back({step, lr, batch_loss});
            epoch_loss += batch_loss;
            ++epoch_steps;
            ++step;
        }
        if (on_epoch) on_epoch(epoch, epoch_loss / static_cast<double>(epoch_steps));
    }
    return log;
}

}  // namespace kpr
