#include "kprnet.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>
#include <vector>

#include "kprnet/errors.hpp"
#include "kprnet/metrics.hpp"
#include "kprnet/pipeline.hpp"
#include "kprnet/run_config.hpp"

namespace fs = std::filesystem;

namespace {

thread_local std::string g_last_error;

kpr_status fail(kpr_status code, const std::string& msg) {
    g_last_error = msg;
    return code;
}

template <typename Fn>
kpr_status guarded(Fn&& fn) {
    try {
        fn();
        return KPR_OK;
    } catch (const kpr::IoError& e) {
        return fail(KPR_ERR_IO, e.what());
    } catch (const kpr::FormatError& e) {
        return fail(KPR_ERR_FORMAT, e.what());
    } catch (const kpr::DataError& e) {
        return fail(KPR_ERR_DATA, e.what());
    } catch (const kpr::ArgumentError& e) {
        return fail(KPR_ERR_ARGUMENT, e.what());
    } catch (const kpr::StateError& e) {
        return fail(KPR_ERR_STATE, e.what());
    } catch (const std::exception& e) {
        return fail(KPR_ERR_INTERNAL, e.what());
    }
}

kpr::Model build_model(const kpr::RunConfig& cfg) {
    cfg.validate();
    return kpr::Model(cfg.net, cfg.kp, cfg.proj, cfg.seed);
}

std::string out_name(const char* scan_path, const char* out_dir, const char* ext) {
    return (fs::path(out_dir) / fs::path(scan_path).stem()).string() + ext;
}

// Deterministic scan-parallel map: results land by index, workers take
// strided slices.
template <typename Fn>
void parallel_scans(std::size_t n, int jobs, Fn&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i, 0);
        return;
    }
    int workers = std::min<std::size_t>(jobs, n);
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    for (int w = 0; w < workers; ++w)
        threads.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i, w);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

struct kpr_config {
    kpr::RunConfig cfg;
};

struct kpr_cloud {
    kpr::PointCloud cloud;
};

struct kpr_range_image {
    kpr::RangeImage img;
};

extern "C" {

const char* kpr_last_error(void) { return g_last_error.c_str(); }

const char* kpr_version(void) { return "kprnet 1.0.0"; }

kpr_config* kpr_config_create(void) { return new kpr_config(); }

void kpr_config_free(kpr_config* cfg) { delete cfg; }

kpr_status kpr_config_set(kpr_config* cfg, const char* key, const char* value) {
    if (!cfg || !key || !value) return fail(KPR_ERR_ARGUMENT, "null argument");
    return guarded([&] { cfg->cfg.set(key, value); });
}

kpr_status kpr_config_load(kpr_config* cfg, const char* path) {
    if (!cfg || !path) return fail(KPR_ERR_ARGUMENT, "null argument");
    return guarded([&] { cfg->cfg.load_file(path); });
}

kpr_status kpr_config_dump(const kpr_config* cfg, char* buf, size_t cap, size_t* needed) {
    if (!cfg) return fail(KPR_ERR_ARGUMENT, "null config");
    return guarded([&] {
        std::string text = cfg->cfg.echo();
        if (needed) *needed = text.size() + 1;
        if (buf && cap > 0) {
            std::size_t n = std::min(cap - 1, text.size());
            std::memcpy(buf, text.data(), n);
            buf[n] = '\0';
        }
    });
}

kpr_status kpr_config_validate(const kpr_config* cfg) {
    if (!cfg) return fail(KPR_ERR_ARGUMENT, "null config");
    return guarded([&] { cfg->cfg.validate(); });
}

kpr_status kpr_cloud_load(const char* path, kpr_cloud** out) {
    if (!path || !out) return fail(KPR_ERR_ARGUMENT, "null argument");
    return guarded([&] {
        auto handle = std::make_unique<kpr_cloud>();
        handle->cloud = kpr::load_point_cloud(path);
        *out = handle.release();
    });
}

size_t kpr_cloud_size(const kpr_cloud* cloud) { return cloud ? cloud->cloud.size() : 0; }

void kpr_cloud_free(kpr_cloud* cloud) { delete cloud; }

kpr_status kpr_project_cloud(const kpr_config* cfg, const kpr_cloud* cloud,
                             kpr_range_image** out) {
    if (!cfg || !cloud || !out) return fail(KPR_ERR_ARGUMENT, "null argument");
    return guarded([&] {
        auto handle = std::make_unique<kpr_range_image>();
        handle->img = kpr::project(cloud->cloud, cfg->cfg.proj);
        *out = handle.release();
    });
}

int kpr_range_image_height(const kpr_range_image* img) { return img ? img->img.height : 0; }

int kpr_range_image_width(const kpr_range_image* img) { return img ? img->img.width : 0; }

kpr_status kpr_range_image_save(const kpr_range_image* img, const char* path) {
    if (!img || !path) return fail(KPR_ERR_ARGUMENT, "null argument");
    return guarded([&] { kpr::save_range_image(path, img->img); });
}

void kpr_range_image_free(kpr_range_image* img) { delete img; }

kpr_status kpr_cmd_project(const kpr_config* cfg, const char* const* scan_paths, size_t n,
                           const char* out_dir, int upsample_h, int upsample_w,
                           int print_stats) {
    if (!cfg || !scan_paths || !out_dir) return fail(KPR_ERR_ARGUMENT, "null argument");
    return guarded([&] {
        cfg->cfg.proj.validate();
        fs::create_directories(out_dir);
        std::vector<std::string> stat_lines(n);
        parallel_scans(n, cfg->cfg.jobs, [&](std::size_t i, int) {
            kpr::PointCloud cloud = kpr::load_point_cloud(scan_paths[i]);
            kpr::RangeImage img = kpr::project(cloud, cfg->cfg.proj);
            if (upsample_h > 0 && upsample_w > 0)
                img = kpr::upsample_nearest(img, upsample_h, upsample_w);
            kpr::save_range_image(out_name(scan_paths[i], out_dir, ".kpri"), img);
            if (print_stats) {
                kpr::ProjectionStats s = kpr::projection_stats(img);
                std::ostringstream line;
                line << scan_paths[i] << ": points=" << cloud.size()
                     << " dropped=" << s.dropped << " collisions=" << s.collisions;
                stat_lines[i] = line.str();
            }
        });
        if (print_stats)
            for (const auto& line : stat_lines) std::cout << line << '\n';
    });
}

kpr_status kpr_cmd_kernel_points(const kpr_config* cfg, const char* out_path) {
    if (!cfg || !out_path) return fail(KPR_ERR_ARGUMENT, "null argument");
    return guarded([&] {
        const auto& rc = cfg->cfg;
        kpr::KernelDisposition disp = kpr::generate_kernel_points(
            rc.kp.num_kernel_points, rc.kp.radius, rc.kp.sigma, rc.seed);
        kpr::Tensor points{static_cast<std::size_t>(disp.num_points()), 3};
        for (int i = 0; i < disp.num_points(); ++i)
            for (int a = 0; a < 3; ++a) points(i, a) = disp.positions[i][a];
        kpr::Tensor params{2};
        params[0] = disp.sigma;
        params[1] = disp.radius;
        kpr::save_checkpoint(out_path, {{"kpconv.kernel_points", std::move(points)},
                                        {"kpconv.sigma_radius", std::move(params)}});
    });
}

kpr_status kpr_cmd_train(const kpr_config* cfg, const char* out_dir) {
    if (!cfg || !out_dir) return fail(KPR_ERR_ARGUMENT, "null argument");
    return guarded([&] {
        const kpr::RunConfig& rc = cfg->cfg;
        kpr::Model model = build_model(rc);
        const kpr::LabelMap& map = rc.label_map();

        std::vector<kpr::Scan> scans;
        for (int seq : rc.split.train) {
            for (const std::string& path : kpr::discover_scans(rc.data_root, seq)) {
                kpr::Scan scan;
                scan.id = path;
                scan.cloud = kpr::load_point_cloud(path);
                std::string label_path = kpr::label_path_for_scan(path);
                kpr::RawLabels raw = kpr::load_labels(label_path);
                if (raw.size() != scan.cloud.size())
                    throw kpr::DataError(path + ": label count does not match point count");
                scan.labels = kpr::remap(raw, map);
                scans.push_back(std::move(scan));
            }
        }
        if (scans.empty())
            throw kpr::ArgumentError("no training scans under '" + rc.data_root +
                                     "' for the configured train split");

        fs::create_directories(out_dir);
        std::ofstream config_out(fs::path(out_dir) / "config.txt");
        config_out << rc.echo();
        std::ofstream csv(fs::path(out_dir) / "metrics.csv");
        csv << "step,lr,loss\n";

        std::string ckpt = (fs::path(out_dir) / "checkpoint.kprw").string();
        auto log = kpr::train_loop(model, scans, rc.train, [&](int epoch, double mean_loss) {
            std::cout << "epoch " << epoch << " mean_loss " << mean_loss << '\n';
            if ((epoch + 1) % rc.train.checkpoint_every_epochs == 0)
                kpr::save_checkpoint(ckpt, model.state());
        });
        for (const auto& entry : log)
            csv << entry.step << ',' << entry.lr << ',' << entry.loss << '\n';
        kpr::save_checkpoint(ckpt, model.state());
    });
}

kpr_status kpr_cmd_infer(const kpr_config* cfg, const char* checkpoint_path,
                         const char* const* scan_paths, size_t n, const char* out_dir) {
    if (!cfg || !checkpoint_path || !scan_paths || !out_dir)
        return fail(KPR_ERR_ARGUMENT, "null argument");
    return guarded([&] {
        const kpr::RunConfig& rc = cfg->cfg;
        kpr::Model base = build_model(rc);
        base.load_state(kpr::load_checkpoint(checkpoint_path));
        const kpr::LabelMap& map = rc.label_map();
        fs::create_directories(out_dir);

        int workers = std::max(1, std::min<int>(rc.jobs, static_cast<int>(n)));
        std::vector<kpr::Model> models(static_cast<std::size_t>(workers), base);
        parallel_scans(n, rc.jobs, [&](std::size_t i, int worker) {
            kpr::PointCloud cloud = kpr::load_point_cloud(scan_paths[i]);
            kpr::InferenceResult result = kpr::infer_scan(
                models[worker], cloud, rc.train.upsample_h, rc.train.upsample_w);
            kpr::save_predictions(out_name(scan_paths[i], out_dir, ".label"), result.labels,
                                  map);
        });
    });
}

kpr_status kpr_cmd_postprocess(const kpr_config* cfg, const char* const* pred_paths,
                               const char* const* scan_paths, size_t n,
                               const char* out_dir) {
    if (!cfg || !pred_paths || !scan_paths || !out_dir)
        return fail(KPR_ERR_ARGUMENT, "null argument");
    return guarded([&] {
        const kpr::RunConfig& rc = cfg->cfg;
        rc.proj.validate();
        rc.knn.validate();
        const kpr::LabelMap& map = rc.label_map();
        fs::create_directories(out_dir);
        parallel_scans(n, rc.jobs, [&](std::size_t i, int) {
            kpr::PointCloud cloud = kpr::load_point_cloud(scan_paths[i]);
            kpr::RawLabels raw = kpr::load_labels(pred_paths[i]);
            if (raw.size() != cloud.size())
                throw kpr::DataError(std::string(pred_paths[i]) +
                                     ": prediction count does not match point count");
            std::vector<std::uint8_t> preds = kpr::remap(raw, map);
            kpr::RangeImage img = kpr::project(cloud, rc.proj);
            // pixel labels come from each pixel's winning point
            std::vector<std::uint8_t> pixel_labels(
                static_cast<std::size_t>(img.height) * img.width, kpr::kIgnoreLabel);
            for (std::size_t p = 0; p < pixel_labels.size(); ++p)
                if (img.pixel_to_point[p] >= 0)
                    pixel_labels[p] = preds[static_cast<std::size_t>(img.pixel_to_point[p])];
            std::vector<std::uint8_t> filtered = kpr::knn_filter(pixel_labels, img, rc.knn);
            // points with no pixel keep their incoming prediction
            for (std::size_t j = 0; j < filtered.size(); ++j)
                if (!img.point_mapped(j)) filtered[j] = preds[j];
            kpr::save_predictions(out_name(pred_paths[i], out_dir, ".label"), filtered, map);
        });
    });
}

kpr_status kpr_cmd_eval(const kpr_config* cfg, const char* const* pred_paths,
                        const char* const* label_paths, size_t n, const char* csv_path,
                        char* table, size_t cap, double* miou_out) {
    if (!cfg || !pred_paths || !label_paths) return fail(KPR_ERR_ARGUMENT, "null argument");
    return guarded([&] {
        const kpr::RunConfig& rc = cfg->cfg;
        const kpr::LabelMap& map = rc.label_map();
        int workers = std::max(1, std::min<int>(rc.jobs, std::max<std::size_t>(n, 1)));
        std::vector<kpr::ConfusionMatrix> partial(static_cast<std::size_t>(workers));
        parallel_scans(n, rc.jobs, [&](std::size_t i, int worker) {
            kpr::RawLabels pred_raw = kpr::load_labels(pred_paths[i]);
            kpr::RawLabels gt_raw = kpr::load_labels(label_paths[i]);
            partial[worker].update(kpr::remap(pred_raw, map), kpr::remap(gt_raw, map));
        });
        kpr::ConfusionMatrix cm;
        for (const auto& p : partial) cm += p;  // merged in worker order
        std::string text = cm.table(map);
        if (table && cap > 0) {
            std::size_t len = std::min(cap - 1, text.size());
            std::memcpy(table, text.data(), len);
            table[len] = '\0';
        }
        if (csv_path) {
            std::string csv = cm.csv(map);
            kpr::write_file(csv_path, reinterpret_cast<const std::uint8_t*>(csv.data()),
                            csv.size());
        }
        if (miou_out) *miou_out = cm.miou();
    });
}

}  // extern "C"
