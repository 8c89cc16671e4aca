// kprnet command-line driver; talks to the core only through the C API.
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kprnet.h"

namespace fs = std::filesystem;

namespace {

struct ConfigDeleter {
    void operator()(kpr_config* c) const { kpr_config_free(c); }
};
using ConfigPtr = std::unique_ptr<kpr_config, ConfigDeleter>;

int die(kpr_status st) {
    std::fprintf(stderr, "error: %s\n", kpr_last_error());
    return static_cast<int>(st);
}

#define CHECK(call)                          \
    do {                                     \
        kpr_status st_ = (call);             \
        if (st_ != KPR_OK) return die(st_);  \
    } while (0)

std::vector<const char*> c_strs(const std::vector<std::string>& v) {
    std::vector<const char*> out;
    out.reserve(v.size());
    for (const auto& s : v) out.push_back(s.c_str());
    return out;
}

// <dir>/<stem of ref>.<ext>; errors if missing.
std::string sibling(const std::string& dir, const std::string& ref, const char* ext,
                    bool must_exist) {
    fs::path p = fs::path(dir) / (fs::path(ref).stem().string() + ext);
    if (must_exist && !fs::exists(p)) {
        std::fprintf(stderr, "error: missing file %s\n", p.string().c_str());
        std::exit(1);
    }
    return p.string();
}

bool parse_dims(const std::string& s, int& h, int& w) {
    auto x = s.find('x');
    if (x == std::string::npos) return false;
    try {
        h = std::stoi(s.substr(0, x));
        w = std::stoi(s.substr(x + 1));
    } catch (...) {
        return false;
    }
    return h > 0 && w > 0;
}

int print_config(const kpr_config* cfg) {
    size_t needed = 0;
    CHECK(kpr_config_dump(cfg, nullptr, 0, &needed));
    std::vector<char> buf(needed);
    CHECK(kpr_config_dump(cfg, buf.data(), buf.size(), nullptr));
    std::fputs(buf.data(), stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kprnet: range-image + point-convolution LiDAR segmentation"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    std::string seed, jobs, data_root;
    bool quiet = false;
    app.add_option("--config", config_path, "key = value config file");
    app.add_option("--set", sets, "override a single key, key=value")->take_all();
    app.add_option("--seed", seed, "random seed");
    app.add_option("--jobs", jobs, "worker threads for per-scan commands");
    app.add_option("--data-root", data_root, "dataset root (sequences/NN/...)");
    app.add_flag("--quiet", quiet, "skip the resolved-configuration echo");

    auto* project = app.add_subcommand("project", "project scans to range images");
    std::vector<std::string> proj_scans;
    std::string proj_out = ".", proj_up;
    bool proj_stats = false;
    project->add_option("scans", proj_scans, "input .bin scans")->required();
    project->add_option("--out", proj_out, "output directory");
    project->add_option("--upsample", proj_up, "HxW nearest-neighbor upsample");
    project->add_flag("--stats", proj_stats, "print drop/collision counts");

    auto* kernel = app.add_subcommand("kernel-points", "generate a kernel disposition");
    std::string kernel_out = "kernel_points.kprw";
    kernel->add_option("--out", kernel_out, "output KPRW file");

    auto* train = app.add_subcommand("train", "train on the configured train split");
    std::string train_out = "run";
    train->add_option("--out", train_out, "output directory");

    auto* infer = app.add_subcommand("infer", "predict per-point labels");
    std::vector<std::string> infer_scans;
    std::string infer_ckpt, infer_out = "predictions";
    infer->add_option("scans", infer_scans, "input .bin scans")->required();
    infer->add_option("--checkpoint", infer_ckpt, "KPRW checkpoint")->required();
    infer->add_option("--out", infer_out, "output directory");

    auto* post = app.add_subcommand("postprocess", "KNN-filter existing predictions");
    std::vector<std::string> post_scans;
    std::string post_preds, post_out = "filtered";
    post->add_option("scans", post_scans, "input .bin scans")->required();
    post->add_option("--preds", post_preds, "directory of <stem>.label predictions")
        ->required();
    post->add_option("--out", post_out, "output directory");

    auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
    std::vector<std::string> eval_scans;
    std::string eval_preds, eval_gt, eval_csv;
    eval->add_option("scans", eval_scans, "scan paths naming the <stem>s to score")
        ->required();
    eval->add_option("--preds", eval_preds, "directory of predicted .label files")
        ->required();
    eval->add_option("--gt", eval_gt, "directory of ground-truth .label files")
        ->required();
    eval->add_option("--csv", eval_csv, "also write per-class results as CSV");

    CLI11_PARSE(app, argc, argv);

    ConfigPtr cfg(kpr_config_create());
    if (!config_path.empty()) CHECK(kpr_config_load(cfg.get(), config_path.c_str()));
    for (const auto& kv : sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "error: --set wants key=value, got '%s'\n", kv.c_str());
            return 1;
        }
        CHECK(kpr_config_set(cfg.get(), kv.substr(0, eq).c_str(),
                             kv.substr(eq + 1).c_str()));
    }
    if (!seed.empty()) CHECK(kpr_config_set(cfg.get(), "seed", seed.c_str()));
    if (!jobs.empty()) CHECK(kpr_config_set(cfg.get(), "jobs", jobs.c_str()));
    if (!data_root.empty()) CHECK(kpr_config_set(cfg.get(), "data-root", data_root.c_str()));
    if (!quiet) {  // every run logs its resolved configuration
        int rc = print_config(cfg.get());
        if (rc != 0) return rc;
    }

    if (project->parsed()) {
        int up_h = 0, up_w = 0;
        if (!proj_up.empty() && !parse_dims(proj_up, up_h, up_w)) {
            std::fprintf(stderr, "error: --upsample wants HxW, got '%s'\n", proj_up.c_str());
            return 1;
        }
        auto paths = c_strs(proj_scans);
        CHECK(kpr_cmd_project(cfg.get(), paths.data(), paths.size(), proj_out.c_str(),
                              up_h, up_w, proj_stats ? 1 : 0));
    } else if (kernel->parsed()) {
        CHECK(kpr_cmd_kernel_points(cfg.get(), kernel_out.c_str()));
    } else if (train->parsed()) {
        CHECK(kpr_cmd_train(cfg.get(), train_out.c_str()));
    } else if (infer->parsed()) {
        auto paths = c_strs(infer_scans);
        CHECK(kpr_cmd_infer(cfg.get(), infer_ckpt.c_str(), paths.data(), paths.size(),
                            infer_out.c_str()));
    } else if (post->parsed()) {
        std::vector<std::string> preds;
        for (const auto& scan : post_scans)
            preds.push_back(sibling(post_preds, scan, ".label", true));
        auto pred_ptrs = c_strs(preds);
        auto scan_ptrs = c_strs(post_scans);
        CHECK(kpr_cmd_postprocess(cfg.get(), pred_ptrs.data(), scan_ptrs.data(),
                                  scan_ptrs.size(), post_out.c_str()));
    } else if (eval->parsed()) {
        std::vector<std::string> preds, gts;
        for (const auto& scan : eval_scans) {
            preds.push_back(sibling(eval_preds, scan, ".label", true));
            gts.push_back(sibling(eval_gt, scan, ".label", true));
        }
        auto pred_ptrs = c_strs(preds);
        auto gt_ptrs = c_strs(gts);
        std::vector<char> table(1 << 16);
        double miou = 0.0;
        CHECK(kpr_cmd_eval(cfg.get(), pred_ptrs.data(), gt_ptrs.data(), pred_ptrs.size(),
                           eval_csv.empty() ? nullptr : eval_csv.c_str(), table.data(),
                           table.size(), &miou));
        std::fputs(table.data(), stdout);
        std::printf("mIoU = %.4f\n", miou);
    }
    return 0;
}
