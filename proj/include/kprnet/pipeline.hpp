#ifndef KPRNET_PIPELINE_HPP
#define KPRNET_PIPELINE_HPP

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "kprnet/checkpoint.hpp"
#include "kprnet/kpconv.hpp"
#include "kprnet/net2d.hpp"
#include "kprnet/postprocess.hpp"
#include "kprnet/projection.hpp"
#include "kprnet/train.hpp"

namespace kpr {

struct Scan {
    std::string id;
    PointCloud cloud;
    std::vector<std::uint8_t> labels;  // train ids; empty for unlabeled scans
};

// The full 2D+3D model: range-image network followed by one KPConv layer
// and its classification head.
class Model {
  public:
    Model(const Net2DConfig& cfg2d, const KPConvConfig& cfgkp, const ProjectionConfig& proj,
          std::uint64_t seed);

    std::vector<Param*> params();
    void zero_grad();

    NamedTensors state();            // weights, batchnorm stats, kernel points
    void load_state(const NamedTensors& tensors);

    Net2D net2d;
    KPConvLayer kpconv;
    ProjectionConfig projection;
};

// One scan's forward+backward through the whole chain:
// project -> upsample -> crop/flip -> net2d -> back-project -> kpconv ->
// head -> cross-entropy. Gradients accumulate into the model, scaled by
// grad_scale (1/batch for batch averaging). Returns the scan loss.
double train_scan(Model& model, const Scan& scan, const TrainConfig& cfg,
                  std::mt19937_64& rng, double grad_scale);

struct InferenceResult {
    std::vector<std::uint8_t> labels;   // per point
    RangeImage image;                   // upsampled projection used
};

// KPConv path: every point gets a label (projection-dropped points enter
// the point convolution with zero 2D features).
InferenceResult infer_scan(Model& model, const PointCloud& cloud, int upsample_h,
                           int upsample_w);

// 2D-only baseline path: the head classifies per-pixel features directly
// (requires net2d F == kpconv out_channels), then the KNN filter lifts the
// pixel labels to the points.
InferenceResult infer_scan_2d_knn(Model& model, const PointCloud& cloud, int upsample_h,
                                  int upsample_w, const KnnConfig& knn);

struct TrainLogEntry {
    long step;
    double lr;
    double loss;
};

// Deterministic given cfg.seed. Calls on_epoch (when set) after each epoch
// with the epoch's mean loss. Returns the per-step log.
std::vector<TrainLogEntry> train_loop(
    Model& model, const std::vector<Scan>& scans, const TrainConfig& cfg,
    const std::function<void(int epoch, double mean_loss)>& on_epoch = {});

}  // namespace kpr

#endif
