#ifndef KPRNET_PROJECTION_HPP
#define KPRNET_PROJECTION_HPP

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "kprnet/kitti_io.hpp"
#include "kprnet/tensor.hpp"

namespace kpr {

enum class ProjectionMode { Spherical, Unfold };

struct ProjectionConfig {
    int height = 64;
    int width = 2048;
    double fov_up = 3.0 * M_PI / 180.0;    // radians above horizontal
    double fov_down = 25.0 * M_PI / 180.0; // radians below horizontal
    ProjectionMode mode = ProjectionMode::Unfold;

    void validate() const;
};

// 2-channel range image (inverse depth, remission) with the bidirectional
// point<->pixel correspondence needed for back-projection. Collision losers
// keep their point_to_pixel entry; only winners own pixel data.
struct RangeImage {
    int height = 0;
    int width = 0;
    Tensor data;                                  // H x W x 2
    std::vector<std::uint8_t> valid;              // H*W
    std::vector<std::int64_t> pixel_to_point;     // H*W, -1 if empty
    std::vector<std::array<std::int32_t, 2>> point_to_pixel;  // (-1,-1) if dropped
    std::vector<double> ranges;                   // per point

    std::size_t num_points() const { return point_to_pixel.size(); }
    bool pixel_valid(int r, int c) const { return valid[r * width + c] != 0; }
    std::int64_t winner(int r, int c) const { return pixel_to_point[r * width + c]; }
    bool point_mapped(std::size_t i) const { return point_to_pixel[i][0] >= 0; }
};

RangeImage spherical_project(const PointCloud& cloud, const ProjectionConfig& cfg);

// Row assignment by ring recovery from capture order; columns as in the
// spherical projection. Sweep direction is auto-detected from the median
// yaw delta of the first 1000 points; a jump against it larger than pi
// starts a new row.
RangeImage unfold_project(const PointCloud& cloud, const ProjectionConfig& cfg);

RangeImage project(const PointCloud& cloud, const ProjectionConfig& cfg);

Tensor upsample_nearest(const Tensor& hwc, int new_h, int new_w);
RangeImage upsample_nearest(const RangeImage& img, int new_h, int new_w);

// Gathers per_pixel (H x W x D) onto points; unmapped points get zeros.
// mapped_out, when non-null, receives a per-point mapped flag.
Tensor back_project(const Tensor& per_pixel, const RangeImage& img,
                    std::vector<std::uint8_t>* mapped_out = nullptr);

// Exact adjoint of back_project: scatter-adds per-point gradients into an
// H x W x D pixel tensor, points in ascending index order.
Tensor back_project_adjoint(const Tensor& per_point, const RangeImage& img);

// Wrap-around column crop [start, start+width). Points outside become
// unmapped in the result (their original mapping is recoverable from the
// source image).
RangeImage crop_columns(const RangeImage& img, int start, int width);
RangeImage random_crop(const RangeImage& img, int width, std::mt19937_64& rng);

RangeImage horizontal_flip(const RangeImage& img);

// Counts pixels with at least two candidate points (collision diagnostics).
struct ProjectionStats {
    std::size_t dropped = 0;     // points with no pixel
    std::size_t collisions = 0;  // pixels with >= 2 candidates
};
ProjectionStats projection_stats(const RangeImage& img);

// KPRI container: magic "KPRI", u32 LE version=1, u32 H, u32 W, u32 C,
// H*W*C float32 LE row-major data, H*W int64 LE pixel_to_point.
void save_range_image(const std::string& path, const RangeImage& img);
RangeImage load_range_image(const std::string& path);
std::vector<std::uint8_t> encode_range_image(const RangeImage& img);
RangeImage decode_range_image(const std::uint8_t* bytes, std::size_t len);

}  // namespace kpr

#endif
