#include "kprnet/projection.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "kprnet/errors.hpp"

namespace kpr {

namespace {

struct PixelWriter {
    RangeImage& img;

    // min range wins; exact ties go to the lowest point index (earlier
    // writes are never displaced by an equal range).
    void offer(int row, int col, std::size_t point, double range, double remission) {
        std::size_t p = static_cast<std::size_t>(row) * img.width + col;
        std::int64_t cur = img.pixel_to_point[p];
        if (cur >= 0 && img.ranges[static_cast<std::size_t>(cur)] <= range) return;
        img.pixel_to_point[p] = static_cast<std::int64_t>(point);
        img.valid[p] = 1;
        img.data(row, col, 0) = 1.0 / range;
        img.data(row, col, 1) = remission;
    }
};

RangeImage make_empty(int h, int w, std::size_t n_points) {
    RangeImage img;
    img.height = h;
    img.width = w;
    img.data = Tensor{static_cast<std::size_t>(h), static_cast<std::size_t>(w), 2};
    img.valid.assign(static_cast<std::size_t>(h) * w, 0);
    img.pixel_to_point.assign(static_cast<std::size_t>(h) * w, -1);
    img.point_to_pixel.assign(n_points, {-1, -1});
    img.ranges.assign(n_points, 0.0);
    return img;
}

int yaw_to_col(double yaw, int w) {
    int col = static_cast<int>(std::floor(0.5 * (1.0 - yaw / M_PI) * w));
    return std::clamp(col, 0, w - 1);
}

}  // namespace

void ProjectionConfig::validate() const {
    if (height < 1 || width < 2)
        throw ArgumentError("projection: need height >= 1 and width >= 2");
    if (fov_up + fov_down <= 0.0)
        throw ArgumentError("projection: fov_up + fov_down must be positive");
}

RangeImage spherical_project(const PointCloud& cloud, const ProjectionConfig& cfg) {
    cfg.validate();
    const int h = cfg.height, w = cfg.width;
    const double fov = cfg.fov_up + cfg.fov_down;
    RangeImage img = make_empty(h, w, cloud.size());
    PixelWriter writer{img};
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        double x = cloud.x(i), y = cloud.y(i), z = cloud.z(i);
        double r = std::sqrt(x * x + y * y + z * z);
        img.ranges[i] = r;
        if (r == 0.0) continue;
        double pitch = std::asin(z / r);
        if (pitch < -cfg.fov_down || pitch > cfg.fov_up) continue;
        double yaw = std::atan2(y, x);
        int col = yaw_to_col(yaw, w);
        int row = static_cast<int>(std::floor((1.0 - (pitch + cfg.fov_down) / fov) * h));
        row = std::clamp(row, 0, h - 1);
        img.point_to_pixel[i] = {row, col};
        writer.offer(row, col, i, r, cloud.remission[i]);
    }
    return img;
}

RangeImage unfold_project(const PointCloud& cloud, const ProjectionConfig& cfg) {
    cfg.validate();
    const int h = cfg.height, w = cfg.width;
    const std::size_t n = cloud.size();
    RangeImage img = make_empty(h, w, n);

    std::vector<double> yaws(n, 0.0);
    std::vector<std::uint8_t> usable(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        double x = cloud.x(i), y = cloud.y(i), z = cloud.z(i);
        double r = std::sqrt(x * x + y * y + z * z);
        img.ranges[i] = r;
        if (r == 0.0) continue;
        usable[i] = 1;
        yaws[i] = std::atan2(y, x);
    }

    // Sweep direction from the median yaw delta over the first 1000 points.
    std::vector<double> deltas;
    double prev = 0.0;
    bool have_prev = false;
    for (std::size_t i = 0; i < n && deltas.size() < 1000; ++i) {
        if (!usable[i]) continue;
        if (have_prev) {
            double d = yaws[i] - prev;
            if (d > M_PI) d -= 2.0 * M_PI;
            if (d <= -M_PI) d += 2.0 * M_PI;
            deltas.push_back(d);
        }
        prev = yaws[i];
        have_prev = true;
    }
    double direction = -1.0;  // Velodyne convention when undecidable
    if (!deltas.empty()) {
        auto mid = deltas.begin() + deltas.size() / 2;
        std::nth_element(deltas.begin(), mid, deltas.end());
        if (*mid > 0.0) direction = 1.0;
    }

    PixelWriter writer{img};
    int row = 0;
    have_prev = false;
    prev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!usable[i]) continue;
        double yaw = yaws[i];
        if (have_prev) {
            double jump = (yaw - prev) * direction;
            if (jump < -M_PI) ++row;  // wrapped back to the sweep start
        }
        prev = yaw;
        have_prev = true;
        if (row >= h) break;
        int col = yaw_to_col(yaw, w);
        img.point_to_pixel[i] = {row, col};
        writer.offer(row, col, i, img.ranges[i], cloud.remission[i]);
    }
    return img;
}

RangeImage project(const PointCloud& cloud, const ProjectionConfig& cfg) {
    return cfg.mode == ProjectionMode::Spherical ? spherical_project(cloud, cfg)
                                                 : unfold_project(cloud, cfg);
}

Tensor upsample_nearest(const Tensor& hwc, int new_h, int new_w) {
    if (hwc.rank() != 3) throw ArgumentError("upsample_nearest: want H x W x C");
    if (new_h < 1 || new_w < 1) throw ArgumentError("upsample_nearest: bad size");
    const std::size_t h = hwc.dim(0), w = hwc.dim(1), c = hwc.dim(2);
    Tensor out{static_cast<std::size_t>(new_h), static_cast<std::size_t>(new_w), c};
    for (std::size_t u = 0; u < static_cast<std::size_t>(new_h); ++u) {
        std::size_t src_r = u * h / new_h;
        for (std::size_t v = 0; v < static_cast<std::size_t>(new_w); ++v) {
            std::size_t src_c = v * w / new_w;
            for (std::size_t k = 0; k < c; ++k) out(u, v, k) = hwc(src_r, src_c, k);
        }
    }
    return out;
}

RangeImage upsample_nearest(const RangeImage& img, int new_h, int new_w) {
    RangeImage out;
    out.height = new_h;
    out.width = new_w;
    out.data = upsample_nearest(img.data, new_h, new_w);
    out.ranges = img.ranges;
    out.valid.assign(static_cast<std::size_t>(new_h) * new_w, 0);
    out.pixel_to_point.assign(static_cast<std::size_t>(new_h) * new_w, -1);
    for (int u = 0; u < new_h; ++u) {
        int src_r = static_cast<int>(static_cast<std::int64_t>(u) * img.height / new_h);
        for (int v = 0; v < new_w; ++v) {
            int src_c = static_cast<int>(static_cast<std::int64_t>(v) * img.width / new_w);
            std::size_t p = static_cast<std::size_t>(u) * new_w + v;
            std::size_t q = static_cast<std::size_t>(src_r) * img.width + src_c;
            out.pixel_to_point[p] = img.pixel_to_point[q];
            out.valid[p] = img.valid[q];
        }
    }
    // Each mapped point moves to the top-left replica of its source pixel.
    out.point_to_pixel.assign(img.num_points(), {-1, -1});
    for (std::size_t i = 0; i < img.num_points(); ++i) {
        auto [r, c] = img.point_to_pixel[i];
        if (r < 0) continue;
        auto top_left = [](int src, int old_n, int new_n) {
            std::int64_t u = (static_cast<std::int64_t>(src) * new_n + old_n - 1) / old_n;
            if (u >= new_n || u * old_n / new_n != src) return -1;
            return static_cast<int>(u);
        };
        int u = top_left(r, img.height, new_h);
        int v = top_left(c, img.width, new_w);
        if (u < 0 || v < 0) continue;  // pixel lost under downsampling
        out.point_to_pixel[i] = {u, v};
    }
    return out;
}

Tensor back_project(const Tensor& per_pixel, const RangeImage& img,
                    std::vector<std::uint8_t>* mapped_out) {
    if (per_pixel.rank() != 3 ||
        per_pixel.dim(0) != static_cast<std::size_t>(img.height) ||
        per_pixel.dim(1) != static_cast<std::size_t>(img.width))
        throw ArgumentError("back_project: per-pixel tensor does not match image dims");
    const std::size_t d = per_pixel.dim(2);
    const std::size_t n = img.num_points();
    Tensor out{n, d};
    if (mapped_out) mapped_out->assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        auto [r, c] = img.point_to_pixel[i];
        if (r < 0) continue;
        for (std::size_t k = 0; k < d; ++k)
            out(i, k) = per_pixel(static_cast<std::size_t>(r), static_cast<std::size_t>(c), k);
        if (mapped_out) (*mapped_out)[i] = 1;
    }
    return out;
}

Tensor back_project_adjoint(const Tensor& per_point, const RangeImage& img) {
    if (per_point.rank() != 2 || per_point.dim(0) != img.num_points())
        throw ArgumentError("back_project_adjoint: per-point tensor does not match");
    const std::size_t d = per_point.dim(1);
    Tensor out{static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width), d};
    for (std::size_t i = 0; i < img.num_points(); ++i) {
        auto [r, c] = img.point_to_pixel[i];
        if (r < 0) continue;
        for (std::size_t k = 0; k < d; ++k)
            out(static_cast<std::size_t>(r), static_cast<std::size_t>(c), k) += per_point(i, k);
    }
    return out;
}

RangeImage crop_columns(const RangeImage& img, int start, int width) {
    if (width < 1 || width > img.width)
        throw ArgumentError("crop: width must be in [1, W]");
    start = ((start % img.width) + img.width) % img.width;
    RangeImage out;
    out.height = img.height;
    out.width = width;
    out.data = Tensor{static_cast<std::size_t>(img.height), static_cast<std::size_t>(width),
                      img.data.dim(2)};
    out.valid.assign(static_cast<std::size_t>(img.height) * width, 0);
    out.pixel_to_point.assign(static_cast<std::size_t>(img.height) * width, -1);
    out.ranges = img.ranges;
    for (int r = 0; r < img.height; ++r) {
        for (int j = 0; j < width; ++j) {
            int c = (start + j) % img.width;
            std::size_t p = static_cast<std::size_t>(r) * width + j;
            std::size_t q = static_cast<std::size_t>(r) * img.width + c;
            out.valid[p] = img.valid[q];
            out.pixel_to_point[p] = img.pixel_to_point[q];
            for (std::size_t k = 0; k < img.data.dim(2); ++k)
                out.data(r, j, k) = img.data(r, c, k);
        }
    }
    out.point_to_pixel.assign(img.num_points(), {-1, -1});
    for (std::size_t i = 0; i < img.num_points(); ++i) {
        auto [r, c] = img.point_to_pixel[i];
        if (r < 0) continue;
        int j = (c - start + img.width) % img.width;
        if (j < width) out.point_to_pixel[i] = {r, j};
    }
    return out;
}

RangeImage random_crop(const RangeImage& img, int width, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> dist(0, img.width - 1);
    return crop_columns(img, dist(rng), width);
}

RangeImage horizontal_flip(const RangeImage& img) {
    RangeImage out;
    out.height = img.height;
    out.width = img.width;
    out.data = Tensor{img.data.shape()};
    out.valid.assign(img.valid.size(), 0);
    out.pixel_to_point.assign(img.pixel_to_point.size(), -1);
    out.ranges = img.ranges;
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            int fc = img.width - 1 - c;
            std::size_t p = static_cast<std::size_t>(r) * img.width + fc;
            std::size_t q = static_cast<std::size_t>(r) * img.width + c;
            out.valid[p] = img.valid[q];
            out.pixel_to_point[p] = img.pixel_to_point[q];
            for (std::size_t k = 0; k < img.data.dim(2); ++k)
                out.data(r, fc, k) = img.data(r, c, k);
        }
    }
    out.point_to_pixel.assign(img.num_points(), {-1, -1});
    for (std::size_t i = 0; i < img.num_points(); ++i) {
        auto [r, c] = img.point_to_pixel[i];
        if (r < 0) continue;
        out.point_to_pixel[i] = {r, img.width - 1 - c};
    }
    return out;
}

ProjectionStats projection_stats(const RangeImage& img) {
    ProjectionStats stats;
    std::vector<std::uint32_t> candidates(img.valid.size(), 0);
    for (std::size_t i = 0; i < img.num_points(); ++i) {
        auto [r, c] = img.point_to_pixel[i];
        if (r < 0) {
            ++stats.dropped;
            continue;
        }
        ++candidates[static_cast<std::size_t>(r) * img.width + c];
    }
    for (std::uint32_t n : candidates)
        if (n >= 2) ++stats.collisions;
    return stats;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> encode_range_image(const RangeImage& img) {
    std::vector<std::uint8_t> out;
    const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
    const std::size_t c = img.data.dim(2);
    out.reserve(20 + hw * c * 4 + hw * 8);
    out.insert(out.end(), {'K', 'P', 'R', 'I'});
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(img.height));
    put_u32(out, static_cast<std::uint32_t>(img.width));
    put_u32(out, static_cast<std::uint32_t>(c));
    for (std::size_t i = 0; i < hw * c; ++i) {
        std::uint32_t u = std::bit_cast<std::uint32_t>(static_cast<float>(img.data[i]));
        put_u32(out, u);
    }
    for (std::size_t i = 0; i < hw; ++i) {
        std::uint64_t u = static_cast<std::uint64_t>(img.pixel_to_point[i]);
        for (int s = 0; s < 64; s += 8) out.push_back(static_cast<std::uint8_t>(u >> s));
    }
    return out;
}

RangeImage decode_range_image(const std::uint8_t* bytes, std::size_t len) {
    if (len < 20 || std::memcmp(bytes, "KPRI", 4) != 0)
        throw FormatError("range image: bad magic or truncated header");
    if (get_u32(bytes + 4) != 1) throw FormatError("range image: unsupported version");
    std::uint32_t h = get_u32(bytes + 8), w = get_u32(bytes + 12), c = get_u32(bytes + 16);
    std::size_t hw = static_cast<std::size_t>(h) * w;
    std::size_t expect = 20 + hw * c * 4 + hw * 8;
    if (len != expect)
        throw FormatError("range image: payload size mismatch (want " +
                          std::to_string(expect) + ", got " + std::to_string(len) + ")");
    RangeImage img;
    img.height = static_cast<int>(h);
    img.width = static_cast<int>(w);
    img.data = Tensor{h, w, c};
    const std::uint8_t* p = bytes + 20;
    for (std::size_t i = 0; i < hw * c; ++i, p += 4)
        img.data[i] = std::bit_cast<float>(get_u32(p));
    img.pixel_to_point.resize(hw);
    for (std::size_t i = 0; i < hw; ++i, p += 8) {
        std::uint64_t u = 0;
        for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(p[b]) << (8 * b);
        img.pixel_to_point[i] = static_cast<std::int64_t>(u);
    }
    img.valid.resize(hw);
    for (std::size_t i = 0; i < hw; ++i) img.valid[i] = img.pixel_to_point[i] >= 0;
    return img;
}

void save_range_image(const std::string& path, const RangeImage& img) {
    auto bytes = encode_range_image(img);
    write_file(path, bytes.data(), bytes.size());
}

RangeImage load_range_image(const std::string& path) {
    auto bytes = read_file(path);
    try {
        return decode_range_image(bytes.data(), bytes.size());
    } catch (const std::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

}  // namespace kpr
