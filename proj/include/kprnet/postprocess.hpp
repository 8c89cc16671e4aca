#ifndef KPRNET_POSTPROCESS_HPP
#define KPRNET_POSTPROCESS_HPP

#include <cstdint>
#include <vector>

#include "kprnet/projection.hpp"

namespace kpr {

struct KnnConfig {
    int k = 5;              // votes kept
    int window = 5;         // odd window side, pixels
    double sigma_gauss = 1.0;  // meters
    double cutoff = 1.0;    // meters; 0 disables the cutoff

    void validate() const;
};

// Window-restricted, range-weighted K-nearest-neighbor label voting lifting
// per-pixel labels to the 3D points. Window columns wrap around (azimuth is
// periodic); rows are truncated at the image edge. Points without a pixel
// keep the ignore label.
std::vector<std::uint8_t> knn_filter(const std::vector<std::uint8_t>& pixel_labels,
                                     const RangeImage& img, const KnnConfig& cfg);

}  // namespace kpr

#endif
