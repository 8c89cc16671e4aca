#include "kprnet/postprocess.hpp"

#include <algorithm>
#include <cmath>

#include "kprnet/errors.hpp"
#include "kprnet/kitti_io.hpp"

namespace kpr {

void KnnConfig::validate() const {
    if (k < 1) throw ArgumentError("knn config: k must be >= 1");
    if (window < 1 || window % 2 == 0) throw ArgumentError("knn config: window must be odd and >= 1");
    if (sigma_gauss <= 0.0) throw ArgumentError("knn config: sigma_gauss must be positive");
    if (cutoff < 0.0) throw ArgumentError("knn config: cutoff must be >= 0");
}

std::vector<std::uint8_t> knn_filter(const std::vector<std::uint8_t>& pixel_labels,
                                     const RangeImage& img, const KnnConfig& cfg) {
    cfg.validate();
    if (pixel_labels.size() != static_cast<std::size_t>(img.height) * img.width)
        throw ArgumentError("knn_filter: pixel label grid does not match image dims");
    const int half = cfg.window / 2;
    const double inv_two_sigma2 = 1.0 / (2.0 * cfg.sigma_gauss * cfg.sigma_gauss);
    const std::size_t n = img.num_points();
    std::vector<std::uint8_t> out(n, kIgnoreLabel);

    struct Candidate {
        double delta;
        std::uint8_t label;
    };
    std::vector<Candidate> candidates;

    for (std::size_t i = 0; i < n; ++i) {
        auto [r, c] = img.point_to_pixel[i];
        if (r < 0) continue;  // dropped at projection
        candidates.clear();
        for (int dr = -half; dr <= half; ++dr) {
            int rr = r + dr;
            if (rr < 0 || rr >= img.height) continue;
            for (int dc = -half; dc <= half; ++dc) {
                int cc = (c + dc % img.width + img.width) % img.width;
                if (!img.pixel_valid(rr, cc)) continue;
                auto winner = static_cast<std::size_t>(img.winner(rr, cc));
                candidates.push_back({std::abs(img.ranges[winner] - img.ranges[i]),
                                      pixel_labels[static_cast<std::size_t>(rr) * img.width + cc]});
            }
        }
        // keep the k range-closest votes; window order breaks ranking ties
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const Candidate& a, const Candidate& b) { return a.delta < b.delta; });
        if (candidates.size() > static_cast<std::size_t>(cfg.k))
            candidates.resize(static_cast<std::size_t>(cfg.k));

        double sums[256] = {};
        bool any_vote = false;
        for (const Candidate& cand : candidates) {
            if (cfg.cutoff > 0.0 && cand.delta > cfg.cutoff) continue;
            sums[cand.label] += std::exp(-cand.delta * cand.delta * inv_two_sigma2);
            any_vote = true;
        }
        // argmax of summed weights; exact ties go to the smallest-delta voter
        double best = -1.0;
        int best_label = -1;
        for (const Candidate& cand : candidates) {
            double s = sums[cand.label];
            if (s > best && s > 0.0) {
                best = s;
                best_label = cand.label;
            }
        }
        if (!any_vote || best_label < 0) {
            // no surviving vote: keep the label at the point's own pixel
            out[i] = pixel_labels[static_cast<std::size_t>(r) * img.width + c];
        } else {
            out[i] = static_cast<std::uint8_t>(best_label);
        }
    }
    return out;
}

}  // namespace kpr
