#ifndef KPRNET_METRICS_HPP
#define KPRNET_METRICS_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "kprnet/kitti_io.hpp"

namespace kpr {

// 19x19 counts, counts[gt][pred]. Ignore ground truth is never counted.
// An ignore *prediction* on a labeled point can match no class; it is
// tallied separately and inflates only the true class's false negatives.
class ConfusionMatrix {
  public:
    ConfusionMatrix() { counts_.fill(0); ignored_pred_.fill(0); }

    void update(const std::vector<std::uint8_t>& preds,
                const std::vector<std::uint8_t>& gts);
    void add_count(int gt, int pred, std::uint64_t n);
    void add_ignored_pred(int gt, std::uint64_t n);

    ConfusionMatrix& operator+=(const ConfusionMatrix& other);

    std::uint64_t count(int gt, int pred) const {
        return counts_[static_cast<std::size_t>(gt) * kNumClasses + pred];
    }
    std::uint64_t total() const;

    // IoU_c = TP / (TP + FP + FN); classes with an empty union get NaN and
    // are excluded from the mean.
    std::array<double, kNumClasses> iou() const;

    // Mean over classes with a defined IoU; defined_out (when non-null)
    // reports whether any class was defined (false => returned 0).
    double miou(bool* defined_out = nullptr) const;

    std::string table(const LabelMap& map) const;  // aligned text
    std::string csv(const LabelMap& map) const;

  private:
    std::array<std::uint64_t, kNumClasses * kNumClasses> counts_;
    std::array<std::uint64_t, kNumClasses> ignored_pred_;  // extra FN per gt class
};

}  // namespace kpr

#endif
