#include "kprnet/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "kprnet/errors.hpp"

namespace kpr {

void ConfusionMatrix::update(const std::vector<std::uint8_t>& preds,
                             const std::vector<std::uint8_t>& gts) {
    if (preds.size() != gts.size())
        throw ArgumentError("confusion update: prediction/ground-truth length mismatch");
    for (std::size_t i = 0; i < gts.size(); ++i) {
        std::uint8_t g = gts[i];
        if (g == kIgnoreLabel) continue;
        if (g >= kNumClasses)
            throw ArgumentError("confusion update: bad ground-truth id " +
                                std::to_string(int(g)));
        std::uint8_t p = preds[i];
        if (p == kIgnoreLabel) {
            ++ignored_pred_[g];
        } else {
            if (p >= kNumClasses)
                throw ArgumentError("confusion update: bad prediction id " +
                                    std::to_string(int(p)));
            ++counts_[static_cast<std::size_t>(g) * kNumClasses + p];
        }
    }
}

void ConfusionMatrix::add_count(int gt, int pred, std::uint64_t n) {
    counts_[static_cast<std::size_t>(gt) * kNumClasses + pred] += n;
}

void ConfusionMatrix::add_ignored_pred(int gt, std::uint64_t n) {
    ignored_pred_[static_cast<std::size_t>(gt)] += n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    for (std::size_t i = 0; i < ignored_pred_.size(); ++i)
        ignored_pred_[i] += other.ignored_pred_[i];
    return *this;
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    for (auto c : ignored_pred_) t += c;
    return t;
}

std::array<double, kNumClasses> ConfusionMatrix::iou() const {
    std::array<double, kNumClasses> out;
    for (int c = 0; c < kNumClasses; ++c) {
        std::uint64_t tp = count(c, c);
        std::uint64_t row = ignored_pred_[c], col = 0;
        for (int k = 0; k < kNumClasses; ++k) {
            row += count(c, k);
            col += count(k, c);
        }
        std::uint64_t fn = row - tp, fp = col - tp;
        std::uint64_t uni = tp + fp + fn;
        out[c] = uni == 0 ? std::nan("") : static_cast<double>(tp) / static_cast<double>(uni);
    }
    return out;
}

double ConfusionMatrix::miou(bool* defined_out) const {
    auto per_class = iou();
    double sum = 0.0;
    int n = 0;
    for (double v : per_class) {
        if (std::isnan(v)) continue;
        sum += v;
        ++n;
    }
    if (defined_out) *defined_out = n > 0;
    return n > 0 ? sum / n : 0.0;
}

std::string ConfusionMatrix::table(const LabelMap& map) const {
    auto per_class = iou();
    std::ostringstream out;
    out << std::left << std::setw(16) << "class" << std::right << std::setw(8) << "IoU%"
        << '\n';
    for (int c = 0; c < kNumClasses; ++c) {
        out << std::left << std::setw(16) << map.name(static_cast<std::uint8_t>(c))
            << std::right << std::setw(8);
        if (std::isnan(per_class[c]))
            out << "n/a";
        else
            out << std::fixed << std::setprecision(1) << 100.0 * per_class[c];
        out << '\n';
    }
    bool defined = false;
    double m = miou(&defined);
    out << std::left << std::setw(16) << "mean-IoU" << std::right << std::setw(8);
    if (defined)
        out << std::fixed << std::setprecision(1) << 100.0 * m;
    else
        out << "n/a";
    out << '\n';
    return out.str();
}

std::string ConfusionMatrix::csv(const LabelMap& map) const {
    auto per_class = iou();
    std::ostringstream out;
    out << "class,iou\n";
    out << std::setprecision(10);
    for (int c = 0; c < kNumClasses; ++c) {
        out << map.name(static_cast<std::uint8_t>(c)) << ',';
        if (std::isnan(per_class[c]))
            out << "nan";
        else
            out << per_class[c];
        out << '\n';
    }
    bool defined = false;
    double m = miou(&defined);
    out << "mean," << (defined ? std::to_string(m) : std::string("nan")) << '\n';
    return out.str();
}

}  // namespace kpr
