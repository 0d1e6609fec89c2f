#include "doei/metrics.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "doei/errors.hpp"

namespace doei {

Confusion::Confusion(std::size_t num_classes) : num_classes_(num_classes) {
    if (num_classes == 0) throw ConfigError("confusion: need at least one foreground class");
    counts_.assign((num_classes + 1) * (num_classes + 1), 0);
}

void Confusion::accumulate(const std::vector<int>& pred, const std::vector<int>& gt) {
    if (pred.size() != gt.size())
        throw ShapeError("confusion: pred has " + std::to_string(pred.size()) +
                         " pixels, gt has " + std::to_string(gt.size()));
    const int hi = static_cast<int>(num_classes_);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || pred[i] > hi || gt[i] < 0 || gt[i] > hi)
            throw ShapeError("confusion: label out of range 0.." + std::to_string(hi));
        counts_[static_cast<std::size_t>(gt[i]) * (num_classes_ + 1) +
                static_cast<std::size_t>(pred[i])] += 1;
    }
}

void Confusion::merge(const Confusion& other) {
    if (other.num_classes_ != num_classes_)
        throw ShapeError("confusion: merging mismatched class counts");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::int64_t Confusion::at(std::size_t gt, std::size_t pred) const {
    if (gt > num_classes_ || pred > num_classes_)
        throw ShapeError("confusion: index out of range");
    return counts_[gt * (num_classes_ + 1) + pred];
}

std::int64_t Confusion::total() const {
    return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

IouReport compute_iou(const Confusion& conf) {
    const std::size_t n = conf.num_classes() + 1;
    IouReport report;
    report.per_class.assign(n, std::numeric_limits<double>::quiet_NaN());
    report.included.assign(n, false);
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < n; ++c) {
        std::int64_t tp = conf.at(c, c), row = 0, col = 0;
        for (std::size_t k = 0; k < n; ++k) {
            row += conf.at(c, k);
            col += conf.at(k, c);
        }
        const std::int64_t uni = row + col - tp;
        if (uni == 0) continue;  // label absent from both masks: excluded
        report.per_class[c] = static_cast<double>(tp) / static_cast<double>(uni);
        report.included[c] = true;
        sum += report.per_class[c];
        ++used;
    }
    if (used == 0) throw ConfigError("iou: every label has an empty union");
    report.miou = sum / static_cast<double>(used);
    return report;
}

ErrorRates fp_fn_rates(const Confusion& conf) {
    const std::size_t n = conf.num_classes() + 1;
    std::int64_t gt_fg = 0, fp = 0, fn = 0;
    for (std::size_t c = 1; c < n; ++c) {
        std::int64_t row = 0, col = 0;
        for (std::size_t k = 0; k < n; ++k) {
            row += conf.at(c, k);
            col += conf.at(k, c);
        }
        gt_fg += row;
        fp += col - conf.at(c, c);
        fn += row - conf.at(c, c);
    }
    if (gt_fg == 0) throw ConfigError("rates: no foreground pixels in ground truth");
    ErrorRates rates;
    rates.fp = static_cast<double>(fp) / static_cast<double>(gt_fg);
    rates.fn = static_cast<double>(fn) / static_cast<double>(gt_fg);
    return rates;
}

std::pair<std::int64_t, std::int64_t> foreground_hits(
    const std::vector<int>& pred, const std::vector<std::uint8_t>& region) {
    if (pred.size() != region.size())
        throw ShapeError("foreground_hits: mask sizes differ");
    std::int64_t hits = 0, denom = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!region[i]) continue;
        ++denom;
        if (pred[i] > 0) ++hits;
    }
    return {hits, denom};
}

}  // namespace doei
