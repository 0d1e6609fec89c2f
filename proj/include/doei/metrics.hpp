#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace doei {

// Square (C+1)x(C+1) count matrix over labels 0..C, 0 = background.
// Rows index ground truth, columns index prediction.
class Confusion {
  public:
    explicit Confusion(std::size_t num_classes);

    void accumulate(const std::vector<int>& pred, const std::vector<int>& gt);
    void merge(const Confusion& other);

    std::size_t num_classes() const { return num_classes_; }
    std::int64_t at(std::size_t gt, std::size_t pred) const;
    std::int64_t total() const;

  private:
    std::size_t num_classes_;
    std::vector<std::int64_t> counts_;  // (C+1)*(C+1)
};

struct IouReport {
    std::vector<double> per_class;   // size C+1, index = label; NaN when excluded
    std::vector<bool> included;      // union > 0
    double miou = 0.0;               // mean over included labels, background counts
};

IouReport compute_iou(const Confusion& conf);

// Foreground error rates, both normalized by the ground-truth foreground
// pixel count: FP = predicted-foreground pixels whose gt label differs,
// FN = gt-foreground pixels whose prediction differs.
struct ErrorRates {
    double fp = 0.0, fn = 0.0;
};

ErrorRates fp_fn_rates(const Confusion& conf);

// Fraction of region pixels (region[i] != 0) that pred labels as foreground.
// Returns numerator/denominator so callers can aggregate across images.
std::pair<std::int64_t, std::int64_t> foreground_hits(
    const std::vector<int>& pred, const std::vector<std::uint8_t>& region);

}  // namespace doei
