#pragma once

#include <cstdint>
#include <vector>

#include "doei/tensor.hpp"

namespace doei {

// Coupling-driven token optimization: split coupling scores into confident and
// non-confident candidate sets with a layer-progressive threshold, then push
// class-token information along them with amplifying/suppressing residuals.
struct DoeiConfig {
    bool ppdo_enabled = false;
    bool cpdo_enabled = false;
    bool hfa_enabled = false;

    double st_p2c = 0.3, af_p2c = 0.4, sf_p2c = -0.4;
    double st_c2c = 0.3, af_c2c = 0.4, sf_c2c = -0.4;
    double alpha = 0.35;

    std::vector<std::size_t> active_layers;  // 1-based layer indices

    enum class CouplingSource { weights, logits };
    CouplingSource coupling_source = CouplingSource::weights;

    enum class HfaScope { selection_only, full };
    HfaScope hfa_scope = HfaScope::full;

    // Suppression factors are negative residual weights by convention; sweeps
    // may lift the sign restriction.
    bool allow_positive_sf = false;

    void validate(std::size_t total_layers) const;
    bool layer_active(std::size_t layer) const;

    static DoeiConfig off();
    static DoeiConfig full_on(std::size_t total_layers);
};

struct CouplingScores {
    Tensor patch_to_class;  // [C, N*N]
    Tensor class_to_class;  // [C, C], symmetric
};

// From a head-averaged attention matrix [T,T] with rows 0..C-1 = class tokens:
// patch_to_class[c,p] = A[c, C+p] + A[C+p, c];
// class_to_class[c,c'] = A[c,c'] + A[c',c].
CouplingScores build_coupling(const Tensor& head_mean, std::size_t num_classes);

// t = clamp(round(n * (L - i) * st), 0, n); non-increasing in the layer index,
// so early layers select more candidates.
std::size_t progressive_threshold(std::size_t n, std::size_t total_layers,
                                  std::size_t layer, double st);

struct CandidateMasks {
    Tensor confident;      // binary, constant to the gradient
    Tensor non_confident;  // complement over the non-excluded entries
};

// Per row, the t largest entries (ties to the lowest column index) form the
// confident mask; the rest of the non-excluded entries form the complement.
// With exclude_diagonal, entry (r,r) belongs to neither mask.
CandidateMasks select_candidates(const Tensor& scores, std::size_t t, bool exclude_diagonal);

// patch tokens [N*N,D] + AF * (P o M_cs)^T X_cls + SF * (P o M_ns)^T X_cls.
// AF == SF == 0 returns the input tensor itself.
Tensor ppdo(const Tensor& patch_tokens, const Tensor& class_tokens,
            const Tensor& patch_to_class, const DoeiConfig& cfg, std::size_t t);

// class tokens [C,D] + AF * (Cmat o M_cs) X_cls + SF * (Cmat o M_ns) X_cls,
// diagonal excluded from both candidate sets.
Tensor cpdo(const Tensor& class_tokens, const Tensor& class_to_class,
            const DoeiConfig& cfg, std::size_t t);

// Full per-layer update on the concatenated token matrix [C+N*N, D]. Inactive
// layers and fully disabled configs return the input tensor itself.
Tensor apply_doei(const Tensor& tokens, const Tensor& head_mean_coupling,
                  const DoeiConfig& cfg, std::size_t num_classes,
                  std::size_t total_layers, std::size_t layer);

}  // namespace doei
