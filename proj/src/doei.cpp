#include "doei/doei.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "doei/errors.hpp"

namespace doei {

void DoeiConfig::validate(std::size_t total_layers) const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("doei: alpha out of [0,1]");
    if (st_p2c <= 0.0 || st_c2c <= 0.0) throw ConfigError("doei: thresholds must be > 0");
    if (af_p2c < 0.0 || af_c2c < 0.0) throw ConfigError("doei: augment factors must be >= 0");
    if (!allow_positive_sf && (sf_p2c > 0.0 || sf_c2c > 0.0))
        throw ConfigError("doei: suppression factors must be <= 0");
    for (std::size_t layer : active_layers)
        if (layer < 1 || layer > total_layers)
            throw ConfigError("doei: active layer " + std::to_string(layer) + " out of 1.." +
                              std::to_string(total_layers));
}

bool DoeiConfig::layer_active(std::size_t layer) const {
    return std::find(active_layers.begin(), active_layers.end(), layer) != active_layers.end();
}

DoeiConfig DoeiConfig::off() { return DoeiConfig{}; }

DoeiConfig DoeiConfig::full_on(std::size_t total_layers) {
    DoeiConfig cfg;
    cfg.ppdo_enabled = cfg.cpdo_enabled = cfg.hfa_enabled = true;
    for (std::size_t i = 1; i <= total_layers; ++i) cfg.active_layers.push_back(i);
    return cfg;
}

CouplingScores build_coupling(const Tensor& head_mean, std::size_t num_classes) {
    check_rank2(head_mean, "build_coupling");
    const std::size_t t = head_mean.rows();
    if (head_mean.cols() != t) throw ShapeError("build_coupling: matrix must be square");
    if (num_classes == 0 || num_classes >= t)
        throw ShapeError("build_coupling: class count must leave room for patch tokens");

    const Tensor class_rows = slice_rows(head_mean, 0, num_classes);
    const Tensor patch_rows = slice_rows(head_mean, num_classes, t);

    CouplingScores scores;
    scores.patch_to_class = add(slice_cols(class_rows, num_classes, t),
                                transpose(slice_cols(patch_rows, 0, num_classes)));
    const Tensor cc = slice_cols(class_rows, 0, num_classes);
    scores.class_to_class = add(cc, transpose(cc));
    return scores;
}

std::size_t progressive_threshold(std::size_t n, std::size_t total_layers,
                                  std::size_t layer, double st) {
    if (n < 1) throw ConfigError("threshold: row length must be >= 1");
    if (layer < 1 || layer > total_layers)
        throw ConfigError("threshold: layer " + std::to_string(layer) + " out of 1.." +
                          std::to_string(total_layers));
    if (st <= 0.0) throw ConfigError("threshold: st must be > 0");
    const double raw = static_cast<double>(n) *
                       static_cast<double>(total_layers - layer) * st;
    const long long rounded = std::llround(raw);
    if (rounded <= 0) return 0;
    return std::min<std::size_t>(static_cast<std::size_t>(rounded), n);
}

CandidateMasks select_candidates(const Tensor& scores, std::size_t t, bool exclude_diagonal) {
    check_rank2(scores, "select_candidates");
    const std::size_t rows = scores.rows(), cols = scores.cols();
    if (t > cols) throw ConfigError("select_candidates: t exceeds the row length");

    CandidateMasks masks;
    masks.confident = Tensor::zeros({rows, cols});
    masks.non_confident = Tensor::zeros({rows, cols});
    auto& cs = masks.confident.mutable_data();
    auto& ns = masks.non_confident.mutable_data();

    std::vector<std::size_t> order;
    for (std::size_t r = 0; r < rows; ++r) {
        order.clear();
        for (std::size_t c = 0; c < cols; ++c)
            if (!(exclude_diagonal && c == r)) order.push_back(c);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const double va = scores(r, a), vb = scores(r, b);
            if (va != vb) return va > vb;
            return a < b;
        });
        const std::size_t take = std::min(t, order.size());
        for (std::size_t k = 0; k < order.size(); ++k)
            (k < take ? cs : ns)[r * cols + order[k]] = 1.0;
    }
    return masks;
}

Tensor ppdo(const Tensor& patch_tokens, const Tensor& class_tokens,
            const Tensor& patch_to_class, const DoeiConfig& cfg, std::size_t t) {
    check_rank2(patch_tokens, "ppdo.patch");
    check_rank2(class_tokens, "ppdo.class");
    check_rank2(patch_to_class, "ppdo.coupling");
    if (patch_to_class.rows() != class_tokens.rows() ||
        patch_to_class.cols() != patch_tokens.rows())
        throw ShapeError("ppdo: coupling is " + shape_str(patch_to_class.shape()) +
                         " but tokens are " + shape_str(class_tokens.shape()) + " / " +
                         shape_str(patch_tokens.shape()));
    if (cfg.af_p2c == 0.0 && cfg.sf_p2c == 0.0) return patch_tokens;

    const CandidateMasks masks = select_candidates(patch_to_class, t, false);
    const Tensor gain =
        scale(matmul(transpose(mul(patch_to_class, masks.confident)), class_tokens), cfg.af_p2c);
    const Tensor damp =
        scale(matmul(transpose(mul(patch_to_class, masks.non_confident)), class_tokens),
              cfg.sf_p2c);
    return add(patch_tokens, add(gain, damp));
}

Tensor cpdo(const Tensor& class_tokens, const Tensor& class_to_class,
            const DoeiConfig& cfg, std::size_t t) {
    check_rank2(class_tokens, "cpdo.class");
    check_rank2(class_to_class, "cpdo.coupling");
    if (class_to_class.rows() != class_tokens.rows() ||
        class_to_class.cols() != class_tokens.rows())
        throw ShapeError("cpdo: coupling is " + shape_str(class_to_class.shape()) +
                         " for " + std::to_string(class_tokens.rows()) + " class tokens");
    if (cfg.af_c2c == 0.0 && cfg.sf_c2c == 0.0) return class_tokens;

    const CandidateMasks masks = select_candidates(class_to_class, t, true);
    const Tensor gain =
        scale(matmul(mul(class_to_class, masks.confident), class_tokens), cfg.af_c2c);
    const Tensor damp =
        scale(matmul(mul(class_to_class, masks.non_confident), class_tokens), cfg.sf_c2c);
    return add(class_tokens, add(gain, damp));
}

Tensor apply_doei(const Tensor& tokens, const Tensor& head_mean_coupling,
                  const DoeiConfig& cfg, std::size_t num_classes,
                  std::size_t total_layers, std::size_t layer) {
    if (!cfg.layer_active(layer)) return tokens;
    if (!cfg.ppdo_enabled && !cfg.cpdo_enabled) return tokens;
    check_rank2(tokens, "apply_doei");
    const std::size_t t = tokens.rows();
    if (num_classes == 0 || num_classes >= t)
        throw ShapeError("apply_doei: class count must leave room for patch tokens");

    const CouplingScores coupling = build_coupling(head_mean_coupling, num_classes);
    Tensor class_tokens = slice_rows(tokens, 0, num_classes);
    Tensor patch_tokens = slice_rows(tokens, num_classes, t);

    if (cfg.ppdo_enabled) {
        const std::size_t tp =
            progressive_threshold(t - num_classes, total_layers, layer, cfg.st_p2c);
        patch_tokens = ppdo(patch_tokens, class_tokens, coupling.patch_to_class, cfg, tp);
    }
    if (cfg.cpdo_enabled) {
        const std::size_t tc =
            progressive_threshold(num_classes, total_layers, layer, cfg.st_c2c);
        class_tokens = cpdo(class_tokens, coupling.class_to_class, cfg, tc);
    }
    return concat_rows({class_tokens, patch_tokens});
}

}  // namespace doei
