#include "doei/hfa.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "doei/errors.hpp"

namespace doei {

Tensor rgb_similarity(const Tensor& image, std::size_t patch_size) {
    if (image.rank() != 3 || image.shape()[2] != 3)
        throw ShapeError("rgb_similarity: image must be [s,s,3], got " +
                         shape_str(image.shape()));
    const std::size_t side = image.shape()[0];
    if (image.shape()[1] != side) throw ShapeError("rgb_similarity: image must be square");
    if (patch_size == 0 || side % patch_size != 0)
        throw ShapeError("rgb_similarity: side " + std::to_string(side) +
                         " not divisible by patch " + std::to_string(patch_size));

    const std::size_t grid = side / patch_size;
    const std::size_t cells = grid * grid;
    const auto& pix = image.data();

    std::vector<std::array<double, 3>> mean(cells, {0.0, 0.0, 0.0});
    for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
            const std::size_t p = (y / patch_size) * grid + x / patch_size;
            for (std::size_t c = 0; c < 3; ++c) mean[p][c] += pix[(y * side + x) * 3 + c];
        }
    const double inv_area = 1.0 / static_cast<double>(patch_size * patch_size);
    std::vector<double> norm(cells);
    for (std::size_t p = 0; p < cells; ++p) {
        for (double& v : mean[p]) v *= inv_area;
        norm[p] = std::sqrt(mean[p][0] * mean[p][0] + mean[p][1] * mean[p][1] +
                            mean[p][2] * mean[p][2]);
    }

    constexpr double kEps = 1e-12;
    Tensor sim = Tensor::zeros({cells, cells});
    auto& out = sim.mutable_data();
    for (std::size_t p = 0; p < cells; ++p) {
        out[p * cells + p] = 1.0;
        for (std::size_t q = p + 1; q < cells; ++q) {
            double value;
            const bool zp = norm[p] <= kEps, zq = norm[q] <= kEps;
            if (zp && zq) {
                value = 1.0;
            } else if (zp || zq) {
                value = 0.5;
            } else {
                const double dot = mean[p][0] * mean[q][0] + mean[p][1] * mean[q][1] +
                                   mean[p][2] * mean[q][2];
                value = 0.5 * (1.0 + dot / (norm[p] * norm[q]));
                value = std::clamp(value, 0.0, 1.0);
            }
            out[p * cells + q] = value;
            out[q * cells + p] = value;
        }
    }
    return sim;
}

Tensor emb_similarity(const Tensor& patch_embed) {
    check_rank2(patch_embed, "emb_similarity");
    const std::size_t cells = patch_embed.rows();
    const Tensor unit = row_l2_normalize(patch_embed);
    const Tensor mapped = scale(add_scalar(matmul(unit, transpose(unit)), 1.0), 0.5);

    // Pin the diagonal to exactly 1 through constant masks; gradient still
    // flows through the off-diagonal entries.
    Tensor off_diag = Tensor::full({cells, cells}, 1.0);
    Tensor eye = Tensor::zeros({cells, cells});
    for (std::size_t p = 0; p < cells; ++p) {
        off_diag.mutable_data()[p * cells + p] = 0.0;
        eye.mutable_data()[p * cells + p] = 1.0;
    }
    return add(mul(mapped, off_diag), eye);
}

HfaFeatures make_hfa_features(const Tensor& image, const Tensor& patch_embed,
                              std::size_t patch_size) {
    HfaFeatures feats;
    feats.rgb_sim = rgb_similarity(image, patch_size);
    feats.emb_sim = emb_similarity(patch_embed);
    if (feats.rgb_sim.rows() != feats.emb_sim.rows())
        throw ShapeError("hfa: image grid has " + std::to_string(feats.rgb_sim.rows()) +
                         " patches but embeddings have " +
                         std::to_string(feats.emb_sim.rows()) + " rows");
    return feats;
}

Tensor refine_attention(const Tensor& weights, const HfaFeatures& feats, double alpha,
                        std::size_t num_classes) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("hfa: alpha out of [0,1]");
    if (alpha == 0.0) return weights;
    check_rank2(weights, "refine_attention");
    const std::size_t t = weights.rows();
    if (weights.cols() != t) throw ShapeError("refine_attention: weights must be square");
    const std::size_t cells = t - num_classes;
    if (feats.rgb_sim.rows() != cells || feats.emb_sim.rows() != cells)
        throw ShapeError("refine_attention: features cover " +
                         std::to_string(feats.rgb_sim.rows()) + " patches, weights need " +
                         std::to_string(cells));

    const Tensor product = mul(feats.rgb_sim, feats.emb_sim);  // [cells, cells]

    // Blend target, embedded at the patch-patch block of a [T,T] matrix.
    Tensor target;
    if (num_classes == 0) {
        target = product;
    } else {
        const Tensor left = Tensor::zeros({cells, num_classes});
        const Tensor top = Tensor::zeros({num_classes, t});
        target = concat_rows({top, concat_cols({left, product})});
    }

    // 1 everywhere except (1 - alpha) on the patch-patch block.
    Tensor keep = Tensor::full({t, t}, 1.0);
    for (std::size_t r = num_classes; r < t; ++r)
        for (std::size_t c = num_classes; c < t; ++c)
            keep.mutable_data()[r * t + c] = 1.0 - alpha;

    const Tensor blended = add(mul(weights, keep), scale(target, alpha));
    return normalize_rows_sum(blended);
}

std::vector<Tensor> refine_attention(const std::vector<Tensor>& heads,
                                     const HfaFeatures& feats, double alpha,
                                     std::size_t num_classes) {
    std::vector<Tensor> refined;
    refined.reserve(heads.size());
    for (const Tensor& head : heads)
        refined.push_back(refine_attention(head, feats, alpha, num_classes));
    return refined;
}

}  // namespace doei
