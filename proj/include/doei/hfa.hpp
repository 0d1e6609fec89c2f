#pragma once

#include <vector>

#include "doei/tensor.hpp"

namespace doei {

// Per-image similarity fields blended into attention weights. rgb_sim is a
// constant; emb_sim carries gradient back into the patch embeddings.
struct HfaFeatures {
    Tensor rgb_sim;  // [N*N, N*N], entries in [0,1], diagonal 1
    Tensor emb_sim;  // [N*N, N*N], entries in [0,1], diagonal 1
};

// Mean RGB per patch, then pairwise (1+cos)/2. Two all-zero patches count as
// fully similar; a zero patch against a nonzero one scores 0.5.
Tensor rgb_similarity(const Tensor& image, std::size_t patch_size);

// Pairwise (1+cos)/2 over rows of the patch embedding matrix [N*N, D], with
// the diagonal pinned to exactly 1.
Tensor emb_similarity(const Tensor& patch_embed);

HfaFeatures make_hfa_features(const Tensor& image, const Tensor& patch_embed,
                              std::size_t patch_size);

// Blend the patch-row x patch-column block of one attention head [T,T] with
// rgb_sim o emb_sim: block -> (1-alpha)*W + alpha*(rgb o emb). Entries in
// class rows or columns keep their values; every row is then renormalized to
// sum to 1. alpha == 0 returns the input tensor itself.
Tensor refine_attention(const Tensor& weights, const HfaFeatures& feats, double alpha,
                        std::size_t num_classes);

std::vector<Tensor> refine_attention(const std::vector<Tensor>& heads,
                                     const HfaFeatures& feats, double alpha,
                                     std::size_t num_classes);

}  // namespace doei
