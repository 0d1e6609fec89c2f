#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "doei/data.hpp"
#include "doei/doei.hpp"
#include "doei/hfa.hpp"
#include "doei/tensor.hpp"

namespace doei {

struct ModelConfig {
    std::size_t image_size = 64;
    std::size_t patch_size = 8;
    std::size_t num_classes = 5;  // C
    std::size_t embed_dim = 48;   // D
    std::size_t layers = 4;       // L
    std::size_t heads = 4;        // H
    std::size_t mlp_ratio = 2;
    std::uint64_t seed = 42;

    // "paper": X_i = MLP(LN(attn + X_{i-1})), the MLP output is the block
    // output. "standard": pre-LN block with two residual streams.
    enum class BlockStyle { paper, standard };
    BlockStyle block_style = BlockStyle::paper;

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t patch_count() const { return grid() * grid(); }          // N*N
    std::size_t token_count() const { return num_classes + patch_count(); }
    std::size_t head_dim() const { return embed_dim / heads; }
    std::size_t mlp_hidden() const { return embed_dim * mlp_ratio; }

    void validate() const;
};

struct LayerParams {
    Tensor wq, bq, wk, bk, wv, bv;  // [D,D], [D]
    Tensor wo, bo;                  // output projection
    Tensor ln1_gain, ln1_bias;      // paper: post-residual LN; standard: pre-attention LN
    Tensor ln2_gain, ln2_bias;      // standard style only; zero-grad ballast otherwise
    Tensor mlp_w1, mlp_b1;          // [D, hidden]
    Tensor mlp_w2, mlp_b2;          // [hidden, D]
};

struct Parameters {
    Tensor patch_proj_w;  // [3*patch^2, D]
    Tensor patch_proj_b;  // [D]
    Tensor class_tokens;  // [C, D]
    Tensor pos_embed;     // [C + N*N, D]
    std::vector<LayerParams> layers;
    Tensor patch_head_w;  // [D, C]; shared between the patch loss and the maps

    static Parameters init(const ModelConfig& cfg);

    std::vector<Tensor> all();
    std::vector<std::pair<std::string, Tensor>> named();
    void set_requires_grad(bool on);
    void zero_grad();
};

// Rows 0..C-1 are class tokens, rows C.. are patch tokens, everywhere.
struct TokenState {
    Tensor tokens;  // [C + N*N, D]
    std::size_t layer_index = 0;
};

struct AttentionRecord {
    std::vector<Tensor> logits;   // per head [T,T], Q K^T / sqrt(d_k)
    std::vector<Tensor> weights;  // per head, row-softmaxed
    std::vector<Tensor> refined;  // per head, present only when HFA ran
    Tensor head_mean_refined;     // mean over heads of refined (or raw) weights
    bool hfa_applied = false;
};

struct EmbedResult {
    TokenState state;     // layer 0 tokens, position encoding included
    Tensor patch_embed;   // [N*N, D] pre-position-encoding projections, for HFA
};

EmbedResult embed(const Tensor& image, Parameters& params, const ModelConfig& cfg);

std::pair<TokenState, AttentionRecord> block_forward(const TokenState& state,
                                                     std::size_t layer, Parameters& params,
                                                     const ModelConfig& cfg,
                                                     const DoeiConfig& doei,
                                                     const HfaFeatures* feats);

Tensor class_token_scores(const TokenState& final_state, const ModelConfig& cfg);
Tensor patch_scores(const TokenState& final_state, Parameters& params, const ModelConfig& cfg);

// Stable multi-label soft margin: mean over classes of
// y*softplus(-z) + (1-y)*softplus(z).
Tensor mlsm_loss(const Tensor& logits, const std::vector<int>& labels);

struct ForwardResult {
    Tensor loss;          // [1]
    Tensor token_scores;  // [C]
    Tensor patch_score_logits;  // [C]
    Tensor final_tokens;  // [C + N*N, D] after the last layer's update
    Tensor patch_tokens;  // [N*N, D] rows C.. of final_tokens
    std::vector<AttentionRecord> records;  // one per layer
};

ForwardResult model_forward(const Tensor& image, const std::vector<int>& labels,
                            Parameters& params, const ModelConfig& cfg,
                            const DoeiConfig& doei);

// ---- training ----

struct TrainConfig {
    std::size_t epochs = 10;
    double lr = 0.05;
    double momentum = 0.9;
    std::function<void(std::size_t epoch, double mean_loss)> on_epoch;  // optional progress sink
};

struct TrainResult {
    std::vector<double> epoch_loss;  // mean loss per epoch
};

TrainResult train(Parameters& params, const ModelConfig& cfg, const DoeiConfig& doei,
                  const std::vector<SceneSample>& samples, const TrainConfig& train_cfg);

void write_loss_csv(const std::string& path, const TrainResult& result);

// Single-file checkpoint: magic, manifest of names and shapes, then tensor
// blobs in manifest order. Loading validates names and shapes against params.
void save_checkpoint(const std::string& path, Parameters& params);
void load_checkpoint(const std::string& path, Parameters& params);

}  // namespace doei
