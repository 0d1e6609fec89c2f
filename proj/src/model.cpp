#include "doei/model.hpp"

#include <cmath>
#include <string>

#include "doei/errors.hpp"
#include "doei/rng.hpp"

namespace doei {

void ModelConfig::validate() const {
    if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0)
        throw ConfigError("model: image size must be a positive multiple of patch size");
    if (num_classes < 2) throw ConfigError("model: need at least 2 classes");
    if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
        throw ConfigError("model: embed dim must be a positive multiple of heads");
    if (layers < 1) throw ConfigError("model: need at least one layer");
    if (mlp_ratio < 1) throw ConfigError("model: mlp ratio must be >= 1");
}

namespace {

Tensor init_weight(Rng& rng, Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_data()) v = rng.truncated_normal(0.02);
    return t;
}

}  // namespace

Parameters Parameters::init(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const std::size_t d = cfg.embed_dim, hidden = cfg.mlp_hidden();
    const std::size_t flat = 3 * cfg.patch_size * cfg.patch_size;

    Parameters p;
    p.patch_proj_w = init_weight(rng, {flat, d});
    p.patch_proj_b = Tensor::zeros({d});
    p.class_tokens = init_weight(rng, {cfg.num_classes, d});
    p.pos_embed = init_weight(rng, {cfg.token_count(), d});
    for (std::size_t i = 0; i < cfg.layers; ++i) {
        LayerParams layer;
        layer.wq = init_weight(rng, {d, d});
        layer.bq = Tensor::zeros({d});
        layer.wk = init_weight(rng, {d, d});
        layer.bk = Tensor::zeros({d});
        layer.wv = init_weight(rng, {d, d});
        layer.bv = Tensor::zeros({d});
        layer.wo = init_weight(rng, {d, d});
        layer.bo = Tensor::zeros({d});
        layer.ln1_gain = Tensor::full({d}, 1.0);
        layer.ln1_bias = Tensor::zeros({d});
        layer.ln2_gain = Tensor::full({d}, 1.0);
        layer.ln2_bias = Tensor::zeros({d});
        layer.mlp_w1 = init_weight(rng, {d, hidden});
        layer.mlp_b1 = Tensor::zeros({hidden});
        layer.mlp_w2 = init_weight(rng, {hidden, d});
        layer.mlp_b2 = Tensor::zeros({d});
        p.layers.push_back(std::move(layer));
    }
    p.patch_head_w = init_weight(rng, {d, cfg.num_classes});
    return p;
}

std::vector<std::pair<std::string, Tensor>> Parameters::named() {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("patch_proj_w", patch_proj_w);
    out.emplace_back("patch_proj_b", patch_proj_b);
    out.emplace_back("class_tokens", class_tokens);
    out.emplace_back("pos_embed", pos_embed);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string prefix = "layer" + std::to_string(i + 1) + ".";
        LayerParams& l = layers[i];
        out.emplace_back(prefix + "wq", l.wq);
        out.emplace_back(prefix + "bq", l.bq);
        out.emplace_back(prefix + "wk", l.wk);
        out.emplace_back(prefix + "bk", l.bk);
        out.emplace_back(prefix + "wv", l.wv);
        out.emplace_back(prefix + "bv", l.bv);
        out.emplace_back(prefix + "wo", l.wo);
        out.emplace_back(prefix + "bo", l.bo);
        out.emplace_back(prefix + "ln1_gain", l.ln1_gain);
        out.emplace_back(prefix + "ln1_bias", l.ln1_bias);
        out.emplace_back(prefix + "ln2_gain", l.ln2_gain);
        out.emplace_back(prefix + "ln2_bias", l.ln2_bias);
        out.emplace_back(prefix + "mlp_w1", l.mlp_w1);
        out.emplace_back(prefix + "mlp_b1", l.mlp_b1);
        out.emplace_back(prefix + "mlp_w2", l.mlp_w2);
        out.emplace_back(prefix + "mlp_b2", l.mlp_b2);
    }
    out.emplace_back("patch_head_w", patch_head_w);
    return out;
}

std::vector<Tensor> Parameters::all() {
    std::vector<Tensor> out;
    for (auto& [name, tensor] : named()) out.push_back(tensor);
    return out;
}

void Parameters::set_requires_grad(bool on) {
    for (auto& t : all()) t.set_requires_grad(on);
}

void Parameters::zero_grad() {
    for (auto& t : all()) t.zero_grad();
}

EmbedResult embed(const Tensor& image, Parameters& params, const ModelConfig& cfg) {
    if (image.rank() != 3 || image.shape()[0] != cfg.image_size ||
        image.shape()[1] != cfg.image_size || image.shape()[2] != 3)
        throw ShapeError("embed: image is " + shape_str(image.shape()) + ", config wants [" +
                         std::to_string(cfg.image_size) + "," +
                         std::to_string(cfg.image_size) + ",3]");

    // Row-major patch grid; each patch flattened row-major as (y, x, channel).
    const std::size_t grid = cfg.grid(), ps = cfg.patch_size;
    const std::size_t flat = 3 * ps * ps;
    Tensor patches = Tensor::zeros({cfg.patch_count(), flat});
    auto& dst = patches.mutable_data();
    const auto& pix = image.data();
    for (std::size_t gy = 0; gy < grid; ++gy)
        for (std::size_t gx = 0; gx < grid; ++gx) {
            const std::size_t p = gy * grid + gx;
            std::size_t k = 0;
            for (std::size_t y = 0; y < ps; ++y)
                for (std::size_t x = 0; x < ps; ++x)
                    for (std::size_t c = 0; c < 3; ++c)
                        dst[p * flat + k++] =
                            pix[((gy * ps + y) * cfg.image_size + gx * ps + x) * 3 + c];
        }

    EmbedResult result;
    result.patch_embed = add_bias(matmul(patches, params.patch_proj_w), params.patch_proj_b);
    result.state.tokens =
        add(concat_rows({params.class_tokens, result.patch_embed}), params.pos_embed);
    result.state.layer_index = 0;
    return result;
}

std::pair<TokenState, AttentionRecord> block_forward(const TokenState& state,
                                                     std::size_t layer, Parameters& params,
                                                     const ModelConfig& cfg,
                                                     const DoeiConfig& doei,
                                                     const HfaFeatures* feats) {
    if (layer < 1 || layer > cfg.layers)
        throw ConfigError("block: layer " + std::to_string(layer) + " out of 1.." +
                          std::to_string(cfg.layers));
    if (state.layer_index != layer - 1)
        throw ConfigError("block: state is at layer " + std::to_string(state.layer_index) +
                          ", expected " + std::to_string(layer - 1));
    LayerParams& lp = params.layers[layer - 1];
    const Tensor& x = state.tokens;

    const bool standard = cfg.block_style == ModelConfig::BlockStyle::standard;
    const Tensor attn_in = standard ? layer_norm(x, lp.ln1_gain, lp.ln1_bias) : x;

    const Tensor q = add_bias(matmul(attn_in, lp.wq), lp.bq);
    const Tensor k = add_bias(matmul(attn_in, lp.wk), lp.bk);
    const Tensor v = add_bias(matmul(attn_in, lp.wv), lp.bv);

    const bool hfa_on =
        doei.hfa_enabled && doei.layer_active(layer) && doei.alpha > 0.0 && feats != nullptr;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));

    AttentionRecord record;
    record.hfa_applied = hfa_on;
    std::vector<Tensor> head_outputs;
    Tensor mean_accum;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const std::size_t lo = h * cfg.head_dim(), hi = lo + cfg.head_dim();
        const Tensor qh = slice_cols(q, lo, hi);
        const Tensor kh = slice_cols(k, lo, hi);
        const Tensor vh = slice_cols(v, lo, hi);

        const Tensor logits = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
        const Tensor weights = softmax_rows(logits);
        record.logits.push_back(logits);
        record.weights.push_back(weights);

        Tensor for_coupling = weights;
        Tensor for_values = weights;
        if (hfa_on) {
            const Tensor refined =
                refine_attention(weights, *feats, doei.alpha, cfg.num_classes);
            record.refined.push_back(refined);
            for_coupling = refined;
            if (doei.hfa_scope == DoeiConfig::HfaScope::full) for_values = refined;
        }
        mean_accum = h == 0 ? for_coupling : add(mean_accum, for_coupling);
        head_outputs.push_back(matmul(for_values, vh));
    }
    record.head_mean_refined = scale(mean_accum, 1.0 / static_cast<double>(cfg.heads));

    const Tensor attn_out =
        add_bias(matmul(concat_cols(head_outputs), lp.wo), lp.bo);

    TokenState next;
    next.layer_index = layer;
    if (standard) {
        const Tensor after_attn = add(x, attn_out);
        const Tensor normed = layer_norm(after_attn, lp.ln2_gain, lp.ln2_bias);
        const Tensor hidden = gelu(add_bias(matmul(normed, lp.mlp_w1), lp.mlp_b1));
        const Tensor mlp_out = add_bias(matmul(hidden, lp.mlp_w2), lp.mlp_b2);
        next.tokens = add(after_attn, mlp_out);
    } else {
        // Literal composition: MLP(LN(attention + previous tokens)) is the
        // block output, with no second residual stream.
        const Tensor normed = layer_norm(add(attn_out, x), lp.ln1_gain, lp.ln1_bias);
        const Tensor hidden = gelu(add_bias(matmul(normed, lp.mlp_w1), lp.mlp_b1));
        next.tokens = add_bias(matmul(hidden, lp.mlp_w2), lp.mlp_b2);
    }
    return {next, record};
}

Tensor class_token_scores(const TokenState& final_state, const ModelConfig& cfg) {
    if (final_state.layer_index != cfg.layers)
        throw ConfigError("scores: state is at layer " +
                          std::to_string(final_state.layer_index) + ", want the final layer " +
                          std::to_string(cfg.layers));
    return mean_axis1(slice_rows(final_state.tokens, 0, cfg.num_classes));
}

Tensor patch_scores(const TokenState& final_state, Parameters& params, const ModelConfig& cfg) {
    if (final_state.layer_index != cfg.layers)
        throw ConfigError("scores: state is at layer " +
                          std::to_string(final_state.layer_index) + ", want the final layer " +
                          std::to_string(cfg.layers));
    const Tensor pooled =
        mean_axis0(slice_rows(final_state.tokens, cfg.num_classes, cfg.token_count()));
    const Tensor logits = matmul(reshape(pooled, {1, cfg.embed_dim}), params.patch_head_w);
    return reshape(logits, {cfg.num_classes});
}

Tensor mlsm_loss(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 1)
        throw ShapeError("mlsm: logits must be rank 1, got " + shape_str(logits.shape()));
    const std::size_t c = logits.numel();
    if (labels.size() != c)
        throw ShapeError("mlsm: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(c) + " logits");

    Tensor pos = Tensor::zeros({c});
    Tensor neg = Tensor::zeros({c});
    for (std::size_t i = 0; i < c; ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw ConfigError("mlsm: labels must be 0/1");
        pos.mutable_data()[i] = static_cast<double>(labels[i]);
        neg.mutable_data()[i] = 1.0 - static_cast<double>(labels[i]);
    }
    const Tensor per_class =
        add(mul(pos, softplus(scale(logits, -1.0))), mul(neg, softplus(logits)));
    return scale(sum_all(per_class), 1.0 / static_cast<double>(c));
}

ForwardResult model_forward(const Tensor& image, const std::vector<int>& labels,
                            Parameters& params, const ModelConfig& cfg,
                            const DoeiConfig& doei) {
    cfg.validate();
    doei.validate(cfg.layers);

    EmbedResult embedded = embed(image, params, cfg);
    HfaFeatures feats;
    const bool want_hfa =
        doei.hfa_enabled && doei.alpha > 0.0 && !doei.active_layers.empty();
    if (want_hfa) feats = make_hfa_features(image, embedded.patch_embed, cfg.patch_size);

    ForwardResult result;
    TokenState state = std::move(embedded.state);
    for (std::size_t layer = 1; layer <= cfg.layers; ++layer) {
        auto [next, record] =
            block_forward(state, layer, params, cfg, doei, want_hfa ? &feats : nullptr);
        const bool doei_acts =
            (doei.ppdo_enabled || doei.cpdo_enabled) && doei.layer_active(layer);
        if (doei_acts) {
            Tensor coupling = record.head_mean_refined;
            if (doei.coupling_source == DoeiConfig::CouplingSource::logits) {
                Tensor accum = record.logits[0];
                for (std::size_t h = 1; h < record.logits.size(); ++h)
                    accum = add(accum, record.logits[h]);
                coupling = scale(accum, 1.0 / static_cast<double>(record.logits.size()));
            }
            next.tokens =
                apply_doei(next.tokens, coupling, doei, cfg.num_classes, cfg.layers, layer);
        }
        state = std::move(next);
        result.records.push_back(std::move(record));
    }

    result.token_scores = class_token_scores(state, cfg);
    result.patch_score_logits = patch_scores(state, params, cfg);
    result.loss = add(mlsm_loss(result.token_scores, labels),
                      mlsm_loss(result.patch_score_logits, labels));
    result.patch_tokens = slice_rows(state.tokens, cfg.num_classes, cfg.token_count());
    result.final_tokens = std::move(state.tokens);
    return result;
}

}  // namespace doei
