// Directed-attention video transformer: patch tokenization, stacked divided
// space-time attention blocks (cosine or softmax per dimension), and the
// classification / order-prediction heads, with full attention tracing.
//
// Token layout: row 0 is the class token; patch (s,t) lives at row
// 1 + s*T + t, so each temporal group (fixed s, all t) is contiguous.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "direcformer/tensor.hpp"

namespace df {

enum class AttentionMode { Softmax, Cosine };

std::string to_string(AttentionMode m);
AttentionMode attention_mode_from_string(const std::string& s);

struct ModelConfig {
    std::size_t depth = 2;        // L
    std::size_t frames = 8;       // T
    std::size_t height = 32;      // H
    std::size_t width = 32;       // W
    std::size_t channels = 1;     // C
    std::size_t patch = 8;        // P
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t mlp_hidden = 128;
    std::size_t classes = 8;
    std::size_t order_classes = 1000;
    AttentionMode time_mode = AttentionMode::Cosine;
    AttentionMode space_mode = AttentionMode::Cosine;

    std::size_t n_patches() const { return (height * width) / (patch * patch); }
    std::size_t head_dim() const { return d_model / heads; }
    std::size_t tokens() const { return n_patches() * frames + 1; }
    std::size_t token_index(std::size_t s, std::size_t t) const { return 1 + s * frames + t; }
    // the Table 1 ablation cell name, e.g. "C-C"
    std::string mode_cell() const;

    void validate() const;  // throws std::invalid_argument on violations

    std::string to_text() const;  // key=value lines
    static ModelConfig from_text(const std::string& text);
};

struct StageParams {
    Tensor ln_q_gain, ln_q_bias;
    Tensor ln_k_gain, ln_k_bias;
    Tensor ln_v_gain, ln_v_bias;
    Tensor w_q, b_q, w_k, b_k, w_v, b_v;
    Tensor w_out, b_out;  // the gamma projection
};

struct MlpParams {
    Tensor ln_gain, ln_bias;
    Tensor w1, b1, w2, b2;
};

struct BlockParams {
    StageParams time;
    StageParams space;
    MlpParams mlp;
};

struct HeadParams {
    Tensor ln_gain, ln_bias;
    Tensor w, b;
};

struct ModelParameters {
    Tensor patch_embed_w, patch_embed_b;  // alpha
    Tensor pos_embed;                     // (N*T+1) x D, row 0 for the class token
    Tensor class_token;                   // 1 x D
    std::vector<BlockParams> blocks;
    HeadParams cls_head, ord_head;

    static ModelParameters init(const ModelConfig& cfg, std::uint64_t seed);
    std::vector<std::pair<std::string, Tensor>> named() const;
    // replaces every tensor with the named entry; throws on missing/mismatched names
    void load_named(const std::vector<std::pair<std::string, Tensor>>& entries);
};

struct AttentionTrace {
    AttentionMode time_mode = AttentionMode::Cosine;
    AttentionMode space_mode = AttentionMode::Cosine;
    // temporal[l][h][s]: T x (T+1), column 0 = class-token key
    std::vector<std::vector<std::vector<Tensor>>> temporal;
    // spatial[l][h][t]: N x (N+1), column 0 = class-token key
    std::vector<std::vector<std::vector<Tensor>>> spatial;
};

struct ForwardResult {
    Tensor cls_logits;  // {classes}
    Tensor ord_logits;  // {order_classes}
    AttentionTrace trace;
};

// Raster-order patch extraction: pixel (u,v) of frame t lands in patch
// s = floor(u/P)*(W/P) + floor(v/P), vector index ((u%P)*P + (v%P))*C + c.
Tensor patchify(const Tensor& clip, const ModelConfig& cfg);

// z0 rows: class token + its embedding at row 0, alpha(x_{s,t}) + e_{s,t} after.
Tensor embed(const Tensor& tokens, const ModelParameters& params, const ModelConfig& cfg);

// Signed cosine (no row normalization) or scaled-dot softmax weights.
Tensor attention_weights(const Tensor& q, const Tensor& k, AttentionMode mode,
                         std::size_t head_dim);

Tensor temporal_attention_block(const Tensor& z, const BlockParams& block,
                                const ModelConfig& cfg, std::size_t layer,
                                AttentionTrace& trace);
Tensor spatial_attention_block(const Tensor& z, const BlockParams& block,
                               const ModelConfig& cfg, std::size_t layer,
                               AttentionTrace& trace);
Tensor block_forward(const Tensor& z, const BlockParams& block, const ModelConfig& cfg,
                     std::size_t layer, AttentionTrace& trace);

ForwardResult forward(const Tensor& clip, const ModelParameters& params,
                      const ModelConfig& cfg);

constexpr double kLayerNormEps = 1e-5;
constexpr double kCosineEps = 1e-8;

}  // namespace df
