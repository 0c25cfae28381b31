#include "direcformer/model.hpp"

#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

namespace df {

std::string to_string(AttentionMode m) {
    return m == AttentionMode::Softmax ? "softmax" : "cosine";
}

AttentionMode attention_mode_from_string(const std::string& s) {
    if (s == "softmax" || s == "S") return AttentionMode::Softmax;
    if (s == "cosine" || s == "C") return AttentionMode::Cosine;
    throw std::invalid_argument("unknown attention mode: " + s);
}

std::string ModelConfig::mode_cell() const {
    std::string cell;
    cell += time_mode == AttentionMode::Cosine ? 'C' : 'S';
    cell += '-';
    cell += space_mode == AttentionMode::Cosine ? 'C' : 'S';
    return cell;
}

void ModelConfig::validate() const {
    if (patch == 0 || height % patch != 0 || width % patch != 0) {
        throw std::invalid_argument("patch size " + std::to_string(patch) +
                                    " does not divide frame " + std::to_string(height) + "x" +
                                    std::to_string(width));
    }
    if (heads == 0 || d_model % heads != 0) {
        throw std::invalid_argument("heads " + std::to_string(heads) +
                                    " does not divide d_model " + std::to_string(d_model));
    }
    if (depth == 0 || frames == 0 || channels == 0 || classes == 0 || order_classes == 0)
        throw std::invalid_argument("model config has a zero extent");
}

std::string ModelConfig::to_text() const {
    std::ostringstream out;
    out << "depth=" << depth << "\nframes=" << frames << "\nheight=" << height
        << "\nwidth=" << width << "\nchannels=" << channels << "\npatch=" << patch
        << "\nd_model=" << d_model << "\nheads=" << heads << "\nmlp_hidden=" << mlp_hidden
        << "\nclasses=" << classes << "\norder_classes=" << order_classes
        << "\ntime_mode=" << to_string(time_mode) << "\nspace_mode=" << to_string(space_mode)
        << "\n";
    return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("bad config line: " + line);
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        if (key == "depth") cfg.depth = std::stoull(value);
        else if (key == "frames") cfg.frames = std::stoull(value);
        else if (key == "height") cfg.height = std::stoull(value);
        else if (key == "width") cfg.width = std::stoull(value);
        else if (key == "channels") cfg.channels = std::stoull(value);
        else if (key == "patch") cfg.patch = std::stoull(value);
        else if (key == "d_model") cfg.d_model = std::stoull(value);
        else if (key == "heads") cfg.heads = std::stoull(value);
        else if (key == "mlp_hidden") cfg.mlp_hidden = std::stoull(value);
        else if (key == "classes") cfg.classes = std::stoull(value);
        else if (key == "order_classes") cfg.order_classes = std::stoull(value);
        else if (key == "time_mode") cfg.time_mode = attention_mode_from_string(value);
        else if (key == "space_mode") cfg.space_mode = attention_mode_from_string(value);
        else throw std::invalid_argument("unknown config key: " + key);
    }
    return cfg;
}

namespace {

class ParamInit {
public:
    explicit ParamInit(std::uint64_t seed) : rng_(seed) {}

    // truncated normal, std 0.02, resampled beyond two standard deviations
    Tensor trunc_normal(std::vector<std::size_t> shape) {
        std::size_t n = 1;
        for (auto e : shape) n *= e;
        std::vector<double> data(n);
        for (auto& v : data) {
            double x;
            do {
                x = dist_(rng_) * 0.02;
            } while (std::abs(x) > 0.04);
            v = x;
        }
        return Tensor::from_data(std::move(shape), std::move(data), true);
    }

    static Tensor zeros(std::vector<std::size_t> shape) {
        return Tensor::zeros(std::move(shape), true);
    }
    static Tensor ones(std::vector<std::size_t> shape) {
        return Tensor::full(std::move(shape), 1.0, true);
    }

private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> dist_{0.0, 1.0};
};

StageParams init_stage(ParamInit& init, std::size_t d) {
    StageParams p;
    p.ln_q_gain = ParamInit::ones({d});
    p.ln_q_bias = ParamInit::zeros({d});
    p.ln_k_gain = ParamInit::ones({d});
    p.ln_k_bias = ParamInit::zeros({d});
    p.ln_v_gain = ParamInit::ones({d});
    p.ln_v_bias = ParamInit::zeros({d});
    p.w_q = init.trunc_normal({d, d});
    p.b_q = ParamInit::zeros({d});
    p.w_k = init.trunc_normal({d, d});
    p.b_k = ParamInit::zeros({d});
    p.w_v = init.trunc_normal({d, d});
    p.b_v = ParamInit::zeros({d});
    // zero-initialized output projection keeps fresh blocks near identity
    p.w_out = ParamInit::zeros({d, d});
    p.b_out = ParamInit::zeros({d});
    return p;
}

void name_stage(const StageParams& p, const std::string& prefix,
                std::vector<std::pair<std::string, Tensor>>& out) {
    out.emplace_back(prefix + ".ln_q.gain", p.ln_q_gain);
    out.emplace_back(prefix + ".ln_q.bias", p.ln_q_bias);
    out.emplace_back(prefix + ".ln_k.gain", p.ln_k_gain);
    out.emplace_back(prefix + ".ln_k.bias", p.ln_k_bias);
    out.emplace_back(prefix + ".ln_v.gain", p.ln_v_gain);
    out.emplace_back(prefix + ".ln_v.bias", p.ln_v_bias);
    out.emplace_back(prefix + ".w_q", p.w_q);
    out.emplace_back(prefix + ".b_q", p.b_q);
    out.emplace_back(prefix + ".w_k", p.w_k);
    out.emplace_back(prefix + ".b_k", p.b_k);
    out.emplace_back(prefix + ".w_v", p.w_v);
    out.emplace_back(prefix + ".b_v", p.b_v);
    out.emplace_back(prefix + ".w_out", p.w_out);
    out.emplace_back(prefix + ".b_out", p.b_out);
}

}  // namespace

ModelParameters ModelParameters::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamInit gen(seed);
    const std::size_t d = cfg.d_model;
    ModelParameters p;
    p.patch_embed_w = gen.trunc_normal({cfg.channels * cfg.patch * cfg.patch, d});
    p.patch_embed_b = ParamInit::zeros({d});
    p.pos_embed = ParamInit::zeros({cfg.tokens(), d});
    p.class_token = gen.trunc_normal({1, d});
    p.blocks.resize(cfg.depth);
    for (auto& block : p.blocks) {
        block.time = init_stage(gen, d);
        block.space = init_stage(gen, d);
        block.mlp.ln_gain = ParamInit::ones({d});
        block.mlp.ln_bias = ParamInit::zeros({d});
        block.mlp.w1 = gen.trunc_normal({d, cfg.mlp_hidden});
        block.mlp.b1 = ParamInit::zeros({cfg.mlp_hidden});
        block.mlp.w2 = gen.trunc_normal({cfg.mlp_hidden, d});
        block.mlp.b2 = ParamInit::zeros({d});
    }
    for (HeadParams* head : {&p.cls_head, &p.ord_head}) {
        head->ln_gain = ParamInit::ones({d});
        head->ln_bias = ParamInit::zeros({d});
        head->b = ParamInit::zeros({head == &p.cls_head ? cfg.classes : cfg.order_classes});
        head->w = gen.trunc_normal({d, head == &p.cls_head ? cfg.classes : cfg.order_classes});
    }
    return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParameters::named() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("patch_embed.w", patch_embed_w);
    out.emplace_back("patch_embed.b", patch_embed_b);
    out.emplace_back("pos_embed", pos_embed);
    out.emplace_back("class_token", class_token);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        const std::string prefix = "block" + std::to_string(l);
        name_stage(blocks[l].time, prefix + ".time", out);
        name_stage(blocks[l].space, prefix + ".space", out);
        out.emplace_back(prefix + ".mlp.ln.gain", blocks[l].mlp.ln_gain);
        out.emplace_back(prefix + ".mlp.ln.bias", blocks[l].mlp.ln_bias);
        out.emplace_back(prefix + ".mlp.w1", blocks[l].mlp.w1);
        out.emplace_back(prefix + ".mlp.b1", blocks[l].mlp.b1);
        out.emplace_back(prefix + ".mlp.w2", blocks[l].mlp.w2);
        out.emplace_back(prefix + ".mlp.b2", blocks[l].mlp.b2);
    }
    out.emplace_back("cls_head.ln.gain", cls_head.ln_gain);
    out.emplace_back("cls_head.ln.bias", cls_head.ln_bias);
    out.emplace_back("cls_head.w", cls_head.w);
    out.emplace_back("cls_head.b", cls_head.b);
    out.emplace_back("ord_head.ln.gain", ord_head.ln_gain);
    out.emplace_back("ord_head.ln.bias", ord_head.ln_bias);
    out.emplace_back("ord_head.w", ord_head.w);
    out.emplace_back("ord_head.b", ord_head.b);
    return out;
}

void ModelParameters::load_named(const std::vector<std::pair<std::string, Tensor>>& entries) {
    std::map<std::string, Tensor> lookup(entries.begin(), entries.end());
    auto slots = named();
    if (lookup.size() != slots.size())
        throw std::invalid_argument("parameter count mismatch while loading");
    for (auto& [name, slot] : slots) {
        auto it = lookup.find(name);
        if (it == lookup.end())
            throw std::invalid_argument("missing parameter while loading: " + name);
        if (it->second.shape() != slot.shape())
            throw std::invalid_argument("shape mismatch for " + name + ": " +
                                        shape_str(it->second.shape()) + " vs " +
                                        shape_str(slot.shape()));
        slot.mutable_data() = it->second.data();
        slot.zero_grad();
    }
}

Tensor patchify(const Tensor& clip, const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t T = cfg.frames, H = cfg.height, W = cfg.width, C = cfg.channels,
                      P = cfg.patch;
    if (clip.shape() != std::vector<std::size_t>{T, H, W, C}) {
        throw std::invalid_argument("patchify: clip shape " + shape_str(clip.shape()) +
                                    " does not match config " + shape_str({T, H, W, C}));
    }
    const std::size_t N = cfg.n_patches();
    const std::size_t plen = C * P * P;
    const std::size_t wp = W / P;
    std::vector<double> out(T * N * plen);
    const auto& px = clip.data();
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t u = 0; u < H; ++u) {
            for (std::size_t v = 0; v < W; ++v) {
                const std::size_t s = (u / P) * wp + v / P;
                const std::size_t offset = ((u % P) * P + v % P) * C;
                for (std::size_t c = 0; c < C; ++c) {
                    out[(t * N + s) * plen + offset + c] = px[((t * H + u) * W + v) * C + c];
                }
            }
        }
    }
    return Tensor::from_data({T, N, plen}, std::move(out));
}

Tensor embed(const Tensor& tokens, const ModelParameters& params, const ModelConfig& cfg) {
    const std::size_t T = cfg.frames, N = cfg.n_patches();
    const std::size_t plen = cfg.channels * cfg.patch * cfg.patch;
    if (tokens.shape() != std::vector<std::size_t>{T, N, plen}) {
        throw std::invalid_argument("embed: token shape " + shape_str(tokens.shape()) +
                                    " does not match config");
    }
    // rearrange to token-row order (s-major), matching the model's row layout
    std::vector<double> x(N * T * plen);
    const auto& td = tokens.data();
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t s = 0; s < N; ++s)
            std::copy(td.begin() + (t * N + s) * plen, td.begin() + (t * N + s + 1) * plen,
                      x.begin() + (s * T + t) * plen);
    Tensor patches = Tensor::from_data({N * T, plen}, std::move(x));

    std::vector<std::size_t> patch_pos(N * T);
    for (std::size_t i = 0; i < N * T; ++i) patch_pos[i] = i + 1;
    Tensor z_patches = add(add_rowvec(matmul(patches, params.patch_embed_w), params.patch_embed_b),
                           gather_rows(params.pos_embed, patch_pos));
    Tensor z_class = add(params.class_token, gather_rows(params.pos_embed, {0}));
    return concat_rows({z_class, z_patches});
}

Tensor attention_weights(const Tensor& q, const Tensor& k, AttentionMode mode,
                         std::size_t head_dim) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
    if (mode == AttentionMode::Cosine) {
        // the 1/sqrt(D) scaling is kept verbatim even though cosine makes it inert
        return cosine_rows(scale(q, inv_sqrt_d), k, kCosineEps);
    }
    return softmax_rows(scale(matmul_nt(q, k), inv_sqrt_d));
}

namespace {

struct Projected {
    std::vector<Tensor> q, k, v;  // per head, tokens x head_dim
};

Projected project_qkv(const Tensor& z, const StageParams& p, const ModelConfig& cfg) {
    Tensor q = add_rowvec(matmul(layer_norm(z, p.ln_q_gain, p.ln_q_bias, kLayerNormEps), p.w_q),
                          p.b_q);
    Tensor k = add_rowvec(matmul(layer_norm(z, p.ln_k_gain, p.ln_k_bias, kLayerNormEps), p.w_k),
                          p.b_k);
    Tensor v = add_rowvec(matmul(layer_norm(z, p.ln_v_gain, p.ln_v_bias, kLayerNormEps), p.w_v),
                          p.b_v);
    Projected out;
    const std::size_t hd = cfg.head_dim();
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        out.q.push_back(slice_cols(q, h * hd, hd));
        out.k.push_back(slice_cols(k, h * hd, hd));
        out.v.push_back(slice_cols(v, h * hd, hd));
    }
    return out;
}

void ensure_trace_depth(AttentionTrace& trace, const ModelConfig& cfg) {
    if (trace.temporal.size() < cfg.depth) {
        trace.temporal.resize(cfg.depth);
        trace.spatial.resize(cfg.depth);
    }
}

}  // namespace

Tensor temporal_attention_block(const Tensor& z, const BlockParams& block,
                                const ModelConfig& cfg, std::size_t layer,
                                AttentionTrace& trace) {
    const std::size_t T = cfg.frames, N = cfg.n_patches(), hd = cfg.head_dim();
    ensure_trace_depth(trace, cfg);
    trace.time_mode = cfg.time_mode;
    auto& layer_trace = trace.temporal[layer];
    layer_trace.assign(cfg.heads, {});

    Projected proj = project_qkv(z, block.time, cfg);
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        Tensor k_class = gather_rows(proj.k[h], {0});
        Tensor v_class = gather_rows(proj.v[h], {0});
        std::vector<Tensor> site_outputs;
        site_outputs.reserve(N);
        layer_trace[h].reserve(N);
        for (std::size_t s = 0; s < N; ++s) {
            std::vector<std::size_t> idx(T);
            for (std::size_t t = 0; t < T; ++t) idx[t] = cfg.token_index(s, t);
            Tensor qs = gather_rows(proj.q[h], idx);
            Tensor keys = concat_rows({k_class, gather_rows(proj.k[h], idx)});
            Tensor values = concat_rows({v_class, gather_rows(proj.v[h], idx)});
            Tensor a = attention_weights(qs, keys, cfg.time_mode, hd);  // T x (T+1)
            layer_trace[h].push_back(a);
            site_outputs.push_back(matmul(a, values));
        }
        // sites are contiguous in token-row order, so the concat is the gather inverse
        head_outputs.push_back(concat_rows(site_outputs));  // (N*T) x hd
    }
    Tensor merged = concat_cols(head_outputs);  // (N*T) x D
    Tensor projected = add_rowvec(matmul(merged, block.time.w_out), block.time.b_out);
    // class-token row passes through the temporal stage unchanged
    std::vector<std::size_t> patch_rows(N * T);
    for (std::size_t i = 0; i < N * T; ++i) patch_rows[i] = i + 1;
    return add(z, scatter_rows(projected, patch_rows, cfg.tokens()));
}

Tensor spatial_attention_block(const Tensor& z, const BlockParams& block,
                               const ModelConfig& cfg, std::size_t layer,
                               AttentionTrace& trace) {
    const std::size_t T = cfg.frames, N = cfg.n_patches(), hd = cfg.head_dim();
    ensure_trace_depth(trace, cfg);
    trace.space_mode = cfg.space_mode;
    auto& layer_trace = trace.spatial[layer];
    layer_trace.assign(cfg.heads, {});

    Projected proj = project_qkv(z, block.space, cfg);
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        Tensor k_class = gather_rows(proj.k[h], {0});
        Tensor v_class = gather_rows(proj.v[h], {0});
        // class token queries over itself plus every patch token
        Tensor q_class = gather_rows(proj.q[h], {0});
        Tensor a_class = attention_weights(q_class, proj.k[h], cfg.space_mode, hd);
        Tensor out_h = scatter_rows(matmul(a_class, proj.v[h]), {0}, cfg.tokens());
        layer_trace[h].reserve(T);
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<std::size_t> idx(N);
            for (std::size_t s = 0; s < N; ++s) idx[s] = cfg.token_index(s, t);
            Tensor qt = gather_rows(proj.q[h], idx);
            Tensor keys = concat_rows({k_class, gather_rows(proj.k[h], idx)});
            Tensor values = concat_rows({v_class, gather_rows(proj.v[h], idx)});
            Tensor a = attention_weights(qt, keys, cfg.space_mode, hd);  // N x (N+1)
            layer_trace[h].push_back(a);
            out_h = add(out_h, scatter_rows(matmul(a, values), idx, cfg.tokens()));
        }
        head_outputs.push_back(out_h);
    }
    Tensor merged = concat_cols(head_outputs);
    Tensor projected = add_rowvec(matmul(merged, block.space.w_out), block.space.b_out);
    return add(z, projected);
}

Tensor block_forward(const Tensor& z, const BlockParams& block, const ModelConfig& cfg,
                     std::size_t layer, AttentionTrace& trace) {
    Tensor zt = temporal_attention_block(z, block, cfg, layer, trace);
    Tensor zs = spatial_attention_block(zt, block, cfg, layer, trace);
    Tensor hidden = gelu(add_rowvec(
        matmul(layer_norm(zs, block.mlp.ln_gain, block.mlp.ln_bias, kLayerNormEps), block.mlp.w1),
        block.mlp.b1));
    return add(zs, add_rowvec(matmul(hidden, block.mlp.w2), block.mlp.b2));
}

ForwardResult forward(const Tensor& clip, const ModelParameters& params,
                      const ModelConfig& cfg) {
    ForwardResult result;
    Tensor z = embed(patchify(clip, cfg), params, cfg);
    for (std::size_t l = 0; l < cfg.depth; ++l)
        z = block_forward(z, params.blocks[l], cfg, l, result.trace);
    Tensor cls_row = gather_rows(z, {0});
    Tensor cls = add_rowvec(
        matmul(layer_norm(cls_row, params.cls_head.ln_gain, params.cls_head.ln_bias,
                          kLayerNormEps),
               params.cls_head.w),
        params.cls_head.b);
    Tensor ord = add_rowvec(
        matmul(layer_norm(cls_row, params.ord_head.ln_gain, params.ord_head.ln_bias,
                          kLayerNormEps),
               params.ord_head.w),
        params.ord_head.b);
    result.cls_logits = reshape(cls, {cfg.classes});
    result.ord_logits = reshape(ord, {cfg.order_classes});
    return result;
}

}  // namespace df
