// Straight-line scalar re-implementation of the network forward pass, written
// against raw double vectors only. Serves as the independent oracle for the
// model tests; shares no code with the library beyond the config struct.
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "direcformer/model.hpp"

namespace refmodel {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;
using Params = std::map<std::string, Vec>;

struct RefResult {
    Vec cls_logits, ord_logits;
    // [l][h][s] -> T x (T+1) and [l][h][t] -> N x (N+1), column 0 = class key
    std::vector<std::vector<std::vector<Mat>>> temporal, spatial;
};

inline Params to_params(const df::ModelParameters& p) {
    Params out;
    for (const auto& [name, tensor] : p.named()) out[name] = tensor.data();
    return out;
}

inline Vec layer_norm_row(const Vec& row, const Vec& gain, const Vec& bias) {
    const std::size_t d = row.size();
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    Vec out(d);
    for (std::size_t j = 0; j < d; ++j) out[j] = (row[j] - mean) * inv * gain[j] + bias[j];
    return out;
}

// y = x * W + b with W given row-major as rows x cols
inline Vec affine(const Vec& x, const Vec& w, const Vec& b, std::size_t cols) {
    Vec out(b);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j) out[j] += x[i] * w[i * cols + j];
    return out;
}

inline double cosine(const Vec& a, const Vec& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::max(std::sqrt(na), 1e-8) * std::max(std::sqrt(nb), 1e-8));
}

inline Vec attention_row(const Vec& q, const Mat& keys, df::AttentionMode mode,
                         std::size_t head_dim) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(head_dim));
    Vec a(keys.size());
    if (mode == df::AttentionMode::Cosine) {
        Vec qs(q);
        for (double& v : qs) v *= inv;
        for (std::size_t c = 0; c < keys.size(); ++c) a[c] = cosine(qs, keys[c]);
        return a;
    }
    double top = -1e300;
    for (std::size_t c = 0; c < keys.size(); ++c) {
        double dot = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) dot += q[i] * keys[c][i];
        a[c] = dot * inv;
        top = std::max(top, a[c]);
    }
    double z = 0.0;
    for (double& v : a) z += (v = std::exp(v - top));
    for (double& v : a) v /= z;
    return a;
}

struct Stage {
    Vec lnq_g, lnq_b, lnk_g, lnk_b, lnv_g, lnv_b, wq, bq, wk, bk, wv, bv, wo, bo;
};

inline Stage stage_of(const Params& p, const std::string& prefix) {
    auto get = [&](const std::string& n) { return p.at(prefix + n); };
    return Stage{get(".ln_q.gain"), get(".ln_q.bias"), get(".ln_k.gain"), get(".ln_k.bias"),
                 get(".ln_v.gain"), get(".ln_v.bias"), get(".w_q"),      get(".b_q"),
                 get(".w_k"),       get(".b_k"),       get(".w_v"),      get(".b_v"),
                 get(".w_out"),     get(".b_out")};
}

struct Qkv {
    Mat q, k, v;  // tokens x d_model
};

inline Qkv project(const Mat& z, const Stage& st, std::size_t d) {
    Qkv out;
    for (const Vec& row : z) {
        out.q.push_back(affine(layer_norm_row(row, st.lnq_g, st.lnq_b), st.wq, st.bq, d));
        out.k.push_back(affine(layer_norm_row(row, st.lnk_g, st.lnk_b), st.wk, st.bk, d));
        out.v.push_back(affine(layer_norm_row(row, st.lnv_g, st.lnv_b), st.wv, st.bv, d));
    }
    return out;
}

inline Vec head_slice(const Vec& row, std::size_t h, std::size_t hd) {
    return Vec(row.begin() + h * hd, row.begin() + (h + 1) * hd);
}

// temporal stage on z (tokens x D); appends this block's trace
inline Mat temporal_stage(const Mat& z, const Stage& st, const df::ModelConfig& cfg,
                          std::vector<std::vector<Mat>>& trace) {
    const std::size_t T = cfg.frames, N = cfg.n_patches(), D = cfg.d_model,
                      hd = cfg.head_dim();
    Qkv p = project(z, st, D);
    Mat merged(N * T, Vec(D, 0.0));
    trace.assign(cfg.heads, {});
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        for (std::size_t s = 0; s < N; ++s) {
            Mat keys{head_slice(p.k[0], h, hd)};
            Mat values{head_slice(p.v[0], h, hd)};
            for (std::size_t t = 0; t < T; ++t) {
                keys.push_back(head_slice(p.k[cfg.token_index(s, t)], h, hd));
                values.push_back(head_slice(p.v[cfg.token_index(s, t)], h, hd));
            }
            Mat a(T);
            for (std::size_t t = 0; t < T; ++t) {
                a[t] = attention_row(head_slice(p.q[cfg.token_index(s, t)], h, hd), keys,
                                     cfg.time_mode, hd);
                for (std::size_t c = 0; c <= T; ++c)
                    for (std::size_t j = 0; j < hd; ++j)
                        merged[s * T + t][h * hd + j] += a[t][c] * values[c][j];
            }
            trace[h].push_back(a);
        }
    }
    Mat out = z;
    for (std::size_t i = 0; i < N * T; ++i) {
        Vec proj = affine(merged[i], st.wo, st.bo, D);
        for (std::size_t j = 0; j < D; ++j) out[i + 1][j] += proj[j];
    }
    return out;
}

inline Mat spatial_stage(const Mat& z, const Stage& st, const df::ModelConfig& cfg,
                         std::vector<std::vector<Mat>>& trace) {
    const std::size_t T = cfg.frames, N = cfg.n_patches(), D = cfg.d_model,
                      hd = cfg.head_dim();
    Qkv p = project(z, st, D);
    Mat merged(N * T + 1, Vec(D, 0.0));
    trace.assign(cfg.heads, {});
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        // class query attends over every token, itself included
        Mat all_keys, all_values;
        for (std::size_t i = 0; i <= N * T; ++i) {
            all_keys.push_back(head_slice(p.k[i], h, hd));
            all_values.push_back(head_slice(p.v[i], h, hd));
        }
        Vec a0 = attention_row(head_slice(p.q[0], h, hd), all_keys, cfg.space_mode, hd);
        for (std::size_t c = 0; c <= N * T; ++c)
            for (std::size_t j = 0; j < hd; ++j)
                merged[0][h * hd + j] += a0[c] * all_values[c][j];

        for (std::size_t t = 0; t < T; ++t) {
            Mat keys{head_slice(p.k[0], h, hd)};
            Mat values{head_slice(p.v[0], h, hd)};
            for (std::size_t s = 0; s < N; ++s) {
                keys.push_back(head_slice(p.k[cfg.token_index(s, t)], h, hd));
                values.push_back(head_slice(p.v[cfg.token_index(s, t)], h, hd));
            }
            Mat a(N);
            for (std::size_t s = 0; s < N; ++s) {
                a[s] = attention_row(head_slice(p.q[cfg.token_index(s, t)], h, hd), keys,
                                     cfg.space_mode, hd);
                for (std::size_t c = 0; c <= N; ++c)
                    for (std::size_t j = 0; j < hd; ++j)
                        merged[cfg.token_index(s, t)][h * hd + j] += a[s][c] * values[c][j];
            }
            trace[h].push_back(a);
        }
    }
    Mat out = z;
    for (std::size_t i = 0; i <= N * T; ++i) {
        Vec proj = affine(merged[i], st.wo, st.bo, D);
        for (std::size_t j = 0; j < D; ++j) out[i][j] += proj[j];
    }
    return out;
}

inline Mat mlp_stage(const Mat& z, const Params& p, const std::string& prefix,
                     const df::ModelConfig& cfg) {
    const Vec& g = p.at(prefix + ".ln.gain");
    const Vec& b = p.at(prefix + ".ln.bias");
    const Vec& w1 = p.at(prefix + ".w1");
    const Vec& b1 = p.at(prefix + ".b1");
    const Vec& w2 = p.at(prefix + ".w2");
    const Vec& b2 = p.at(prefix + ".b2");
    Mat out = z;
    for (std::size_t i = 0; i < z.size(); ++i) {
        Vec hidden = affine(layer_norm_row(z[i], g, b), w1, b1, cfg.mlp_hidden);
        for (double& v : hidden) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
        Vec proj = affine(hidden, w2, b2, cfg.d_model);
        for (std::size_t j = 0; j < cfg.d_model; ++j) out[i][j] += proj[j];
    }
    return out;
}

inline Mat block(const Mat& z, const Params& p, std::size_t l, const df::ModelConfig& cfg,
                 RefResult& result) {
    const std::string prefix = "block" + std::to_string(l);
    Mat zt = temporal_stage(z, stage_of(p, prefix + ".time"), cfg, result.temporal[l]);
    Mat zs = spatial_stage(zt, stage_of(p, prefix + ".space"), cfg, result.spatial[l]);
    return mlp_stage(zs, p, prefix + ".mlp", cfg);
}

inline Mat embed(const Vec& clip, const Params& p, const df::ModelConfig& cfg) {
    const std::size_t T = cfg.frames, H = cfg.height, W = cfg.width, C = cfg.channels,
                      P = cfg.patch, N = cfg.n_patches(), D = cfg.d_model;
    const std::size_t plen = C * P * P;
    const Vec& pw = p.at("patch_embed.w");
    const Vec& pb = p.at("patch_embed.b");
    const Vec& pos = p.at("pos_embed");
    Mat z(N * T + 1, Vec(D, 0.0));
    for (std::size_t j = 0; j < D; ++j)
        z[0][j] = p.at("class_token")[j] + pos[j];
    for (std::size_t s = 0; s < N; ++s) {
        for (std::size_t t = 0; t < T; ++t) {
            Vec patch(plen, 0.0);
            for (std::size_t u = 0; u < H; ++u)
                for (std::size_t v = 0; v < W; ++v) {
                    if ((u / P) * (W / P) + v / P != s) continue;
                    for (std::size_t c = 0; c < C; ++c)
                        patch[((u % P) * P + v % P) * C + c] =
                            clip[((t * H + u) * W + v) * C + c];
                }
            Vec row = affine(patch, pw, pb, D);
            const std::size_t token = cfg.token_index(s, t);
            for (std::size_t j = 0; j < D; ++j) z[token][j] = row[j] + pos[token * D + j];
        }
    }
    return z;
}

inline RefResult forward(const Vec& clip, const Params& p, const df::ModelConfig& cfg) {
    RefResult result;
    result.temporal.resize(cfg.depth);
    result.spatial.resize(cfg.depth);
    Mat z = embed(clip, p, cfg);
    for (std::size_t l = 0; l < cfg.depth; ++l) z = block(z, p, l, cfg, result);
    Vec cls_in = layer_norm_row(z[0], p.at("cls_head.ln.gain"), p.at("cls_head.ln.bias"));
    result.cls_logits = affine(cls_in, p.at("cls_head.w"), p.at("cls_head.b"), cfg.classes);
    Vec ord_in = layer_norm_row(z[0], p.at("ord_head.ln.gain"), p.at("ord_head.ln.bias"));
    result.ord_logits =
        affine(ord_in, p.at("ord_head.w"), p.at("ord_head.b"), cfg.order_classes);
    return result;
}

}  // namespace refmodel
