#include "direcformer/losses.hpp"

#include <stdexcept>

namespace df {

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
    if (logits.rank() != 1)
        throw std::invalid_argument("cross_entropy: logits must be rank-1, got " +
                                    shape_str(logits.shape()));
    const std::size_t k = logits.size();
    if (target >= k)
        throw std::out_of_range("cross_entropy: target " + std::to_string(target) +
                                " out of " + std::to_string(k) + " classes");
    Tensor ls = log_softmax_rows(reshape(logits, {1, k}));
    std::vector<double> onehot(k, 0.0);
    onehot[target] = -1.0;
    return sum(mul(ls, Tensor::from_data({1, k}, std::move(onehot))));
}

int sign_order(std::size_t rank_a, std::size_t rank_b) {
    return rank_a < rank_b ? 1 : -1;
}

Tensor self_supervised_guided(const AttentionTrace& trace,
                              const std::vector<std::size_t>& order,
                              const ModelConfig& cfg) {
    const std::size_t L = cfg.depth, N = cfg.n_patches(), T = cfg.frames, H = cfg.heads;
    if (trace.temporal.size() != L)
        throw std::invalid_argument("self_supervised_guided: trace depth " +
                                    std::to_string(trace.temporal.size()) + " != " +
                                    std::to_string(L));
    if (order.size() != T)
        throw std::invalid_argument("self_supervised_guided: order length mismatch");

    std::vector<double> signs(T * T);
    double sign_total = 0.0;
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t u = 0; u < T; ++u) {
            signs[t * T + u] = sign_order(order[t], order[u]);
            sign_total += signs[t * T + u];
        }
    Tensor sign_mat = Tensor::from_data({T, T}, std::move(signs));

    // sum_{l,s,t,t'} (1 - a) ς  =  L*N*Σς - sum_{l,s} <a_ls, ς>
    Tensor weighted = Tensor::scalar(0.0);
    const double head_avg = 1.0 / static_cast<double>(H);
    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t s = 0; s < N; ++s) {
            Tensor a = trace.temporal[l][0][s];
            for (std::size_t h = 1; h < H; ++h) a = add(a, trace.temporal[l][h][s]);
            a = scale(a, head_avg);
            a = slice_cols(a, 1, T);  // drop the class-token key column
            weighted = add(weighted, sum(mul(a, sign_mat)));
        }
    }
    const double denom = static_cast<double>(L * N * T * T);
    Tensor const_part = Tensor::scalar(static_cast<double>(L * N) * sign_total);
    return scale(sub(const_part, weighted), 1.0 / denom);
}

LossReport total_loss(const Tensor& cls_logits, std::size_t label,
                      const Tensor& ord_logits, std::size_t order_index,
                      const AttentionTrace& trace, const std::vector<std::size_t>& order,
                      const ModelConfig& cfg, const LossWeights& weights) {
    LossReport report;
    Tensor total = Tensor::scalar(0.0);
    Tensor l_cls = cross_entropy(cls_logits, label);
    report.l_cls = l_cls.item();
    total = add(total, scale(l_cls, weights.cls));

    Tensor l_ord = cross_entropy(ord_logits, order_index);
    report.l_ord = l_ord.item();
    total = add(total, scale(l_ord, weights.ord));

    if (weights.self != 0.0) {
        Tensor l_self = self_supervised_guided(trace, order, cfg);
        report.l_self = l_self.item();
        total = add(total, scale(l_self, weights.self));
    }
    report.total = total.item();
    report.total_tensor = total;
    return report;
}

}  // namespace df
