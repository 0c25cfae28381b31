// Training objectives: classification and order cross-entropies, the
// self-supervised guided loss over temporal attention, and their weighted sum.

#pragma once

#include <cstdint>
#include <vector>

#include "direcformer/model.hpp"
#include "direcformer/tensor.hpp"

namespace df {

struct LossWeights {
    double cls = 1.0;
    double ord = 1.0;
    double self = 1.0;
};

struct LossReport {
    double l_cls = 0.0;
    double l_ord = 0.0;
    double l_self = 0.0;
    double total = 0.0;
    Tensor total_tensor;  // differentiable; backward() reaches every term
};

// -log softmax(logits)[target], numerically stabilized.
Tensor cross_entropy(const Tensor& logits, std::size_t target);

// +1 iff rank_a < rank_b, else -1 (equality included).
int sign_order(std::size_t rank_a, std::size_t rank_b);

// Mean over blocks, sites, and frame pairs of (1 - a) * sign(o_t, o_t'),
// with attention averaged over heads and the class-token column excluded.
// `order` holds 1-based original positions per slot, length T.
Tensor self_supervised_guided(const AttentionTrace& trace,
                              const std::vector<std::size_t>& order,
                              const ModelConfig& cfg);

// cls_logits/target come from the unpermuted clip's pass; ord/trace from the
// permuted clip's pass.
LossReport total_loss(const Tensor& cls_logits, std::size_t label,
                      const Tensor& ord_logits, std::size_t order_index,
                      const AttentionTrace& trace, const std::vector<std::size_t>& order,
                      const ModelConfig& cfg, const LossWeights& weights);

}  // namespace df
