// Training loop for the joint classification + order objective, Adam with
// decoupled weight decay, evaluation (crop-averaged classification, order-head
// accuracy, Hamilton-recovery OrderAcc), checkpointing, and the attention-mode
// ablation grid.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "direcformer/losses.hpp"
#include "direcformer/model.hpp"
#include "direcformer/order_recovery.hpp"
#include "direcformer/permutations.hpp"
#include "direcformer/synth.hpp"

namespace df {

struct OptimConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct TrainConfig {
    ModelConfig model;
    LossWeights weights;
    OptimConfig optim;
    std::size_t epochs = 30;
    std::size_t batch = 32;
    std::uint64_t seed = 0;
    CropProtocol protocol = CropProtocol::Center;
    std::string data_manifest;  // path to the dataset manifest
    std::string perm_file;      // path to the permutation catalogue
    std::string out_dir;        // metrics + checkpoint destination; "" keeps in memory

    std::string to_text() const;
    static TrainConfig from_text(const std::string& text);
};

// per-video test/val permutations are drawn from this fixed seed so repeated
// evaluations see identical orderings
constexpr std::uint64_t kEvalPermSeed = 0x0dd5eedULL;

// catalogue index of the fixed evaluation permutation for a clip
std::size_t eval_permutation_index(std::uint64_t eval_seed, std::uint64_t clip_id,
                                   std::size_t count);

struct MetricsRow {
    std::size_t step;
    double l_cls, l_ord, l_self, total, lr, wall_ms;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct EvalReport {
    double top1 = 0.0;
    double top5 = 0.0;
    double order_top1 = 0.0;
    double order_acc = 0.0;  // mean Hamilton-recovery OrderAcc
    std::vector<std::size_t> confusion;  // classes x classes, row = truth
};

struct TrainResult {
    ModelParameters params;  // best-val-top1 snapshot
    std::vector<MetricsRow> metrics;
    EvalReport best_val;
    std::size_t best_epoch = 0;
    double train_cpu_seconds = 0.0;
    // first epoch whose val top-1 reached the given targets, if tracked
};

// worker count: DIRECFORMER_THREADS if set (0 or 1 = strict single thread)
std::size_t worker_count();

class Adam {
public:
    Adam(std::vector<Tensor> params, OptimConfig cfg);
    // one update from the accumulated grads; tensors without grads are skipped
    void step();
    void zero_grad();
    std::size_t steps_taken() const { return t_; }

private:
    std::vector<Tensor> params_;
    OptimConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

Tensor eval_crop(const Tensor& pixels, const ModelConfig& cfg, std::size_t off_y,
                 std::size_t off_x);

EvalReport evaluate(const ModelParameters& params, const ModelConfig& cfg,
                    const Manifest& manifest, const std::string& split,
                    CropProtocol protocol, const PermutationSet& perms,
                    std::uint64_t eval_seed = kEvalPermSeed);

struct OrderRecoveryRow {
    std::uint64_t clip_id;
    Permutation truth, recovered;
    double path_weight, order_acc;
};

std::vector<OrderRecoveryRow> recover_orders(const ModelParameters& params,
                                             const ModelConfig& cfg, const Manifest& manifest,
                                             const std::string& split,
                                             const PermutationSet& perms,
                                             std::uint64_t eval_seed = kEvalPermSeed);

TrainResult train(const TrainConfig& cfg, const Manifest& manifest,
                  const PermutationSet& perms);

void save_model_checkpoint(const std::string& path, const ModelParameters& params,
                           const ModelConfig& cfg);
struct LoadedModel {
    ModelConfig cfg;
    ModelParameters params;
};
LoadedModel load_model_checkpoint(const std::string& path);

struct AblationRow {
    std::string cell;  // e.g. "C-C"
    LossWeights weights;
    EvalReport report;
};

// the four attention-mode cells under shared seed/data/permutations
std::vector<AblationRow> ablation_grid(const TrainConfig& base, const Manifest& manifest,
                                       const PermutationSet& perms);

}  // namespace df
