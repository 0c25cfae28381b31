#include "direcformer/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "direcformer/io.hpp"

namespace df {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
    std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b * 0xbf58476d1ce4e5b9ULL +
                      c * 0x94d049bb133111ebULL + 0x2545f4914f6cdd1dULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string protocol_name(CropProtocol p) {
    return p == CropProtocol::Center ? "center" : "three-crop";
}

CropProtocol protocol_from_name(const std::string& s) {
    if (s == "center") return CropProtocol::Center;
    if (s == "three-crop" || s == "three") return CropProtocol::ThreeCrop;
    throw std::invalid_argument("unknown crop protocol: " + s);
}

std::vector<double> softmax_probs(const std::vector<double>& logits) {
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - top));
    for (double& v : p) v /= z;
    return p;
}

std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// rank of `index` when classes are sorted by descending score, index ascending
std::size_t score_rank(const std::vector<double>& scores, std::size_t index) {
    std::size_t rank = 0;
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (scores[j] > scores[index] || (scores[j] == scores[index] && j < index)) ++rank;
    return rank;
}

ModelParameters clone(const ModelParameters& params, const ModelConfig& cfg) {
    ModelParameters copy = ModelParameters::init(cfg, 0);
    copy.load_named(params.named());
    return copy;
}

// per-clip evaluation outcome, reduced after the (possibly parallel) sweep
struct ClipEval {
    std::size_t predicted = 0;
    bool top1 = false, top5 = false, order_top1 = false;
    double order_acc = 0.0;
};

}  // namespace

std::size_t eval_permutation_index(std::uint64_t eval_seed, std::uint64_t clip_id,
                                   std::size_t count) {
    if (count == 0) throw std::invalid_argument("eval_permutation_index: empty catalogue");
    return static_cast<std::size_t>(mix(eval_seed, clip_id) % count);
}

std::string TrainConfig::to_text() const {
    std::ostringstream out;
    std::istringstream model_text(model.to_text());
    std::string line;
    while (std::getline(model_text, line)) out << "model." << line << "\n";
    out << std::setprecision(17) << "epochs=" << epochs << "\nbatch=" << batch
        << "\nseed=" << seed << "\nlr=" << optim.lr << "\nbeta1=" << optim.beta1
        << "\nbeta2=" << optim.beta2 << "\neps=" << optim.eps
        << "\nweight_decay=" << optim.weight_decay << "\nlambda_cls=" << weights.cls
        << "\nlambda_ord=" << weights.ord << "\nlambda_self=" << weights.self
        << "\nprotocol=" << protocol_name(protocol) << "\ndata_manifest=" << data_manifest
        << "\nperm_file=" << perm_file << "\nout_dir=" << out_dir << "\n";
    return out.str();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line, model_lines;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("bad train config line: " + line);
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key.rfind("model.", 0) == 0) {
            model_lines += key.substr(6) + "=" + value + "\n";
        } else if (key == "epochs") cfg.epochs = std::stoull(value);
        else if (key == "batch") cfg.batch = std::stoull(value);
        else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "lr") cfg.optim.lr = std::stod(value);
        else if (key == "beta1") cfg.optim.beta1 = std::stod(value);
        else if (key == "beta2") cfg.optim.beta2 = std::stod(value);
        else if (key == "eps") cfg.optim.eps = std::stod(value);
        else if (key == "weight_decay") cfg.optim.weight_decay = std::stod(value);
        else if (key == "lambda_cls") cfg.weights.cls = std::stod(value);
        else if (key == "lambda_ord") cfg.weights.ord = std::stod(value);
        else if (key == "lambda_self") cfg.weights.self = std::stod(value);
        else if (key == "protocol") cfg.protocol = protocol_from_name(value);
        else if (key == "data_manifest") cfg.data_manifest = value;
        else if (key == "perm_file") cfg.perm_file = value;
        else if (key == "out_dir") cfg.out_dir = value;
        else throw std::invalid_argument("unknown train config key: " + key);
    }
    cfg.model = ModelConfig::from_text(model_lines);
    return cfg;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "step,l_cls,l_ord,l_self,total,lr,wall_ms\n";
    for (const auto& r : rows)
        out << r.step << ',' << r.l_cls << ',' << r.l_ord << ',' << r.l_self << ','
            << r.total << ',' << r.lr << ',' << r.wall_ms << '\n';
    return out.str();
}

std::size_t worker_count() {
    const char* env = std::getenv("DIRECFORMER_THREADS");
    if (!env || !*env) return 1;
    const long v = std::strtol(env, nullptr, 10);
    return v <= 1 ? 1 : static_cast<std::size_t>(v);
}

Adam::Adam(std::vector<Tensor> params, OptimConfig cfg)
    : params_(std::move(params)), cfg_(std::move(cfg)) {
    if (cfg_.lr < 0.0) throw std::invalid_argument("adam: negative learning rate");
    for (const Tensor& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad()) continue;
        const auto& g = p.grad();
        auto& data = p.mutable_data();
        for (std::size_t j = 0; j < data.size(); ++j) {
            m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
            v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            data[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                  cfg_.weight_decay * data[j]);
        }
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

Tensor eval_crop(const Tensor& pixels, const ModelConfig& cfg, std::size_t off_y,
                 std::size_t off_x) {
    const auto& shape = pixels.shape();
    if (shape[1] == cfg.height && shape[2] == cfg.width) return pixels;
    return crop_clip(pixels, off_y, off_x, cfg.height, cfg.width);
}

namespace {

ClipEval evaluate_clip(const VideoClip& clip, const ModelParameters& params,
                       const ModelConfig& cfg, CropProtocol protocol,
                       const PermutationSet& perms, std::uint64_t eval_seed) {
    NoGradGuard ng;
    ClipEval out;
    const auto offs_y = crop_offsets(clip.pixels.shape()[1], cfg.height, protocol);
    const auto offs_x = crop_offsets(clip.pixels.shape()[2], cfg.width, protocol);
    std::vector<double> scores(cfg.classes, 0.0);
    for (std::size_t i = 0; i < offs_y.size(); ++i) {
        Tensor view = eval_crop(clip.pixels, cfg, offs_y[i].first, offs_x[i].first);
        ForwardResult fwd = forward(view, params, cfg);
        std::vector<double> p = softmax_probs(fwd.cls_logits.data());
        for (std::size_t c = 0; c < cfg.classes; ++c) scores[c] += p[c] / offs_y.size();
    }
    out.predicted = argmax(scores);
    const std::size_t rank = score_rank(scores, clip.label);
    out.top1 = rank == 0;
    out.top5 = rank < std::min<std::size_t>(5, cfg.classes);

    // order protocol: fixed-seed permutation, single center crop
    const std::size_t idx = eval_permutation_index(eval_seed, clip.clip_id, perms.perms.size());
    const Permutation& order = perms.perms[idx];
    const auto center_y = crop_offsets(clip.pixels.shape()[1], cfg.height,
                                       CropProtocol::Center)[0];
    const auto center_x = crop_offsets(clip.pixels.shape()[2], cfg.width,
                                       CropProtocol::Center)[0];
    Tensor centered = eval_crop(clip.pixels, cfg, center_y.first, center_x.first);
    ForwardResult fwd = forward(apply_permutation(centered, order), params, cfg);
    out.order_top1 = argmax(fwd.ord_logits.data()) == idx;
    RecoveredOrder rec = max_weight_hamiltonian_path(temporal_adjacency(fwd.trace, cfg));
    out.order_acc = order_accuracy(rec.order, order);
    return out;
}

template <typename Fn>
void parallel_over(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min(worker_count(), n == 0 ? std::size_t{1} : n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    for (auto& th : pool) th.join();
}

}  // namespace

EvalReport evaluate(const ModelParameters& params, const ModelConfig& cfg,
                    const Manifest& manifest, const std::string& split,
                    CropProtocol protocol, const PermutationSet& perms,
                    std::uint64_t eval_seed) {
    cfg.validate();
    if (perms.frames != cfg.frames)
        throw std::invalid_argument("evaluate: permutation frames " +
                                    std::to_string(perms.frames) + " != model frames " +
                                    std::to_string(cfg.frames));
    const std::size_t n = manifest.split_indices(split).size();
    if (n == 0) throw std::invalid_argument("evaluate: split '" + split + "' is empty");

    std::vector<ClipEval> per_clip(n);
    std::vector<std::size_t> labels(n);
    parallel_over(n, [&](std::size_t i) {
        VideoClip clip = load_batch(manifest, split, {i})[0];
        labels[i] = clip.label;
        per_clip[i] = evaluate_clip(clip, params, cfg, protocol, perms, eval_seed);
    });

    EvalReport report;
    report.confusion.assign(cfg.classes * cfg.classes, 0);
    for (std::size_t i = 0; i < n; ++i) {
        report.top1 += per_clip[i].top1 ? 1.0 : 0.0;
        report.top5 += per_clip[i].top5 ? 1.0 : 0.0;
        report.order_top1 += per_clip[i].order_top1 ? 1.0 : 0.0;
        report.order_acc += per_clip[i].order_acc;
        ++report.confusion[labels[i] * cfg.classes + per_clip[i].predicted];
    }
    const double scale = 100.0 / static_cast<double>(n);
    report.top1 *= scale;
    report.top5 *= scale;
    report.order_top1 *= scale;
    report.order_acc /= static_cast<double>(n);
    return report;
}

std::vector<OrderRecoveryRow> recover_orders(const ModelParameters& params,
                                             const ModelConfig& cfg, const Manifest& manifest,
                                             const std::string& split,
                                             const PermutationSet& perms,
                                             std::uint64_t eval_seed) {
    const std::size_t n = manifest.split_indices(split).size();
    std::vector<OrderRecoveryRow> rows(n);
    parallel_over(n, [&](std::size_t i) {
        NoGradGuard ng;
        VideoClip clip = load_batch(manifest, split, {i})[0];
        const std::size_t idx = eval_permutation_index(eval_seed, clip.clip_id, perms.perms.size());
        const Permutation& order = perms.perms[idx];
        const auto cy = crop_offsets(clip.pixels.shape()[1], cfg.height,
                                     CropProtocol::Center)[0];
        const auto cx = crop_offsets(clip.pixels.shape()[2], cfg.width,
                                     CropProtocol::Center)[0];
        Tensor centered = eval_crop(clip.pixels, cfg, cy.first, cx.first);
        ForwardResult fwd = forward(apply_permutation(centered, order), params, cfg);
        RecoveredOrder rec =
            max_weight_hamiltonian_path(temporal_adjacency(fwd.trace, cfg));
        rows[i] = OrderRecoveryRow{clip.clip_id, order, rec.order, rec.path_weight,
                                   order_accuracy(rec.order, order)};
    });
    return rows;
}

namespace {

[[noreturn]] void abort_non_finite(std::size_t epoch, std::size_t step,
                                   std::uint64_t clip_id, const LossReport& report,
                                   const AttentionTrace& trace,
                                   const std::vector<Tensor>& params) {
    std::ostringstream msg;
    msg << "non-finite loss at epoch " << epoch << " step " << step << " clip " << clip_id
        << ": l_cls=" << report.l_cls << " l_ord=" << report.l_ord
        << " l_self=" << report.l_self;
    double a_min = 1e300, a_max = -1e300;
    for (const auto& layer : trace.temporal)
        for (const auto& head : layer)
            for (const Tensor& a : head)
                for (double v : a.data()) {
                    a_min = std::min(a_min, v);
                    a_max = std::max(a_max, v);
                }
    msg << " temporal_attention=[" << a_min << "," << a_max << "]";
    double gnorm = 0.0;
    for (const Tensor& p : params)
        if (p.has_grad())
            for (double g : p.grad()) gnorm += g * g;
    msg << " grad_norm=" << std::sqrt(gnorm);
    throw std::runtime_error(msg.str());
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Manifest& manifest,
                  const PermutationSet& perms) {
    cfg.model.validate();
    if (cfg.batch == 0 || cfg.epochs == 0)
        throw std::invalid_argument("train: batch and epochs must be positive");
    if (cfg.model.order_classes != perms.perms.size())
        throw std::invalid_argument("train: order head width " +
                                    std::to_string(cfg.model.order_classes) +
                                    " != catalogue size " +
                                    std::to_string(perms.perms.size()));
    if (perms.frames != cfg.model.frames)
        throw std::invalid_argument("train: permutation frames mismatch");

    ModelParameters params = ModelParameters::init(cfg.model, cfg.seed);
    std::vector<Tensor> leaves;
    for (auto& [name, tensor] : params.named()) leaves.push_back(tensor);
    Adam opt(leaves, cfg.optim);

    const std::size_t n_train = manifest.split_indices("train").size();
    if (n_train == 0) throw std::invalid_argument("train: empty train split");
    const bool needs_permuted_pass = cfg.weights.ord != 0.0 || cfg.weights.self != 0.0;

    TrainResult result;
    result.params = clone(params, cfg.model);
    result.best_val.top1 = -1.0;
    std::size_t step = 0;
    const std::clock_t cpu_start = std::clock();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order_of_visit(n_train);
        for (std::size_t i = 0; i < n_train; ++i) order_of_visit[i] = i;
        std::mt19937_64 shuffle_rng(mix(cfg.seed, epoch));
        for (std::size_t i = n_train; i > 1; --i)
            std::swap(order_of_visit[i - 1], order_of_visit[shuffle_rng() % i]);

        for (std::size_t start = 0; start < n_train; start += cfg.batch) {
            const std::size_t bsz = std::min(cfg.batch, n_train - start);
            const auto t0 = std::chrono::steady_clock::now();
            opt.zero_grad();
            MetricsRow row{++step, 0.0, 0.0, 0.0, 0.0, cfg.optim.lr, 0.0};
            for (std::size_t b = 0; b < bsz; ++b) {
                VideoClip clip =
                    load_batch(manifest, "train", {order_of_visit[start + b]})[0];
                const auto cy = crop_offsets(clip.pixels.shape()[1], cfg.model.height,
                                             CropProtocol::Center)[0];
                const auto cx = crop_offsets(clip.pixels.shape()[2], cfg.model.width,
                                             CropProtocol::Center)[0];
                Tensor view = eval_crop(clip.pixels, cfg.model, cy.first, cx.first);

                ForwardResult clean = forward(view, params, cfg.model);
                LossReport report;
                if (needs_permuted_pass) {
                    const std::size_t idx = static_cast<std::size_t>(
                        mix(cfg.seed, epoch, clip.clip_id) % perms.perms.size());
                    const Permutation& order = perms.perms[idx];
                    ForwardResult shuffled =
                        forward(apply_permutation(view, order), params, cfg.model);
                    report = total_loss(clean.cls_logits, clip.label, shuffled.ord_logits,
                                        idx, shuffled.trace, order, cfg.model, cfg.weights);
                    if (!std::isfinite(report.total))
                        abort_non_finite(epoch, step, clip.clip_id, report, shuffled.trace,
                                         leaves);
                } else {
                    Tensor l_cls = cross_entropy(clean.cls_logits, clip.label);
                    report.l_cls = l_cls.item();
                    report.total_tensor = scale(l_cls, cfg.weights.cls);
                    report.total = report.total_tensor.item();
                    if (!std::isfinite(report.total))
                        abort_non_finite(epoch, step, clip.clip_id, report, clean.trace,
                                         leaves);
                }
                backward(scale(report.total_tensor, 1.0 / static_cast<double>(bsz)));
                row.l_cls += report.l_cls / bsz;
                row.l_ord += report.l_ord / bsz;
                row.l_self += report.l_self / bsz;
                row.total += report.total / bsz;
            }
            opt.step();
            row.wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
            result.metrics.push_back(row);
        }

        EvalReport val = evaluate(params, cfg.model, manifest, "val", cfg.protocol, perms);
        if (val.top1 > result.best_val.top1) {
            result.best_val = val;
            result.best_epoch = epoch;
            result.params = clone(params, cfg.model);
        }
    }
    result.train_cpu_seconds =
        static_cast<double>(std::clock() - cpu_start) / CLOCKS_PER_SEC;

    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        std::ofstream csv(cfg.out_dir + "/metrics.csv");
        if (!csv) throw IoError("cannot write metrics to " + cfg.out_dir);
        csv << metrics_csv(result.metrics);
        save_model_checkpoint(cfg.out_dir + "/checkpoint.dfcp", result.params, cfg.model);
    }
    return result;
}

void save_model_checkpoint(const std::string& path, const ModelParameters& params,
                           const ModelConfig& cfg) {
    Checkpoint ckpt;
    ckpt.config_text = cfg.to_text();
    ckpt.tensors = params.named();
    save_checkpoint(path, ckpt);
}

LoadedModel load_model_checkpoint(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    LoadedModel out;
    out.cfg = ModelConfig::from_text(ckpt.config_text);
    out.params = ModelParameters::init(out.cfg, 0);
    out.params.load_named(ckpt.tensors);
    return out;
}

std::vector<AblationRow> ablation_grid(const TrainConfig& base, const Manifest& manifest,
                                       const PermutationSet& perms) {
    std::vector<AblationRow> rows;
    for (auto time_mode : {AttentionMode::Softmax, AttentionMode::Cosine}) {
        for (auto space_mode : {AttentionMode::Softmax, AttentionMode::Cosine}) {
            TrainConfig cell = base;
            cell.model.time_mode = time_mode;
            cell.model.space_mode = space_mode;
            cell.out_dir.clear();
            TrainResult trained = train(cell, manifest, perms);
            EvalReport test = evaluate(trained.params, cell.model, manifest, "test",
                                       cell.protocol, perms);
            rows.push_back(AblationRow{cell.model.mode_cell(), cell.weights, test});
        }
    }
    return rows;
}

}  // namespace df
