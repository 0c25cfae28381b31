// Dense tensor arithmetic with reverse-mode automatic differentiation.
//
// Tensors are immutable after construction except for their grad buffers.
// Every differentiable op records a backward closure on the implicit tape
// (the parent graph); backward() runs one reverse topological sweep and
// accumulates gradients by summation into every requires_grad leaf.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace df {

// Numeric precision of all newly produced values. f32 rounds every result
// through IEEE single precision; storage stays double either way.
enum class Precision { f64, f32 };
void set_precision(Precision p);
Precision precision();

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backward touches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::size_t size() const { return data.size(); }
    std::vector<double>& grad_buffer();
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t size() const { return node_->data.size(); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    const std::vector<double>& data() const { return node_->data; }
    // Direct value access for parameter updates; bypasses the tape.
    std::vector<double>& mutable_data() { return node_->data; }
    double operator()(std::size_t i, std::size_t j) const;
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad();

    std::shared_ptr<TensorNode> node() const { return node_; }
    static Tensor wrap(std::shared_ptr<TensorNode> n) { return Tensor(std::move(n)); }

private:
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
    std::shared_ptr<TensorNode> node_;
};

// Scoped guard disabling tape recording (evaluation mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};
bool grad_enabled();

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string shape_str(const std::vector<std::size_t>& shape);

// ---- differentiable operations ----

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T; the backward-friendly sibling of matmul.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// Broadcast-add a length-cols row vector to every row of a rank-2 tensor.
Tensor add_rowvec(const Tensor& a, const Tensor& v);

Tensor gelu(const Tensor& x);  // exact erf form

// Per-last-axis standardization followed by affine gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Entry (i,j) = <q_i,k_j> / (max(|q_i|,eps) * max(|k_j|,eps)); values in [-1,1].
Tensor cosine_rows(const Tensor& q, const Tensor& k, double eps);

Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

Tensor sum(const Tensor& x);  // scalar result

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices);
// Rows placed at the given indices of a zero tensor with total_rows rows.
Tensor scatter_rows(const Tensor& rows, const std::vector<std::size_t>& indices,
                    std::size_t total_rows);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Reverse sweep from a scalar loss; accumulates into requires_grad leaves.
void backward(const Tensor& loss);

// Central-difference gradient verification. Returns the worst relative error
// over the checked coordinates, with denominator max(|analytic|,|numeric|,1e-8).
// max_coords == 0 checks every coordinate; otherwise a seeded random subset.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                         double h, std::size_t max_coords = 0, std::uint64_t seed = 0);

// Building block for custom differentiable ops outside this translation unit.
Tensor make_op(std::vector<std::size_t> shape, std::vector<double> data,
               std::vector<Tensor> inputs, std::function<void(TensorNode&)> backward_fn);

}  // namespace df
