#include "direcformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace df {

namespace {

thread_local Precision g_precision = Precision::f64;
thread_local bool g_grad_enabled = true;

void maybe_round(std::vector<double>& v) {
    if (g_precision == Precision::f32) {
        for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    }
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

// C[m x n] += or = A[m x k] * B[k x n]
void mm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
        std::size_t n, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] (+)= A[m x k] * B[n x k]^T
void mm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] = accumulate ? crow[j] + s : s;
        }
    }
}

// C[k x n] (+)= A[m x k]^T * B[m x n]
void mm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate) {
    if (!accumulate) std::fill(c, c + k * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void require_rank2(const char* op, const Tensor& t) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected rank-2 tensor, got shape " +
                         shape_str(t.shape()));
    }
}

}  // namespace

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }
bool grad_enabled() { return g_grad_enabled; }

std::vector<double>& TensorNode::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "{";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "}";
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("from_data: shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " elements");
    }
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    maybe_round(n->data);
    n->requires_grad = requires_grad;
    return Tensor::wrap(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({}, {value}, requires_grad);
}

std::size_t Tensor::rows() const {
    require_rank2("rows", *this);
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    require_rank2("cols", *this);
    return node_->shape[1];
}

double Tensor::operator()(std::size_t i, std::size_t j) const {
    return node_->data[i * node_->shape[1] + j];
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item: tensor has " + std::to_string(size()) + " elements");
    return node_->data[0];
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty()) throw std::logic_error("grad: no gradient has been computed");
    return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor make_op(std::vector<std::size_t> shape, std::vector<double> data,
               std::vector<Tensor> inputs, std::function<void(TensorNode&)> backward_fn) {
    maybe_round(data);
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    bool needs = false;
    if (g_grad_enabled) {
        for (const Tensor& t : inputs) needs = needs || t.requires_grad();
    }
    if (needs) {
        n->requires_grad = true;
        n->parents.reserve(inputs.size());
        for (const Tensor& t : inputs) n->parents.push_back(t.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor::wrap(std::move(n));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2("matmul", a);
    require_rank2("matmul", b);
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner extents disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n);
    mm(a.data().data(), b.data().data(), out.data(), m, k, n, false);
    auto an = a.node(), bn = b.node();
    return make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](TensorNode& self) {
        if (an->requires_grad)
            mm_nt(self.grad.data(), bn->data.data(), an->grad_buffer().data(), m, n, k, true);
        if (bn->requires_grad)
            mm_tn(an->data.data(), self.grad.data(), bn->grad_buffer().data(), m, k, n, true);
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank2("matmul_nt", a);
    require_rank2("matmul_nt", b);
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: inner extents disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<double> out(m * n);
    mm_nt(a.data().data(), b.data().data(), out.data(), m, k, n, false);
    auto an = a.node(), bn = b.node();
    return make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](TensorNode& self) {
        // C = A B^T  =>  dA = dC B, dB = dC^T A
        if (an->requires_grad)
            mm(self.grad.data(), bn->data.data(), an->grad_buffer().data(), m, n, k, true);
        if (bn->requires_grad)
            mm_tn(self.grad.data(), an->data.data(), bn->grad_buffer().data(), m, n, k, true);
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
        if (an->requires_grad) {
            auto& g = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
        if (an->requires_grad) {
            auto& g = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
        if (an->requires_grad) {
            auto& g = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * c;
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {a}, [an, c](TensorNode& self) {
        if (!an->requires_grad) return;
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
    });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    require_rank2("add_rowvec", a);
    if (v.size() != a.cols()) {
        throw ShapeError("add_rowvec: vector length mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(v.shape()));
    }
    std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    const auto& vd = v.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = ad[i * n + j] + vd[j];
    auto an = a.node(), vn = v.node();
    return make_op(a.shape(), std::move(out), {a, v}, [an, vn, m, n](TensorNode& self) {
        if (an->requires_grad) {
            auto& g = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (vn->requires_grad) {
            auto& g = vn->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
        }
    });
}

Tensor gelu(const Tensor& x) {
    static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);
    std::vector<double> out(x.size());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = 0.5 * xd[i] * (1.0 + std::erf(xd[i] * inv_sqrt2));
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {x}, [xn](TensorNode& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xn->data[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            g[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
    std::size_t d = x.shape().back();
    if (gain.size() != d || bias.size() != d) {
        throw ShapeError("layer_norm: gain/bias length mismatch: last extent " +
                         std::to_string(d) + " vs " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()));
    }
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    std::size_t m = x.size() / d;
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(m);
    const auto& xd = x.data();
    const auto& gd = gain.data();
    const auto& bd = bias.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = xd.data() + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (row[j] - mean) * is;
            xhat[i * d + j] = h;
            out[i * d + j] = h * gd[j] + bd[j];
        }
    }
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    return make_op(x.shape(), std::move(out), {x, gain, bias},
                   [xn, gn, bn, m, d, xhat = std::move(xhat),
                    inv_std = std::move(inv_std)](TensorNode& self) {
        if (gn->requires_grad) {
            auto& g = gn->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    g[j] += self.grad[i * d + j] * xhat[i * d + j];
        }
        if (bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
        }
        if (xn->requires_grad) {
            auto& g = xn->grad_buffer();
            const double dn = static_cast<double>(d);
            for (std::size_t i = 0; i < m; ++i) {
                // dy-through-gain, its mean, and its xhat-weighted mean per row
                double mean_t = 0.0, mean_th = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double t = self.grad[i * d + j] * gn->data[j];
                    mean_t += t;
                    mean_th += t * xhat[i * d + j];
                }
                mean_t /= dn;
                mean_th /= dn;
                for (std::size_t j = 0; j < d; ++j) {
                    const double t = self.grad[i * d + j] * gn->data[j];
                    g[i * d + j] += inv_std[i] * (t - mean_t - xhat[i * d + j] * mean_th);
                }
            }
        }
    });
}

Tensor cosine_rows(const Tensor& q, const Tensor& k, double eps) {
    require_rank2("cosine_rows", q);
    require_rank2("cosine_rows", k);
    if (q.cols() != k.cols()) {
        throw ShapeError("cosine_rows: feature extents disagree: " + shape_str(q.shape()) +
                         " vs " + shape_str(k.shape()));
    }
    if (eps <= 0.0) throw std::invalid_argument("cosine_rows: eps must be positive");
    std::size_t m = q.rows(), n = k.rows(), d = q.cols();
    const auto& qd = q.data();
    const auto& kd = k.data();
    std::vector<double> qn(m), kn(n);  // clamped row norms
    std::vector<bool> q_clamped(m), k_clamped(n);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += qd[i * d + j] * qd[i * d + j];
        double nr = std::sqrt(s);
        q_clamped[i] = nr < eps;
        qn[i] = std::max(nr, eps);
    }
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += kd[i * d + j] * kd[i * d + j];
        double nr = std::sqrt(s);
        k_clamped[i] = nr < eps;
        kn[i] = std::max(nr, eps);
    }
    std::vector<double> out(m * n);
    mm_nt(qd.data(), kd.data(), out.data(), m, d, n, false);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= qn[i] * kn[j];
    auto qnode = q.node(), knode = k.node();
    return make_op({m, n}, std::move(out), {q, k},
                   [qnode, knode, m, n, d, qn = std::move(qn), kn = std::move(kn),
                    q_clamped = std::move(q_clamped),
                    k_clamped = std::move(k_clamped)](TensorNode& self) {
        // c_ij = <q_i,k_j> / (Q_i K_j);  dq_i = sum_j g_ij (k_j/(Q_i K_j) - c_ij q_i/Q_i^2)
        // the norm term drops where the eps clamp is active
        if (qnode->requires_grad) {
            auto& g = qnode->grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                double coef = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double gij = self.grad[i * n + j];
                    if (gij == 0.0) continue;
                    const double inv = 1.0 / (qn[i] * kn[j]);
                    for (std::size_t p = 0; p < d; ++p)
                        g[i * d + p] += gij * knode->data[j * d + p] * inv;
                    coef += gij * self.data[i * n + j];
                }
                if (!q_clamped[i] && coef != 0.0) {
                    const double c = coef / (qn[i] * qn[i]);
                    for (std::size_t p = 0; p < d; ++p) g[i * d + p] -= c * qnode->data[i * d + p];
                }
            }
        }
        if (knode->requires_grad) {
            auto& g = knode->grad_buffer();
            for (std::size_t j = 0; j < n; ++j) {
                double coef = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double gij = self.grad[i * n + j];
                    if (gij == 0.0) continue;
                    const double inv = 1.0 / (qn[i] * kn[j]);
                    for (std::size_t p = 0; p < d; ++p)
                        g[j * d + p] += gij * qnode->data[i * d + p] * inv;
                    coef += gij * self.data[i * n + j];
                }
                if (!k_clamped[j] && coef != 0.0) {
                    const double c = coef / (kn[j] * kn[j]);
                    for (std::size_t p = 0; p < d; ++p) g[j * d + p] -= c * knode->data[j * d + p];
                }
            }
        }
    });
}

Tensor softmax_rows(const Tensor& x) {
    require_rank2("softmax_rows", x);
    std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(x.size());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = xd.data() + i * n;
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = std::exp(row[j] - mx);
            s += out[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= s;
    }
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {x}, [xn, m, n](TensorNode& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.data[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                g[i * n + j] += self.data[i * n + j] * (self.grad[i * n + j] - dot);
        }
    });
}

Tensor log_softmax_rows(const Tensor& x) {
    require_rank2("log_softmax_rows", x);
    std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(x.size());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = xd.data() + i * n;
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
    }
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {x}, [xn, m, n](TensorNode& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
            double gsum = 0.0;
            for (std::size_t j = 0; j < n; ++j) gsum += self.grad[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                g[i * n + j] += self.grad[i * n + j] - std::exp(self.data[i * n + j]) * gsum;
        }
    });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    auto xn = x.node();
    return make_op({}, {s}, {x}, [xn](TensorNode& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        const double gv = self.grad[0];
        for (double& v : g) v += gv;
    });
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
    if (shape_numel(shape) != x.size()) {
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) +
                         " changes element count");
    }
    auto xn = x.node();
    return make_op(std::move(shape), x.data(), {x}, [xn](TensorNode& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
    require_rank2("slice_cols", x);
    std::size_t m = x.rows(), n = x.cols();
    if (start + count > n) {
        throw ShapeError("slice_cols: range [" + std::to_string(start) + "," +
                         std::to_string(start + count) + ") out of " + shape_str(x.shape()));
    }
    std::vector<double> out(m * count);
    const auto& xd = x.data();
    for (std::size_t i = 0; i < m; ++i)
        std::copy(xd.begin() + i * n + start, xd.begin() + i * n + start + count,
                  out.begin() + i * count);
    auto xn = x.node();
    return make_op({m, count}, std::move(out), {x}, [xn, m, n, start, count](TensorNode& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < count; ++j)
                g[i * n + start + j] += self.grad[i * count + j];
    });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices) {
    require_rank2("gather_rows", x);
    std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(indices.size() * n);
    const auto& xd = x.data();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= m)
            throw ShapeError("gather_rows: index " + std::to_string(indices[i]) +
                             " out of " + shape_str(x.shape()));
        std::copy(xd.begin() + indices[i] * n, xd.begin() + (indices[i] + 1) * n,
                  out.begin() + i * n);
    }
    auto xn = x.node();
    return make_op({indices.size(), n}, std::move(out), {x},
                   [xn, n, indices](TensorNode& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < indices.size(); ++i)
            for (std::size_t j = 0; j < n; ++j)
                g[indices[i] * n + j] += self.grad[i * n + j];
    });
}

Tensor scatter_rows(const Tensor& rows, const std::vector<std::size_t>& indices,
                    std::size_t total_rows) {
    require_rank2("scatter_rows", rows);
    if (indices.size() != rows.rows()) {
        throw ShapeError("scatter_rows: " + std::to_string(indices.size()) + " indices vs " +
                         shape_str(rows.shape()));
    }
    std::size_t n = rows.cols();
    std::vector<double> out(total_rows * n, 0.0);
    const auto& rd = rows.data();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= total_rows)
            throw ShapeError("scatter_rows: index " + std::to_string(indices[i]) +
                             " out of " + std::to_string(total_rows) + " rows");
        for (std::size_t j = 0; j < n; ++j) out[indices[i] * n + j] += rd[i * n + j];
    }
    auto rn = rows.node();
    return make_op({total_rows, n}, std::move(out), {rows},
                   [rn, n, indices](TensorNode& self) {
        if (!rn->requires_grad) return;
        auto& g = rn->grad_buffer();
        for (std::size_t i = 0; i < indices.size(); ++i)
            for (std::size_t j = 0; j < n; ++j)
                g[i * n + j] += self.grad[indices[i] * n + j];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    std::size_t n = parts[0].cols();
    std::size_t m = 0;
    for (const Tensor& p : parts) {
        require_rank2("concat_rows", p);
        if (p.cols() != n)
            throw ShapeError("concat_rows: column mismatch: " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<std::shared_ptr<TensorNode>> nodes;
    nodes.reserve(parts.size());
    for (const Tensor& p : parts) nodes.push_back(p.node());
    return make_op({m, n}, std::move(out), parts, [nodes](TensorNode& self) {
        std::size_t off = 0;
        for (const auto& p : nodes) {
            if (p->requires_grad) {
                auto& g = p->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[off + i];
            }
            off += p->data.size();
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    std::size_t m = parts[0].rows();
    std::size_t n = 0;
    for (const Tensor& p : parts) {
        require_rank2("concat_cols", p);
        if (p.rows() != m)
            throw ShapeError("concat_cols: row mismatch: " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
        n += p.cols();
    }
    std::vector<double> out(m * n);
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        std::size_t pc = p.cols();
        const auto& pd = p.data();
        for (std::size_t i = 0; i < m; ++i)
            std::copy(pd.begin() + i * pc, pd.begin() + (i + 1) * pc,
                      out.begin() + i * n + off);
        off += pc;
    }
    std::vector<std::shared_ptr<TensorNode>> nodes;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.cols());
    }
    return make_op({m, n}, std::move(out), parts, [nodes, widths, m, n](TensorNode& self) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
            const std::size_t pc = widths[pi];
            if (nodes[pi]->requires_grad) {
                auto& g = nodes[pi]->grad_buffer();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < pc; ++j)
                        g[i * pc + j] += self.grad[i * n + off + j];
            }
            off += pc;
        }
    });
}

void backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw std::invalid_argument("backward: loss must be a scalar tensor");
    if (!loss.requires_grad())
        throw std::logic_error("backward: tensor is detached from any tape");
    // iterative post-order DFS for the reverse topological order
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->parents.size()) {
            TensorNode* p = node->parents[child++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                         double h, std::size_t max_coords, std::uint64_t seed) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be positive");
    Tensor leaf = Tensor::from_data(point.shape(), point.data(), true);
    Tensor loss = f(leaf);
    backward(loss);
    const std::vector<double> analytic = leaf.grad();

    std::vector<std::size_t> coords(point.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords > 0 && max_coords < coords.size()) {
        // seeded Fisher-Yates prefix selection
        std::uint64_t s = seed ? seed : 0x9e3779b97f4a7c15ULL;
        auto next = [&s]() {
            s += 0x9e3779b97f4a7c15ULL;
            std::uint64_t z = s;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            return z ^ (z >> 31);
        };
        for (std::size_t i = 0; i < max_coords; ++i) {
            std::size_t j = i + static_cast<std::size_t>(next() % (coords.size() - i));
            std::swap(coords[i], coords[j]);
        }
        coords.resize(max_coords);
    }

    double worst = 0.0;
    NoGradGuard ng;
    std::vector<double> base = point.data();
    for (std::size_t c : coords) {
        std::vector<double> d = base;
        d[c] = base[c] + h;
        double fp = f(Tensor::from_data(point.shape(), d)).item();
        d[c] = base[c] - h;
        double fm = f(Tensor::from_data(point.shape(), d)).item();
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[c]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[c] - numeric) / denom);
    }
    return worst;
}

}  // namespace df
