#include "chaosib/autodiff.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace chaosib::ad {

Tensor::Tensor(std::size_t r, std::size_t c, std::vector<double> data)
    : rows(r), cols(c), v(std::move(data)) {
    if (v.size() != r * c) {
        throw std::invalid_argument("Tensor: data size does not match shape");
    }
}

Tensor Tensor::scalar(double x) { return Tensor(1, 1, {x}); }

Tensor Tensor::row(std::vector<double> data) {
    const std::size_t n = data.size();
    return Tensor(1, n, std::move(data));
}

std::string Tensor::shape_str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                beta, c, static_cast<int>(ldc));
}

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_str()
                                + " and " + b.shape_str());
}

}  // namespace

Graph::Ref Graph::emplace(Tensor value, bool requires_grad,
                          std::function<void(Graph&)> backprop) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return static_cast<Ref>(nodes_.size() - 1);
}

Tensor& Graph::grad_buf(Ref r) {
    Node& n = node(r);
    if (n.grad.size() == 0) n.grad = Tensor(n.value.rows, n.value.cols);
    return n.grad;
}

const Tensor& Graph::grad(Ref r) const {
    const Node& n = nodes_[static_cast<std::size_t>(r)];
    if (n.grad.size() == 0) {
        throw std::logic_error("Graph::grad: no gradient recorded for this node");
    }
    return n.grad;
}

Graph::Ref Graph::input(Tensor t, bool requires_grad) {
    return emplace(std::move(t), requires_grad, nullptr);
}

Graph::Ref Graph::matmul(Ref a, Ref b, bool trans_a, bool trans_b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    const std::size_t am = trans_a ? A.cols : A.rows;
    const std::size_t ak = trans_a ? A.rows : A.cols;
    const std::size_t bk = trans_b ? B.cols : B.rows;
    const std::size_t bn = trans_b ? B.rows : B.cols;
    if (ak != bk) shape_error("matmul", A, B);

    Tensor out(am, bn);
    gemm(trans_a, trans_b, am, bn, ak, 1.0, A.v.data(), A.cols, B.v.data(), B.cols, 0.0,
         out.v.data(), out.cols);

    const bool rg = requires_grad(a) || requires_grad(b);
    return emplace(std::move(out), rg, [a, b, trans_a, trans_b](Graph& g) {
        const Tensor& A = g.value(a);
        const Tensor& B = g.value(b);
        const Tensor& dC = g.node_grad_();
        if (g.requires_grad(a)) {
            Tensor& dA = g.grad_buf(a);
            if (!trans_a && !trans_b) {
                gemm(false, true, A.rows, A.cols, dC.cols, 1.0, dC.v.data(), dC.cols,
                     B.v.data(), B.cols, 1.0, dA.v.data(), dA.cols);
            } else if (!trans_a && trans_b) {
                gemm(false, false, A.rows, A.cols, dC.cols, 1.0, dC.v.data(), dC.cols,
                     B.v.data(), B.cols, 1.0, dA.v.data(), dA.cols);
            } else if (trans_a && !trans_b) {
                gemm(false, true, A.rows, A.cols, dC.rows, 1.0, B.v.data(), B.cols,
                     dC.v.data(), dC.cols, 1.0, dA.v.data(), dA.cols);
            } else {
                gemm(true, true, A.rows, A.cols, dC.rows, 1.0, B.v.data(), B.cols,
                     dC.v.data(), dC.cols, 1.0, dA.v.data(), dA.cols);
            }
        }
        if (g.requires_grad(b)) {
            Tensor& dB = g.grad_buf(b);
            if (!trans_a && !trans_b) {
                gemm(true, false, B.rows, B.cols, dC.rows, 1.0, A.v.data(), A.cols,
                     dC.v.data(), dC.cols, 1.0, dB.v.data(), dB.cols);
            } else if (!trans_a && trans_b) {
                gemm(true, false, B.rows, B.cols, dC.rows, 1.0, dC.v.data(), dC.cols,
                     A.v.data(), A.cols, 1.0, dB.v.data(), dB.cols);
            } else if (trans_a && !trans_b) {
                gemm(false, false, B.rows, B.cols, A.rows, 1.0, A.v.data(), A.cols,
                     dC.v.data(), dC.cols, 1.0, dB.v.data(), dB.cols);
            } else {
                gemm(true, true, B.rows, B.cols, dC.cols, 1.0, dC.v.data(), dC.cols,
                     A.v.data(), A.cols, 1.0, dB.v.data(), dB.cols);
            }
        }
    });
}

// The closure-facing gradient of the node currently being back-propagated.
// Set by backward() before invoking each closure.
const Tensor& Graph::node_grad_() const { return nodes_[static_cast<std::size_t>(current_)].grad; }

Graph::Ref Graph::add_bias(Ref x, Ref bias) {
    const Tensor& X = value(x);
    const Tensor& B = value(bias);
    if (B.rows != 1 || B.cols != X.cols) shape_error("add_bias", X, B);
    Tensor out = X;
    for (std::size_t i = 0; i < X.rows; ++i) {
        for (std::size_t j = 0; j < X.cols; ++j) out.at(i, j) += B.at(0, j);
    }
    const bool rg = requires_grad(x) || requires_grad(bias);
    return emplace(std::move(out), rg, [x, bias](Graph& g) {
        const Tensor& dC = g.node_grad_();
        if (g.requires_grad(x)) {
            Tensor& dX = g.grad_buf(x);
            for (std::size_t i = 0; i < dC.size(); ++i) dX.v[i] += dC.v[i];
        }
        if (g.requires_grad(bias)) {
            Tensor& dB = g.grad_buf(bias);
            for (std::size_t i = 0; i < dC.rows; ++i) {
                for (std::size_t j = 0; j < dC.cols; ++j) dB.at(0, j) += dC.at(i, j);
            }
        }
    });
}

Graph::Ref Graph::add(Ref a, Ref b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) shape_error("add", A, B);
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += B.v[i];
    const bool rg = requires_grad(a) || requires_grad(b);
    return emplace(std::move(out), rg, [a, b](Graph& g) {
        const Tensor& dC = g.node_grad_();
        if (g.requires_grad(a)) {
            Tensor& dA = g.grad_buf(a);
            for (std::size_t i = 0; i < dC.size(); ++i) dA.v[i] += dC.v[i];
        }
        if (g.requires_grad(b)) {
            Tensor& dB = g.grad_buf(b);
            for (std::size_t i = 0; i < dC.size(); ++i) dB.v[i] += dC.v[i];
        }
    });
}

Graph::Ref Graph::sub(Ref a, Ref b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) shape_error("sub", A, B);
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] -= B.v[i];
    const bool rg = requires_grad(a) || requires_grad(b);
    return emplace(std::move(out), rg, [a, b](Graph& g) {
        const Tensor& dC = g.node_grad_();
        if (g.requires_grad(a)) {
            Tensor& dA = g.grad_buf(a);
            for (std::size_t i = 0; i < dC.size(); ++i) dA.v[i] += dC.v[i];
        }
        if (g.requires_grad(b)) {
            Tensor& dB = g.grad_buf(b);
            for (std::size_t i = 0; i < dC.size(); ++i) dB.v[i] -= dC.v[i];
        }
    });
}

Graph::Ref Graph::scale(Ref x, double c) {
    Tensor out = value(x);
    for (auto& e : out.v) e *= c;
    return emplace(std::move(out), requires_grad(x), [x, c](Graph& g) {
        if (!g.requires_grad(x)) return;
        const Tensor& dC = g.node_grad_();
        Tensor& dX = g.grad_buf(x);
        for (std::size_t i = 0; i < dC.size(); ++i) dX.v[i] += c * dC.v[i];
    });
}

Graph::Ref Graph::add_scalar(Ref x, double c) {
    Tensor out = value(x);
    for (auto& e : out.v) e += c;
    return emplace(std::move(out), requires_grad(x), [x](Graph& g) {
        if (!g.requires_grad(x)) return;
        const Tensor& dC = g.node_grad_();
        Tensor& dX = g.grad_buf(x);
        for (std::size_t i = 0; i < dC.size(); ++i) dX.v[i] += dC.v[i];
    });
}

Graph::Ref Graph::leaky_relu(Ref x, double alpha) {
    const Tensor& X = value(x);
    Tensor out = X;
    for (auto& e : out.v) {
        if (e < 0.0) e *= alpha;
    }
    return emplace(std::move(out), requires_grad(x), [x, alpha](Graph& g) {
        if (!g.requires_grad(x)) return;
        const Tensor& X = g.value(x);
        const Tensor& dC = g.node_grad_();
        Tensor& dX = g.grad_buf(x);
        for (std::size_t i = 0; i < dC.size(); ++i) {
            dX.v[i] += dC.v[i] * (X.v[i] > 0.0 ? 1.0 : alpha);
        }
    });
}

Graph::Ref Graph::exp(Ref x) {
    Tensor out = value(x);
    for (auto& e : out.v) e = std::exp(e);
    Ref r = emplace(std::move(out), requires_grad(x), nullptr);
    node(r).backprop = [x, r](Graph& g) {
        if (!g.requires_grad(x)) return;
        const Tensor& Y = g.value(r);
        const Tensor& dC = g.node_grad_();
        Tensor& dX = g.grad_buf(x);
        for (std::size_t i = 0; i < dC.size(); ++i) dX.v[i] += dC.v[i] * Y.v[i];
    };
    return r;
}

Graph::Ref Graph::log(Ref x) {
    Tensor out = value(x);
    for (auto& e : out.v) e = std::log(e);
    return emplace(std::move(out), requires_grad(x), [x](Graph& g) {
        if (!g.requires_grad(x)) return;
        const Tensor& X = g.value(x);
        const Tensor& dC = g.node_grad_();
        Tensor& dX = g.grad_buf(x);
        for (std::size_t i = 0; i < dC.size(); ++i) dX.v[i] += dC.v[i] / X.v[i];
    });
}

Graph::Ref Graph::square(Ref x) {
    const Tensor& X = value(x);
    Tensor out = X;
    for (auto& e : out.v) e *= e;
    return emplace(std::move(out), requires_grad(x), [x](Graph& g) {
        if (!g.requires_grad(x)) return;
        const Tensor& X = g.value(x);
        const Tensor& dC = g.node_grad_();
        Tensor& dX = g.grad_buf(x);
        for (std::size_t i = 0; i < dC.size(); ++i) dX.v[i] += 2.0 * dC.v[i] * X.v[i];
    });
}

Graph::Ref Graph::concat_cols(const std::vector<Ref>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: empty input list");
    const std::size_t rows = value(xs[0]).rows;
    std::size_t cols = 0;
    bool rg = false;
    for (Ref r : xs) {
        const Tensor& t = value(r);
        if (t.rows != rows) shape_error("concat_cols", value(xs[0]), t);
        cols += t.cols;
        rg = rg || requires_grad(r);
    }
    Tensor out(rows, cols);
    std::size_t off = 0;
    for (Ref r : xs) {
        const Tensor& t = value(r);
        for (std::size_t i = 0; i < rows; ++i) {
            std::copy(t.v.begin() + static_cast<std::ptrdiff_t>(i * t.cols),
                      t.v.begin() + static_cast<std::ptrdiff_t>((i + 1) * t.cols),
                      out.v.begin() + static_cast<std::ptrdiff_t>(i * cols + off));
        }
        off += t.cols;
    }
    return emplace(std::move(out), rg, [xs](Graph& g) {
        const Tensor& dC = g.node_grad_();
        std::size_t off = 0;
        for (Ref r : xs) {
            const Tensor& t = g.value(r);
            if (g.requires_grad(r)) {
                Tensor& dX = g.grad_buf(r);
                for (std::size_t i = 0; i < t.rows; ++i) {
                    for (std::size_t j = 0; j < t.cols; ++j) {
                        dX.at(i, j) += dC.at(i, off + j);
                    }
                }
            }
            off += t.cols;
        }
    });
}

Graph::Ref Graph::slice_cols(Ref x, std::size_t start, std::size_t len) {
    const Tensor& X = value(x);
    if (start + len > X.cols) {
        throw std::invalid_argument("slice_cols: range [" + std::to_string(start) + ", "
                                    + std::to_string(start + len) + ") exceeds "
                                    + X.shape_str());
    }
    Tensor out(X.rows, len);
    for (std::size_t i = 0; i < X.rows; ++i) {
        for (std::size_t j = 0; j < len; ++j) out.at(i, j) = X.at(i, start + j);
    }
    return emplace(std::move(out), requires_grad(x), [x, start, len](Graph& g) {
        if (!g.requires_grad(x)) return;
        const Tensor& dC = g.node_grad_();
        Tensor& dX = g.grad_buf(x);
        for (std::size_t i = 0; i < dC.rows; ++i) {
            for (std::size_t j = 0; j < len; ++j) dX.at(i, start + j) += dC.at(i, j);
        }
    });
}

Graph::Ref Graph::row_sum(Ref x) {
    const Tensor& X = value(x);
    Tensor out(X.rows, 1);
    for (std::size_t i = 0; i < X.rows; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < X.cols; ++j) acc += X.at(i, j);
        out.at(i, 0) = acc;
    }
    return emplace(std::move(out), requires_grad(x), [x](Graph& g) {
        if (!g.requires_grad(x)) return;
        const Tensor& dC = g.node_grad_();
        Tensor& dX = g.grad_buf(x);
        for (std::size_t i = 0; i < dX.rows; ++i) {
            for (std::size_t j = 0; j < dX.cols; ++j) dX.at(i, j) += dC.at(i, 0);
        }
    });
}

Graph::Ref Graph::sum(Ref x) {
    const Tensor& X = value(x);
    double acc = 0.0;
    for (double e : X.v) acc += e;
    return emplace(Tensor::scalar(acc), requires_grad(x), [x](Graph& g) {
        if (!g.requires_grad(x)) return;
        const double d = g.node_grad_().v[0];
        Tensor& dX = g.grad_buf(x);
        for (auto& e : dX.v) e += d;
    });
}

Graph::Ref Graph::mean(Ref x) {
    const Tensor& X = value(x);
    if (X.size() == 0) throw std::invalid_argument("mean: empty tensor");
    double acc = 0.0;
    for (double e : X.v) acc += e;
    const double inv_n = 1.0 / static_cast<double>(X.size());
    return emplace(Tensor::scalar(acc * inv_n), requires_grad(x), [x, inv_n](Graph& g) {
        if (!g.requires_grad(x)) return;
        const double d = g.node_grad_().v[0] * inv_n;
        Tensor& dX = g.grad_buf(x);
        for (auto& e : dX.v) e += d;
    });
}

Graph::Ref Graph::softmax_cross_entropy_with_logits(Ref logits,
                                                    const std::vector<std::size_t>& labels) {
    const Tensor& L = value(logits);
    if (labels.size() != L.rows) {
        throw std::invalid_argument("softmax_cross_entropy_with_logits: label count "
                                    + std::to_string(labels.size()) + " != rows of "
                                    + L.shape_str());
    }
    Tensor probs(L.rows, L.cols);
    Tensor out(L.rows, 1);
    for (std::size_t i = 0; i < L.rows; ++i) {
        if (labels[i] >= L.cols) {
            throw std::invalid_argument("softmax_cross_entropy_with_logits: label out of range");
        }
        double mx = L.at(i, 0);
        for (std::size_t j = 1; j < L.cols; ++j) mx = std::max(mx, L.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < L.cols; ++j) z += std::exp(L.at(i, j) - mx);
        const double log_z = std::log(z) + mx;
        for (std::size_t j = 0; j < L.cols; ++j) probs.at(i, j) = std::exp(L.at(i, j) - log_z);
        out.at(i, 0) = log_z - L.at(i, labels[i]);
    }
    return emplace(std::move(out), requires_grad(logits),
                   [logits, labels, probs = std::move(probs)](Graph& g) {
                       if (!g.requires_grad(logits)) return;
                       const Tensor& dC = g.node_grad_();
                       Tensor& dL = g.grad_buf(logits);
                       for (std::size_t i = 0; i < dL.rows; ++i) {
                           const double d = dC.at(i, 0);
                           for (std::size_t j = 0; j < dL.cols; ++j) {
                               dL.at(i, j) += d * (probs.at(i, j) - (j == labels[i] ? 1.0 : 0.0));
                           }
                       }
                   });
}

Graph::Ref Graph::pairwise_neg_sqdist(Ref u, Ref v) {
    const Tensor& U = value(u);
    const Tensor& V = value(v);
    if (U.cols != V.cols) shape_error("pairwise_neg_sqdist", U, V);
    const std::size_t n = U.rows, m = V.rows, d = U.cols;

    Tensor out(n, m);
    // s_ij = 2 u_i . v_j - |u_i|^2 - |v_j|^2
    gemm(false, true, n, m, d, 2.0, U.v.data(), d, V.v.data(), d, 0.0, out.v.data(), m);
    std::vector<double> ru(n, 0.0), rv(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) ru[i] += U.at(i, k) * U.at(i, k);
    }
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t k = 0; k < d; ++k) rv[j] += V.at(j, k) * V.at(j, k);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) out.at(i, j) -= ru[i] + rv[j];
    }

    const bool rg = requires_grad(u) || requires_grad(v);
    return emplace(std::move(out), rg, [u, v](Graph& g) {
        const Tensor& U = g.value(u);
        const Tensor& V = g.value(v);
        const Tensor& dS = g.node_grad_();
        const std::size_t n = U.rows, m = V.rows, d = U.cols;
        if (g.requires_grad(u)) {
            Tensor& dU = g.grad_buf(u);
            // dU = 2 (dS V - diag(rowsum dS) U)
            gemm(false, false, n, d, m, 2.0, dS.v.data(), m, V.v.data(), d, 1.0,
                 dU.v.data(), d);
            for (std::size_t i = 0; i < n; ++i) {
                double rs = 0.0;
                for (std::size_t j = 0; j < m; ++j) rs += dS.at(i, j);
                for (std::size_t k = 0; k < d; ++k) dU.at(i, k) -= 2.0 * rs * U.at(i, k);
            }
        }
        if (g.requires_grad(v)) {
            Tensor& dV = g.grad_buf(v);
            // dV = 2 (dS^T U - diag(colsum dS) V)
            gemm(true, false, m, d, n, 2.0, dS.v.data(), m, U.v.data(), d, 1.0,
                 dV.v.data(), d);
            for (std::size_t j = 0; j < m; ++j) {
                double cs = 0.0;
                for (std::size_t i = 0; i < n; ++i) cs += dS.at(i, j);
                for (std::size_t k = 0; k < d; ++k) dV.at(j, k) -= 2.0 * cs * V.at(j, k);
            }
        }
    });
}

Graph::Ref Graph::gaussian_reparameterize(Ref mean, Ref log_var, const Tensor& noise) {
    const Tensor& M = value(mean);
    const Tensor& L = value(log_var);
    if (!M.same_shape(L)) shape_error("gaussian_reparameterize", M, L);
    if (!M.same_shape(noise)) shape_error("gaussian_reparameterize (noise)", M, noise);

    Tensor sigma = L;
    for (auto& e : sigma.v) e = std::exp(0.5 * e);
    Tensor out = M;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += sigma.v[i] * noise.v[i];

    const bool rg = requires_grad(mean) || requires_grad(log_var);
    return emplace(std::move(out), rg,
                   [mean, log_var, sigma = std::move(sigma), noise](Graph& g) {
                       const Tensor& dC = g.node_grad_();
                       if (g.requires_grad(mean)) {
                           Tensor& dM = g.grad_buf(mean);
                           for (std::size_t i = 0; i < dC.size(); ++i) dM.v[i] += dC.v[i];
                       }
                       if (g.requires_grad(log_var)) {
                           Tensor& dL = g.grad_buf(log_var);
                           for (std::size_t i = 0; i < dC.size(); ++i) {
                               dL.v[i] += dC.v[i] * 0.5 * sigma.v[i] * noise.v[i];
                           }
                       }
                   });
}

void Graph::backward(Ref loss) {
    const Tensor& L = value(loss);
    if (L.rows != 1 || L.cols != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " + L.shape_str());
    }
    for (auto& n : nodes_) n.grad = Tensor();
    grad_buf(loss).v[0] = 1.0;

    for (Ref r = loss; r >= 0; --r) {
        Node& n = node(r);
        if (!n.backprop || n.grad.size() == 0 || !n.requires_grad) continue;
        current_ = r;
        n.backprop(*this);
    }
    // Leaves that require grad but were never touched report zeros.
    for (auto& n : nodes_) {
        if (n.requires_grad && n.grad.size() == 0) n.grad = Tensor(n.value.rows, n.value.cols);
    }
}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("Adam::step: params/grads count mismatch");
    }
    if (m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const Tensor* p : params) {
            m_.emplace_back(p->rows, p->cols);
            v_.emplace_back(p->rows, p->cols);
        }
    }
    if (m_.size() != params.size()) {
        throw std::invalid_argument("Adam::step: parameter count changed between steps");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& w = *params[p];
        const Tensor& g = *grads[p];
        if (!w.same_shape(g) || !w.same_shape(m_[p])) {
            throw std::invalid_argument("Adam::step: shape mismatch for parameter "
                                        + std::to_string(p) + ": " + w.shape_str() + " vs "
                                        + g.shape_str());
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            m_[p].v[i] = cfg_.beta1 * m_[p].v[i] + (1.0 - cfg_.beta1) * g.v[i];
            v_[p].v[i] = cfg_.beta2 * v_[p].v[i] + (1.0 - cfg_.beta2) * g.v[i] * g.v[i];
            const double mhat = m_[p].v[i] / bc1;
            const double vhat = v_[p].v[i] / bc2;
            w.v[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace chaosib::ad
