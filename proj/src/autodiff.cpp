#include "cafeme/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cafeme {

const Tensor& Var::value() const {
    if (tape == nullptr) throw std::logic_error("Var is not bound to a tape");
    return tape->value(*this);
}

Var Tape::param(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, true});
    return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
    return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    bool needs = false;
    for (auto id : inputs) needs = needs || nodes_.at(id).needs_grad;
    nodes_.push_back(Node{std::move(value), {}, std::move(inputs), needs ? std::move(backward) : BackwardFn{}, needs});
    return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_ref(std::size_t id) {
    auto& node = nodes_[id];
    if (node.grad.size() != node.value.size() || !node.grad.same_shape(node.value)) {
        node.grad = Tensor(node.value.shape());
    }
    return node.grad;
}

Tensor Tape::grad(Var v) const {
    const auto& node = nodes_.at(v.id);
    if (node.grad.same_shape(node.value) && node.grad.size() == node.value.size()) return node.grad;
    return Tensor(node.value.shape());
}

void Tape::zero_grad() {
    for (auto& node : nodes_) node.grad = Tensor();
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw std::logic_error("backward on a Var from another tape");
    if (nodes_.at(loss.id).value.size() != 1) {
        throw ShapeError("backward needs a scalar loss, got " + shape_str(nodes_[loss.id].value.shape()));
    }
    zero_grad();
    grad_ref(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        auto& node = nodes_[i];
        if (!node.backward || node.grad.size() == 0) continue;
        node.backward(*this, i);
    }
}

namespace {

Tape& same_tape(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) throw std::logic_error("operands live on different tapes");
    return *a.tape;
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
}

// True when b is broadcast over the rows of a.
bool row_broadcast(const Tensor& a, const Tensor& b, const char* op) {
    if (a.same_shape(b)) return false;
    const bool row_like = b.rank() == 1 || (b.rank() == 2 && b.shape()[0] == 1);
    if (a.rank() == 2 && row_like && b.size() == a.cols()) return true;
    throw ShapeError(std::string(op) + " shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

double stable_sigmoid(double x) {
    double s;
    if (x >= 0.0) {
        s = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        s = e / (1.0 + e);
    }
    // Keep the open interval (0, 1) representable at saturation.
    static const double upper = std::nextafter(1.0, 0.0);
    return std::clamp(s, std::numeric_limits<double>::min(), upper);
}

Var matmul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_matrix(A, "matmul");
    require_matrix(B, "matmul");
    const std::size_t m = A.shape()[0], k = A.shape()[1], n = B.shape()[1];
    if (B.shape()[0] != k) {
        throw ShapeError("matmul inner dimension mismatch " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
    }
    Tensor out(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            if (av == 0.0) continue;
            const double* brow = &B[p * n];
            double* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return tape.record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id, m, k, n](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& A = t.value(Var{&t, ia});
        const Tensor& B = t.value(Var{&t, ib});
        if (t.needs_grad(ia)) {
            Tensor& ga = t.grad_ref(ia);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
                    ga[i * k + p] += acc;
                }
            }
        }
        if (t.needs_grad(ib)) {
            Tensor& gb = t.grad_ref(ib);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = A[i * k + p];
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                }
            }
        }
    });
}

Var add(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    const bool bcast = row_broadcast(A, B, "add");
    Tensor out = A;
    const std::size_t w = B.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bcast ? B[i % w] : B[i];
    return tape.record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id, bcast, w](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        if (t.needs_grad(ia)) axpy(t.grad_ref(ia), 1.0, g);
        if (t.needs_grad(ib)) {
            Tensor& gb = t.grad_ref(ib);
            if (bcast) {
                for (std::size_t i = 0; i < g.size(); ++i) gb[i % w] += g[i];
            } else {
                axpy(gb, 1.0, g);
            }
        }
    });
}

Var mul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    const bool bcast = row_broadcast(A, B, "mul");
    Tensor out = A;
    const std::size_t w = B.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bcast ? B[i % w] : B[i];
    return tape.record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id, bcast, w](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& A = t.value(Var{&t, ia});
        const Tensor& B = t.value(Var{&t, ib});
        if (t.needs_grad(ia)) {
            Tensor& ga = t.grad_ref(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (bcast ? B[i % w] : B[i]);
        }
        if (t.needs_grad(ib)) {
            Tensor& gb = t.grad_ref(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gb[bcast ? i % w : i] += g[i] * A[i];
        }
    });
}

Var scale(Var a, double factor) {
    Tensor out = a.value();
    for (auto& v : out.values()) v *= factor;
    return a.tape->record(std::move(out), {a.id}, [ia = a.id, factor](Tape& t, std::size_t self) {
        axpy(t.grad_ref(ia), factor, t.grad_of(self));
    });
}

Var sigmoid(Var x) {
    Tensor out = x.value();
    for (auto& v : out.values()) v = stable_sigmoid(v);
    return x.tape->record(std::move(out), {x.id}, [ix = x.id](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& s = t.value(Var{&t, self});
        Tensor& gx = t.grad_ref(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s[i] * (1.0 - s[i]);
    });
}

Var relu(Var x) {
    Tensor out = x.value();
    for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
    return x.tape->record(std::move(out), {x.id}, [ix = x.id](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& in = t.value(Var{&t, ix});
        Tensor& gx = t.grad_ref(ix);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (in[i] > 0.0) gx[i] += g[i];
        }
    });
}

Var concat_cols(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_matrix(A, "concat_cols");
    require_matrix(B, "concat_cols");
    if (A.rows() != B.rows()) {
        throw ShapeError("concat_cols row mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
    }
    const std::size_t r = A.rows(), ca = A.cols(), cb = B.cols();
    Tensor out(Shape{r, ca + cb});
    for (std::size_t i = 0; i < r; ++i) {
        std::copy_n(&A[i * ca], ca, &out[i * (ca + cb)]);
        std::copy_n(&B[i * cb], cb, &out[i * (ca + cb) + ca]);
    }
    return tape.record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id, r, ca, cb](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        if (t.needs_grad(ia)) {
            Tensor& ga = t.grad_ref(ia);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * (ca + cb) + j];
        }
        if (t.needs_grad(ib)) {
            Tensor& gb = t.grad_ref(ib);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * (ca + cb) + ca + j];
        }
    });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
    const Tensor& A = a.value();
    require_matrix(A, "slice_cols");
    if (begin > end || end > A.cols()) {
        throw ShapeError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of " +
                         shape_str(A.shape()));
    }
    const std::size_t r = A.rows(), c = A.cols(), w = end - begin;
    Tensor out(Shape{r, w});
    for (std::size_t i = 0; i < r; ++i) std::copy_n(&A[i * c + begin], w, &out[i * w]);
    return a.tape->record(std::move(out), {a.id}, [ia = a.id, r, c, w, begin](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        Tensor& ga = t.grad_ref(ia);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) ga[i * c + begin + j] += g[i * w + j];
    });
}

Var mean_rows(Var a) {
    const Tensor& A = a.value();
    require_matrix(A, "mean_rows");
    const std::size_t r = A.rows(), c = A.cols();
    if (r == 0) throw ShapeError("mean_rows over zero rows");
    Tensor out(Shape{1, c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += A[i * c + j];
    for (auto& v : out.values()) v /= static_cast<double>(r);
    return a.tape->record(std::move(out), {a.id}, [ia = a.id, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        Tensor& ga = t.grad_ref(ia);
        const double inv = 1.0 / static_cast<double>(r);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j] * inv;
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return a.tape->record(Tensor::scalar(s), {a.id}, [ia = a.id](Tape& t, std::size_t self) {
        const double g = t.grad_of(self)[0];
        for (auto& v : t.grad_ref(ia).values()) v += g;
    });
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets) {
    const Tensor& L = logits.value();
    require_matrix(L, "softmax_cross_entropy");
    const std::size_t b = L.rows(), n = L.cols();
    if (targets.size() != b) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_str(L.shape()) + " logits");
    }
    if (b == 0) throw ShapeError("softmax_cross_entropy on an empty batch");
    Tensor probs(Shape{b, n});
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const int y = targets[i];
        if (y < 0 || static_cast<std::size_t>(y) >= n) {
            throw std::out_of_range("target " + std::to_string(y) + " outside [0, " + std::to_string(n) + ")");
        }
        const double* row = &L[i * n];
        const double mx = *std::max_element(row, row + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < n; ++j) probs[i * n + j] = std::exp(row[j] - mx) / z;
        loss += std::log(z) + mx - row[y];
    }
    loss /= static_cast<double>(b);
    std::vector<int> labels(targets.begin(), targets.end());
    return logits.tape->record(Tensor::scalar(loss), {logits.id},
                               [il = logits.id, probs = std::move(probs), labels = std::move(labels), b, n](
                                   Tape& t, std::size_t self) {
                                   const double g = t.grad_of(self)[0] / static_cast<double>(b);
                                   Tensor& gl = t.grad_ref(il);
                                   for (std::size_t i = 0; i < b; ++i) {
                                       for (std::size_t j = 0; j < n; ++j) {
                                           const double onehot = static_cast<int>(j) == labels[i] ? 1.0 : 0.0;
                                           gl[i * n + j] += g * (probs[i * n + j] - onehot);
                                       }
                                   }
                               });
}

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double lr) {
    if (params.size() != grads.size()) {
        throw ShapeError("sgd_step: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(grads.size()) + " grads");
    }
    for (std::size_t i = 0; i < params.size(); ++i) axpy(params[i], -lr, grads[i]);
}

}  // namespace cafeme
