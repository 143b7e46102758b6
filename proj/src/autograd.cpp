#include "camoseg/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "camoseg/kernels.hpp"

namespace camoseg::ag {

namespace {

Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    for (const auto& in : n->inputs)
        if (in->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

void ensure_grad(Node& n) {
    if (n.grad.size() != n.value.size()) n.grad = Tensor::zeros_like(n.value);
}

// grad sink helper: returns nullptr when the input doesn't need gradients
double* gptr(const Var& v) {
    if (!v->requires_grad) return nullptr;
    ensure_grad(*v);
    return v->grad.data();
}

void check_mat(const Var& x, const char* what) {
    if (x->value.rank() != 2) throw ShapeError(std::string(what) + ": expected 2D tensor, got " + x->value.shape_str());
}

}  // namespace

Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return n;
}

Var leaf(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    return n;
}

void backward(const Var& root) {
    if (root->value.size() != 1) throw ShapeError("backward: root must be scalar");
    // iterative post-order topo sort
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->inputs.size()) {
            Node* child = n->inputs[i++].get();
            if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        n->grad = Tensor::zeros_like(n->value);
    }
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "add");
    Tensor y = a->value;
    for (int64_t i = 0; i < y.size(); ++i) y[i] += b->value[i];
    return make_node(std::move(y), {a, b}, [](Node& n) {
        for (int k = 0; k < 2; ++k)
            if (double* g = gptr(n.inputs[k]))
                for (int64_t i = 0; i < n.size(); ++i) g[i] += n.grad[i];
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "sub");
    Tensor y = a->value;
    for (int64_t i = 0; i < y.size(); ++i) y[i] -= b->value[i];
    return make_node(std::move(y), {a, b}, [](Node& n) {
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < n.size(); ++i) g[i] += n.grad[i];
        if (double* g = gptr(n.inputs[1]))
            for (int64_t i = 0; i < n.size(); ++i) g[i] -= n.grad[i];
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "mul");
    Tensor y = a->value;
    for (int64_t i = 0; i < y.size(); ++i) y[i] *= b->value[i];
    return make_node(std::move(y), {a, b}, [](Node& n) {
        const Tensor& av = n.inputs[0]->value;
        const Tensor& bv = n.inputs[1]->value;
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < n.size(); ++i) g[i] += n.grad[i] * bv[i];
        if (double* g = gptr(n.inputs[1]))
            for (int64_t i = 0; i < n.size(); ++i) g[i] += n.grad[i] * av[i];
    });
}

Var affine(const Var& x, double k, double c) {
    Tensor y = x->value;
    for (int64_t i = 0; i < y.size(); ++i) y[i] = k * y[i] + c;
    return make_node(std::move(y), {x}, [k](Node& n) {
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < n.size(); ++i) g[i] += k * n.grad[i];
    });
}

Var mul_scalar(const Var& x, const Var& s) {
    if (s->value.size() != 1) throw ShapeError("mul_scalar: s must be [1]");
    const double sv = s->value[0];
    Tensor y = x->value;
    for (int64_t i = 0; i < y.size(); ++i) y[i] *= sv;
    return make_node(std::move(y), {x, s}, [](Node& n) {
        const Tensor& xv = n.inputs[0]->value;
        const double sv = n.inputs[1]->value[0];
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < n.size(); ++i) g[i] += sv * n.grad[i];
        if (double* g = gptr(n.inputs[1])) {
            double acc = 0.0;
            for (int64_t i = 0; i < n.size(); ++i) acc += n.grad[i] * xv[i];
            g[0] += acc;
        }
    });
}

Var div_scalar(const Var& a, const Var& b) {
    if (a->value.size() != 1 || b->value.size() != 1) throw ShapeError("div_scalar: scalars only");
    Tensor y = Tensor::scalar(a->value[0] / b->value[0]);
    return make_node(std::move(y), {a, b}, [](Node& n) {
        const double av = n.inputs[0]->value[0], bv = n.inputs[1]->value[0];
        if (double* g = gptr(n.inputs[0])) g[0] += n.grad[0] / bv;
        if (double* g = gptr(n.inputs[1])) g[0] -= n.grad[0] * av / (bv * bv);
    });
}

Var matmul(const Var& a, const Var& b) {
    check_mat(a, "matmul");
    check_mat(b, "matmul");
    const int64_t m = a->value.dim(0), k = a->value.dim(1), n2 = b->value.dim(1);
    if (b->value.dim(0) != k) throw ShapeError("matmul: inner dims differ");
    Tensor y({m, n2});
    kernels::matmul(a->value.data(), b->value.data(), y.data(), m, k, n2);
    return make_node(std::move(y), {a, b}, [m, k, n2](Node& n) {
        const Tensor& av = n.inputs[0]->value;
        const Tensor& bv = n.inputs[1]->value;
        if (double* g = gptr(n.inputs[0])) {
            Tensor tmp({m, k});
            kernels::matmul_nt(n.grad.data(), bv.data(), tmp.data(), m, n2, k);
            for (int64_t i = 0; i < tmp.size(); ++i) g[i] += tmp[i];
        }
        if (double* g = gptr(n.inputs[1])) {
            Tensor tmp({k, n2});
            kernels::matmul_tn(av.data(), n.grad.data(), tmp.data(), m, k, n2);
            for (int64_t i = 0; i < tmp.size(); ++i) g[i] += tmp[i];
        }
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    check_mat(a, "matmul_nt");
    check_mat(b, "matmul_nt");
    const int64_t m = a->value.dim(0), k = a->value.dim(1), n2 = b->value.dim(0);
    if (b->value.dim(1) != k) throw ShapeError("matmul_nt: inner dims differ");
    Tensor y({m, n2});
    kernels::matmul_nt(a->value.data(), b->value.data(), y.data(), m, k, n2);
    return make_node(std::move(y), {a, b}, [m, k, n2](Node& n) {
        const Tensor& av = n.inputs[0]->value;
        const Tensor& bv = n.inputs[1]->value;
        if (double* g = gptr(n.inputs[0])) {
            // gA = gY[m,n2] * B[n2,k]
            Tensor tmp({m, k});
            kernels::matmul(n.grad.data(), bv.data(), tmp.data(), m, n2, k);
            for (int64_t i = 0; i < tmp.size(); ++i) g[i] += tmp[i];
        }
        if (double* g = gptr(n.inputs[1])) {
            // gB = gY^T[n2,m] * A[m,k]
            Tensor tmp({n2, k});
            kernels::matmul_tn(n.grad.data(), av.data(), tmp.data(), m, n2, k);
            for (int64_t i = 0; i < tmp.size(); ++i) g[i] += tmp[i];
        }
    });
}

Var add_rowvec(const Var& x, const Var& v) {
    check_mat(x, "add_rowvec");
    const int64_t m = x->value.dim(0), nc = x->value.dim(1);
    if (v->value.size() != nc) throw ShapeError("add_rowvec: vector length mismatch");
    Tensor y = x->value;
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < nc; ++j) y.at(i, j) += v->value[j];
    return make_node(std::move(y), {x, v}, [m, nc](Node& n) {
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < n.size(); ++i) g[i] += n.grad[i];
        if (double* g = gptr(n.inputs[1]))
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < nc; ++j) g[j] += n.grad[i * nc + j];
    });
}

Var mul_rowvec(const Var& x, const Var& v) {
    check_mat(x, "mul_rowvec");
    const int64_t m = x->value.dim(0), nc = x->value.dim(1);
    if (v->value.size() != nc) throw ShapeError("mul_rowvec: vector length mismatch");
    Tensor y = x->value;
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < nc; ++j) y.at(i, j) *= v->value[j];
    return make_node(std::move(y), {x, v}, [m, nc](Node& n) {
        const Tensor& xv = n.inputs[0]->value;
        const Tensor& vv = n.inputs[1]->value;
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < nc; ++j) g[i * nc + j] += n.grad[i * nc + j] * vv[j];
        if (double* g = gptr(n.inputs[1]))
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < nc; ++j) g[j] += n.grad[i * nc + j] * xv[i * nc + j];
    });
}

Var mul_colvec(const Var& x, const Var& v) {
    check_mat(x, "mul_colvec");
    const int64_t m = x->value.dim(0), nc = x->value.dim(1);
    if (v->value.size() != m) throw ShapeError("mul_colvec: vector length mismatch");
    Tensor y = x->value;
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < nc; ++j) y.at(i, j) *= v->value[i];
    return make_node(std::move(y), {x, v}, [m, nc](Node& n) {
        const Tensor& xv = n.inputs[0]->value;
        const Tensor& vv = n.inputs[1]->value;
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < nc; ++j) g[i * nc + j] += n.grad[i * nc + j] * vv[i];
        if (double* g = gptr(n.inputs[1]))
            for (int64_t i = 0; i < m; ++i) {
                double acc = 0.0;
                for (int64_t j = 0; j < nc; ++j) acc += n.grad[i * nc + j] * xv[i * nc + j];
                g[i] += acc;
            }
    });
}

Var sigmoid(const Var& x) {
    Tensor y = x->value;
    for (int64_t i = 0; i < y.size(); ++i) {
        const double v = y[i];
        y[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return make_node(std::move(y), {x}, [](Node& n) {
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < n.size(); ++i) g[i] += n.grad[i] * n.value[i] * (1.0 - n.value[i]);
    });
}

Var relu(const Var& x) {
    Tensor y = x->value;
    for (int64_t i = 0; i < y.size(); ++i) y[i] = std::max(0.0, y[i]);
    return make_node(std::move(y), {x}, [](Node& n) {
        const Tensor& xv = n.inputs[0]->value;
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < n.size(); ++i)
                if (xv[i] > 0.0) g[i] += n.grad[i];
    });
}

Var exp_(const Var& x) {
    Tensor y = x->value;
    for (int64_t i = 0; i < y.size(); ++i) y[i] = std::exp(y[i]);
    return make_node(std::move(y), {x}, [](Node& n) {
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < n.size(); ++i) g[i] += n.grad[i] * n.value[i];
    });
}

Var softmax_rows(const Var& x) {
    check_mat(x, "softmax_rows");
    const int64_t m = x->value.dim(0), nc = x->value.dim(1);
    Tensor y = x->value;
    for (int64_t i = 0; i < m; ++i) {
        double mx = y.at(i, 0);
        for (int64_t j = 1; j < nc; ++j) mx = std::max(mx, y.at(i, j));
        double z = 0.0;
        for (int64_t j = 0; j < nc; ++j) {
            y.at(i, j) = std::exp(y.at(i, j) - mx);
            z += y.at(i, j);
        }
        for (int64_t j = 0; j < nc; ++j) y.at(i, j) /= z;
    }
    return make_node(std::move(y), {x}, [m, nc](Node& n) {
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (int64_t j = 0; j < nc; ++j) dot += n.grad[i * nc + j] * n.value[i * nc + j];
                for (int64_t j = 0; j < nc; ++j)
                    g[i * nc + j] += n.value[i * nc + j] * (n.grad[i * nc + j] - dot);
            }
    });
}

Var layernorm_rows(const Var& x, const Var& g, const Var& b, double eps) {
    check_mat(x, "layernorm_rows");
    const int64_t m = x->value.dim(0), nc = x->value.dim(1);
    if (g->value.size() != nc || b->value.size() != nc) throw ShapeError("layernorm_rows: param length mismatch");
    Tensor xhat({m, nc});
    Tensor inv_sd({m});
    for (int64_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (int64_t j = 0; j < nc; ++j) mu += x->value.at(i, j);
        mu /= static_cast<double>(nc);
        double var = 0.0;
        for (int64_t j = 0; j < nc; ++j) {
            const double d = x->value.at(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(nc);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sd[i] = is;
        for (int64_t j = 0; j < nc; ++j) xhat.at(i, j) = (x->value.at(i, j) - mu) * is;
    }
    Tensor y({m, nc});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < nc; ++j) y.at(i, j) = xhat.at(i, j) * g->value[j] + b->value[j];
    return make_node(std::move(y), {x, g, b}, [m, nc, xhat, inv_sd](Node& n) {
        const Tensor& gv = n.inputs[1]->value;
        if (double* gx = gptr(n.inputs[0]))
            for (int64_t i = 0; i < m; ++i) {
                // dL/dxhat
                double mean_d = 0.0, mean_dx = 0.0;
                for (int64_t j = 0; j < nc; ++j) {
                    const double d = n.grad[i * nc + j] * gv[j];
                    mean_d += d;
                    mean_dx += d * xhat.at(i, j);
                }
                mean_d /= static_cast<double>(nc);
                mean_dx /= static_cast<double>(nc);
                for (int64_t j = 0; j < nc; ++j) {
                    const double d = n.grad[i * nc + j] * gv[j];
                    gx[i * nc + j] += inv_sd[i] * (d - mean_d - xhat.at(i, j) * mean_dx);
                }
            }
        if (double* gg = gptr(n.inputs[1]))
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < nc; ++j) gg[j] += n.grad[i * nc + j] * xhat.at(i, j);
        if (double* gb = gptr(n.inputs[2]))
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < nc; ++j) gb[j] += n.grad[i * nc + j];
    });
}

Var colnorm(const Var& x, double eps) {
    check_mat(x, "colnorm");
    const int64_t m = x->value.dim(0), nc = x->value.dim(1);
    Tensor y({m, nc});
    Tensor inv_sd({nc});
    for (int64_t j = 0; j < nc; ++j) {
        double mu = 0.0;
        for (int64_t i = 0; i < m; ++i) mu += x->value.at(i, j);
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (int64_t i = 0; i < m; ++i) {
            const double d = x->value.at(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(m);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sd[j] = is;
        for (int64_t i = 0; i < m; ++i) y.at(i, j) = (x->value.at(i, j) - mu) * is;
    }
    Tensor xhat = y;
    return make_node(std::move(y), {x}, [m, nc, xhat, inv_sd](Node& n) {
        if (double* gx = gptr(n.inputs[0]))
            for (int64_t j = 0; j < nc; ++j) {
                double mean_d = 0.0, mean_dx = 0.0;
                for (int64_t i = 0; i < m; ++i) {
                    mean_d += n.grad[i * nc + j];
                    mean_dx += n.grad[i * nc + j] * xhat.at(i, j);
                }
                mean_d /= static_cast<double>(m);
                mean_dx /= static_cast<double>(m);
                for (int64_t i = 0; i < m; ++i)
                    gx[i * nc + j] += inv_sd[j] * (n.grad[i * nc + j] - mean_d - xhat.at(i, j) * mean_dx);
            }
    });
}

Var center_rows(const Var& x) {
    check_mat(x, "center_rows");
    const int64_t m = x->value.dim(0), nc = x->value.dim(1);
    Tensor y = x->value;
    for (int64_t i = 0; i < m; ++i) {
        double mu = 0.0;
        bool flat = true;
        for (int64_t j = 0; j < nc; ++j) {
            mu += y.at(i, j);
            flat = flat && y.at(i, j) == y.at(i, 0);
        }
        mu /= static_cast<double>(nc);
        // constant rows center to exactly zero (sum/n rounding would leave ulps)
        for (int64_t j = 0; j < nc; ++j) y.at(i, j) = flat ? 0.0 : y.at(i, j) - mu;
    }
    return make_node(std::move(y), {x}, [m, nc](Node& n) {
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < m; ++i) {
                double mu = 0.0;
                for (int64_t j = 0; j < nc; ++j) mu += n.grad[i * nc + j];
                mu /= static_cast<double>(nc);
                for (int64_t j = 0; j < nc; ++j) g[i * nc + j] += n.grad[i * nc + j] - mu;
            }
    });
}

Var sum_all(const Var& x) {
    double s = 0.0;
    for (int64_t i = 0; i < x->value.size(); ++i) s += x->value[i];
    return make_node(Tensor::scalar(s), {x}, [](Node& n) {
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < n.inputs[0]->value.size(); ++i) g[i] += n.grad[0];
    });
}

Var mean_all(const Var& x) {
    const double inv = 1.0 / static_cast<double>(x->value.size());
    double s = 0.0;
    for (int64_t i = 0; i < x->value.size(); ++i) s += x->value[i];
    return make_node(Tensor::scalar(s * inv), {x}, [inv](Node& n) {
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < n.inputs[0]->value.size(); ++i) g[i] += n.grad[0] * inv;
    });
}

Var reshape(const Var& x, std::vector<int64_t> shape) {
    Tensor y = x->value.reshaped(std::move(shape));
    return make_node(std::move(y), {x}, [](Node& n) {
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < n.size(); ++i) g[i] += n.grad[i];
    });
}

Var transpose2d(const Var& x) {
    check_mat(x, "transpose2d");
    const int64_t m = x->value.dim(0), nc = x->value.dim(1);
    Tensor y({nc, m});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < nc; ++j) y.at(j, i) = x->value.at(i, j);
    return make_node(std::move(y), {x}, [m, nc](Node& n) {
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < nc; ++j) g[i * nc + j] += n.grad[j * m + i];
    });
}

Var select_rows(const Var& x, std::vector<int64_t> idx) {
    check_mat(x, "select_rows");
    const int64_t nc = x->value.dim(1);
    Tensor y({static_cast<int64_t>(idx.size()), nc});
    for (size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || idx[r] >= x->value.dim(0)) throw RangeError("select_rows: index out of range");
        for (int64_t j = 0; j < nc; ++j) y.at(static_cast<int64_t>(r), j) = x->value.at(idx[r], j);
    }
    return make_node(std::move(y), {x}, [idx, nc](Node& n) {
        if (double* g = gptr(n.inputs[0]))
            for (size_t r = 0; r < idx.size(); ++r)
                for (int64_t j = 0; j < nc; ++j) g[idx[r] * nc + j] += n.grad[static_cast<int64_t>(r) * nc + j];
    });
}

Var slice_cols(const Var& x, int64_t start, int64_t len) {
    check_mat(x, "slice_cols");
    const int64_t m = x->value.dim(0), nc = x->value.dim(1);
    if (start < 0 || start + len > nc) throw RangeError("slice_cols: out of range");
    Tensor y({m, len});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < len; ++j) y.at(i, j) = x->value.at(i, start + j);
    return make_node(std::move(y), {x}, [m, nc, start, len](Node& n) {
        if (double* g = gptr(n.inputs[0]))
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < len; ++j) g[i * nc + start + j] += n.grad[i * len + j];
    });
}

Var concat_cols(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat_cols: empty input");
    const int64_t m = xs[0]->value.dim(0);
    int64_t total = 0;
    for (const auto& x : xs) {
        check_mat(x, "concat_cols");
        if (x->value.dim(0) != m) throw ShapeError("concat_cols: row count mismatch");
        total += x->value.dim(1);
    }
    Tensor y({m, total});
    int64_t off = 0;
    for (const auto& x : xs) {
        const int64_t nc = x->value.dim(1);
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < nc; ++j) y.at(i, off + j) = x->value.at(i, j);
        off += nc;
    }
    return make_node(std::move(y), xs, [m, total](Node& n) {
        int64_t off2 = 0;
        for (auto& in : n.inputs) {
            const int64_t nc = in->value.dim(1);
            if (double* g = gptr(in))
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < nc; ++j) g[i * nc + j] += n.grad[i * total + off2 + j];
            off2 += nc;
        }
    });
}

Var concat_rows(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat_rows: empty input");
    const int64_t nc = xs[0]->value.dim(1);
    int64_t rows = 0;
    for (const auto& x : xs) {
        check_mat(x, "concat_rows");
        if (x->value.dim(1) != nc) throw ShapeError("concat_rows: column count mismatch");
        rows += x->value.dim(0);
    }
    Tensor y({rows, nc});
    int64_t off = 0;
    for (const auto& x : xs) {
        for (int64_t i = 0; i < x->value.size(); ++i) y[off + i] = x->value[i];
        off += x->value.size();
    }
    return make_node(std::move(y), xs, [](Node& n) {
        int64_t off2 = 0;
        for (auto& in : n.inputs) {
            if (double* g = gptr(in))
                for (int64_t i = 0; i < in->value.size(); ++i) g[i] += n.grad[off2 + i];
            off2 += in->value.size();
        }
    });
}

Var conv3x3(const Var& x, const Var& w, const Var& b, int64_t stride) {
    if (x->value.rank() != 3) throw ShapeError("conv3x3: input must be [C,H,W]");
    const int64_t cin = x->value.dim(0), h = x->value.dim(1), wd = x->value.dim(2);
    const int64_t cout = w->value.dim(0);
    if (w->value.dim(1) != cin) throw ShapeError("conv3x3: weight cin mismatch");
    const int64_t ho = (h + stride - 1) / stride, wo = (wd + stride - 1) / stride;
    Tensor y({cout, ho, wo});
    kernels::conv3x3(x->value.data(), w->value.data(), b ? b->value.data() : nullptr, y.data(), cin, cout, h, wd,
                     stride);
    std::vector<Var> ins = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make_node(std::move(y), std::move(ins), [cin, cout, h, wd, stride](Node& n) {
        if (stride != 1) throw DomainError("conv3x3: backward only supports stride 1");
        const Tensor& xv = n.inputs[0]->value;
        if (double* gx = gptr(n.inputs[0]))
            kernels::conv3x3_grad_input(n.grad.data(), n.inputs[1]->value.data(), gx, cin, cout, h, wd);
        double* gw = gptr(n.inputs[1]);
        double* gb = n.inputs.size() > 2 ? gptr(n.inputs[2]) : nullptr;
        if (gw || gb) {
            Tensor tmp_w({cout, cin, 3, 3});
            Tensor tmp_b({cout});
            kernels::conv3x3_grad_weight(n.grad.data(), xv.data(), tmp_w.data(), tmp_b.data(), cin, cout, h, wd);
            if (gw)
                for (int64_t i = 0; i < tmp_w.size(); ++i) gw[i] += tmp_w[i];
            if (gb)
                for (int64_t i = 0; i < tmp_b.size(); ++i) gb[i] += tmp_b[i];
        }
    });
}

Var bilinear_to(const Var& x, int64_t ho, int64_t wo) {
    if (x->value.rank() != 3) throw ShapeError("bilinear_to: input must be [C,H,W]");
    const int64_t c = x->value.dim(0), hi = x->value.dim(1), wi = x->value.dim(2);
    Tensor y({c, ho, wo});
    kernels::bilinear_resize(x->value.data(), y.data(), c, hi, wi, ho, wo);
    return make_node(std::move(y), {x}, [c, hi, wi, ho, wo](Node& n) {
        if (double* g = gptr(n.inputs[0])) kernels::bilinear_resize_grad(n.grad.data(), g, c, hi, wi, ho, wo);
    });
}

Var area_down(const Var& x, int64_t factor) {
    if (x->value.rank() != 3) throw ShapeError("area_down: input must be [C,H,W]");
    const int64_t c = x->value.dim(0), h = x->value.dim(1), wd = x->value.dim(2);
    if (h % factor != 0 || wd % factor != 0) throw ShapeError("area_down: dims not divisible by factor");
    Tensor y({c, h / factor, wd / factor});
    kernels::area_down(x->value.data(), y.data(), c, h, wd, factor);
    return make_node(std::move(y), {x}, [c, h, wd, factor](Node& n) {
        if (double* g = gptr(n.inputs[0])) kernels::area_down_grad(n.grad.data(), g, c, h, wd, factor);
    });
}

Var bce_with_logits(const Var& logits, const Tensor& target) {
    check_same_shape(logits->value, target, "bce_with_logits");
    const int64_t n = logits->value.size();
    const double inv = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double x = logits->value[i], t = target[i];
        // max(x,0) - x*t + log(1+exp(-|x|))
        loss += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
    return make_node(Tensor::scalar(loss * inv), {logits}, [target, inv](Node& nd) {
        if (double* g = gptr(nd.inputs[0])) {
            const Tensor& xv = nd.inputs[0]->value;
            for (int64_t i = 0; i < xv.size(); ++i) {
                const double x = xv[i];
                const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                g[i] += nd.grad[0] * inv * (s - target[i]);
            }
        }
    });
}

Var softmax_ce_mean(const Var& logits, const std::vector<int64_t>& labels) {
    check_mat(logits, "softmax_ce_mean");
    const int64_t m = logits->value.dim(0), nc = logits->value.dim(1);
    if (static_cast<int64_t>(labels.size()) != m) throw ShapeError("softmax_ce_mean: label count mismatch");
    for (int64_t l : labels)
        if (l < 0 || l >= nc) throw DomainError("softmax_ce_mean: label out of range");
    Tensor probs({m, nc});
    double loss = 0.0;
    for (int64_t i = 0; i < m; ++i) {
        double mx = logits->value.at(i, 0);
        for (int64_t j = 1; j < nc; ++j) mx = std::max(mx, logits->value.at(i, j));
        double z = 0.0;
        for (int64_t j = 0; j < nc; ++j) {
            probs.at(i, j) = std::exp(logits->value.at(i, j) - mx);
            z += probs.at(i, j);
        }
        for (int64_t j = 0; j < nc; ++j) probs.at(i, j) /= z;
        loss -= std::log(std::max(probs.at(i, labels[i]), 1e-300));
    }
    const double inv = 1.0 / static_cast<double>(m);
    return make_node(Tensor::scalar(loss * inv), {logits}, [probs, labels, inv, m, nc](Node& nd) {
        if (double* g = gptr(nd.inputs[0]))
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < nc; ++j)
                    g[i * nc + j] += nd.grad[0] * inv * (probs.at(i, j) - (labels[i] == j ? 1.0 : 0.0));
    });
}

}  // namespace camoseg::ag
