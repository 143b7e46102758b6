#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "camoseg/tensor.hpp"

namespace camoseg::ag {

struct Node;
using Var = std::shared_ptr<Node>;

// Reverse-mode tape node. Graphs are rebuilt every forward pass; parameters
// are long-lived leaves whose values the optimizer mutates in place.
struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<Var> inputs;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into inputs' grads

    int64_t size() const { return value.size(); }
};

Var constant(Tensor t);
Var leaf(Tensor t);  // requires_grad = true

// Runs backward from a scalar root (seeds grad = 1).
void backward(const Var& root);

// elementwise, same shape
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
// y = k*x + c elementwise, k/c plain constants
Var affine(const Var& x, double k, double c);
// elementwise multiply by a scalar Var [1]
Var mul_scalar(const Var& x, const Var& s);
// scalar [1] ops
Var div_scalar(const Var& a, const Var& b);

Var matmul(const Var& a, const Var& b);     // [m,k]x[k,n]
Var matmul_nt(const Var& a, const Var& b);  // [m,k]x[n,k]^T -> [m,n]

// broadcast over a [m,n] matrix
Var add_rowvec(const Var& x, const Var& v);  // v: [1,n]
Var mul_rowvec(const Var& x, const Var& v);
Var mul_colvec(const Var& x, const Var& v);  // v: [m,1]

Var sigmoid(const Var& x);
Var relu(const Var& x);
Var exp_(const Var& x);

Var softmax_rows(const Var& x);  // [m,n], softmax over n
// zero mean / unit variance over each row, then y*g + b (g,b: [1,n])
Var layernorm_rows(const Var& x, const Var& g, const Var& b, double eps = 1e-5);
// zero mean / unit variance over each column (per-channel instance norm when
// rows are spatial positions)
Var colnorm(const Var& x, double eps = 1e-5);
// x - rowmean(x)
Var center_rows(const Var& x);

Var sum_all(const Var& x);   // -> [1]
Var mean_all(const Var& x);  // -> [1]

Var reshape(const Var& x, std::vector<int64_t> shape);
Var transpose2d(const Var& x);
Var select_rows(const Var& x, std::vector<int64_t> idx);
Var slice_cols(const Var& x, int64_t start, int64_t len);
Var concat_cols(const std::vector<Var>& xs);
Var concat_rows(const std::vector<Var>& xs);

// x: [C,H,W]
Var conv3x3(const Var& x, const Var& w, const Var& b, int64_t stride = 1);
Var bilinear_to(const Var& x, int64_t ho, int64_t wo);
Var area_down(const Var& x, int64_t factor);

// mean over pixels of stable BCE-with-logits against a constant target
Var bce_with_logits(const Var& logits, const Tensor& target);
// mean over rows of softmax cross-entropy against integer labels
Var softmax_ce_mean(const Var& logits, const std::vector<int64_t>& labels);

}  // namespace camoseg::ag
