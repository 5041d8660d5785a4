#pragma once
#include <cstdint>
#include <unordered_map>
#include <utility>
#include <vector>

#include "metacl/rng.hpp"
#include "metacl/tensor.hpp"

namespace metacl {

using NodeId = int32_t;
using GradMap = std::unordered_map<NodeId, Tensor>;

enum class Op : uint8_t {
    Leaf,
    Add,             // elementwise, same shape
    AddBias,         // (N,M) + (M)
    AddChannelBias,  // (N,C,H,W) + (C)
    Sub,
    Mul,
    ScalarAffine,  // a*x + b
    MatMul,        // (N,K) x (K,M)
    Conv2d,        // x:(N,Ci,H,W) w:(Co,Ci,kh,kw), stride/pad attrs
    Upsample2d,    // nearest neighbor, integer scale
    BatchNormTrain,
    BatchNormEval,
    LeakyRelu,
    Tanh,
    Sigmoid,
    Softmax,  // rows of (N,C)
    Log,
    Exp,
    Clamp,
    Sum,     // all elements -> scalar
    Mean,    // all elements -> scalar
    RowSum,  // (N,M) -> (N)
    Dropout,
    Embedding,  // table (V,E), ids attr -> (N,E)
    Reshape,
    ConcatCols,  // 2-D tensors along dim 1
};

// Append-only reverse-mode tape. Forward values are computed eagerly when a
// node is created, so evaluation is pure and deterministic by construction.
// Node inputs always have smaller ids than the node itself.
class Graph {
public:
    NodeId leaf(Tensor t);
    NodeId constant(Tensor t);  // leaf with requires_grad forced off
    NodeId constant(double v) { return constant(Tensor::scalar(v)); }

    // Forward value of any node (the spec's evaluate()).
    const Tensor& value(NodeId id) const;

    NodeId add(NodeId a, NodeId b);
    NodeId add_bias(NodeId x, NodeId b);
    NodeId add_channel_bias(NodeId x, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scalar_mul(NodeId x, double a) { return scalar_affine(x, a, 0.0); }
    NodeId scalar_add(NodeId x, double b) { return scalar_affine(x, 1.0, b); }
    NodeId scalar_affine(NodeId x, double a, double b);
    NodeId matmul(NodeId a, NodeId b);
    NodeId conv2d(NodeId x, NodeId w, int stride, int pad);
    NodeId upsample_nearest(NodeId x, int scale);
    // Train-mode batch norm uses batch statistics; the computed per-channel
    // mean/var are retrievable via batch_stats() for running-stat updates.
    NodeId batch_norm_train(NodeId x, NodeId gamma, NodeId beta, double eps);
    NodeId batch_norm_eval(NodeId x, NodeId gamma, NodeId beta, NodeId mean, NodeId var,
                           double eps);
    NodeId leaky_relu(NodeId x, double slope);
    NodeId tanh(NodeId x);
    NodeId sigmoid(NodeId x);
    NodeId softmax(NodeId x);
    NodeId log(NodeId x);
    NodeId exp(NodeId x);
    NodeId clamp(NodeId x, double lo, double hi);
    NodeId sum(NodeId x);
    NodeId mean(NodeId x);
    NodeId row_sum(NodeId x);
    NodeId dropout(NodeId x, double p, RngStream& rng);
    NodeId embedding(NodeId table, std::vector<int64_t> ids);
    NodeId reshape(NodeId x, Shape s);
    NodeId concat_cols(const std::vector<NodeId>& xs);

    // dL/dleaf for every requires_grad leaf; unreached leaves get zeros.
    GradMap gradients(NodeId scalar_node) const;

    // Convenience for invariant checks: a leaf's gradient or a zero tensor.
    Tensor grad_or_zero(const GradMap& g, NodeId leaf) const;

    // Batch mean and (biased) variance saved by a BatchNormTrain node.
    std::pair<Tensor, Tensor> batch_stats(NodeId bn_node) const;

    int64_t size() const { return int64_t(nodes_.size()); }

private:
    struct Node {
        Op op = Op::Leaf;
        std::vector<NodeId> inputs;
        Tensor value;
        bool needs_grad = false;
        double a = 0.0;                // slope / clamp lo / scalar mul / eps / p
        double b = 0.0;                // clamp hi / scalar add
        int stride = 1, pad = 0;       // conv
        int scale = 1;                 // upsample
        std::vector<int64_t> ids;      // embedding rows
        Tensor aux, aux2;              // dropout mask; bn mean/var
    };

    NodeId push(Node n);
    const Node& node(NodeId id) const;
    void check_exists(NodeId id) const;
    bool any_needs_grad(const std::vector<NodeId>& ids) const;
    void backward_into(const Node& n, const Tensor& gy, std::vector<Tensor>& grads) const;
    static void accumulate(Tensor& dst, const Tensor& src);

    std::vector<Node> nodes_;
    std::vector<NodeId> grad_leaves_;
};

}  // namespace metacl
