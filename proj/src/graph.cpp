#include "metacl/graph.hpp"

#include <algorithm>
#include <cmath>

namespace metacl {

namespace {

// Batch-norm operates per channel: dim 1 of (N,C,H,W), or the column of (N,M).
struct BnLayout {
    int64_t outer, channels, inner;
};

BnLayout bn_layout(const Shape& s) {
    if (s.size() == 2) return {s[0], s[1], 1};
    if (s.size() == 4) return {s[0], s[1], s[2] * s[3]};
    throw ShapeError("batch norm expects rank-2 or rank-4 input, got " + shape_str(s));
}

}  // namespace

NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return NodeId(nodes_.size() - 1);
}

const Graph::Node& Graph::node(NodeId id) const {
    check_exists(id);
    return nodes_[size_t(id)];
}

void Graph::check_exists(NodeId id) const {
    if (id < 0 || size_t(id) >= nodes_.size()) {
        throw ContractError("node id " + std::to_string(id) + " not in graph");
    }
}

bool Graph::any_needs_grad(const std::vector<NodeId>& ids) const {
    for (NodeId id : ids) {
        if (nodes_[size_t(id)].needs_grad) return true;
    }
    return false;
}

const Tensor& Graph::value(NodeId id) const { return node(id).value; }

NodeId Graph::leaf(Tensor t) {
    Node n;
    n.op = Op::Leaf;
    n.needs_grad = t.requires_grad;
    n.value = std::move(t);
    NodeId id = push(std::move(n));
    if (nodes_[size_t(id)].needs_grad) grad_leaves_.push_back(id);
    return id;
}

NodeId Graph::constant(Tensor t) {
    t.requires_grad = false;
    return leaf(std::move(t));
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) {
        throw ShapeError("add: shape mismatch " + shape_str(ta.shape) + " vs " +
                         shape_str(tb.shape));
    }
    Node n;
    n.op = Op::Add;
    n.inputs = {a, b};
    n.needs_grad = any_needs_grad(n.inputs);
    n.value = ta;
    for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] += tb[i];
    return push(std::move(n));
}

NodeId Graph::add_bias(NodeId x, NodeId b) {
    const Tensor& tx = value(x);
    const Tensor& tb = value(b);
    if (tx.rank() != 2 || tb.rank() != 1 || tb.shape[0] != tx.shape[1]) {
        throw ShapeError("add_bias: expected (N,M)+(M), got " + shape_str(tx.shape) + " + " +
                         shape_str(tb.shape));
    }
    Node n;
    n.op = Op::AddBias;
    n.inputs = {x, b};
    n.needs_grad = any_needs_grad(n.inputs);
    n.value = tx;
    int64_t N = tx.shape[0], M = tx.shape[1];
    for (int64_t i = 0; i < N; ++i) {
        for (int64_t j = 0; j < M; ++j) n.value.data[size_t(i * M + j)] += tb[j];
    }
    return push(std::move(n));
}

NodeId Graph::add_channel_bias(NodeId x, NodeId b) {
    const Tensor& tx = value(x);
    const Tensor& tb = value(b);
    if (tx.rank() != 4 || tb.rank() != 1 || tb.shape[0] != tx.shape[1]) {
        throw ShapeError("add_channel_bias: expected (N,C,H,W)+(C), got " + shape_str(tx.shape) +
                         " + " + shape_str(tb.shape));
    }
    Node n;
    n.op = Op::AddChannelBias;
    n.inputs = {x, b};
    n.needs_grad = any_needs_grad(n.inputs);
    n.value = tx;
    int64_t N = tx.shape[0], C = tx.shape[1], HW = tx.shape[2] * tx.shape[3];
    for (int64_t i = 0; i < N; ++i) {
        for (int64_t c = 0; c < C; ++c) {
            double*
                dst = n.value.data.data() + (i * C + c) * HW;
            for (int64_t k = 0; k < HW; ++k) dst[k] += tb[c];
        }
    }
    return push(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) {
        throw ShapeError("sub: shape mismatch " + shape_str(ta.shape) + " vs " +
                         shape_str(tb.shape));
    }
    Node n;
    n.op = Op::Sub;
    n.inputs = {a, b};
    n.needs_grad = any_needs_grad(n.inputs);
    n.value = ta;
    for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] -= tb[i];
    return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) {
        throw ShapeError("mul: shape mismatch " + shape_str(ta.shape) + " vs " +
                         shape_str(tb.shape));
    }
    Node n;
    n.op = Op::Mul;
    n.inputs = {a, b};
    n.needs_grad = any_needs_grad(n.inputs);
    n.value = ta;
    for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] *= tb[i];
    return push(std::move(n));
}

NodeId Graph::scalar_affine(NodeId x, double a, double b) {
    Node n;
    n.op = Op::ScalarAffine;
    n.inputs = {x};
    n.needs_grad = any_needs_grad(n.inputs);
    n.a = a;
    n.b = b;
    n.value = value(x);
    for (double& v : n.value.data) v = a * v + b;
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(ta.shape) + " x " +
                         shape_str(tb.shape));
    }
    int64_t N = ta.shape[0], K = ta.shape[1], M = tb.shape[1];
    Node n;
    n.op = Op::MatMul;
    n.inputs = {a, b};
    n.needs_grad = any_needs_grad(n.inputs);
    n.value = Tensor::zeros({N, M});
    for (int64_t i = 0; i < N; ++i) {
        for (int64_t k = 0; k < K; ++k) {
            double av = ta.data[size_t(i * K + k)];
            if (av == 0.0) continue;
            const double* brow = tb.data.data() + k * M;
            double* orow = n.value.data.data() + i * M;
            for (int64_t j = 0; j < M; ++j) orow[j] += av * brow[j];
        }
    }
    return push(std::move(n));
}

NodeId Graph::conv2d(NodeId x, NodeId w, int stride, int pad) {
    const Tensor& tx = value(x);
    const Tensor& tw = value(w);
    if (tx.rank() != 4 || tw.rank() != 4 || tx.shape[1] != tw.shape[1]) {
        throw ShapeError("conv2d: expected x(N,Ci,H,W), w(Co,Ci,kh,kw), got " +
                         shape_str(tx.shape) + ", " + shape_str(tw.shape));
    }
    int64_t N = tx.shape[0], Ci = tx.shape[1], H = tx.shape[2], W = tx.shape[3];
    int64_t Co = tw.shape[0], kh = tw.shape[2], kw = tw.shape[3];
    int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho < 1 || Wo < 1) {
        throw ShapeError("conv2d: kernel larger than padded input");
    }
    Node n;
    n.op = Op::Conv2d;
    n.inputs = {x, w};
    n.needs_grad = any_needs_grad(n.inputs);
    n.stride = stride;
    n.pad = pad;
    n.value = Tensor::zeros({N, Co, Ho, Wo});
    for (int64_t in = 0; in < N; ++in) {
        for (int64_t co = 0; co < Co; ++co) {
            for (int64_t oh = 0; oh < Ho; ++oh) {
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    double acc = 0.0;
                    for (int64_t ci = 0; ci < Ci; ++ci) {
                        const double* xin = tx.data.data() + ((in * Ci + ci) * H) * W;
                        const double* ker = tw.data.data() + ((co * Ci + ci) * kh) * kw;
                        for (int64_t r = 0; r < kh; ++r) {
                            int64_t ih = oh * stride - pad + r;
                            if (ih < 0 || ih >= H) continue;
                            for (int64_t c = 0; c < kw; ++c) {
                                int64_t iw = ow * stride - pad + c;
                                if (iw < 0 || iw >= W) continue;
                                acc += xin[ih * W + iw] * ker[r * kw + c];
                            }
                        }
                    }
                    n.value.data[size_t(((in * Co + co) * Ho + oh) * Wo + ow)] = acc;
                }
            }
        }
    }
    return push(std::move(n));
}

NodeId Graph::upsample_nearest(NodeId x, int scale) {
    const Tensor& tx = value(x);
    if (tx.rank() != 4 || scale < 1) {
        throw ShapeError("upsample_nearest: expected rank-4 input and scale >= 1");
    }
    int64_t N = tx.shape[0], C = tx.shape[1], H = tx.shape[2], W = tx.shape[3];
    int64_t Ho = H * scale, Wo = W * scale;
    Node n;
    n.op = Op::Upsample2d;
    n.inputs = {x};
    n.needs_grad = any_needs_grad(n.inputs);
    n.scale = scale;
    n.value = Tensor::zeros({N, C, Ho, Wo});
    for (int64_t i = 0; i < N * C; ++i) {
        const double* src = tx.data.data() + i * H * W;
        double* dst = n.value.data.data() + i * Ho * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh) {
            for (int64_t ow = 0; ow < Wo; ++ow) {
                dst[oh * Wo + ow] = src[(oh / scale) * W + (ow / scale)];
            }
        }
    }
    return push(std::move(n));
}

NodeId Graph::batch_norm_train(NodeId x, NodeId gamma, NodeId beta, double eps) {
    const Tensor& tx = value(x);
    BnLayout L = bn_layout(tx.shape);
    const Tensor& tg = value(gamma);
    const Tensor& tb = value(beta);
    if (tg.numel() != L.channels || tb.numel() != L.channels) {
        throw ShapeError("batch_norm_train: gamma/beta must have one entry per channel");
    }
    int64_t R = L.outer * L.inner;  // reduction count per channel
    Tensor mean = Tensor::zeros({L.channels});
    Tensor var = Tensor::zeros({L.channels});
    for (int64_t o = 0; o < L.outer; ++o) {
        for (int64_t c = 0; c < L.channels; ++c) {
            const double* src = tx.data.data() + (o * L.channels + c) * L.inner;
            for (int64_t k = 0; k < L.inner; ++k) mean[c] += src[k];
        }
    }
    for (int64_t c = 0; c < L.channels; ++c) mean[c] /= double(R);
    for (int64_t o = 0; o < L.outer; ++o) {
        for (int64_t c = 0; c < L.channels; ++c) {
            const double* src = tx.data.data() + (o * L.channels + c) * L.inner;
            for (int64_t k = 0; k < L.inner; ++k) {
                double d = src[k] - mean[c];
                var[c] += d * d;
            }
        }
    }
    for (int64_t c = 0; c < L.channels; ++c) var[c] /= double(R);

    Node n;
    n.op = Op::BatchNormTrain;
    n.inputs = {x, gamma, beta};
    n.needs_grad = any_needs_grad(n.inputs);
    n.a = eps;
    n.value = tx;
    for (int64_t o = 0; o < L.outer; ++o) {
        for (int64_t c = 0; c < L.channels; ++c) {
            double invstd = 1.0 / std::sqrt(var[c] + eps);
            double* dst = n.value.data.data() + (o * L.channels + c) * L.inner;
            const double* src = tx.data.data() + (o * L.channels + c) * L.inner;
            for (int64_t k = 0; k < L.inner; ++k) {
                dst[k] = tg[c] * (src[k] - mean[c]) * invstd + tb[c];
            }
        }
    }
    n.aux = std::move(mean);
    n.aux2 = std::move(var);
    return push(std::move(n));
}

NodeId Graph::batch_norm_eval(NodeId x, NodeId gamma, NodeId beta, NodeId mean, NodeId var,
                              double eps) {
    const Tensor& tx = value(x);
    BnLayout L = bn_layout(tx.shape);
    const Tensor& tg = value(gamma);
    const Tensor& tb = value(beta);
    const Tensor& tm = value(mean);
    const Tensor& tv = value(var);
    if (tg.numel() != L.channels || tb.numel() != L.channels || tm.numel() != L.channels ||
        tv.numel() != L.channels) {
        throw ShapeError("batch_norm_eval: per-channel parameter length mismatch");
    }
    Node n;
    n.op = Op::BatchNormEval;
    n.inputs = {x, gamma, beta, mean, var};
    n.needs_grad = any_needs_grad(n.inputs);
    n.a = eps;
    n.value = tx;
    for (int64_t o = 0; o < L.outer; ++o) {
        for (int64_t c = 0; c < L.channels; ++c) {
            double invstd = 1.0 / std::sqrt(tv[c] + eps);
            double* dst = n.value.data.data() + (o * L.channels + c) * L.inner;
            const double* src = tx.data.data() + (o * L.channels + c) * L.inner;
            for (int64_t k = 0; k < L.inner; ++k) {
                dst[k] = tg[c] * (src[k] - tm[c]) * invstd + tb[c];
            }
        }
    }
    return push(std::move(n));
}

NodeId Graph::leaky_relu(NodeId x, double slope) {
    Node n;
    n.op = Op::LeakyRelu;
    n.inputs = {x};
    n.needs_grad = any_needs_grad(n.inputs);
    n.a = slope;
    n.value = value(x);
    for (double& v : n.value.data) {
        if (v < 0.0) v *= slope;
    }
    return push(std::move(n));
}

NodeId Graph::tanh(NodeId x) {
    Node n;
    n.op = Op::Tanh;
    n.inputs = {x};
    n.needs_grad = any_needs_grad(n.inputs);
    n.value = value(x);
    for (double& v : n.value.data) v = std::tanh(v);
    return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId x) {
    Node n;
    n.op = Op::Sigmoid;
    n.inputs = {x};
    n.needs_grad = any_needs_grad(n.inputs);
    n.value = value(x);
    for (double& v : n.value.data) v = 1.0 / (1.0 + std::exp(-v));
    return push(std::move(n));
}

NodeId Graph::softmax(NodeId x) {
    const Tensor& tx = value(x);
    if (tx.rank() != 2) throw ShapeError("softmax: expected (N,C) input");
    int64_t N = tx.shape[0], C = tx.shape[1];
    Node n;
    n.op = Op::Softmax;
    n.inputs = {x};
    n.needs_grad = any_needs_grad(n.inputs);
    n.value = tx;
    for (int64_t i = 0; i < N; ++i) {
        double* row = n.value.data.data() + i * C;
        double mx = row[0];
        for (int64_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int64_t j = 0; j < C; ++j) {
            row[j] = std::exp(row[j] - mx);
            z += row[j];
        }
        for (int64_t j = 0; j < C; ++j) row[j] /= z;
    }
    return push(std::move(n));
}

NodeId Graph::log(NodeId x) {
    Node n;
    n.op = Op::Log;
    n.inputs = {x};
    n.needs_grad = any_needs_grad(n.inputs);
    n.value = value(x);
    for (double& v : n.value.data) v = std::log(v);
    return push(std::move(n));
}

NodeId Graph::exp(NodeId x) {
    Node n;
    n.op = Op::Exp;
    n.inputs = {x};
    n.needs_grad = any_needs_grad(n.inputs);
    n.value = value(x);
    for (double& v : n.value.data) v = std::exp(v);
    return push(std::move(n));
}

NodeId Graph::clamp(NodeId x, double lo, double hi) {
    Node n;
    n.op = Op::Clamp;
    n.inputs = {x};
    n.needs_grad = any_needs_grad(n.inputs);
    n.a = lo;
    n.b = hi;
    n.value = value(x);
    for (double& v : n.value.data) v = std::min(std::max(v, lo), hi);
    return push(std::move(n));
}

NodeId Graph::sum(NodeId x) {
    Node n;
    n.op = Op::Sum;
    n.inputs = {x};
    n.needs_grad = any_needs_grad(n.inputs);
    double acc = 0.0;
    for (double v : value(x).data) acc += v;
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

NodeId Graph::mean(NodeId x) {
    Node n;
    n.op = Op::Mean;
    n.inputs = {x};
    n.needs_grad = any_needs_grad(n.inputs);
    const Tensor& tx = value(x);
    if (tx.numel() == 0) throw ContractError("mean of empty tensor");
    double acc = 0.0;
    for (double v : tx.data) acc += v;
    n.value = Tensor::scalar(acc / double(tx.numel()));
    return push(std::move(n));
}

NodeId Graph::row_sum(NodeId x) {
    const Tensor& tx = value(x);
    if (tx.rank() != 2) throw ShapeError("row_sum: expected (N,M) input");
    int64_t N = tx.shape[0], M = tx.shape[1];
    Node n;
    n.op = Op::RowSum;
    n.inputs = {x};
    n.needs_grad = any_needs_grad(n.inputs);
    n.value = Tensor::zeros({N});
    for (int64_t i = 0; i < N; ++i) {
        double acc = 0.0;
        const double* row = tx.data.data() + i * M;
        for (int64_t j = 0; j < M; ++j) acc += row[j];
        n.value[i] = acc;
    }
    return push(std::move(n));
}

NodeId Graph::dropout(NodeId x, double p, RngStream& rng) {
    if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must be in [0,1)");
    Node n;
    n.op = Op::Dropout;
    n.inputs = {x};
    n.needs_grad = any_needs_grad(n.inputs);
    n.a = p;
    const Tensor& tx = value(x);
    n.aux = Tensor::zeros(tx.shape);
    n.value = tx;
    double keep = 1.0 - p;
    for (int64_t i = 0; i < tx.numel(); ++i) {
        bool on = rng.uniform() >= p;
        n.aux[i] = on ? 1.0 : 0.0;
        n.value[i] = on ? tx[i] / keep : 0.0;
    }
    return push(std::move(n));
}

NodeId Graph::embedding(NodeId table, std::vector<int64_t> ids) {
    const Tensor& tt = value(table);
    if (tt.rank() != 2) throw ShapeError("embedding: table must be (V,E)");
    int64_t V = tt.shape[0], E = tt.shape[1];
    for (int64_t id : ids) {
        if (id < 0 || id >= V) {
            throw ContractError("embedding: id " + std::to_string(id) + " out of range [0," +
                                std::to_string(V) + ")");
        }
    }
    Node n;
    n.op = Op::Embedding;
    n.inputs = {table};
    n.needs_grad = any_needs_grad(n.inputs);
    n.value = Tensor::zeros({int64_t(ids.size()), E});
    for (size_t i = 0; i < ids.size(); ++i) {
        const double* src = tt.data.data() + ids[i] * E;
        std::copy(src, src + E, n.value.data.data() + int64_t(i) * E);
    }
    n.ids = std::move(ids);
    return push(std::move(n));
}

NodeId Graph::reshape(NodeId x, Shape s) {
    const Tensor& tx = value(x);
    if (shape_numel(s) != tx.numel()) {
        throw ShapeError("reshape: " + shape_str(tx.shape) + " -> " + shape_str(s) +
                         " changes element count");
    }
    Node n;
    n.op = Op::Reshape;
    n.inputs = {x};
    n.needs_grad = any_needs_grad(n.inputs);
    n.value = tx;
    n.value.shape = std::move(s);
    return push(std::move(n));
}

NodeId Graph::concat_cols(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw ContractError("concat_cols: no inputs");
    int64_t N = value(xs[0]).shape.empty() ? -1 : value(xs[0]).shape[0];
    int64_t M = 0;
    for (NodeId id : xs) {
        const Tensor& t = value(id);
        if (t.rank() != 2 || t.shape[0] != N) {
            throw ShapeError("concat_cols: all inputs must be (N,Mi) with equal N");
        }
        M += t.shape[1];
    }
    Node n;
    n.op = Op::ConcatCols;
    n.inputs = xs;
    n.needs_grad = any_needs_grad(n.inputs);
    n.value = Tensor::zeros({N, M});
    int64_t off = 0;
    for (NodeId id : xs) {
        const Tensor& t = value(id);
        int64_t Mi = t.shape[1];
        for (int64_t i = 0; i < N; ++i) {
            std::copy(t.data.data() + i * Mi, t.data.data() + (i + 1) * Mi,
                      n.value.data.data() + i * M + off);
        }
        off += Mi;
    }
    return push(std::move(n));
}

void Graph::accumulate(Tensor& dst, const Tensor& src) {
    if (dst.data.empty()) {
        dst = src;
        return;
    }
    for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

GradMap Graph::gradients(NodeId scalar_node) const {
    const Node& top = node(scalar_node);
    if (top.value.numel() != 1) {
        throw ContractError("gradients: node must evaluate to a scalar, got shape " +
                            shape_str(top.value.shape));
    }
    std::vector<Tensor> grads(nodes_.size());
    grads[size_t(scalar_node)] = Tensor::full(top.value.shape, 1.0);
    for (NodeId id = scalar_node; id >= 0; --id) {
        const Node& n = nodes_[size_t(id)];
        if (!n.needs_grad || grads[size_t(id)].data.empty() || n.op == Op::Leaf) continue;
        backward_into(n, grads[size_t(id)], grads);
    }
    GradMap out;
    for (NodeId leaf_id : grad_leaves_) {
        if (leaf_id > scalar_node) continue;
        Tensor& g = grads[size_t(leaf_id)];
        if (g.data.empty()) g = Tensor::zeros(nodes_[size_t(leaf_id)].value.shape);
        out.emplace(leaf_id, std::move(g));
    }
    return out;
}

Tensor Graph::grad_or_zero(const GradMap& g, NodeId leaf_id) const {
    auto it = g.find(leaf_id);
    if (it != g.end()) return it->second;
    return Tensor::zeros(node(leaf_id).value.shape);
}

std::pair<Tensor, Tensor> Graph::batch_stats(NodeId bn_node) const {
    const Node& n = node(bn_node);
    if (n.op != Op::BatchNormTrain) {
        throw ContractError("batch_stats: node is not a train-mode batch norm");
    }
    return {n.aux, n.aux2};
}

void Graph::backward_into(const Node& n, const Tensor& gy, std::vector<Tensor>& grads) const {
    auto want = [&](int idx) { return nodes_[size_t(n.inputs[size_t(idx)])].needs_grad; };
    auto acc = [&](int idx, const Tensor& g) {
        accumulate(grads[size_t(n.inputs[size_t(idx)])], g);
    };
    auto in_val = [&](int idx) -> const Tensor& {
        return nodes_[size_t(n.inputs[size_t(idx)])].value;
    };

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add: {
            if (want(0)) acc(0, gy);
            if (want(1)) acc(1, gy);
            break;
        }
        case Op::AddBias: {
            if (want(0)) acc(0, gy);
            if (want(1)) {
                int64_t N = n.value.shape[0], M = n.value.shape[1];
                Tensor gb = Tensor::zeros({M});
                for (int64_t i = 0; i < N; ++i) {
                    for (int64_t j = 0; j < M; ++j) gb[j] += gy.data[size_t(i * M + j)];
                }
                acc(1, gb);
            }
            break;
        }
        case Op::AddChannelBias: {
            if (want(0)) acc(0, gy);
            if (want(1)) {
                int64_t N = n.value.shape[0], C = n.value.shape[1];
                int64_t HW = n.value.shape[2] * n.value.shape[3];
                Tensor gb = Tensor::zeros({C});
                for (int64_t i = 0; i < N; ++i) {
                    for (int64_t c = 0; c < C; ++c) {
                        const double* src = gy.data.data() + (i * C + c) * HW;
                        for (int64_t k = 0; k < HW; ++k) gb[c] += src[k];
                    }
                }
                acc(1, gb);
            }
            break;
        }
        case Op::Sub: {
            if (want(0)) acc(0, gy);
            if (want(1)) {
                Tensor g = gy;
                for (double& v : g.data) v = -v;
                acc(1, g);
            }
            break;
        }
        case Op::Mul: {
            if (want(0)) {
                Tensor g = gy;
                const Tensor& b = in_val(1);
                for (int64_t i = 0; i < g.numel(); ++i) g[i] *= b[i];
                acc(0, g);
            }
            if (want(1)) {
                Tensor g = gy;
                const Tensor& a = in_val(0);
                for (int64_t i = 0; i < g.numel(); ++i) g[i] *= a[i];
                acc(1, g);
            }
            break;
        }
        case Op::ScalarAffine: {
            if (want(0)) {
                Tensor g = gy;
                for (double& v : g.data) v *= n.a;
                acc(0, g);
            }
            break;
        }
        case Op::MatMul: {
            const Tensor& A = in_val(0);
            const Tensor& B = in_val(1);
            int64_t N = A.shape[0], K = A.shape[1], M = B.shape[1];
            if (want(0)) {
                Tensor gA = Tensor::zeros({N, K});  // gy (N,M) x B^T (M,K)
                for (int64_t i = 0; i < N; ++i) {
                    for (int64_t j = 0; j < M; ++j) {
                        double gv = gy.data[size_t(i * M + j)];
                        if (gv == 0.0) continue;
                        double* garow = gA.data.data() + i * K;
                        for (int64_t k = 0; k < K; ++k) garow[k] += gv * B.data[size_t(k * M + j)];
                    }
                }
                acc(0, gA);
            }
            if (want(1)) {
                Tensor gB = Tensor::zeros({K, M});  // A^T (K,N) x gy (N,M)
                for (int64_t i = 0; i < N; ++i) {
                    const double* arow = A.data.data() + i * K;
                    const double* grow = gy.data.data() + i * M;
                    for (int64_t k = 0; k < K; ++k) {
                        double av = arow[k];
                        if (av == 0.0) continue;
                        double* gbrow = gB.data.data() + k * M;
                        for (int64_t j = 0; j < M; ++j) gbrow[j] += av * grow[j];
                    }
                }
                acc(1, gB);
            }
            break;
        }
        case Op::Conv2d: {
            const Tensor& X = in_val(0);
            const Tensor& Wt = in_val(1);
            int64_t N = X.shape[0], Ci = X.shape[1], H = X.shape[2], W = X.shape[3];
            int64_t Co = Wt.shape[0], kh = Wt.shape[2], kw = Wt.shape[3];
            int64_t Ho = n.value.shape[2], Wo = n.value.shape[3];
            int s = n.stride, p = n.pad;
            Tensor gX, gW;
            if (want(0)) gX = Tensor::zeros(X.shape);
            if (want(1)) gW = Tensor::zeros(Wt.shape);
            for (int64_t in = 0; in < N; ++in) {
                for (int64_t co = 0; co < Co; ++co) {
                    const double* grow = gy.data.data() + ((in * Co + co) * Ho) * Wo;
                    for (int64_t oh = 0; oh < Ho; ++oh) {
                        for (int64_t ow = 0; ow < Wo; ++ow) {
                            double gv = grow[oh * Wo + ow];
                            if (gv == 0.0) continue;
                            for (int64_t ci = 0; ci < Ci; ++ci) {
                                const double* xin = X.data.data() + ((in * Ci + ci) * H) * W;
                                const double* ker = Wt.data.data() + ((co * Ci + ci) * kh) * kw;
                                double* gxin =
                                    gX.data.empty() ? nullptr
                                                    : gX.data.data() + ((in * Ci + ci) * H) * W;
                                double* gker =
                                    gW.data.empty() ? nullptr
                                                    : gW.data.data() + ((co * Ci + ci) * kh) * kw;
                                for (int64_t r = 0; r < kh; ++r) {
                                    int64_t ih = oh * s - p + r;
                                    if (ih < 0 || ih >= H) continue;
                                    for (int64_t c = 0; c < kw; ++c) {
                                        int64_t iw = ow * s - p + c;
                                        if (iw < 0 || iw >= W) continue;
                                        if (gxin) gxin[ih * W + iw] += gv * ker[r * kw + c];
                                        if (gker) gker[r * kw + c] += gv * xin[ih * W + iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if (want(0)) acc(0, gX);
            if (want(1)) acc(1, gW);
            break;
        }
        case Op::Upsample2d: {
            if (!want(0)) break;
            const Tensor& X = in_val(0);
            int64_t NC = X.shape[0] * X.shape[1], H = X.shape[2], W = X.shape[3];
            int64_t Ho = n.value.shape[2], Wo = n.value.shape[3];
            int k = n.scale;
            Tensor gX = Tensor::zeros(X.shape);
            for (int64_t i = 0; i < NC; ++i) {
                const double* gsrc = gy.data.data() + i * Ho * Wo;
                double* gdst = gX.data.data() + i * H * W;
                for (int64_t oh = 0; oh < Ho; ++oh) {
                    for (int64_t ow = 0; ow < Wo; ++ow) {
                        gdst[(oh / k) * W + (ow / k)] += gsrc[oh * Wo + ow];
                    }
                }
            }
            acc(0, gX);
            break;
        }
        case Op::BatchNormTrain: {
            const Tensor& X = in_val(0);
            const Tensor& G = in_val(1);
            BnLayout L = bn_layout(X.shape);
            int64_t R = L.outer * L.inner;
            const Tensor& mean = n.aux;
            const Tensor& var = n.aux2;
            double eps = n.a;
            // Per-channel sums of dy and dy*xhat.
            Tensor s_dy = Tensor::zeros({L.channels});
            Tensor s_dyx = Tensor::zeros({L.channels});
            std::vector<double> invstd(static_cast<size_t>(L.channels), 0.0);
            for (int64_t c = 0; c < L.channels; ++c) invstd[size_t(c)] = 1.0 / std::sqrt(var[c] + eps);
            for (int64_t o = 0; o < L.outer; ++o) {
                for (int64_t c = 0; c < L.channels; ++c) {
                    const double* gyp = gy.data.data() + (o * L.channels + c) * L.inner;
                    const double* xp = X.data.data() + (o * L.channels + c) * L.inner;
                    for (int64_t k = 0; k < L.inner; ++k) {
                        double xhat = (xp[k] - mean[c]) * invstd[size_t(c)];
                        s_dy[c] += gyp[k];
                        s_dyx[c] += gyp[k] * xhat;
                    }
                }
            }
            if (want(1)) acc(1, s_dyx);
            if (want(2)) acc(2, s_dy);
            if (want(0)) {
                Tensor gX = Tensor::zeros(X.shape);
                for (int64_t o = 0; o < L.outer; ++o) {
                    for (int64_t c = 0; c < L.channels; ++c) {
                        double gcoef = G[c] * invstd[size_t(c)];
                        double mdy = s_dy[c] / double(R);
                        double mdyx = s_dyx[c] / double(R);
                        const double* gyp = gy.data.data() + (o * L.channels + c) * L.inner;
                        const double* xp = X.data.data() + (o * L.channels + c) * L.inner;
                        double* gxp = gX.data.data() + (o * L.channels + c) * L.inner;
                        for (int64_t k = 0; k < L.inner; ++k) {
                            double xhat = (xp[k] - mean[c]) * invstd[size_t(c)];
                            gxp[k] = gcoef * (gyp[k] - mdy - xhat * mdyx);
                        }
                    }
                }
                acc(0, gX);
            }
            break;
        }
        case Op::BatchNormEval: {
            const Tensor& X = in_val(0);
            const Tensor& G = in_val(1);
            const Tensor& M = in_val(3);
            const Tensor& V = in_val(4);
            BnLayout L = bn_layout(X.shape);
            double eps = n.a;
            Tensor gX, gG, gB, gM, gV;
            if (want(0)) gX = Tensor::zeros(X.shape);
            if (want(1)) gG = Tensor::zeros({L.channels});
            if (want(2)) gB = Tensor::zeros({L.channels});
            if (want(3)) gM = Tensor::zeros({L.channels});
            if (want(4)) gV = Tensor::zeros({L.channels});
            for (int64_t o = 0; o < L.outer; ++o) {
                for (int64_t c = 0; c < L.channels; ++c) {
                    double invstd = 1.0 / std::sqrt(V[c] + eps);
                    const double* gyp = gy.data.data() + (o * L.channels + c) * L.inner;
                    const double* xp = X.data.data() + (o * L.channels + c) * L.inner;
                    for (int64_t k = 0; k < L.inner; ++k) {
                        double xc = xp[k] - M[c];
                        if (!gX.data.empty())
                            gX.data[size_t((o * L.channels + c) * L.inner + k)] =
                                gyp[k] * G[c] * invstd;
                        if (!gG.data.empty()) gG[c] += gyp[k] * xc * invstd;
                        if (!gB.data.empty()) gB[c] += gyp[k];
                        if (!gM.data.empty()) gM[c] += -gyp[k] * G[c] * invstd;
                        if (!gV.data.empty())
                            gV[c] += gyp[k] * G[c] * xc * (-0.5) * invstd * invstd * invstd;
                    }
                }
            }
            if (want(0)) acc(0, gX);
            if (want(1)) acc(1, gG);
            if (want(2)) acc(2, gB);
            if (want(3)) acc(3, gM);
            if (want(4)) acc(4, gV);
            break;
        }
        case Op::LeakyRelu: {
            if (!want(0)) break;
            const Tensor& X = in_val(0);
            Tensor g = gy;
            for (int64_t i = 0; i < g.numel(); ++i) {
                if (X[i] < 0.0) g[i] *= n.a;
            }
            acc(0, g);
            break;
        }
        case Op::Tanh: {
            if (!want(0)) break;
            Tensor g = gy;
            for (int64_t i = 0; i < g.numel(); ++i) g[i] *= 1.0 - n.value[i] * n.value[i];
            acc(0, g);
            break;
        }
        case Op::Sigmoid: {
            if (!want(0)) break;
            Tensor g = gy;
            for (int64_t i = 0; i < g.numel(); ++i) g[i] *= n.value[i] * (1.0 - n.value[i]);
            acc(0, g);
            break;
        }
        case Op::Softmax: {
            if (!want(0)) break;
            int64_t N = n.value.shape[0], C = n.value.shape[1];
            Tensor g = Tensor::zeros(n.value.shape);
            for (int64_t i = 0; i < N; ++i) {
                const double* y = n.value.data.data() + i * C;
                const double* gyp = gy.data.data() + i * C;
                double dot = 0.0;
                for (int64_t j = 0; j < C; ++j) dot += gyp[j] * y[j];
                double* gp = g.data.data() + i * C;
                for (int64_t j = 0; j < C; ++j) gp[j] = y[j] * (gyp[j] - dot);
            }
            acc(0, g);
            break;
        }
        case Op::Log: {
            if (!want(0)) break;
            const Tensor& X = in_val(0);
            Tensor g = gy;
            for (int64_t i = 0; i < g.numel(); ++i) g[i] /= X[i];
            acc(0, g);
            break;
        }
        case Op::Exp: {
            if (!want(0)) break;
            Tensor g = gy;
            for (int64_t i = 0; i < g.numel(); ++i) g[i] *= n.value[i];
            acc(0, g);
            break;
        }
        case Op::Clamp: {
            if (!want(0)) break;
            const Tensor& X = in_val(0);
            Tensor g = gy;
            for (int64_t i = 0; i < g.numel(); ++i) {
                if (X[i] <= n.a || X[i] >= n.b) g[i] = 0.0;
            }
            acc(0, g);
            break;
        }
        case Op::Sum: {
            if (!want(0)) break;
            acc(0, Tensor::full(in_val(0).shape, gy.data[0]));
            break;
        }
        case Op::Mean: {
            if (!want(0)) break;
            const Tensor& X = in_val(0);
            acc(0, Tensor::full(X.shape, gy.data[0] / double(X.numel())));
            break;
        }
        case Op::RowSum: {
            if (!want(0)) break;
            const Tensor& X = in_val(0);
            int64_t N = X.shape[0], M = X.shape[1];
            Tensor g = Tensor::zeros(X.shape);
            for (int64_t i = 0; i < N; ++i) {
                for (int64_t j = 0; j < M; ++j) g.data[size_t(i * M + j)] = gy[i];
            }
            acc(0, g);
            break;
        }
        case Op::Dropout: {
            if (!want(0)) break;
            Tensor g = gy;
            double keep = 1.0 - n.a;
            for (int64_t i = 0; i < g.numel(); ++i) g[i] *= n.aux[i] / keep;
            acc(0, g);
            break;
        }
        case Op::Embedding: {
            if (!want(0)) break;
            const Tensor& T = in_val(0);
            int64_t E = T.shape[1];
            Tensor g = Tensor::zeros(T.shape);
            for (size_t i = 0; i < n.ids.size(); ++i) {
                const double* src = gy.data.data() + int64_t(i) * E;
                double* dst = g.data.data() + n.ids[i] * E;
                for (int64_t j = 0; j < E; ++j) dst[j] += src[j];
            }
            acc(0, g);
            break;
        }
        case Op::Reshape: {
            if (!want(0)) break;
            Tensor g = gy;
            g.shape = in_val(0).shape;
            acc(0, g);
            break;
        }
        case Op::ConcatCols: {
            int64_t N = n.value.shape[0], M = n.value.shape[1];
            int64_t off = 0;
            for (size_t idx = 0; idx < n.inputs.size(); ++idx) {
                const Tensor& X = nodes_[size_t(n.inputs[idx])].value;
                int64_t Mi = X.shape[1];
                if (want(int(idx))) {
                    Tensor g = Tensor::zeros(X.shape);
                    for (int64_t i = 0; i < N; ++i) {
                        std::copy(gy.data.data() + i * M + off, gy.data.data() + i * M + off + Mi,
                                  g.data.data() + i * Mi);
                    }
                    acc(int(idx), g);
                }
                off += Mi;
            }
            break;
        }
    }
}

}  // namespace metacl
