#include "lcs/graph.hpp"

#include <cmath>
#include <cstring>

#include "lcs/kernels.hpp"

namespace lcs {

namespace {

const kern::Kernels& K() { return kern::active(); }

void require(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

std::string shapes2(const char* op, const Tensor& a, const Tensor& b) {
    return std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str();
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Const: return "const";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::MulScalarVar: return "mul_scalar_var";
        case Op::Neg: return "neg";
        case Op::Log: return "log";
        case Op::Exp: return "exp";
        case Op::Tanh: return "tanh";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::MeanRows: return "mean_rows";
        case Op::Matmul: return "matmul";
        case Op::MatmulNT: return "matmul_nt";
        case Op::MatVec: return "matvec";
        case Op::GatherRows: return "gather_rows";
        case Op::RowsPick: return "rows_pick";
        case Op::PickIndex: return "pick_index";
        case Op::SliceRows: return "slice_rows";
        case Op::ConcatRows: return "concat_rows";
        case Op::AddRowwise: return "add_rowwise";
        case Op::SubColwise: return "sub_colwise";
        case Op::RowwiseDot: return "rowwise_dot";
        case Op::SoftmaxRows: return "softmax_rows";
        case Op::LogSumExpRows: return "logsumexp_rows";
        case Op::LogSumExpVec: return "logsumexp_vec";
        case Op::LayerNormRows: return "layer_norm_rows";
        case Op::SqdistRows: return "sqdist_rows";
        case Op::GumbelSoftmax: return "gumbel_softmax";
    }
    return "?";
}

VarId Tape::push(Node&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<VarId>(nodes_.size() - 1);
}

VarId Tape::leaf(Tensor value) {
    require(value.all_finite(), "leaf: non-finite input rejected");
    Node n;
    n.op = Op::Leaf;
    n.requires_grad = true;
    n.value = std::move(value);
    return push(std::move(n));
}

VarId Tape::constant(Tensor value) {
    require(value.all_finite(), "const: non-finite input rejected");
    Node n;
    n.op = Op::Const;
    n.requires_grad = false;
    n.value = std::move(value);
    return push(std::move(n));
}

namespace {
Tape::Node make1(Op op, VarId a, const Tape::Node& pa) {
    Tape::Node n;
    n.op = op;
    n.parent[0] = a;
    n.n_parents = 1;
    n.requires_grad = pa.requires_grad;
    return n;
}
Tape::Node make2(Op op, VarId a, VarId b, const Tape::Node& pa, const Tape::Node& pb) {
    Tape::Node n;
    n.op = op;
    n.parent[0] = a;
    n.parent[1] = b;
    n.n_parents = 2;
    n.requires_grad = pa.requires_grad || pb.requires_grad;
    return n;
}
}  // namespace

VarId Tape::add(VarId a, VarId b) {
    const Tensor& va = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    require(va.same_shape(vb), shapes2("add", va, vb));
    Node n = make2(Op::Add, a, b, nodes_[a], nodes_[b]);
    n.value = Tensor(va.shape());
    K().add(va.data(), vb.data(), n.value.data(), va.numel());
    return push(std::move(n));
}

VarId Tape::sub(VarId a, VarId b) {
    const Tensor& va = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    require(va.same_shape(vb), shapes2("sub", va, vb));
    Node n = make2(Op::Sub, a, b, nodes_[a], nodes_[b]);
    n.value = Tensor(va.shape());
    K().sub(va.data(), vb.data(), n.value.data(), va.numel());
    return push(std::move(n));
}

VarId Tape::mul(VarId a, VarId b) {
    const Tensor& va = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    require(va.same_shape(vb), shapes2("mul", va, vb));
    Node n = make2(Op::Mul, a, b, nodes_[a], nodes_[b]);
    n.value = Tensor(va.shape());
    K().mul(va.data(), vb.data(), n.value.data(), va.numel());
    return push(std::move(n));
}

VarId Tape::scale(VarId a, double c) {
    const Tensor& va = nodes_[a].value;
    Node n = make1(Op::Scale, a, nodes_[a]);
    n.c0 = c;
    n.value = Tensor(va.shape());
    K().scale(c, va.data(), n.value.data(), va.numel());
    return push(std::move(n));
}

VarId Tape::mul_scalar_var(VarId s, VarId t) {
    const Tensor& vs = nodes_[s].value;
    const Tensor& vt = nodes_[t].value;
    require(vs.numel() == 1, "mul_scalar_var: first operand must be scalar, got " + vs.shape_str());
    Node n = make2(Op::MulScalarVar, s, t, nodes_[s], nodes_[t]);
    n.value = Tensor(vt.shape());
    K().scale(vs[0], vt.data(), n.value.data(), vt.numel());
    return push(std::move(n));
}

VarId Tape::neg(VarId a) {
    const Tensor& va = nodes_[a].value;
    Node n = make1(Op::Neg, a, nodes_[a]);
    n.value = Tensor(va.shape());
    K().scale(-1.0, va.data(), n.value.data(), va.numel());
    return push(std::move(n));
}

VarId Tape::log(VarId a) {
    const Tensor& va = nodes_[a].value;
    Node n = make1(Op::Log, a, nodes_[a]);
    n.value = Tensor(va.shape());
    for (size_t i = 0; i < va.numel(); ++i) n.value[i] = std::log(va[i]);
    return push(std::move(n));
}

VarId Tape::exp(VarId a) {
    const Tensor& va = nodes_[a].value;
    Node n = make1(Op::Exp, a, nodes_[a]);
    n.value = Tensor(va.shape());
    for (size_t i = 0; i < va.numel(); ++i) n.value[i] = std::exp(va[i]);
    return push(std::move(n));
}

VarId Tape::tanh(VarId a) {
    const Tensor& va = nodes_[a].value;
    Node n = make1(Op::Tanh, a, nodes_[a]);
    n.value = Tensor(va.shape());
    for (size_t i = 0; i < va.numel(); ++i) n.value[i] = std::tanh(va[i]);
    return push(std::move(n));
}

VarId Tape::sum(VarId a) {
    const Tensor& va = nodes_[a].value;
    Node n = make1(Op::Sum, a, nodes_[a]);
    n.value = Tensor::scalar(K().sum(va.data(), va.numel()));
    return push(std::move(n));
}

VarId Tape::mean(VarId a) {
    const Tensor& va = nodes_[a].value;
    require(va.numel() > 0, "mean: empty tensor");
    Node n = make1(Op::Mean, a, nodes_[a]);
    n.value = Tensor::scalar(K().sum(va.data(), va.numel()) / static_cast<double>(va.numel()));
    return push(std::move(n));
}

VarId Tape::mean_rows(VarId a) {
    const Tensor& va = nodes_[a].value;
    require(va.rank() == 2 && va.dim(0) > 0, "mean_rows: want non-empty rank-2, got " + va.shape_str());
    const int64_t m = va.dim(0), c = va.dim(1);
    Node n = make1(Op::MeanRows, a, nodes_[a]);
    n.value = Tensor({c});
    for (int64_t i = 0; i < m; ++i) K().axpy(1.0, va.row(i), n.value.data(), c);
    K().scale(1.0 / static_cast<double>(m), n.value.data(), n.value.data(), c);
    return push(std::move(n));
}

VarId Tape::matmul(VarId a, VarId b) {
    const Tensor& va = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    require(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(0), shapes2("matmul", va, vb));
    const int64_t m = va.dim(0), k = va.dim(1), c = vb.dim(1);
    Node n = make2(Op::Matmul, a, b, nodes_[a], nodes_[b]);
    n.value = Tensor({m, c});
    for (int64_t i = 0; i < m; ++i) {
        double* out = n.value.row(i);
        const double* arow = va.row(i);
        for (int64_t j = 0; j < k; ++j) K().axpy(arow[j], vb.row(j), out, c);
    }
    return push(std::move(n));
}

VarId Tape::matmul_nt(VarId a, VarId b) {
    const Tensor& va = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    require(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(1), shapes2("matmul_nt", va, vb));
    const int64_t m = va.dim(0), k = va.dim(1), c = vb.dim(0);
    Node n = make2(Op::MatmulNT, a, b, nodes_[a], nodes_[b]);
    n.value = Tensor({m, c});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < c; ++j) n.value.row(i)[j] = K().dot(va.row(i), vb.row(j), k);
    return push(std::move(n));
}

VarId Tape::matvec(VarId a, VarId x) {
    const Tensor& va = nodes_[a].value;
    const Tensor& vx = nodes_[x].value;
    require(va.rank() == 2 && vx.rank() == 1 && va.dim(1) == vx.dim(0), shapes2("matvec", va, vx));
    const int64_t m = va.dim(0), k = va.dim(1);
    Node n = make2(Op::MatVec, a, x, nodes_[a], nodes_[x]);
    n.value = Tensor({m});
    for (int64_t i = 0; i < m; ++i) n.value[static_cast<size_t>(i)] = K().dot(va.row(i), vx.data(), k);
    return push(std::move(n));
}

VarId Tape::gather_rows(VarId table, std::vector<int32_t> ids) {
    const Tensor& vt = nodes_[table].value;
    require(vt.rank() == 2, "gather_rows: table must be rank-2, got " + vt.shape_str());
    const int64_t v = vt.dim(0), d = vt.dim(1);
    for (int32_t id : ids)
        require(id >= 0 && id < v, "gather_rows: id " + std::to_string(id) + " out of range [0," +
                                       std::to_string(v) + ")");
    Node n = make1(Op::GatherRows, table, nodes_[table]);
    n.value = Tensor({static_cast<int64_t>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i)
        std::memcpy(n.value.row(static_cast<int64_t>(i)), vt.row(ids[i]), sizeof(double) * static_cast<size_t>(d));
    n.idx = std::move(ids);
    return push(std::move(n));
}

VarId Tape::rows_pick(VarId a, std::vector<int32_t> cols) {
    const Tensor& va = nodes_[a].value;
    require(va.rank() == 2, "rows_pick: want rank-2, got " + va.shape_str());
    require(static_cast<int64_t>(cols.size()) == va.dim(0),
            "rows_pick: index count " + std::to_string(cols.size()) + " != rows " + std::to_string(va.dim(0)));
    for (int32_t c : cols)
        require(c >= 0 && c < va.dim(1), "rows_pick: column " + std::to_string(c) + " out of range");
    Node n = make1(Op::RowsPick, a, nodes_[a]);
    n.value = Tensor({va.dim(0)});
    for (int64_t i = 0; i < va.dim(0); ++i) n.value[static_cast<size_t>(i)] = va.row(i)[cols[static_cast<size_t>(i)]];
    n.idx = std::move(cols);
    return push(std::move(n));
}

VarId Tape::pick_index(VarId v, int64_t i) {
    const Tensor& vv = nodes_[v].value;
    require(vv.rank() == 1 && i >= 0 && i < vv.dim(0),
            "pick_index: index " + std::to_string(i) + " invalid for " + vv.shape_str());
    Node n = make1(Op::PickIndex, v, nodes_[v]);
    n.i0 = i;
    n.value = Tensor::scalar(vv[static_cast<size_t>(i)]);
    return push(std::move(n));
}

VarId Tape::slice_rows(VarId a, int64_t start, int64_t len) {
    const Tensor& va = nodes_[a].value;
    require(va.rank() >= 1 && start >= 0 && len >= 1 && start + len <= va.dim(0),
            "slice_rows: [" + std::to_string(start) + "," + std::to_string(start + len) +
                ") invalid for " + va.shape_str());
    const int64_t c = va.cols();
    Node n = make1(Op::SliceRows, a, nodes_[a]);
    n.i0 = start;
    n.i1 = len;
    std::vector<int64_t> shape = va.shape();
    shape[0] = len;
    n.value = Tensor(shape);
    std::memcpy(n.value.data(), va.data() + static_cast<size_t>(start * c),
                sizeof(double) * static_cast<size_t>(len * c));
    return push(std::move(n));
}

VarId Tape::concat_rows(VarId a, VarId b) {
    const Tensor& va = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    require(va.rank() == vb.rank() && va.rank() >= 1 && va.cols() == vb.cols(),
            shapes2("concat_rows", va, vb));
    Node n = make2(Op::ConcatRows, a, b, nodes_[a], nodes_[b]);
    std::vector<int64_t> shape = va.shape();
    shape[0] += vb.dim(0);
    n.value = Tensor(shape);
    std::memcpy(n.value.data(), va.data(), sizeof(double) * va.numel());
    std::memcpy(n.value.data() + va.numel(), vb.data(), sizeof(double) * vb.numel());
    return push(std::move(n));
}

VarId Tape::add_rowwise(VarId a, VarId v) {
    const Tensor& va = nodes_[a].value;
    const Tensor& vv = nodes_[v].value;
    require(va.rank() == 2 && vv.rank() == 1 && vv.dim(0) == va.dim(1), shapes2("add_rowwise", va, vv));
    Node n = make2(Op::AddRowwise, a, v, nodes_[a], nodes_[v]);
    n.value = Tensor(va.shape());
    for (int64_t i = 0; i < va.dim(0); ++i)
        K().add(va.row(i), vv.data(), n.value.row(i), static_cast<size_t>(va.dim(1)));
    return push(std::move(n));
}

VarId Tape::sub_colwise(VarId a, VarId v) {
    const Tensor& va = nodes_[a].value;
    const Tensor& vv = nodes_[v].value;
    require(va.rank() == 2 && vv.rank() == 1 && vv.dim(0) == va.dim(0), shapes2("sub_colwise", va, vv));
    Node n = make2(Op::SubColwise, a, v, nodes_[a], nodes_[v]);
    n.value = Tensor(va.shape());
    for (int64_t i = 0; i < va.dim(0); ++i) {
        const double c = vv[static_cast<size_t>(i)];
        const double* src = va.row(i);
        double* dst = n.value.row(i);
        for (int64_t j = 0; j < va.dim(1); ++j) dst[j] = src[j] - c;
    }
    return push(std::move(n));
}

VarId Tape::rowwise_dot(VarId a, VarId b) {
    const Tensor& va = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    require(va.rank() == 2 && va.same_shape(vb), shapes2("rowwise_dot", va, vb));
    Node n = make2(Op::RowwiseDot, a, b, nodes_[a], nodes_[b]);
    n.value = Tensor({va.dim(0)});
    for (int64_t i = 0; i < va.dim(0); ++i)
        n.value[static_cast<size_t>(i)] = K().dot(va.row(i), vb.row(i), static_cast<size_t>(va.dim(1)));
    return push(std::move(n));
}

VarId Tape::softmax_rows(VarId a) {
    const Tensor& va = nodes_[a].value;
    require(va.rank() == 2 && va.dim(1) > 0, "softmax_rows: want rank-2, got " + va.shape_str());
    Node n = make1(Op::SoftmaxRows, a, nodes_[a]);
    n.value = Tensor(va.shape());
    for (int64_t i = 0; i < va.dim(0); ++i) {
        const double* x = va.row(i);
        double* y = n.value.row(i);
        double mx = x[0];
        for (int64_t j = 1; j < va.dim(1); ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int64_t j = 0; j < va.dim(1); ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (int64_t j = 0; j < va.dim(1); ++j) y[j] /= z;
    }
    return push(std::move(n));
}

VarId Tape::logsumexp_rows(VarId a) {
    const Tensor& va = nodes_[a].value;
    require(va.rank() == 2 && va.dim(1) > 0, "logsumexp_rows: want rank-2, got " + va.shape_str());
    Node n = make1(Op::LogSumExpRows, a, nodes_[a]);
    n.value = Tensor({va.dim(0)});
    for (int64_t i = 0; i < va.dim(0); ++i) {
        const double* x = va.row(i);
        double mx = x[0];
        for (int64_t j = 1; j < va.dim(1); ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int64_t j = 0; j < va.dim(1); ++j) z += std::exp(x[j] - mx);
        n.value[static_cast<size_t>(i)] = mx + std::log(z);
    }
    return push(std::move(n));
}

VarId Tape::logsumexp_vec(VarId a) {
    const Tensor& va = nodes_[a].value;
    require(va.rank() == 1 && va.dim(0) > 0, "logsumexp_vec: want rank-1, got " + va.shape_str());
    Node n = make1(Op::LogSumExpVec, a, nodes_[a]);
    double mx = va[0];
    for (size_t j = 1; j < va.numel(); ++j) mx = std::max(mx, va[j]);
    double z = 0.0;
    for (size_t j = 0; j < va.numel(); ++j) z += std::exp(va[j] - mx);
    n.value = Tensor::scalar(mx + std::log(z));
    return push(std::move(n));
}

VarId Tape::layer_norm_rows(VarId a, VarId gain, VarId bias, double eps) {
    const Tensor& va = nodes_[a].value;
    const Tensor& vg = nodes_[gain].value;
    const Tensor& vb = nodes_[bias].value;
    require(va.rank() == 2 && vg.rank() == 1 && vb.rank() == 1 && vg.dim(0) == va.dim(1) &&
                vb.dim(0) == va.dim(1),
            "layer_norm_rows: shapes " + va.shape_str() + ", " + vg.shape_str() + ", " + vb.shape_str());
    const int64_t m = va.dim(0), c = va.dim(1);
    Node n;
    n.op = Op::LayerNormRows;
    n.parent = {a, gain, bias};
    n.n_parents = 3;
    n.requires_grad = nodes_[a].requires_grad || nodes_[gain].requires_grad || nodes_[bias].requires_grad;
    n.c0 = eps;
    n.value = Tensor({m, c});
    n.aux = Tensor({m, c + 1});  // per row: normalized x followed by 1/std
    for (int64_t i = 0; i < m; ++i) {
        const double* x = va.row(i);
        double mu = K().sum(x, static_cast<size_t>(c)) / static_cast<double>(c);
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            const double d = x[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        double* xhat = n.aux.row(i);
        double* y = n.value.row(i);
        for (int64_t j = 0; j < c; ++j) {
            xhat[j] = (x[j] - mu) * inv_std;
            y[j] = xhat[j] * vg[static_cast<size_t>(j)] + vb[static_cast<size_t>(j)];
        }
        xhat[c] = inv_std;
    }
    return push(std::move(n));
}

VarId Tape::sqdist_rows(VarId a, VarId b) {
    const Tensor& va = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    require(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(1), shapes2("sqdist_rows", va, vb));
    const int64_t m = va.dim(0), v = vb.dim(0), d = va.dim(1);
    Node n = make2(Op::SqdistRows, a, b, nodes_[a], nodes_[b]);
    n.value = Tensor({m, v});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < v; ++j)
            n.value.row(i)[j] = K().sqdist(va.row(i), vb.row(j), static_cast<size_t>(d));
    return push(std::move(n));
}

VarId Tape::gumbel_softmax(VarId g, double tau, const Tensor& noise, bool hard) {
    const Tensor& vg = nodes_[g].value;
    require(vg.rank() == 1 && vg.dim(0) > 0, "gumbel_softmax: want rank-1 logits, got " + vg.shape_str());
    require(noise.same_shape(vg), shapes2("gumbel_softmax noise", vg, noise));
    require(tau > 0.0, "gumbel_softmax: tau must be positive");
    const size_t n_el = vg.numel();
    Node n = make1(Op::GumbelSoftmax, g, nodes_[g]);
    n.c0 = tau;
    n.i0 = hard ? 1 : 0;
    n.aux = Tensor({static_cast<int64_t>(n_el)});
    double mx = -1e300;
    size_t argmax = 0;
    std::vector<double> t(n_el);
    for (size_t i = 0; i < n_el; ++i) {
        t[i] = vg[i] / tau + noise[i];
        if (t[i] > mx) {
            mx = t[i];
            argmax = i;
        }
    }
    double z = 0.0;
    for (size_t i = 0; i < n_el; ++i) {
        n.aux[i] = std::exp(t[i] - mx);
        z += n.aux[i];
    }
    for (size_t i = 0; i < n_el; ++i) n.aux[i] /= z;
    n.value = Tensor({static_cast<int64_t>(n_el)});
    if (hard) {
        n.value[argmax] = 1.0;
    } else {
        for (size_t i = 0; i < n_el; ++i) n.value[i] = n.aux[i];
    }
    return push(std::move(n));
}

void Tape::ensure_grad(VarId id) {
    Node& n = nodes_[id];
    if (n.grad.numel() == 0) n.grad = Tensor(n.value.shape());
}

Tensor Tape::grad(VarId id) const {
    const Node& n = nodes_[id];
    if (n.grad.numel() == 0) return Tensor(n.value.shape());
    return n.grad;
}

void Tape::backward(VarId root) {
    require(root < nodes_.size(), "backward: bad root id");
    require(nodes_[root].value.numel() == 1,
            "backward: root must be scalar, got " + nodes_[root].value.shape_str());
    require(nodes_[root].value.all_finite(), "backward: non-finite root value");
    for (Node& n : nodes_) n.grad = Tensor();
    if (!nodes_[root].requires_grad) return;  // constant root: all gradients stay zero
    ensure_grad(root);
    nodes_[root].grad[0] = 1.0;
    for (VarId id = root + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (n.grad.numel() == 0 || n.n_parents == 0 || !n.requires_grad) continue;
        propagate(id);
    }
}

void Tape::propagate(VarId id) {
    Node& n = nodes_[id];
    const Tensor& dy = n.grad;
    auto parent_grad = [&](int which) -> Tensor* {
        const VarId pid = n.parent[static_cast<size_t>(which)];
        if (!nodes_[pid].requires_grad) return nullptr;
        ensure_grad(pid);
        return &nodes_[pid].grad;
    };
    const Tensor& pa = nodes_[n.parent[0]].value;

    switch (n.op) {
        case Op::Leaf:
        case Op::Const:
            break;
        case Op::Add: {
            if (Tensor* g = parent_grad(0)) K().axpy(1.0, dy.data(), g->data(), dy.numel());
            if (Tensor* g = parent_grad(1)) K().axpy(1.0, dy.data(), g->data(), dy.numel());
            break;
        }
        case Op::Sub: {
            if (Tensor* g = parent_grad(0)) K().axpy(1.0, dy.data(), g->data(), dy.numel());
            if (Tensor* g = parent_grad(1)) K().axpy(-1.0, dy.data(), g->data(), dy.numel());
            break;
        }
        case Op::Mul: {
            const Tensor& pb = nodes_[n.parent[1]].value;
            if (Tensor* g = parent_grad(0))
                for (size_t i = 0; i < dy.numel(); ++i) (*g)[i] += dy[i] * pb[i];
            if (Tensor* g = parent_grad(1))
                for (size_t i = 0; i < dy.numel(); ++i) (*g)[i] += dy[i] * pa[i];
            break;
        }
        case Op::Scale: {
            if (Tensor* g = parent_grad(0)) K().axpy(n.c0, dy.data(), g->data(), dy.numel());
            break;
        }
        case Op::MulScalarVar: {
            const Tensor& pt = nodes_[n.parent[1]].value;
            if (Tensor* g = parent_grad(0)) (*g)[0] += K().dot(dy.data(), pt.data(), dy.numel());
            if (Tensor* g = parent_grad(1)) K().axpy(pa[0], dy.data(), g->data(), dy.numel());
            break;
        }
        case Op::Neg: {
            if (Tensor* g = parent_grad(0)) K().axpy(-1.0, dy.data(), g->data(), dy.numel());
            break;
        }
        case Op::Log: {
            if (Tensor* g = parent_grad(0))
                for (size_t i = 0; i < dy.numel(); ++i) (*g)[i] += dy[i] / pa[i];
            break;
        }
        case Op::Exp: {
            if (Tensor* g = parent_grad(0))
                for (size_t i = 0; i < dy.numel(); ++i) (*g)[i] += dy[i] * n.value[i];
            break;
        }
        case Op::Tanh: {
            if (Tensor* g = parent_grad(0))
                for (size_t i = 0; i < dy.numel(); ++i) (*g)[i] += dy[i] * (1.0 - n.value[i] * n.value[i]);
            break;
        }
        case Op::Sum: {
            if (Tensor* g = parent_grad(0))
                for (size_t i = 0; i < g->numel(); ++i) (*g)[i] += dy[0];
            break;
        }
        case Op::Mean: {
            if (Tensor* g = parent_grad(0)) {
                const double c = dy[0] / static_cast<double>(g->numel());
                for (size_t i = 0; i < g->numel(); ++i) (*g)[i] += c;
            }
            break;
        }
        case Op::MeanRows: {
            if (Tensor* g = parent_grad(0)) {
                const double inv = 1.0 / static_cast<double>(pa.dim(0));
                for (int64_t i = 0; i < pa.dim(0); ++i)
                    K().axpy(inv, dy.data(), g->row(i), dy.numel());
            }
            break;
        }
        case Op::Matmul: {
            const Tensor& pb = nodes_[n.parent[1]].value;
            const int64_t m = pa.dim(0), k = pa.dim(1), c = pb.dim(1);
            if (Tensor* g = parent_grad(0)) {
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < k; ++j)
                        g->row(i)[j] += K().dot(dy.row(i), pb.row(j), static_cast<size_t>(c));
            }
            if (Tensor* g = parent_grad(1)) {
                for (int64_t i = 0; i < m; ++i) {
                    const double* arow = pa.row(i);
                    for (int64_t j = 0; j < k; ++j)
                        K().axpy(arow[j], dy.row(i), g->row(j), static_cast<size_t>(c));
                }
            }
            break;
        }
        case Op::MatmulNT: {
            const Tensor& pb = nodes_[n.parent[1]].value;
            const int64_t m = pa.dim(0), k = pa.dim(1), c = pb.dim(0);
            if (Tensor* g = parent_grad(0)) {
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < c; ++j)
                        K().axpy(dy.row(i)[j], pb.row(j), g->row(i), static_cast<size_t>(k));
            }
            if (Tensor* g = parent_grad(1)) {
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < c; ++j)
                        K().axpy(dy.row(i)[j], pa.row(i), g->row(j), static_cast<size_t>(k));
            }
            break;
        }
        case Op::MatVec: {
            const Tensor& px = nodes_[n.parent[1]].value;
            const int64_t m = pa.dim(0), k = pa.dim(1);
            if (Tensor* g = parent_grad(0)) {
                for (int64_t i = 0; i < m; ++i)
                    K().axpy(dy[static_cast<size_t>(i)], px.data(), g->row(i), static_cast<size_t>(k));
            }
            if (Tensor* g = parent_grad(1)) {
                for (int64_t i = 0; i < m; ++i)
                    K().axpy(dy[static_cast<size_t>(i)], pa.row(i), g->data(), static_cast<size_t>(k));
            }
            break;
        }
        case Op::GatherRows: {
            if (Tensor* g = parent_grad(0)) {
                const int64_t d = pa.dim(1);
                for (size_t i = 0; i < n.idx.size(); ++i)
                    K().axpy(1.0, dy.row(static_cast<int64_t>(i)), g->row(n.idx[i]), static_cast<size_t>(d));
            }
            break;
        }
        case Op::RowsPick: {
            if (Tensor* g = parent_grad(0)) {
                for (size_t i = 0; i < n.idx.size(); ++i)
                    g->row(static_cast<int64_t>(i))[n.idx[i]] += dy[i];
            }
            break;
        }
        case Op::PickIndex: {
            if (Tensor* g = parent_grad(0)) (*g)[static_cast<size_t>(n.i0)] += dy[0];
            break;
        }
        case Op::SliceRows: {
            if (Tensor* g = parent_grad(0)) {
                const int64_t c = pa.cols();
                K().axpy(1.0, dy.data(), g->data() + static_cast<size_t>(n.i0 * c), dy.numel());
            }
            break;
        }
        case Op::ConcatRows: {
            const Tensor& pb = nodes_[n.parent[1]].value;
            if (Tensor* g = parent_grad(0)) K().axpy(1.0, dy.data(), g->data(), pa.numel());
            if (Tensor* g = parent_grad(1))
                K().axpy(1.0, dy.data() + pa.numel(), g->data(), pb.numel());
            break;
        }
        case Op::AddRowwise: {
            if (Tensor* g = parent_grad(0)) K().axpy(1.0, dy.data(), g->data(), dy.numel());
            if (Tensor* g = parent_grad(1)) {
                for (int64_t i = 0; i < dy.dim(0); ++i)
                    K().axpy(1.0, dy.row(i), g->data(), g->numel());
            }
            break;
        }
        case Op::SubColwise: {
            if (Tensor* g = parent_grad(0)) K().axpy(1.0, dy.data(), g->data(), dy.numel());
            if (Tensor* g = parent_grad(1)) {
                for (int64_t i = 0; i < dy.dim(0); ++i)
                    (*g)[static_cast<size_t>(i)] -= K().sum(dy.row(i), static_cast<size_t>(dy.dim(1)));
            }
            break;
        }
        case Op::RowwiseDot: {
            const Tensor& pb = nodes_[n.parent[1]].value;
            const int64_t c = pa.dim(1);
            if (Tensor* g = parent_grad(0)) {
                for (int64_t i = 0; i < pa.dim(0); ++i)
                    K().axpy(dy[static_cast<size_t>(i)], pb.row(i), g->row(i), static_cast<size_t>(c));
            }
            if (Tensor* g = parent_grad(1)) {
                for (int64_t i = 0; i < pa.dim(0); ++i)
                    K().axpy(dy[static_cast<size_t>(i)], pa.row(i), g->row(i), static_cast<size_t>(c));
            }
            break;
        }
        case Op::SoftmaxRows: {
            if (Tensor* g = parent_grad(0)) {
                const int64_t c = n.value.dim(1);
                for (int64_t i = 0; i < n.value.dim(0); ++i) {
                    const double* y = n.value.row(i);
                    const double* dyr = dy.row(i);
                    const double inner = K().dot(dyr, y, static_cast<size_t>(c));
                    double* gr = g->row(i);
                    for (int64_t j = 0; j < c; ++j) gr[j] += (dyr[j] - inner) * y[j];
                }
            }
            break;
        }
        case Op::LogSumExpRows: {
            if (Tensor* g = parent_grad(0)) {
                const int64_t c = pa.dim(1);
                for (int64_t i = 0; i < pa.dim(0); ++i) {
                    const double lse = n.value[static_cast<size_t>(i)];
                    const double dyi = dy[static_cast<size_t>(i)];
                    const double* x = pa.row(i);
                    double* gr = g->row(i);
                    for (int64_t j = 0; j < c; ++j) gr[j] += dyi * std::exp(x[j] - lse);
                }
            }
            break;
        }
        case Op::LogSumExpVec: {
            if (Tensor* g = parent_grad(0)) {
                const double lse = n.value[0];
                for (size_t j = 0; j < pa.numel(); ++j) (*g)[j] += dy[0] * std::exp(pa[j] - lse);
            }
            break;
        }
        case Op::LayerNormRows: {
            const Tensor& vg = nodes_[n.parent[1]].value;
            const int64_t m = pa.dim(0), c = pa.dim(1);
            Tensor* ga = parent_grad(0);
            Tensor* gg = parent_grad(1);
            Tensor* gb = parent_grad(2);
            for (int64_t i = 0; i < m; ++i) {
                const double* xhat = n.aux.row(i);
                const double inv_std = xhat[c];
                const double* dyr = dy.row(i);
                if (gg != nullptr)
                    for (int64_t j = 0; j < c; ++j) (*gg)[static_cast<size_t>(j)] += dyr[j] * xhat[j];
                if (gb != nullptr)
                    for (int64_t j = 0; j < c; ++j) (*gb)[static_cast<size_t>(j)] += dyr[j];
                if (ga != nullptr) {
                    // dxhat = dy * gain; dx = inv_std*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                    double s1 = 0.0, s2 = 0.0;
                    for (int64_t j = 0; j < c; ++j) {
                        const double dxh = dyr[j] * vg[static_cast<size_t>(j)];
                        s1 += dxh;
                        s2 += dxh * xhat[j];
                    }
                    s1 /= static_cast<double>(c);
                    s2 /= static_cast<double>(c);
                    double* gr = ga->row(i);
                    for (int64_t j = 0; j < c; ++j) {
                        const double dxh = dyr[j] * vg[static_cast<size_t>(j)];
                        gr[j] += inv_std * (dxh - s1 - xhat[j] * s2);
                    }
                }
            }
            break;
        }
        case Op::SqdistRows: {
            const Tensor& pb = nodes_[n.parent[1]].value;
            const int64_t m = pa.dim(0), v = pb.dim(0), d = pa.dim(1);
            if (Tensor* g = parent_grad(0)) {
                for (int64_t i = 0; i < m; ++i) {
                    const double* dyr = dy.row(i);
                    const double rowsum = K().sum(dyr, static_cast<size_t>(v));
                    double* gr = g->row(i);
                    K().axpy(2.0 * rowsum, pa.row(i), gr, static_cast<size_t>(d));
                    for (int64_t j = 0; j < v; ++j)
                        K().axpy(-2.0 * dyr[j], pb.row(j), gr, static_cast<size_t>(d));
                }
            }
            if (Tensor* g = parent_grad(1)) {
                for (int64_t j = 0; j < v; ++j) {
                    double colsum = 0.0;
                    for (int64_t i = 0; i < m; ++i) colsum += dy.row(i)[j];
                    double* gr = g->row(j);
                    K().axpy(2.0 * colsum, pb.row(j), gr, static_cast<size_t>(d));
                    for (int64_t i = 0; i < m; ++i)
                        K().axpy(-2.0 * dy.row(i)[j], pa.row(i), gr, static_cast<size_t>(d));
                }
            }
            break;
        }
        case Op::GumbelSoftmax: {
            // straight-through: backward through the pre-sample softmax
            if (Tensor* g = parent_grad(0)) {
                const double* s = n.aux.data();
                const double inner = K().dot(dy.data(), s, dy.numel());
                for (size_t j = 0; j < dy.numel(); ++j) (*g)[j] += (dy[j] - inner) * s[j] / n.c0;
            }
            break;
        }
    }
}

}  // namespace lcs
