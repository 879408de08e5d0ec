#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "lcs/tensor.hpp"

namespace lcs {

using VarId = uint32_t;

enum class Op : uint8_t {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Scale,
    MulScalarVar,
    Neg,
    Log,
    Exp,
    Tanh,
    Sum,
    Mean,
    MeanRows,
    Matmul,
    MatmulNT,
    MatVec,
    GatherRows,
    RowsPick,
    PickIndex,
    SliceRows,
    ConcatRows,
    AddRowwise,
    SubColwise,
    RowwiseDot,
    SoftmaxRows,
    LogSumExpRows,
    LogSumExpVec,
    LayerNormRows,
    SqdistRows,
    GumbelSoftmax,
};

const char* op_name(Op op);

// Reverse-mode tape over dense f64 tensors. Values are computed eagerly as
// nodes are recorded (define-by-run); backward() walks the tape once in
// reverse creation order, which is a reverse topological order by
// construction. Gradient contributions accumulate in that fixed order, so
// results are bit-reproducible. A tape belongs to one thread.
class Tape {
public:
    struct Node {
        Op op = Op::Leaf;
        std::array<VarId, 3> parent{};
        uint8_t n_parents = 0;
        bool requires_grad = false;
        Tensor value;
        Tensor grad;               // allocated during backward
        double c0 = 0.0;           // op constant (scale factor, tau, ...)
        int64_t i0 = 0, i1 = 0;    // op integers (slice start/len, pick index)
        std::vector<int32_t> idx;  // gather / pick indices
        Tensor aux;                // cached forward intermediates for backward
    };

    // Leaves reject non-finite values; everything entering the graph is
    // checked here and nowhere else on the hot path.
    VarId leaf(Tensor value);
    VarId constant(Tensor value);

    VarId add(VarId a, VarId b);
    VarId sub(VarId a, VarId b);
    VarId mul(VarId a, VarId b);
    VarId scale(VarId a, double c);
    VarId mul_scalar_var(VarId scalar, VarId tensor);
    VarId neg(VarId a);
    VarId log(VarId a);
    VarId exp(VarId a);
    VarId tanh(VarId a);
    VarId sum(VarId a);
    VarId mean(VarId a);
    VarId mean_rows(VarId a);
    VarId matmul(VarId a, VarId b);
    VarId matmul_nt(VarId a, VarId b);
    VarId matvec(VarId a, VarId x);
    VarId gather_rows(VarId table, std::vector<int32_t> ids);
    VarId rows_pick(VarId a, std::vector<int32_t> cols);
    VarId pick_index(VarId v, int64_t i);
    VarId slice_rows(VarId a, int64_t start, int64_t len);
    VarId concat_rows(VarId a, VarId b);
    VarId add_rowwise(VarId a, VarId v);
    VarId sub_colwise(VarId a, VarId v);
    VarId rowwise_dot(VarId a, VarId b);
    VarId softmax_rows(VarId a);
    VarId logsumexp_rows(VarId a);
    VarId logsumexp_vec(VarId a);
    VarId layer_norm_rows(VarId a, VarId gain, VarId bias, double eps = 1e-5);
    VarId sqdist_rows(VarId a, VarId b);
    // Gumbel-softmax over tempered logits g/tau + noise. hard=true emits the
    // one-hot argmax sample while backward follows the underlying softmax
    // (straight-through); hard=false emits the softmax itself.
    VarId gumbel_softmax(VarId g, double tau, const Tensor& noise, bool hard);

    // Backward from a scalar root. Every reachable node gets its gradient;
    // leaves not connected to the root read back as zero.
    void backward(VarId root);

    const Tensor& value(VarId id) const { return nodes_[id].value; }
    // Gradient of the last backward() w.r.t. this node (zeros if untouched).
    Tensor grad(VarId id) const;

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    VarId push(Node&& n);
    Node& at(VarId id) { return nodes_[id]; }
    void ensure_grad(VarId id);
    void propagate(VarId id);

    std::vector<Node> nodes_;
};

}  // namespace lcs
