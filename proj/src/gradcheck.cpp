#include "lcs/gradcheck.hpp"

#include <cmath>

namespace lcs {

double max_relative_grad_error(const GradProblem& p, const std::vector<Tensor>& inputs, double h) {
    Tape t;
    auto [root, leaves] = p.build(t, inputs);
    t.backward(root);
    std::vector<Tensor> grads;
    for (VarId l : leaves) grads.push_back(t.grad(l));

    double worst = 0.0;
    for (size_t li = 0; li < inputs.size(); ++li) {
        for (size_t c = 0; c < inputs[li].numel(); ++c) {
            std::vector<Tensor> plus = inputs, minus = inputs;
            plus[li][c] += h;
            minus[li][c] -= h;
            Tape tp, tm;
            const double fp = tp.value(p.build(tp, plus).first).item();
            const double fm = tm.value(p.build(tm, minus).first).item();
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = grads[li][c];
            const double rel = std::abs(ad - fd) / (std::abs(ad) + 1e-8);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

namespace {

Tensor rand_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.gaussian() * scale;
    return t;
}

Tensor rand_positive(std::vector<int64_t> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = 0.5 + rng.uniform() * 2.0;
    return t;
}

using Build = std::pair<VarId, std::vector<VarId>>;

std::vector<GradProblem> make_ops() {
    std::vector<GradProblem> out;

    auto add = [](std::string name, std::function<std::vector<Tensor>(Rng&)> mk,
                  std::function<Build(Tape&, const std::vector<Tensor>&)> build,
                  std::vector<GradProblem>& v) {
        v.push_back({std::move(name), std::move(mk), std::move(build)});
    };

    add("add",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({3, 4}, r), rand_tensor({3, 4}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]), b = t.leaf(in[1]);
            return {t.sum(t.tanh(t.add(a, b))), {a, b}};
        },
        out);
    add("sub",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({7}, r), rand_tensor({7}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]), b = t.leaf(in[1]);
            return {t.sum(t.tanh(t.sub(a, b))), {a, b}};
        },
        out);
    add("mul",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({2, 5}, r), rand_tensor({2, 5}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]), b = t.leaf(in[1]);
            return {t.sum(t.mul(a, b)), {a, b}};
        },
        out);
    add("scale",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({6}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]);
            return {t.sum(t.tanh(t.scale(a, -1.7))), {a}};
        },
        out);
    add("mul_scalar_var",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({}, r), rand_tensor({4}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId s = t.leaf(in[0]), a = t.leaf(in[1]);
            return {t.sum(t.tanh(t.mul_scalar_var(s, a))), {s, a}};
        },
        out);
    add("neg",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({5}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]);
            return {t.sum(t.tanh(t.neg(a))), {a}};
        },
        out);
    add("log",
        [](Rng& r) { return std::vector<Tensor>{rand_positive({6}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]);
            return {t.sum(t.log(a)), {a}};
        },
        out);
    add("exp",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({6}, r, 0.5)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]);
            return {t.sum(t.exp(a)), {a}};
        },
        out);
    add("tanh",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({6}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]);
            return {t.sum(t.tanh(a)), {a}};
        },
        out);
    add("mean",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({3, 3}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]);
            return {t.mean(t.mul(a, a)), {a}};
        },
        out);
    add("mean_rows",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({4, 3}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]);
            return {t.sum(t.tanh(t.mean_rows(a))), {a}};
        },
        out);
    add("matmul",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({3, 4}, r, 0.5), rand_tensor({4, 2}, r, 0.5)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]), b = t.leaf(in[1]);
            return {t.sum(t.tanh(t.matmul(a, b))), {a, b}};
        },
        out);
    add("matmul_nt",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({3, 4}, r, 0.5), rand_tensor({5, 4}, r, 0.5)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]), b = t.leaf(in[1]);
            return {t.sum(t.tanh(t.matmul_nt(a, b))), {a, b}};
        },
        out);
    add("matvec",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({3, 4}, r, 0.5), rand_tensor({4}, r, 0.5)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]), x = t.leaf(in[1]);
            return {t.sum(t.tanh(t.matvec(a, x))), {a, x}};
        },
        out);
    add("gather_rows",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({6, 3}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]);
            return {t.sum(t.tanh(t.gather_rows(a, {4, 0, 4, 2}))), {a}};
        },
        out);
    add("rows_pick",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({3, 5}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]);
            return {t.sum(t.tanh(t.rows_pick(a, {1, 4, 0}))), {a}};
        },
        out);
    add("pick_index",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({5}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]);
            return {t.tanh(t.pick_index(a, 2)), {a}};
        },
        out);
    add("slice_rows",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({6, 2}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]);
            return {t.sum(t.tanh(t.slice_rows(a, 2, 3))), {a}};
        },
        out);
    add("concat_rows",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({2, 3}, r), rand_tensor({4, 3}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]), b = t.leaf(in[1]);
            return {t.sum(t.tanh(t.concat_rows(a, b))), {a, b}};
        },
        out);
    add("add_rowwise",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({3, 4}, r), rand_tensor({4}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]), v = t.leaf(in[1]);
            return {t.sum(t.tanh(t.add_rowwise(a, v))), {a, v}};
        },
        out);
    add("sub_colwise",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({3, 4}, r), rand_tensor({3}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]), v = t.leaf(in[1]);
            return {t.sum(t.tanh(t.sub_colwise(a, v))), {a, v}};
        },
        out);
    add("rowwise_dot",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({3, 4}, r, 0.5), rand_tensor({3, 4}, r, 0.5)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]), b = t.leaf(in[1]);
            return {t.sum(t.tanh(t.rowwise_dot(a, b))), {a, b}};
        },
        out);
    add("softmax_rows",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({3, 5}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]);
            // weighted sum keeps the row-sum constraint from hiding errors
            Tensor w({3, 5});
            for (size_t i = 0; i < w.numel(); ++i) w[i] = 0.1 * static_cast<double>(i + 1);
            return {t.sum(t.mul(t.softmax_rows(a), t.constant(w))), {a}};
        },
        out);
    add("logsumexp_rows",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({4, 5}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]);
            return {t.sum(t.tanh(t.logsumexp_rows(a))), {a}};
        },
        out);
    add("logsumexp_vec",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({7}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]);
            return {t.tanh(t.logsumexp_vec(a)), {a}};
        },
        out);
    add("layer_norm_rows",
        [](Rng& r) {
            return std::vector<Tensor>{rand_tensor({3, 6}, r), rand_positive({6}, r), rand_tensor({6}, r)};
        },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]), g = t.leaf(in[1]), b = t.leaf(in[2]);
            return {t.sum(t.tanh(t.layer_norm_rows(a, g, b))), {a, g, b}};
        },
        out);
    add("sqdist_rows",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({3, 4}, r), rand_tensor({5, 4}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId a = t.leaf(in[0]), b = t.leaf(in[1]);
            return {t.sum(t.tanh(t.scale(t.sqdist_rows(a, b), 0.1))), {a, b}};
        },
        out);
    add("gumbel_softmax_soft",
        [](Rng& r) { return std::vector<Tensor>{rand_tensor({6}, r)}; },
        [](Tape& t, const std::vector<Tensor>& in) -> Build {
            VarId g = t.leaf(in[0]);
            Tensor noise({6});
            for (size_t i = 0; i < 6; ++i) noise[i] = 0.3 * static_cast<double>(i) - 0.7;
            Tensor w({6});
            for (size_t i = 0; i < 6; ++i) w[i] = 0.2 * static_cast<double>(i + 1);
            return {t.sum(t.mul(t.gumbel_softmax(g, 0.7, noise, false), t.constant(w))), {g}};
        },
        out);
    return out;
}

}  // namespace

const std::vector<GradProblem>& op_gradient_problems() {
    static const std::vector<GradProblem> problems = make_ops();
    return problems;
}

std::vector<GradSuiteResult> run_gradient_suite(const std::vector<GradProblem>& problems, uint64_t seed,
                                                int instances_per_problem, double tol) {
    std::vector<GradSuiteResult> out;
    for (const auto& p : problems) {
        Rng rng(mix_seed(seed, std::hash<std::string>{}(p.name)));
        GradSuiteResult r;
        r.name = p.name;
        r.instances = instances_per_problem;
        for (int i = 0; i < instances_per_problem; ++i)
            r.max_rel_err = std::max(r.max_rel_err, max_relative_grad_error(p, p.make_inputs(rng)));
        r.pass = r.max_rel_err < tol;
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace lcs
