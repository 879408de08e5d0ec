#include "lcs/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "lcs/kernels.hpp"

namespace lcs {

namespace {

Tensor randn(std::vector<int64_t> shape, Rng& rng, double std_dev) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.gaussian() * std_dev;
    return t;
}

std::vector<int32_t> with_bos(std::span<const int32_t> prompt) {
    std::vector<int32_t> s{Lexicon::kBos};
    s.insert(s.end(), prompt.begin(), prompt.end());
    return s;
}

}  // namespace

CausalLM CausalLM::init(std::shared_ptr<EmbeddingTable> table, int n_layers, int64_t ffn_hidden,
                        int64_t context_limit, Rng& rng, double init_std) {
    CausalLM lm;
    lm.table = std::move(table);
    lm.context_limit = context_limit;
    const int64_t d = lm.table->dim();
    if (ffn_hidden <= 0) ffn_hidden = 4 * d;
    for (int l = 0; l < n_layers; ++l) {
        Layer layer;
        layer.ln1_g = Tensor::full({d}, 1.0);
        layer.ln1_b = Tensor({d});
        layer.wq = randn({d, d}, rng, init_std);
        layer.wk = randn({d, d}, rng, init_std);
        layer.wv = randn({d, d}, rng, init_std);
        layer.wo = randn({d, d}, rng, init_std);
        layer.ln2_g = Tensor::full({d}, 1.0);
        layer.ln2_b = Tensor({d});
        layer.w1 = randn({d, ffn_hidden}, rng, init_std);
        layer.b1 = Tensor({ffn_hidden});
        layer.w2 = randn({ffn_hidden, d}, rng, init_std);
        layer.b2 = Tensor({d});
        lm.layers.push_back(std::move(layer));
    }
    lm.lnf_g = Tensor::full({d}, 1.0);
    lm.lnf_b = Tensor({d});
    lm.out_bias = Tensor({lm.table->vocab()});
    return lm;
}

CausalLM CausalLM::zeroed(std::shared_ptr<EmbeddingTable> table, int n_layers, int64_t ffn_hidden,
                          int64_t context_limit) {
    Rng rng(0);
    CausalLM lm = init(std::move(table), n_layers, ffn_hidden, context_limit, rng, 0.0);
    for (auto& [name, t] : lm.named_params())
        for (size_t i = 0; i < t->numel(); ++i) (*t)[i] = 0.0;
    return lm;
}

std::vector<std::pair<std::string, Tensor*>> CausalLM::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        Layer& y = layers[l];
        out.emplace_back(p + "ln1_g", &y.ln1_g);
        out.emplace_back(p + "ln1_b", &y.ln1_b);
        out.emplace_back(p + "wq", &y.wq);
        out.emplace_back(p + "wk", &y.wk);
        out.emplace_back(p + "wv", &y.wv);
        out.emplace_back(p + "wo", &y.wo);
        out.emplace_back(p + "ln2_g", &y.ln2_g);
        out.emplace_back(p + "ln2_b", &y.ln2_b);
        out.emplace_back(p + "w1", &y.w1);
        out.emplace_back(p + "b1", &y.b1);
        out.emplace_back(p + "w2", &y.w2);
        out.emplace_back(p + "b2", &y.b2);
    }
    out.emplace_back("lnf_g", &lnf_g);
    out.emplace_back("lnf_b", &lnf_b);
    out.emplace_back("out_bias", &out_bias);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> CausalLM::named_params() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [name, t] : const_cast<CausalLM*>(this)->named_params()) out.emplace_back(name, t);
    return out;
}

CausalLM::Bound CausalLM::bind(Tape& t, bool trainable) const {
    Bound b;
    b.table = trainable ? t.leaf(table->rows) : t.constant(table->rows);
    for (auto& [name, p] : named_params())
        b.params.push_back(trainable ? t.leaf(*p) : t.constant(*p));
    return b;
}

Tensor CausalLM::positional_rows(int64_t tlen) const {
    const int64_t d = dim();
    Tensor pe({tlen, d});
    for (int64_t pos = 0; pos < tlen; ++pos) {
        for (int64_t i = 0; i < d; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
            pe.row(pos)[i] = std::sin(static_cast<double>(pos) * freq);
            if (i + 1 < d) pe.row(pos)[i + 1] = std::cos(static_cast<double>(pos) * freq);
        }
    }
    return pe;
}

VarId CausalLM::hidden_states(Tape& t, const Bound& b, VarId input_rows) const {
    const int64_t tlen = t.value(input_rows).dim(0);
    if (tlen > context_limit)
        throw Error("causal_lm: sequence length " + std::to_string(tlen) + " exceeds context limit " +
                    std::to_string(context_limit));
    const int64_t d = dim();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(d));

    Tensor mask({tlen, tlen});
    for (int64_t i = 0; i < tlen; ++i)
        for (int64_t j = i + 1; j < tlen; ++j) mask.row(i)[j] = -1e9;
    const VarId mask_c = t.constant(std::move(mask));

    VarId x = t.add(input_rows, t.constant(positional_rows(tlen)));
    size_t pi = 0;
    for (size_t l = 0; l < layers.size(); ++l) {
        const VarId ln1_g = b.params[pi++], ln1_b = b.params[pi++];
        const VarId wq = b.params[pi++], wk = b.params[pi++], wv = b.params[pi++], wo = b.params[pi++];
        const VarId ln2_g = b.params[pi++], ln2_b = b.params[pi++];
        const VarId w1 = b.params[pi++], b1 = b.params[pi++], w2 = b.params[pi++], b2 = b.params[pi++];

        const VarId a = t.layer_norm_rows(x, ln1_g, ln1_b);
        const VarId scores = t.add(t.scale(t.matmul_nt(t.matmul(a, wq), t.matmul(a, wk)), att_scale), mask_c);
        const VarId att = t.matmul(t.softmax_rows(scores), t.matmul(a, wv));
        x = t.add(x, t.matmul(att, wo));

        const VarId a2 = t.layer_norm_rows(x, ln2_g, ln2_b);
        const VarId h1 = t.tanh(t.add_rowwise(t.matmul(a2, w1), b1));
        x = t.add(x, t.add_rowwise(t.matmul(h1, w2), b2));
    }
    return t.layer_norm_rows(x, b.params[pi], b.params[pi + 1]);
}

VarId CausalLM::nll_soft(Tape& t, const Bound& b, std::span<const int32_t> prompt, VarId soft,
                         std::span<const int32_t> projected_ids) const {
    return nll_mixed(t, b, prompt, soft, projected_ids, static_cast<int64_t>(prompt.size()));
}

VarId CausalLM::nll_tokens(Tape& t, const Bound& b, std::span<const int32_t> seq) const {
    if (seq.empty()) throw Error("lm_nll: empty token sequence");
    std::vector<int32_t> inputs{Lexicon::kBos};
    inputs.insert(inputs.end(), seq.begin(), seq.end() - 1);
    const VarId h = hidden_states(t, b, t.gather_rows(b.table, inputs));
    const VarId logits = t.add_rowwise(t.matmul_nt(h, b.table), b.params.back());
    const VarId lse = t.logsumexp_rows(logits);
    const VarId num = t.rows_pick(logits, std::vector<int32_t>(seq.begin(), seq.end()));
    return t.sum(t.sub(lse, num));
}

double CausalLM::nll_discrete(std::span<const int32_t> prompt, std::span<const int32_t> output) const {
    if (output.empty()) throw Error("lm_nll: empty output");
    Tape t;
    const Bound b = bind(t, false);
    std::vector<int32_t> inputs = with_bos(prompt);
    inputs.insert(inputs.end(), output.begin(), output.end() - 1);
    const VarId h = hidden_states(t, b, t.gather_rows(b.table, inputs));
    const VarId hout = t.slice_rows(h, static_cast<int64_t>(prompt.size()), static_cast<int64_t>(output.size()));
    const VarId logits = t.add_rowwise(t.matmul_nt(hout, b.table), b.params.back());
    const VarId lse = t.logsumexp_rows(logits);
    const VarId num = t.rows_pick(logits, std::vector<int32_t>(output.begin(), output.end()));
    return t.value(t.sum(t.sub(lse, num))).item();
}

std::vector<double> CausalLM::next_distribution(std::span<const int32_t> ctx) const {
    Tape t;
    const Bound b = bind(t, false);
    const VarId h = hidden_states(t, b, t.gather_rows(b.table, with_bos(ctx)));
    const VarId hlast = t.slice_rows(h, t.value(h).dim(0) - 1, 1);
    const VarId logits = t.add_rowwise(t.matmul_nt(hlast, b.table), b.params.back());
    const Tensor& p = t.value(t.softmax_rows(logits));
    return std::vector<double>(p.data(), p.data() + p.numel());
}

std::vector<int32_t> ar_sample(const CausalLM& lm, std::span<const int32_t> prompt, int64_t max_len,
                               double nucleus_p, Rng& rng) {
    if (!(nucleus_p > 0.0 && nucleus_p <= 1.0))
        throw Error("ar_sample: nucleus_p must be in (0,1], got " + std::to_string(nucleus_p));
    std::vector<int32_t> ctx(prompt.begin(), prompt.end());
    std::vector<int32_t> out;
    while (static_cast<int64_t>(out.size()) < max_len &&
           static_cast<int64_t>(ctx.size()) + 2 <= lm.context_limit) {
        const std::vector<double> probs = lm.next_distribution(ctx);
        std::vector<int32_t> order(probs.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
            if (probs[static_cast<size_t>(a)] != probs[static_cast<size_t>(b)])
                return probs[static_cast<size_t>(a)] > probs[static_cast<size_t>(b)];
            return a < b;
        });
        double cum = 0.0;
        size_t cut = 0;
        while (cut < order.size()) {
            cum += probs[static_cast<size_t>(order[cut])];
            ++cut;
            if (cum >= nucleus_p) break;
        }
        const double u = rng.uniform() * cum;
        double acc = 0.0;
        int32_t chosen = order[cut - 1];
        for (size_t i = 0; i < cut; ++i) {
            acc += probs[static_cast<size_t>(order[i])];
            if (u < acc) {
                chosen = order[i];
                break;
            }
        }
        if (chosen == Lexicon::kEos) break;
        out.push_back(chosen);
        ctx.push_back(chosen);
    }
    return out;
}

AttributeClassifier AttributeClassifier::init(std::shared_ptr<EmbeddingTable> table, int n_labels,
                                              int64_t hidden, Rng& rng, double init_std) {
    AttributeClassifier c;
    c.table = std::move(table);
    c.n_labels = n_labels;
    const int64_t d = c.table->dim();
    c.w1 = randn({d, hidden}, rng, init_std);
    c.b1 = Tensor({hidden});
    c.w2 = randn({n_labels, hidden}, rng, init_std);
    c.b2 = Tensor({n_labels});
    return c;
}

AttributeClassifier AttributeClassifier::zeroed(std::shared_ptr<EmbeddingTable> table, int n_labels,
                                                int64_t hidden) {
    Rng rng(0);
    return init(std::move(table), n_labels, hidden, rng, 0.0);
}

std::vector<std::pair<std::string, Tensor*>> AttributeClassifier::named_params() {
    return {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}};
}

std::vector<std::pair<std::string, const Tensor*>> AttributeClassifier::named_params() const {
    return {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}};
}

AttributeClassifier::Bound AttributeClassifier::bind(Tape& t, bool trainable) const {
    // the table stays frozen even when the classifier trains
    Bound b;
    b.table = t.constant(table->rows);
    b.w1 = trainable ? t.leaf(w1) : t.constant(w1);
    b.b1 = trainable ? t.leaf(b1) : t.constant(b1);
    b.w2 = trainable ? t.leaf(w2) : t.constant(w2);
    b.b2 = trainable ? t.leaf(b2) : t.constant(b2);
    return b;
}

VarId AttributeClassifier::logits(Tape& t, const Bound& b, VarId input_rows) const {
    const VarId h1 = t.tanh(t.add_rowwise(t.matmul(input_rows, b.w1), b.b1));
    return t.add(t.matvec(b.w2, t.mean_rows(h1)), b.b2);
}

VarId AttributeClassifier::logprob(Tape& t, const Bound& b, VarId input_rows, int label) const {
    if (label < 0 || label >= n_labels)
        throw Error("classifier: label " + std::to_string(label) + " out of range [0," +
                    std::to_string(n_labels) + ")");
    const VarId lg = logits(t, b, input_rows);
    return t.sub(t.pick_index(lg, label), t.logsumexp_vec(lg));
}

double AttributeClassifier::logprob_discrete(std::span<const int32_t> ids, int label) const {
    Tape t;
    const Bound b = bind(t, false);
    const VarId x = t.gather_rows(b.table, std::vector<int32_t>(ids.begin(), ids.end()));
    return t.value(logprob(t, b, x, label)).item();
}

int AttributeClassifier::predict(std::span<const int32_t> ids) const {
    Tape t;
    const Bound b = bind(t, false);
    const VarId x = t.gather_rows(b.table, std::vector<int32_t>(ids.begin(), ids.end()));
    const Tensor& lg = t.value(logits(t, b, x));
    int best = 0;
    for (int c = 1; c < n_labels; ++c)
        if (lg[static_cast<size_t>(c)] > lg[static_cast<size_t>(best)]) best = c;
    return best;
}

ConditionalLM ConditionalLM::from_class_lms(std::vector<std::shared_ptr<const CausalLM>> lms) {
    if (lms.size() < 2) throw Error("conditional_lm: need at least two class models");
    const uint64_t h0 = lms[0]->table->content_hash();
    for (const auto& lm : lms)
        if (lm->table->content_hash() != h0)
            throw Error("conditional_lm: class models do not share one embedding table");
    ConditionalLM c;
    c.class_lms = std::move(lms);
    return c;
}

ConditionalLM ConditionalLM::verbalized(std::shared_ptr<const CausalLM> base,
                                        std::vector<int32_t> verbalizers) {
    if (verbalizers.size() < 2) throw Error("conditional_lm: need a verbalizer per label");
    ConditionalLM c;
    c.base = std::move(base);
    c.verbalizer_ids = std::move(verbalizers);
    return c;
}

int ConditionalLM::n_labels() const {
    return base ? static_cast<int>(verbalizer_ids.size()) : static_cast<int>(class_lms.size());
}

const CausalLM& ConditionalLM::lm_for(int label) const {
    if (label < 0 || label >= n_labels())
        throw Error("conditional_lm: label " + std::to_string(label) + " out of range");
    return base ? *base : *class_lms[static_cast<size_t>(label)];
}

const EmbeddingTable& ConditionalLM::shared_table() const { return *lm_for(0).table; }

VarId ConditionalLM::nll_joint(Tape& t, int label, std::span<const int32_t> prompt, VarId soft,
                               std::span<const int32_t> projected_ids) const {
    const CausalLM& lm = lm_for(label);
    std::vector<int32_t> full_prompt;
    int64_t score_from = 0;
    if (base) {
        full_prompt.push_back(verbalizer_ids[static_cast<size_t>(label)]);
        score_from = 1;
    }
    full_prompt.insert(full_prompt.end(), prompt.begin(), prompt.end());
    const CausalLM::Bound b = lm.bind(t, false);
    return lm.nll_mixed(t, b, full_prompt, soft, projected_ids, score_from);
}

double ConditionalLM::nll_joint_discrete(int label, std::span<const int32_t> prompt,
                                         std::span<const int32_t> output) const {
    Tape t;
    const CausalLM& lm = lm_for(label);
    const CausalLM::Bound b = lm.bind(t, false);
    const VarId soft = t.constant([&] {
        Tensor rows({static_cast<int64_t>(output.size()), lm.dim()});
        for (size_t i = 0; i < output.size(); ++i)
            for (int64_t c = 0; c < lm.dim(); ++c) rows.row(static_cast<int64_t>(i))[c] = lm.table->row(output[i])[c];
        return rows;
    }());
    std::vector<int32_t> full_prompt;
    int64_t score_from = 0;
    if (base) {
        full_prompt.push_back(verbalizer_ids[static_cast<size_t>(label)]);
        score_from = 1;
    }
    full_prompt.insert(full_prompt.end(), prompt.begin(), prompt.end());
    return t.value(lm.nll_mixed(t, b, full_prompt, soft,
                                std::vector<int32_t>(output.begin(), output.end()), score_from))
        .item();
}

VarId CausalLM::nll_mixed(Tape& t, const Bound& b, std::span<const int32_t> prompt, VarId soft,
                          std::span<const int32_t> projected_ids, int64_t prompt_score_from) const {
    const Tensor& sv = t.value(soft);
    if (sv.rank() != 2 || sv.dim(1) != dim())
        throw Error("lm_nll: soft sequence shape " + sv.shape_str() + " does not match embedding dim " +
                    std::to_string(dim()));
    if (!sv.all_finite()) throw Error("lm_nll: non-finite soft vector");
    const int64_t L = sv.dim(0);
    if (static_cast<int64_t>(projected_ids.size()) != L)
        throw Error("lm_nll: projected id count mismatch");
    const int64_t m = static_cast<int64_t>(prompt.size());

    const VarId ctx = t.gather_rows(b.table, with_bos(prompt));
    const VarId stream = t.concat_rows(ctx, soft);
    const VarId h = hidden_states(t, b, stream);

    // soft-target factors
    const VarId hout = t.slice_rows(h, m, L);
    Tensor bias_pick({L});
    for (int64_t n = 0; n < L; ++n)
        bias_pick[static_cast<size_t>(n)] = out_bias[static_cast<size_t>(projected_ids[static_cast<size_t>(n)])];
    const VarId num = t.add(t.rowwise_dot(hout, soft), t.constant(std::move(bias_pick)));
    const VarId logits = t.add_rowwise(t.matmul_nt(hout, b.table), b.params.back());
    VarId nll = t.sum(t.sub(t.logsumexp_rows(logits), num));

    // discrete prompt factors from prompt_score_from on
    if (prompt_score_from < m) {
        const int64_t k = m - prompt_score_from;
        const VarId hp = t.slice_rows(h, prompt_score_from, k);
        const VarId plogits = t.add_rowwise(t.matmul_nt(hp, b.table), b.params.back());
        std::vector<int32_t> targets(prompt.begin() + prompt_score_from, prompt.end());
        const VarId pce = t.sum(t.sub(t.logsumexp_rows(plogits), t.rows_pick(plogits, std::move(targets))));
        nll = t.add(nll, pce);
    }
    return nll;
}

std::vector<double> generative_classprob(const ConditionalLM& cond, std::span<const int32_t> prompt,
                                         const SoftSequence& seq) {
    const int n = cond.n_labels();
    std::vector<double> neg_nll(static_cast<size_t>(n));
    for (int c = 0; c < n; ++c) {
        Tape t;
        const VarId soft = t.constant(seq.vectors);
        const double v = t.value(cond.nll_joint(t, c, prompt, soft, seq.projected_ids)).item();
        if (!std::isfinite(v)) throw Error("generative_classprob: non-finite class likelihood");
        neg_nll[static_cast<size_t>(c)] = -v;
    }
    const double mx = *std::max_element(neg_nll.begin(), neg_nll.end());
    double z = 0.0;
    for (double v : neg_nll) z += std::exp(v - mx);
    std::vector<double> out(static_cast<size_t>(n));
    for (int c = 0; c < n; ++c) out[static_cast<size_t>(c)] = std::exp(neg_nll[static_cast<size_t>(c)] - mx) / z;
    return out;
}

namespace {

struct GradAccum {
    std::vector<Tensor> grads;
    double tokens = 0.0;

    void init_like(const std::vector<VarId>& vars, const Tape& t) {
        grads.clear();
        for (VarId v : vars) grads.emplace_back(t.value(v).shape());
        tokens = 0.0;
    }
    void add_from(const Tape& t, const std::vector<VarId>& vars) {
        for (size_t i = 0; i < vars.size(); ++i) {
            const Tensor g = t.grad(vars[i]);
            kern::active().axpy(1.0, g.data(), grads[i].data(), g.numel());
        }
    }
};

}  // namespace

TrainLmResult train_lm(const std::vector<std::string>& corpus_lines, const TrainLmOptions& opts,
                       std::shared_ptr<EmbeddingTable> frozen_table) {
    std::vector<std::string> lines;
    for (const auto& l : corpus_lines)
        if (l.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(l);
    if (lines.empty()) throw Error("train_lm: empty corpus");

    std::shared_ptr<EmbeddingTable> table = frozen_table;
    Rng table_rng(mix_seed(opts.seed, 0x7ab1e));
    if (!table) {
        table = std::make_shared<EmbeddingTable>();
        table->lexicon = Lexicon::from_corpus(lines);
        table->rows = randn({table->lexicon.size(), opts.d}, table_rng, opts.table_init_std);
    }
    const bool train_table = (frozen_table == nullptr);

    std::vector<std::vector<int32_t>> seqs;
    for (const auto& l : lines) {
        std::vector<int32_t> ids = table->lexicon.encode(l);
        for (int r = 0; r < std::max(1, opts.eos_repeats); ++r) ids.push_back(Lexicon::kEos);
        if (static_cast<int64_t>(ids.size()) + 1 > opts.context_limit)
            throw Error("train_lm: corpus line longer than context limit: '" + l + "'");
        seqs.push_back(std::move(ids));
    }

    Rng split_rng(mix_seed(opts.seed, 0x5b117));
    std::vector<size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split_rng.uniform_int(i)]);
    size_t n_held = static_cast<size_t>(std::llround(opts.heldout_fraction * static_cast<double>(seqs.size())));
    n_held = std::min(n_held, seqs.size() - 1);
    std::vector<size_t> held(order.begin(), order.begin() + static_cast<long>(n_held));
    std::vector<size_t> train(order.begin() + static_cast<long>(n_held), order.end());
    if (held.empty()) held = train;

    Rng init_rng(mix_seed(opts.seed, 0x1417));
    TrainLmResult res{CausalLM::init(table, opts.n_layers, opts.ffn_hidden, opts.context_limit,
                                     init_rng, opts.init_std),
                      0.0, std::log(static_cast<double>(table->vocab())), 0.0, {}};
    CausalLM& lm = res.lm;

    Rng shuffle_rng(mix_seed(opts.seed, 0x5481f));
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        for (size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[shuffle_rng.uniform_int(i)]);
        double epoch_nll = 0.0, epoch_tokens = 0.0;
        for (size_t start = 0; start < train.size(); start += static_cast<size_t>(opts.batch_size)) {
            const size_t end = std::min(train.size(), start + static_cast<size_t>(opts.batch_size));
            GradAccum table_acc, param_acc;
            bool first = true;
            double batch_nll = 0.0, batch_tokens = 0.0;
            for (size_t bi = start; bi < end; ++bi) {
                Tape t;
                const CausalLM::Bound b = lm.bind(t, true);
                if (first) {
                    table_acc.init_like({b.table}, t);
                    param_acc.init_like(b.params, t);
                    first = false;
                }
                const VarId nll = lm.nll_tokens(t, b, seqs[train[bi]]);
                t.backward(nll);
                table_acc.add_from(t, {b.table});
                param_acc.add_from(t, b.params);
                batch_nll += t.value(nll).item();
                batch_tokens += static_cast<double>(seqs[train[bi]].size());
            }
            if (!std::isfinite(batch_nll) || batch_nll / batch_tokens > 100.0 * res.uniform_nll)
                throw Error("train_lm: diverged at epoch " + std::to_string(epoch) +
                            " (batch mean NLL " + std::to_string(batch_nll / batch_tokens) +
                            ", uniform baseline " + std::to_string(res.uniform_nll) + ")");
            const double step = opts.lr / batch_tokens;
            if (train_table)
                kern::active().axpy(-step, table_acc.grads[0].data(), table->rows.data(), table->rows.numel());
            auto params = lm.named_params();
            for (size_t i = 0; i < params.size(); ++i)
                kern::active().axpy(-step, param_acc.grads[i].data(), params[i].second->data(),
                                    params[i].second->numel());
            epoch_nll += batch_nll;
            epoch_tokens += batch_tokens;
        }
        res.final_train_nll = epoch_nll / epoch_tokens;
    }

    double held_nll = 0.0, held_tokens = 0.0;
    for (size_t hi : held) {
        Tape t;
        const CausalLM::Bound b = lm.bind(t, false);
        held_nll += t.value(lm.nll_tokens(t, b, seqs[hi])).item();
        held_tokens += static_cast<double>(seqs[hi].size());
    }
    res.heldout_nll = held_nll / held_tokens;
    res.separation = verify_separation(*table);
    return res;
}

std::vector<std::pair<int, std::string>> parse_labeled_lines(const std::vector<std::string>& lines) {
    std::vector<std::pair<int, std::string>> out;
    for (size_t i = 0; i < lines.size(); ++i) {
        const auto& l = lines[i];
        if (l.find_first_not_of(" \t\r") == std::string::npos) continue;
        const size_t tab = l.find('\t');
        if (tab == std::string::npos)
            throw Error("labeled corpus: line " + std::to_string(i + 1) + " has no <label>\\t<text> separator");
        int label = 0;
        try {
            label = std::stoi(l.substr(0, tab));
        } catch (...) {
            throw Error("labeled corpus: line " + std::to_string(i + 1) + " has a non-integer label");
        }
        const std::string text = l.substr(tab + 1);
        if (text.find_first_not_of(" \t\r") == std::string::npos)
            throw Error("labeled corpus: line " + std::to_string(i + 1) + " has empty text");
        out.emplace_back(label, text);
    }
    if (out.empty()) throw Error("labeled corpus: no usable lines");
    return out;
}

TrainClassifierResult train_classifier(std::shared_ptr<EmbeddingTable> table,
                                       const std::vector<std::string>& labeled_lines,
                                       const TrainClassifierOptions& opts) {
    const auto parsed = parse_labeled_lines(labeled_lines);
    struct Ex {
        int label;
        std::vector<int32_t> ids;
    };
    std::vector<Ex> examples;
    for (const auto& [label, text] : parsed) {
        if (label < 0 || label >= opts.n_labels)
            throw Error("train_classifier: label " + std::to_string(label) + " out of range");
        examples.push_back({label, table->lexicon.encode(text)});
    }

    Rng split_rng(mix_seed(opts.seed, 0x5b117));
    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split_rng.uniform_int(i)]);
    size_t n_held = static_cast<size_t>(std::llround(opts.heldout_fraction * static_cast<double>(examples.size())));
    n_held = std::min(n_held, examples.size() - 1);
    std::vector<size_t> held(order.begin(), order.begin() + static_cast<long>(n_held));
    std::vector<size_t> train(order.begin() + static_cast<long>(n_held), order.end());
    if (held.empty()) held = train;

    // Augmentation: real examples with a fraction of tokens replaced by
    // random ids, trained toward a softened version of their label. Keeps the
    // classifier's gradients informative off the data manifold without
    // letting its confidence explode there.
    std::vector<bool> augmented(examples.size(), false);
    if (opts.noise_augment > 0.0) {
        Rng aug_rng(mix_seed(opts.seed, 0xa06));
        const size_t n_real = train.size();
        const auto n_aug = static_cast<size_t>(opts.noise_augment * static_cast<double>(n_real));
        for (size_t a = 0; a < n_aug; ++a) {
            Ex ex = examples[train[aug_rng.uniform_int(n_real)]];
            for (auto& id : ex.ids)
                if (aug_rng.uniform() < 0.4)
                    id = static_cast<int32_t>(aug_rng.uniform_int(static_cast<uint64_t>(table->vocab())));
            train.push_back(examples.size());
            examples.push_back(std::move(ex));
            augmented.push_back(true);
        }
    }

    Rng init_rng(mix_seed(opts.seed, 0x1417));
    TrainClassifierResult res{
        AttributeClassifier::init(table, opts.n_labels, opts.hidden, init_rng, opts.init_std), 0.0, 0.0, 0.0};
    AttributeClassifier& clf = res.clf;

    Rng shuffle_rng(mix_seed(opts.seed, 0x5481f));
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        for (size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[shuffle_rng.uniform_int(i)]);
        double epoch_loss = 0.0;
        double epoch_n = 0.0;
        for (size_t start = 0; start < train.size(); start += static_cast<size_t>(opts.batch_size)) {
            const size_t end = std::min(train.size(), start + static_cast<size_t>(opts.batch_size));
            GradAccum acc;
            bool first = true;
            std::vector<VarId> vars;
            double batch_loss = 0.0;
            for (size_t bi = start; bi < end; ++bi) {
                Tape t;
                const AttributeClassifier::Bound b = clf.bind(t, true);
                vars = {b.w1, b.b1, b.w2, b.b2};
                if (first) {
                    acc.init_like(vars, t);
                    first = false;
                }
                const Ex& ex = examples[train[bi]];
                const VarId x = t.gather_rows(b.table, ex.ids);
                VarId loss;
                const bool is_aug = augmented[train[bi]];
                if (opts.label_smoothing > 0.0 || is_aug) {
                    const double s = is_aug ? 0.4 : opts.label_smoothing;
                    Tensor q({opts.n_labels});
                    for (int c = 0; c < opts.n_labels; ++c)
                        q[static_cast<size_t>(c)] = c == ex.label
                                                        ? 1.0 - s + s / opts.n_labels
                                                        : s / opts.n_labels;
                    const VarId lg = clf.logits(t, b, x);
                    const VarId lse_vec = t.mul_scalar_var(t.logsumexp_vec(lg),
                                                           t.constant(Tensor::full({opts.n_labels}, 1.0)));
                    // cross-entropy against the smoothed target
                    loss = t.neg(t.sum(t.mul(t.sub(lg, lse_vec), t.constant(std::move(q)))));
                } else {
                    loss = t.neg(clf.logprob(t, b, x, ex.label));
                }
                t.backward(loss);
                acc.add_from(t, vars);
                batch_loss += t.value(loss).item();
            }
            if (!std::isfinite(batch_loss))
                throw Error("train_classifier: diverged (non-finite loss) at epoch " + std::to_string(epoch));
            const double step = opts.lr / static_cast<double>(end - start);
            auto params = clf.named_params();
            for (size_t i = 0; i < params.size(); ++i) {
                Tensor* p = params[i].second;
                kern::active().axpy(-step, acc.grads[i].data(), p->data(), p->numel());
                const bool is_matrix = params[i].first == "w1" || params[i].first == "w2";
                if (opts.weight_decay > 0.0 && is_matrix)
                    kern::active().scale(1.0 - opts.lr * opts.weight_decay, p->data(), p->data(),
                                         p->numel());
            }
            epoch_loss += batch_loss;
            epoch_n += static_cast<double>(end - start);
        }
        res.final_train_loss = epoch_loss / epoch_n;
    }

    auto accuracy = [&](const std::vector<size_t>& idx) {
        int hits = 0, n = 0;
        for (size_t i : idx) {
            if (augmented[i]) continue;
            ++n;
            if (clf.predict(examples[i].ids) == examples[i].label) ++hits;
        }
        return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
    };
    res.train_accuracy = accuracy(train);
    res.heldout_accuracy = accuracy(held);
    return res;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

}  // namespace lcs
