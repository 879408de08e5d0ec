#include "lcs/constraints.hpp"

#include <algorithm>
#include <cmath>

namespace lcs {

namespace {

bool contains_subsequence(std::span<const int32_t> ids, std::span<const int32_t> phrase) {
    if (phrase.empty() || ids.size() < phrase.size()) return false;
    for (size_t p = 0; p + phrase.size() <= ids.size(); ++p) {
        bool hit = true;
        for (size_t u = 0; u < phrase.size(); ++u)
            if (ids[p + u] != phrase[u]) {
                hit = false;
                break;
            }
        if (hit) return true;
    }
    return false;
}

class DiscConstraint final : public Constraint {
public:
    DiscConstraint(std::string name, std::shared_ptr<const AttributeClassifier> clf, int desired,
                   double p_min)
        : Constraint(std::move(name), -std::log(p_min)), clf_(std::move(clf)), desired_(desired),
          p_min_(p_min) {}

    VarId build(Tape& t, const EvalContext& ctx) const override {
        const AttributeClassifier::Bound b = clf_->bind(t, false);
        VarId x = ctx.soft;
        if (!ctx.prompt.empty()) {
            const VarId pe = t.gather_rows(b.table, std::vector<int32_t>(ctx.prompt.begin(), ctx.prompt.end()));
            x = t.concat_rows(pe, ctx.soft);
        }
        return t.neg(clf_->logprob(t, b, x, desired_));
    }

    std::unique_ptr<Constraint> clone() const override { return std::make_unique<DiscConstraint>(*this); }

    bool check_discrete(std::span<const int32_t> prompt, std::span<const int32_t> ids) const override {
        std::vector<int32_t> full(prompt.begin(), prompt.end());
        full.insert(full.end(), ids.begin(), ids.end());
        return clf_->logprob_discrete(full, desired_) >= std::log(p_min_);
    }

    uint64_t table_hash() const override { return clf_->table->content_hash(); }

private:
    std::shared_ptr<const AttributeClassifier> clf_;
    int desired_;
    double p_min_;
};

class GenConstraint final : public Constraint {
public:
    GenConstraint(std::string name, std::shared_ptr<const ConditionalLM> cond, int desired, int other)
        : Constraint(std::move(name), 0.0), cond_(std::move(cond)), desired_(desired), other_(other) {}

    VarId build(Tape& t, const EvalContext& ctx) const override {
        const VarId nll_desired = cond_->nll_joint(t, desired_, ctx.prompt, ctx.soft, ctx.projected_ids);
        const VarId nll_other = cond_->nll_joint(t, other_, ctx.prompt, ctx.soft, ctx.projected_ids);
        return t.sub(nll_desired, nll_other);  // = log p(.|other) - log p(.|desired)
    }

    std::unique_ptr<Constraint> clone() const override { return std::make_unique<GenConstraint>(*this); }

    bool check_discrete(std::span<const int32_t> prompt, std::span<const int32_t> ids) const override {
        return cond_->nll_joint_discrete(desired_, prompt, ids) <=
               cond_->nll_joint_discrete(other_, prompt, ids);
    }

    uint64_t table_hash() const override { return cond_->shared_table().content_hash(); }

private:
    std::shared_ptr<const ConditionalLM> cond_;
    int desired_;
    int other_;
};

// shared builder: per-window scores g_p = mean_u log pi_{p+u}[w_u]
VarId build_window_scores(Tape& t, VarId neg_dist, VarId lse, std::span<const int32_t> phrase,
                          int64_t out_len) {
    const int64_t l = static_cast<int64_t>(phrase.size());
    const int64_t windows = out_len - l + 1;
    VarId acc = 0;
    bool have = false;
    for (int64_t u = 0; u < l; ++u) {
        const VarId col = t.sub(t.rows_pick(neg_dist, std::vector<int32_t>(static_cast<size_t>(out_len),
                                                                           phrase[static_cast<size_t>(u)])),
                                lse);
        const VarId win = t.slice_rows(col, u, windows);
        acc = have ? t.add(acc, win) : win;
        have = true;
    }
    return t.scale(acc, 1.0 / static_cast<double>(l));
}

class KeywordConstraint final : public Constraint {
public:
    KeywordConstraint(std::string name, std::shared_ptr<const EmbeddingTable> table,
                      std::vector<int32_t> phrase, double tau, double delta, bool hard)
        : Constraint(std::move(name), keyword_threshold(*table, phrase, delta)), table_(std::move(table)),
          phrase_(std::move(phrase)), tau_(tau), hard_(hard) {
        if (tau_ <= 0.0) throw Error("keyword constraint: tau must be positive");
    }

    VarId build(Tape& t, const EvalContext& ctx) const override {
        const int64_t out_len = t.value(ctx.soft).dim(0);
        const int64_t l = static_cast<int64_t>(phrase_.size());
        if (out_len < l)
            throw Error("keyword constraint '" + name_ + "': output length " + std::to_string(out_len) +
                        " shorter than phrase length " + std::to_string(l));
        const VarId neg_dist = t.neg(t.sqdist_rows(ctx.soft, t.constant(table_->rows)));
        const VarId lse = t.logsumexp_rows(neg_dist);
        const VarId g = build_window_scores(t, neg_dist, lse, phrase_, out_len);

        const int64_t windows = out_len - l + 1;
        Tensor noise({windows});
        for (int64_t i = 0; i < windows; ++i)
            noise[static_cast<size_t>(i)] = ctx.rng != nullptr ? ctx.rng->gumbel() : 0.0;
        const VarId q = t.gumbel_softmax(g, tau_, noise, hard_);
        return t.neg(t.sum(t.mul(q, g)));
    }

    std::unique_ptr<Constraint> clone() const override { return std::make_unique<KeywordConstraint>(*this); }

    bool check_discrete(std::span<const int32_t>, std::span<const int32_t> ids) const override {
        return contains_subsequence(ids, phrase_);
    }

    uint64_t table_hash() const override { return table_->content_hash(); }

private:
    std::shared_ptr<const EmbeddingTable> table_;
    std::vector<int32_t> phrase_;
    double tau_;
    bool hard_;
};

class KeywordSetConstraint final : public Constraint {
public:
    KeywordSetConstraint(std::string name, std::shared_ptr<const EmbeddingTable> table,
                         std::vector<std::vector<int32_t>> members, double tau, double delta)
        : Constraint(std::move(name), 0.0), table_(std::move(table)), members_(std::move(members)),
          tau_(tau) {
        if (members_.empty()) throw Error("keyword set constraint: empty set");
        if (tau_ <= 0.0) throw Error("keyword set constraint: tau must be positive");
        for (const auto& m : members_) member_eps_.push_back(keyword_threshold(*table_, m, delta));
    }

    VarId build(Tape& t, const EvalContext& ctx) const override {
        const int64_t out_len = t.value(ctx.soft).dim(0);
        const VarId neg_dist = t.neg(t.sqdist_rows(ctx.soft, t.constant(table_->rows)));
        const VarId lse = t.logsumexp_rows(neg_dist);
        // hard min over members; gradient follows the winning branch
        VarId best = 0;
        double best_val = 0.0;
        bool have = false;
        for (size_t mi = 0; mi < members_.size(); ++mi) {
            const auto& phrase = members_[mi];
            const int64_t l = static_cast<int64_t>(phrase.size());
            if (out_len < l)
                throw Error("keyword set constraint '" + name_ + "': output shorter than member phrase");
            const VarId g = build_window_scores(t, neg_dist, lse, phrase, out_len);
            const int64_t windows = out_len - l + 1;
            Tensor noise({windows});
            for (int64_t i = 0; i < windows; ++i)
                noise[static_cast<size_t>(i)] = ctx.rng != nullptr ? ctx.rng->gumbel() : 0.0;
            const VarId q = t.gumbel_softmax(g, tau_, noise, true);
            const VarId slack = t.sub(t.neg(t.sum(t.mul(q, g))), t.constant(Tensor::scalar(member_eps_[mi])));
            const double v = t.value(slack).item();
            if (!have || v < best_val) {
                best = slack;
                best_val = v;
                have = true;
            }
        }
        return best;
    }

    std::unique_ptr<Constraint> clone() const override {
        return std::make_unique<KeywordSetConstraint>(*this);
    }

    bool check_discrete(std::span<const int32_t>, std::span<const int32_t> ids) const override {
        for (const auto& m : members_)
            if (contains_subsequence(ids, m)) return true;
        return false;
    }

    uint64_t table_hash() const override { return table_->content_hash(); }

private:
    std::shared_ptr<const EmbeddingTable> table_;
    std::vector<std::vector<int32_t>> members_;
    std::vector<double> member_eps_;
    double tau_;
};

}  // namespace

ConstraintSet clone_constraints(const ConstraintSet& cs) {
    ConstraintSet out;
    out.reserve(cs.size());
    for (const auto& c : cs) out.push_back(c->clone());
    return out;
}

std::unique_ptr<Constraint> disc_constraint(std::shared_ptr<const AttributeClassifier> clf, int desired,
                                            double p_min, std::string name) {
    if (!(p_min > 0.0 && p_min < 1.0))
        throw Error("disc_constraint: p_min must be in (0,1), got " + std::to_string(p_min));
    if (desired < 0 || desired >= clf->n_labels) throw Error("disc_constraint: label out of range");
    if (name.empty()) name = "disc(label=" + std::to_string(desired) + ")";
    return std::make_unique<DiscConstraint>(std::move(name), std::move(clf), desired, p_min);
}

std::unique_ptr<Constraint> gen_constraint(std::shared_ptr<const ConditionalLM> cond, int desired,
                                           int other, std::string name) {
    if (desired == other) throw Error("gen_constraint: desired and other label are the same");
    if (desired < 0 || desired >= cond->n_labels() || other < 0 || other >= cond->n_labels())
        throw Error("gen_constraint: label out of range");
    if (name.empty())
        name = "gen(" + std::to_string(desired) + ">" + std::to_string(other) + ")";
    return std::make_unique<GenConstraint>(std::move(name), std::move(cond), desired, other);
}

ConstraintSet gen_constraints_nclass(std::shared_ptr<const ConditionalLM> cond, int desired) {
    ConstraintSet out;
    for (int other = 0; other < cond->n_labels(); ++other)
        if (other != desired) out.push_back(gen_constraint(cond, desired, other));
    return out;
}

double keyword_threshold(const EmbeddingTable& table, std::span<const int32_t> phrase, double delta) {
    if (phrase.empty()) throw Error("keyword_threshold: empty phrase");
    if (!(delta > 0.0)) throw Error("keyword_threshold: delta must be positive");
    double acc = 0.0;
    for (int32_t w : phrase) {
        if (w < 0 || w >= table.vocab()) throw Error("keyword_threshold: token id out of range");
        if (!token_separated(table, w))
            throw Error("keyword_threshold: token " + std::to_string(w) + " ('" + table.lexicon.token(w) +
                        "') violates the separation property; the threshold guarantee would not hold");
        acc += -log_pi(table, table.row(w), w);
    }
    return acc / static_cast<double>(phrase.size()) + delta;
}

std::unique_ptr<Constraint> keyword_constraint(std::shared_ptr<const EmbeddingTable> table,
                                               std::vector<int32_t> phrase, double tau, double delta,
                                               std::string name, bool hard_sample) {
    if (phrase.empty()) throw Error("keyword_constraint: empty phrase");
    if (name.empty()) {
        name = "keyword(";
        for (size_t i = 0; i < phrase.size(); ++i)
            name += (i > 0 ? " " : "") + table->lexicon.token(phrase[i]);
        name += ")";
    }
    return std::make_unique<KeywordConstraint>(std::move(name), std::move(table), std::move(phrase), tau,
                                               delta, hard_sample);
}

std::unique_ptr<Constraint> keyword_set_constraint(std::shared_ptr<const EmbeddingTable> table,
                                                   std::vector<std::vector<int32_t>> members, double tau,
                                                   double delta, std::string name) {
    if (name.empty()) name = "keyword_set(" + std::to_string(members.size()) + ")";
    return std::make_unique<KeywordSetConstraint>(std::move(name), std::move(table), std::move(members),
                                                  tau, delta);
}

double keyword_distance_value(const EmbeddingTable& table, std::span<const int32_t> phrase,
                              const SoftSequence& seq, double tau, Rng& rng) {
    Tape t;
    const VarId soft = t.leaf(seq.vectors);
    EvalContext ctx{&table, {}, soft, seq.projected_ids, &rng};
    auto shared = std::shared_ptr<const EmbeddingTable>(&table, [](const EmbeddingTable*) {});
    KeywordConstraint kc("tmp", shared, std::vector<int32_t>(phrase.begin(), phrase.end()), tau,
                         kDefaultThresholdDelta, true);
    return t.value(kc.build(t, ctx)).item();
}

std::vector<double> keyword_window_distances(const EmbeddingTable& table,
                                             std::span<const int32_t> phrase, const SoftSequence& seq) {
    const int64_t out_len = seq.length();
    const int64_t l = static_cast<int64_t>(phrase.size());
    if (out_len < l) throw Error("keyword_window_distances: sequence shorter than phrase");
    std::vector<double> out;
    for (int64_t p = 0; p + l <= out_len; ++p) {
        double g = 0.0;
        for (int64_t u = 0; u < l; ++u)
            g += log_pi(table, seq.vectors.row(p + u), phrase[static_cast<size_t>(u)]);
        out.push_back(-g / static_cast<double>(l));
    }
    return out;
}

void update_multipliers(ConstraintSet& cs, std::span<const double> f_values,
                        const MultiplierSchedule& sched, bool stalled, int64_t iter,
                        std::vector<double>* ema_state) {
    if (!(sched.alpha > 0.0)) throw Error("multiplier schedule: alpha must be positive");
    if (sched.cadence < 1) throw Error("multiplier schedule: cadence must be >= 1");
    if (f_values.size() != cs.size()) throw Error("update_multipliers: f value count mismatch");
    if (ema_state != nullptr && ema_state->size() != cs.size()) ema_state->assign(cs.size(), 0.0);
    const bool on_cadence = (iter % sched.cadence) == 0;
    for (size_t i = 0; i < cs.size(); ++i) {
        if (!std::isfinite(f_values[i]))
            throw Error("update_multipliers: non-finite f for constraint '" + cs[i]->name() + "'");
        double ascent = f_values[i] - cs[i]->epsilon();
        if (sched.damping > 0.0 && ema_state != nullptr) {
            (*ema_state)[i] = sched.damping * (*ema_state)[i] + (1.0 - sched.damping) * ascent;
            ascent = (*ema_state)[i];
        }
        const bool violated = f_values[i] > cs[i]->epsilon();
        if (on_cadence || (stalled && sched.violation_boost && violated))
            cs[i]->set_lambda(std::max(0.0, cs[i]->lambda() + sched.alpha * ascent));
    }
}

EnergyParts build_energy(Tape& t, const CausalLM& lm, const EvalContext& ctx, const ConstraintSet& cs) {
    EnergyParts out;
    const CausalLM::Bound b = lm.bind(t, false);
    out.nll = lm.nll_soft(t, b, ctx.prompt, ctx.soft, ctx.projected_ids);
    if (!std::isfinite(t.value(out.nll).item())) throw Error("energy: non-finite lm_nll term");
    out.energy = out.nll;
    for (const auto& c : cs) {
        const VarId f = c->build(t, ctx);
        const double fv = t.value(f).item();
        if (!std::isfinite(fv)) throw Error("energy: non-finite term for constraint '" + c->name() + "'");
        const VarId lam = t.leaf(Tensor::scalar(c->lambda()));
        const VarId slack = t.sub(t.constant(Tensor::scalar(c->epsilon())), f);
        out.energy = t.sub(out.energy, t.mul_scalar_var(lam, slack));
        out.f_vars.push_back(f);
        out.lambda_vars.push_back(lam);
        out.f_values.push_back(fv);
    }
    return out;
}

}  // namespace lcs
