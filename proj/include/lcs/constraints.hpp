#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lcs/models.hpp"

namespace lcs {

constexpr double kDefaultGumbelTau = 0.1;
constexpr double kDefaultThresholdDelta = 0.1;   // slack above -log pi_ww
constexpr double kDefaultAvoidPMax = 0.01;       // avoid-form p_undesired < 0.01
constexpr double kDefaultMultiplierAlpha = 1.0;
constexpr int kDefaultMultiplierCadence = 20;

struct EvalContext {
    const EmbeddingTable* table;
    std::span<const int32_t> prompt;
    VarId soft;  // L x d on the tape
    std::span<const int32_t> projected_ids;
    Rng* rng;  // gumbel noise; unused by deterministic constraints
};

// One f_i(x, e~) <= epsilon_i with a live multiplier. Owned by a single chain;
// model references inside are immutable and shared.
class Constraint {
public:
    virtual ~Constraint() = default;

    const std::string& name() const { return name_; }
    double epsilon() const { return epsilon_; }
    double lambda() const { return lambda_; }
    void set_lambda(double l) { lambda_ = l; }

    virtual VarId build(Tape& t, const EvalContext& ctx) const = 0;
    virtual std::unique_ptr<Constraint> clone() const = 0;
    // satisfaction re-evaluated on a discrete output (keywords by contiguous
    // token-id subsequence)
    virtual bool check_discrete(std::span<const int32_t> prompt, std::span<const int32_t> ids) const = 0;
    virtual uint64_t table_hash() const = 0;  // 0 when no table is referenced

protected:
    Constraint(std::string name, double epsilon) : name_(std::move(name)), epsilon_(epsilon) {}
    std::string name_;
    double epsilon_;
    double lambda_ = 0.0;
};

using ConstraintSet = std::vector<std::unique_ptr<Constraint>>;

ConstraintSet clone_constraints(const ConstraintSet& cs);

// f = -log p(desired | seq), epsilon = -log p_min; satisfied iff
// p(desired | prompt+seq) >= p_min
std::unique_ptr<Constraint> disc_constraint(std::shared_ptr<const AttributeClassifier> clf,
                                            int desired, double p_min, std::string name = "");

// f = log p(x,y|other) - log p(x,y|desired), epsilon = 0
std::unique_ptr<Constraint> gen_constraint(std::shared_ptr<const ConditionalLM> cond, int desired,
                                           int other, std::string name = "");

// n-1 pairwise constraints p_desired > p_k for the n-class setup
ConstraintSet gen_constraints_nclass(std::shared_ptr<const ConditionalLM> cond, int desired);

// epsilon = mean_u -log pi_{w_u}[w_u] + delta; errors if any phrase token
// fails the separation property (the guarantee would not hold)
double keyword_threshold(const EmbeddingTable& table, std::span<const int32_t> phrase, double delta);

std::unique_ptr<Constraint> keyword_constraint(std::shared_ptr<const EmbeddingTable> table,
                                               std::vector<int32_t> phrase,
                                               double tau = kDefaultGumbelTau,
                                               double delta = kDefaultThresholdDelta,
                                               std::string name = "", bool hard_sample = true);

// satisfied iff at least one member phrase's own constraint is satisfied:
// f = min_w (d_w - epsilon_w), epsilon = 0
std::unique_ptr<Constraint> keyword_set_constraint(std::shared_ptr<const EmbeddingTable> table,
                                                   std::vector<std::vector<int32_t>> members,
                                                   double tau = kDefaultGumbelTau,
                                                   double delta = kDefaultThresholdDelta,
                                                   std::string name = "");

// keyword distance as a standalone value (draws one gumbel sample)
double keyword_distance_value(const EmbeddingTable& table, std::span<const int32_t> phrase,
                              const SoftSequence& seq, double tau, Rng& rng);

// per-window -g_p values: d restricted to each admissible one-hot q
std::vector<double> keyword_window_distances(const EmbeddingTable& table,
                                             std::span<const int32_t> phrase, const SoftSequence& seq);

struct MultiplierSchedule {
    double alpha = kDefaultMultiplierAlpha;
    int64_t cadence = kDefaultMultiplierCadence;
    bool violation_boost = true;  // per-iteration updates while stalled and violated
    double damping = 0.0;         // EMA factor on f - epsilon; 0 disables
};

// lambda_i <- max(0, lambda_i + alpha (f_i - epsilon_i)) on cadence
// iterations (iter is 1-based), or every iteration for a constraint that is
// violated while the chain is stalled.
void update_multipliers(ConstraintSet& cs, std::span<const double> f_values,
                        const MultiplierSchedule& sched, bool stalled, int64_t iter,
                        std::vector<double>* ema_state = nullptr);

struct EnergyParts {
    VarId energy;
    VarId nll;
    std::vector<VarId> f_vars;
    std::vector<VarId> lambda_vars;
    std::vector<double> f_values;
};

// E = lm_nll - sum_i lambda_i (epsilon_i - f_i), with the lambdas recorded as
// leaves so backward() yields dE/dlambda_i = f_i - epsilon_i. With every
// lambda at zero the penalty terms are exact zeros and E equals lm_nll
// bitwise.
EnergyParts build_energy(Tape& t, const CausalLM& lm, const EvalContext& ctx, const ConstraintSet& cs);

}  // namespace lcs
