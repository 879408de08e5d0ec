#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lcs/constraints.hpp"

namespace lcs {

struct NoiseSchedule {
    double beta_init = 5.0;
    double beta_floor = 0.05;
    int64_t anneal_steps = 100;
};

// beta_init * r^t for t < anneal_steps with r = (floor/init)^(1/(anneal-1)),
// beta_floor afterwards
double beta_at(const NoiseSchedule& s, int64_t t);

struct SamplerConfig {
    int64_t max_steps = 250;
    double eta = 0.2;
    double eta_max = 1.0;
    int64_t stall_window = 40;  // s: probe steps before an early stop
    NoiseSchedule noise;
    MultiplierSchedule multipliers;
    int64_t restarts = 3;
    int64_t min_repeats = 5;
    uint64_t seed = 0;
    // "updating" means the projection changed or the pre-projection move
    // exceeded this; 0 selects 1e-6 * sqrt(state dim)
    double stall_tolerance = 0.0;
    double fallback_nucleus_p = kDefaultNucleusP;
    bool allow_fallback = true;
    uint64_t memory_cap_bytes = 0;  // 0 = uncapped; optimizer-state accounting
    bool keep_trace = true;

    void validate() const;
};

enum class Termination {
    ConvergedEarlyStop,
    SelectedByRepeat,
    FallbackAutoregressive,
    FailedRestartExhausted,
};

const char* termination_name(Termination t);
Termination termination_from_name(const std::string& s);

struct TraceEntry {
    int32_t attempt;
    int64_t iter;  // global across attempts, 1-based
    double energy;
    double nll;
    std::vector<double> f;
    std::vector<double> lambda;
    double beta;
    double eta;
    uint64_t ids_hash;
};

struct ConstraintOutcome {
    std::string name;
    double f_final;  // NaN when not evaluable on the emitted output
    double epsilon;
    bool satisfied;
};

struct SampleRecord {
    std::vector<int32_t> output_ids;
    std::string output_text;
    Termination termination = Termination::FailedRestartExhausted;
    std::vector<TraceEntry> trace;
    std::vector<ConstraintOutcome> constraints;
    double nll = 0.0;  // discrete NLL of the output under the base LM
    int64_t iterations = 0;
    int32_t restarts_used = 0;
    uint64_t state_peak_bytes = 0;
    std::string method;  // "embeds" | "simplex"
};

struct ChainSeeds {
    uint64_t init;
    uint64_t noise;
};
ChainSeeds chain_seeds(uint64_t seed, uint64_t chain_index);

// raised when the configured optimizer-state cap would be exceeded
class CapExceeded : public Error {
public:
    CapExceeded(const std::string& what, uint64_t required, uint64_t cap)
        : Error(what), required_bytes(required), cap_bytes(cap) {}
    uint64_t required_bytes;
    uint64_t cap_bytes;
};

// optimizer-state footprint of one chain: persistent state + tape leaf copy
// + leaf gradient + update scratch
uint64_t state_bytes_required(int64_t length, int64_t state_dim);

// every position an independently uniform table row; projection distance 0
SoftSequence init_sequence(const EmbeddingTable& table, int64_t length, Rng& rng);

// e~ <- Proj_E(e~ - eta*grad + sqrt(2*eta*beta) z); grads is L x d. Reports
// the largest per-position pre-projection displacement if asked.
SoftSequence langevin_step(const SoftSequence& seq, const Tensor& grads, double eta, double beta,
                           Rng& rng, const EmbeddingTable& table, double* max_displacement = nullptr);

uint64_t hash_ids(std::span<const int32_t> ids);

SampleRecord sample(const CausalLM& lm, std::span<const int32_t> prompt, int64_t length,
                    const ConstraintSet& constraints, const SamplerConfig& config, ChainSeeds seeds);
SampleRecord sample(const CausalLM& lm, std::span<const int32_t> prompt, int64_t length,
                    const ConstraintSet& constraints, const SamplerConfig& config);

// ablation: optimizer state is L x V logits, the model input per position is
// the softmax-weighted average of table rows, and there is no projection
SampleRecord simplex_sample(const CausalLM& lm, std::span<const int32_t> prompt, int64_t length,
                            const ConstraintSet& constraints, const SamplerConfig& config,
                            ChainSeeds seeds);
SampleRecord simplex_sample(const CausalLM& lm, std::span<const int32_t> prompt, int64_t length,
                            const ConstraintSet& constraints, const SamplerConfig& config);

}  // namespace lcs
