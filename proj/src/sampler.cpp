#include "lcs/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>

#include "lcs/kernels.hpp"

namespace lcs {

double beta_at(const NoiseSchedule& s, int64_t t) {
    if (t < 0) throw Error("beta_at: negative step");
    if (s.beta_init == s.beta_floor) return s.beta_floor;  // flat (or all-zero) schedule
    if (t >= s.anneal_steps || s.anneal_steps <= 1) return t == 0 ? s.beta_init : s.beta_floor;
    const double r = std::pow(s.beta_floor / s.beta_init,
                              1.0 / static_cast<double>(s.anneal_steps - 1));
    return s.beta_init * std::pow(r, static_cast<double>(t));
}

void SamplerConfig::validate() const {
    if (!(eta > 0.0) || !(eta <= eta_max)) throw Error("sampler config: need 0 < eta <= eta_max");
    if (!(noise.beta_floor <= noise.beta_init))
        throw Error("sampler config: beta_floor must not exceed beta_init");
    if (noise.beta_floor < 0.0) throw Error("sampler config: beta_floor must be >= 0");
    if (max_steps < 1 || stall_window < 1 || noise.anneal_steps < 1 || min_repeats < 1)
        throw Error("sampler config: counts must be >= 1");
    if (restarts < 0) throw Error("sampler config: restarts must be >= 0");
    if (multipliers.cadence < 1) throw Error("sampler config: multiplier cadence must be >= 1");
    if (!(multipliers.alpha > 0.0)) throw Error("sampler config: multiplier alpha must be positive");
}

const char* termination_name(Termination t) {
    switch (t) {
        case Termination::ConvergedEarlyStop: return "converged-early-stop";
        case Termination::SelectedByRepeat: return "selected-by-repeat";
        case Termination::FallbackAutoregressive: return "fallback-autoregressive";
        case Termination::FailedRestartExhausted: return "failed-restart-exhausted";
    }
    return "?";
}

Termination termination_from_name(const std::string& s) {
    for (Termination t : {Termination::ConvergedEarlyStop, Termination::SelectedByRepeat,
                          Termination::FallbackAutoregressive, Termination::FailedRestartExhausted})
        if (s == termination_name(t)) return t;
    throw Error("unknown termination reason: " + s);
}

ChainSeeds chain_seeds(uint64_t seed, uint64_t chain_index) {
    return {mix_seed(seed, 2 * chain_index + 1), mix_seed(seed, 2 * chain_index + 2)};
}

uint64_t state_bytes_required(int64_t length, int64_t state_dim) {
    // persistent state + tape leaf copy + leaf gradient + update scratch
    return 4ull * static_cast<uint64_t>(length) * static_cast<uint64_t>(state_dim) * sizeof(double);
}

SoftSequence init_sequence(const EmbeddingTable& table, int64_t length, Rng& rng) {
    if (length < 1) throw Error("init_sequence: length must be >= 1");
    SoftSequence seq;
    seq.vectors = Tensor({length, table.dim()});
    seq.projected_ids.resize(static_cast<size_t>(length));
    for (int64_t n = 0; n < length; ++n) {
        const auto id = static_cast<int32_t>(rng.uniform_int(static_cast<uint64_t>(table.vocab())));
        seq.projected_ids[static_cast<size_t>(n)] = id;
        std::copy_n(table.row(id), table.dim(), seq.vectors.row(n));
    }
    return seq;
}

SoftSequence langevin_step(const SoftSequence& seq, const Tensor& grads, double eta, double beta,
                           Rng& rng, const EmbeddingTable& table, double* max_displacement) {
    if (!(eta > 0.0)) throw Error("langevin_step: eta must be positive");
    if (beta < 0.0) throw Error("langevin_step: beta must be >= 0");
    if (!grads.same_shape(seq.vectors))
        throw Error("langevin_step: gradient shape " + grads.shape_str() + " != state shape " +
                    seq.vectors.shape_str());
    if (!grads.all_finite()) throw Error("langevin_step: non-finite gradient");
    const int64_t length = seq.length(), d = table.dim();
    const double noise_scale = std::sqrt(2.0 * eta * beta);

    SoftSequence out;
    out.vectors = Tensor({length, d});
    out.projected_ids.resize(static_cast<size_t>(length));
    double max_disp = 0.0;
    for (int64_t n = 0; n < length; ++n) {
        double disp_sq = 0.0;
        double* dst = out.vectors.row(n);
        const double* src = seq.vectors.row(n);
        const double* g = grads.row(n);
        for (int64_t c = 0; c < d; ++c) {
            const double step = -eta * g[c] + noise_scale * rng.gaussian();
            dst[c] = src[c] + step;
            disp_sq += step * step;
        }
        if (!std::isfinite(disp_sq))
            throw Error("langevin_step: non-finite update at position " + std::to_string(n));
        max_disp = std::max(max_disp, std::sqrt(disp_sq));
        const Projection p = project(table, dst);
        out.projected_ids[static_cast<size_t>(n)] = p.id;
        std::copy_n(table.row(p.id), d, dst);
    }
    if (max_displacement != nullptr) *max_displacement = max_disp;
    return out;
}

uint64_t hash_ids(std::span<const int32_t> ids) {
    uint64_t h = 14695981039346656037ULL;
    for (int32_t id : ids) {
        for (int b = 0; b < 4; ++b) {
            h ^= static_cast<uint64_t>((static_cast<uint32_t>(id) >> (8 * b)) & 0xff);
            h *= 1099511628211ULL;
        }
    }
    return h;
}

namespace {

struct StateTracker {
    uint64_t current = 0, peak = 0, cap = 0;
    void add(uint64_t b) {
        current += b;
        peak = std::max(peak, current);
        if (cap != 0 && current > cap)
            throw CapExceeded("optimizer state " + std::to_string(current) +
                                  " bytes exceeds memory cap " + std::to_string(cap),
                              current, cap);
    }
    void sub(uint64_t b) { current -= b; }
};

struct Candidate {
    std::vector<int32_t> ids;
    double nll = 0.0;
    int64_t visits = 0;
    int64_t satisfied_visits = 0;
    int64_t first_seen = 0;
    std::vector<double> last_f;
    int discrete_ok = -1;  // simplex-mode cache: -1 unknown
};

std::vector<double> eval_f_on_ids(const CausalLM& lm, const ConstraintSet& cs,
                                  std::span<const int32_t> prompt, std::span<const int32_t> ids) {
    std::vector<double> out(cs.size(), std::numeric_limits<double>::quiet_NaN());
    if (ids.empty()) return out;
    const EmbeddingTable& table = *lm.table;
    Tensor rows({static_cast<int64_t>(ids.size()), table.dim()});
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(table.row(ids[i]), table.dim(), rows.row(static_cast<int64_t>(i)));
    for (size_t i = 0; i < cs.size(); ++i) {
        try {
            Tape t;
            const VarId soft = t.constant(rows);
            EvalContext ctx{&table, prompt, soft, ids, nullptr};
            out[i] = t.value(cs[i]->build(t, ctx)).item();
        } catch (const Error&) {
            // not evaluable on this output (e.g. shorter than the phrase)
        }
    }
    return out;
}

struct Emitted {
    std::vector<int32_t> ids;
    std::vector<double> f_final;
    Termination term;
};

SampleRecord run_chain(bool simplex_mode, const CausalLM& lm, std::span<const int32_t> prompt,
                       int64_t length, const ConstraintSet& base_cs, const SamplerConfig& cfg,
                       ChainSeeds seeds) {
    cfg.validate();
    if (length < 1) throw Error("sample: output length must be >= 1");
    const EmbeddingTable& table = *lm.table;
    if (1 + static_cast<int64_t>(prompt.size()) + length > lm.context_limit)
        throw Error("sample: prompt + output length exceeds the model context limit " +
                    std::to_string(lm.context_limit));
    for (const auto& c : base_cs) {
        const uint64_t h = c->table_hash();
        if (h != 0 && h != table.content_hash())
            throw Error("sample: constraint '" + c->name() + "' uses a different embedding table");
    }

    const int64_t d = table.dim(), vocab = table.vocab();
    const int64_t state_dim = simplex_mode ? vocab : d;
    const uint64_t unit = static_cast<uint64_t>(length) * static_cast<uint64_t>(state_dim) * sizeof(double);
    const double tol = cfg.stall_tolerance > 0.0
                           ? cfg.stall_tolerance
                           : 1e-6 * std::sqrt(static_cast<double>(state_dim));

    StateTracker tracker;
    tracker.cap = cfg.memory_cap_bytes;
    if (tracker.cap != 0 && state_bytes_required(length, state_dim) > tracker.cap)
        throw CapExceeded("optimizer state needs " + std::to_string(state_bytes_required(length, state_dim)) +
                              " bytes, cap is " + std::to_string(tracker.cap),
                          state_bytes_required(length, state_dim), tracker.cap);

    SampleRecord rec;
    rec.method = simplex_mode ? "simplex" : "embeds";
    int64_t global_iter = 0;
    std::optional<Emitted> emitted;
    int32_t attempts_used = 0;

    for (int32_t attempt = 0; attempt <= cfg.restarts && !emitted.has_value(); ++attempt) {
        attempts_used = attempt + 1;
        Rng rng_init(mix_seed(seeds.init, static_cast<uint64_t>(attempt)));
        Rng rng_noise(mix_seed(seeds.noise, 2 * static_cast<uint64_t>(attempt)));
        Rng rng_cons(mix_seed(seeds.noise, 2 * static_cast<uint64_t>(attempt) + 1));

        ConstraintSet cs = clone_constraints(base_cs);
        for (auto& c : cs) c->set_lambda(0.0);
        std::vector<double> ema(cs.size(), 0.0);

        tracker.add(unit);  // persistent state
        SoftSequence seq;
        Tensor logits;
        std::vector<int32_t> readout(static_cast<size_t>(length));
        if (simplex_mode) {
            logits = Tensor({length, vocab});
            for (int64_t n = 0; n < length; ++n) {
                const auto id = static_cast<int32_t>(rng_init.uniform_int(static_cast<uint64_t>(vocab)));
                logits.row(n)[id] = 1.0;
                readout[static_cast<size_t>(n)] = id;
            }
        } else {
            seq = init_sequence(table, length, rng_init);
            readout = seq.projected_ids;
        }

        int64_t stall_steps = 0;
        double eta_cur = cfg.eta;
        std::map<uint64_t, Candidate> candidates;

        for (int64_t t = 1; t <= cfg.max_steps && !emitted.has_value(); ++t) {
            ++global_iter;
            Tape tape;
            tracker.add(unit);  // tape leaf copy
            VarId state_leaf;
            VarId model_input;
            if (simplex_mode) {
                state_leaf = tape.leaf(logits);
                model_input = tape.matmul(tape.softmax_rows(state_leaf), tape.constant(table.rows));
            } else {
                state_leaf = tape.leaf(seq.vectors);
                model_input = state_leaf;
            }
            EvalContext ctx{&table, prompt, model_input, readout, &rng_cons};
            const EnergyParts parts = build_energy(tape, lm, ctx, cs);
            tape.backward(parts.energy);
            tracker.add(unit);  // leaf gradient
            const Tensor grad = tape.grad(state_leaf);

            bool all_sat = true;
            for (size_t i = 0; i < cs.size(); ++i)
                if (parts.f_values[i] > cs[i]->epsilon()) all_sat = false;
            const double nll_v = tape.value(parts.nll).item();
            const double energy_v = tape.value(parts.energy).item();

            const uint64_t h = hash_ids(readout);
            Candidate& cand = candidates[h];
            if (cand.visits == 0) {
                cand.ids = readout;
                cand.nll = nll_v;
                cand.first_seen = global_iter;
            }
            ++cand.visits;
            cand.last_f = parts.f_values;
            bool sat_for_selection = all_sat;
            if (simplex_mode) {
                if (cand.discrete_ok == -1) {
                    bool ok = true;
                    for (const auto& c : cs)
                        if (!c->check_discrete(prompt, cand.ids)) {
                            ok = false;
                            break;
                        }
                    cand.discrete_ok = ok ? 1 : 0;
                }
                sat_for_selection = cand.discrete_ok == 1;
            }
            if (sat_for_selection) ++cand.satisfied_visits;

            const double beta = beta_at(cfg.noise, t - 1);
            if (cfg.keep_trace) {
                TraceEntry e;
                e.attempt = attempt;
                e.iter = global_iter;
                e.energy = energy_v;
                e.nll = nll_v;
                e.f = parts.f_values;
                for (const auto& c : cs) e.lambda.push_back(c->lambda());
                e.beta = beta;
                e.eta = eta_cur;
                e.ids_hash = h;
                rec.trace.push_back(std::move(e));
            }

            // Langevin update
            tracker.add(unit);  // update scratch
            double disp = 0.0;
            std::vector<int32_t> new_ids;
            if (simplex_mode) {
                const double noise_scale = std::sqrt(2.0 * eta_cur * beta);
                Tensor next({length, vocab});
                new_ids.resize(static_cast<size_t>(length));
                for (int64_t n = 0; n < length; ++n) {
                    double disp_sq = 0.0;
                    double* dst = next.row(n);
                    const double* src = logits.row(n);
                    const double* g = grad.row(n);
                    int32_t best = 0;
                    for (int64_t c = 0; c < vocab; ++c) {
                        const double step = -eta_cur * g[c] + noise_scale * rng_noise.gaussian();
                        dst[c] = src[c] + step;
                        disp_sq += step * step;
                        if (dst[c] > dst[best]) best = static_cast<int32_t>(c);
                    }
                    if (!std::isfinite(disp_sq))
                        throw Error("simplex step: non-finite update at iteration " + std::to_string(t));
                    disp = std::max(disp, std::sqrt(disp_sq));
                    new_ids[static_cast<size_t>(n)] = best;
                }
                logits = std::move(next);
            } else {
                SoftSequence next = langevin_step(seq, grad, eta_cur, beta, rng_noise, table, &disp);
                new_ids = next.projected_ids;
                seq = std::move(next);
            }
            tracker.sub(3 * unit);  // tape leaf, gradient, scratch released

            const bool id_changed = new_ids != readout;
            readout = std::move(new_ids);
            if (!id_changed && disp < tol) {
                ++stall_steps;
            } else {
                stall_steps = 0;
                eta_cur = cfg.eta;
            }
            const bool stalled = stall_steps >= 1;

            update_multipliers(cs, parts.f_values, cfg.multipliers, stalled, t, &ema);

            if (stalled && all_sat) {
                if (stall_steps >= cfg.stall_window) {
                    emitted = Emitted{readout, parts.f_values, Termination::ConvergedEarlyStop};
                    break;
                }
                eta_cur = cfg.eta + (cfg.eta_max - cfg.eta) *
                                        std::min(1.0, static_cast<double>(stall_steps) /
                                                          static_cast<double>(cfg.stall_window));
            }
        }

        if (!emitted.has_value()) {
            // budget exhausted: the satisfying output with the lowest NLL that
            // repeated at least min_repeats times
            const Candidate* best = nullptr;
            for (const auto& [h, cand] : candidates) {
                if (cand.visits < cfg.min_repeats || cand.satisfied_visits < 1) continue;
                if (best == nullptr || cand.nll < best->nll ||
                    (cand.nll == best->nll && cand.first_seen < best->first_seen))
                    best = &cand;
            }
            if (best != nullptr)
                emitted = Emitted{best->ids, best->last_f, Termination::SelectedByRepeat};
        }
        tracker.sub(unit);  // persistent state of this attempt
    }

    rec.iterations = global_iter;
    rec.restarts_used = attempts_used - 1;
    rec.state_peak_bytes = tracker.peak;

    std::vector<double> f_final;
    if (emitted.has_value()) {
        rec.output_ids = emitted->ids;
        rec.termination = emitted->term;
        f_final = emitted->f_final;
    } else if (cfg.allow_fallback) {
        Rng rng_fb(mix_seed(seeds.noise, 0xFA11BACCULL));
        rec.output_ids = ar_sample(lm, prompt, length, cfg.fallback_nucleus_p, rng_fb);
        rec.termination = Termination::FallbackAutoregressive;
        f_final = eval_f_on_ids(lm, base_cs, prompt, rec.output_ids);
    } else {
        rec.termination = Termination::FailedRestartExhausted;
        f_final.assign(base_cs.size(), std::numeric_limits<double>::quiet_NaN());
    }

    rec.output_text = table.lexicon.decode(rec.output_ids);
    rec.nll = rec.output_ids.empty() ? std::numeric_limits<double>::quiet_NaN()
                                     : lm.nll_discrete(prompt, rec.output_ids);
    for (size_t i = 0; i < base_cs.size(); ++i) {
        ConstraintOutcome oc;
        oc.name = base_cs[i]->name();
        oc.f_final = f_final.size() > i ? f_final[i] : std::numeric_limits<double>::quiet_NaN();
        oc.epsilon = base_cs[i]->epsilon();
        oc.satisfied = !rec.output_ids.empty() && base_cs[i]->check_discrete(prompt, rec.output_ids);
        rec.constraints.push_back(std::move(oc));
    }
    return rec;
}

}  // namespace

SampleRecord sample(const CausalLM& lm, std::span<const int32_t> prompt, int64_t length,
                    const ConstraintSet& constraints, const SamplerConfig& config, ChainSeeds seeds) {
    return run_chain(false, lm, prompt, length, constraints, config, seeds);
}

SampleRecord sample(const CausalLM& lm, std::span<const int32_t> prompt, int64_t length,
                    const ConstraintSet& constraints, const SamplerConfig& config) {
    return run_chain(false, lm, prompt, length, constraints, config, chain_seeds(config.seed, 0));
}

SampleRecord simplex_sample(const CausalLM& lm, std::span<const int32_t> prompt, int64_t length,
                            const ConstraintSet& constraints, const SamplerConfig& config,
                            ChainSeeds seeds) {
    return run_chain(true, lm, prompt, length, constraints, config, seeds);
}

SampleRecord simplex_sample(const CausalLM& lm, std::span<const int32_t> prompt, int64_t length,
                            const ConstraintSet& constraints, const SamplerConfig& config) {
    return run_chain(true, lm, prompt, length, constraints, config, chain_seeds(config.seed, 0));
}

}  // namespace lcs
