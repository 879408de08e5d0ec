#include "lcs/cli.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <zlib.h>

#include "lcs/gradcheck.hpp"
#include "lcs/metrics.hpp"
#include "lcs/records.hpp"

namespace lcs {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::ostream& outs(const CliOptions& o) { return o.out_stream != nullptr ? *o.out_stream : std::cout; }

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw Error("config: " + where + " must be a JSON object");
    for (const auto& [key, value] : obj.items())
        if (allowed.find(key) == allowed.end())
            throw Error("config: unknown key '" + key + "' in " + where);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

std::string require_str(const json& j, const std::string& key, const std::string& where) {
    if (!j.contains(key)) throw Error("config: missing required key '" + key + "' in " + where);
    return j.at(key).get<std::string>();
}

std::vector<int32_t> encode_strict(const Lexicon& lex, const std::string& text, const std::string& what) {
    std::vector<int32_t> out;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) {
        const auto id = lex.lookup(w);
        if (!id.has_value()) throw Error(what + ": token '" + w + "' is not in the model lexicon");
        out.push_back(*id);
    }
    return out;
}

void write_gzip_file(const std::string& path, const std::string& content) {
    z_stream zs{};
    if (deflateInit2(&zs, 6, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
        throw Error("gzip: deflateInit failed");
    gz_header hdr{};
    hdr.time = 0;  // fixed so reruns are byte-identical
    hdr.os = 255;
    deflateSetHeader(&zs, &hdr);
    std::string out;
    out.resize(deflateBound(&zs, static_cast<uLong>(content.size())));
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(content.data()));
    zs.avail_in = static_cast<uInt>(content.size());
    zs.next_out = reinterpret_cast<Bytef*>(out.data());
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&zs, Z_FINISH);
    if (rc != Z_STREAM_END) {
        deflateEnd(&zs);
        throw Error("gzip: deflate failed");
    }
    out.resize(zs.total_out);
    deflateEnd(&zs);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write: " + path);
    f << out;
}

}  // namespace

std::string resolve_path(const std::string& path) {
    if (fs::exists(path)) return path;
    if (!fs::path(path).is_absolute()) {
        const char* dir = std::getenv(kDataDirEnv);
        if (dir != nullptr) {
            const fs::path joined = fs::path(dir) / path;
            if (fs::exists(joined)) return joined.string();
        }
    }
    throw Error("referenced file does not exist: " + path);
}

json load_config(const std::string& path) {
    std::ifstream in(resolve_path(path));
    try {
        return json::parse(in);
    } catch (const std::exception& e) {
        throw Error("config " + path + ": " + e.what());
    }
}

// ---------------------------------------------------------------- train-lm

int cmd_train_lm(const json& config, const CliOptions& opts) {
    check_keys(config,
               {"corpus", "out", "d", "layers", "ffn_hidden", "context_limit", "epochs", "batch_size",
                "lr", "heldout_fraction", "init_std", "table_init_std", "eos_repeats", "seed"},
               "train-lm config");
    const std::string corpus_path = resolve_path(require_str(config, "corpus", "train-lm config"));
    const std::string out_path = opts.out.value_or(require_str(config, "out", "train-lm config"));

    TrainLmOptions t;
    t.d = get_or<int64_t>(config, "d", t.d);
    t.n_layers = get_or<int>(config, "layers", t.n_layers);
    t.ffn_hidden = get_or<int64_t>(config, "ffn_hidden", t.ffn_hidden);
    t.context_limit = get_or<int64_t>(config, "context_limit", t.context_limit);
    t.epochs = get_or<int>(config, "epochs", t.epochs);
    t.batch_size = get_or<int>(config, "batch_size", t.batch_size);
    t.lr = get_or<double>(config, "lr", t.lr);
    t.heldout_fraction = get_or<double>(config, "heldout_fraction", t.heldout_fraction);
    t.init_std = get_or<double>(config, "init_std", t.init_std);
    t.table_init_std = get_or<double>(config, "table_init_std", t.table_init_std);
    t.eos_repeats = get_or<int>(config, "eos_repeats", t.eos_repeats);
    t.seed = opts.seed.value_or(get_or<uint64_t>(config, "seed", t.seed));

    const TrainLmResult res = train_lm(read_lines(corpus_path), t);
    save_lm(out_path, res.lm);

    json summary{{"checkpoint", out_path},
                 {"vocab", res.lm.vocab()},
                 {"d", res.lm.dim()},
                 {"heldout_nll", res.heldout_nll},
                 {"uniform_nll", res.uniform_nll},
                 {"final_train_nll", res.final_train_nll},
                 {"below_uniform", res.heldout_nll < res.uniform_nll},
                 {"separation_violations", res.separation.violations.size()},
                 {"min_pairwise_sqdist", res.separation.min_pairwise_sqdist}};
    outs(opts) << summary.dump() << std::endl;
    return 0;
}

// ------------------------------------------------------- train-classifier

int cmd_train_classifier(const json& config, const CliOptions& opts) {
    check_keys(config,
               {"corpus", "lm", "out", "labels", "hidden", "epochs", "batch_size", "lr",
                "heldout_fraction", "init_std", "weight_decay", "label_smoothing", "noise_augment",
                "seed"},
               "train-classifier config");
    const std::string corpus_path = resolve_path(require_str(config, "corpus", "train-classifier config"));
    const std::string lm_path = resolve_path(require_str(config, "lm", "train-classifier config"));
    const std::string out_path = opts.out.value_or(require_str(config, "out", "train-classifier config"));

    const CausalLM lm = load_lm(lm_path);
    TrainClassifierOptions t;
    t.n_labels = get_or<int>(config, "labels", t.n_labels);
    t.hidden = get_or<int64_t>(config, "hidden", t.hidden);
    t.epochs = get_or<int>(config, "epochs", t.epochs);
    t.batch_size = get_or<int>(config, "batch_size", t.batch_size);
    t.lr = get_or<double>(config, "lr", t.lr);
    t.heldout_fraction = get_or<double>(config, "heldout_fraction", t.heldout_fraction);
    t.init_std = get_or<double>(config, "init_std", t.init_std);
    t.weight_decay = get_or<double>(config, "weight_decay", t.weight_decay);
    t.label_smoothing = get_or<double>(config, "label_smoothing", t.label_smoothing);
    t.noise_augment = get_or<double>(config, "noise_augment", t.noise_augment);
    t.seed = opts.seed.value_or(get_or<uint64_t>(config, "seed", t.seed));

    const TrainClassifierResult res = train_classifier(lm.table, read_lines(corpus_path), t);
    save_classifier(out_path, res.clf);

    json summary{{"checkpoint", out_path},
                 {"labels", res.clf.n_labels},
                 {"train_accuracy", res.train_accuracy},
                 {"heldout_accuracy", res.heldout_accuracy},
                 {"final_train_loss", res.final_train_loss},
                 {"table_hash", res.clf.table->content_hash()}};
    outs(opts) << summary.dump() << std::endl;
    return 0;
}

// ----------------------------------------------------------------- sample

namespace {

struct SampleSetup {
    std::shared_ptr<CausalLM> lm;
    std::vector<std::string> prompt_texts;
    std::vector<std::vector<int32_t>> prompt_ids;
    std::vector<int64_t> lengths;
    int64_t samples_per_prompt = 1;
    bool simplex = false;
    ConstraintSet constraints;
    SamplerConfig sampler;
    bool include_trace = false;
    bool trace_gzip = false;
    std::string out_path;
};

SamplerConfig parse_sampler_config(const json& j, uint64_t seed) {
    SamplerConfig c;
    c.seed = seed;
    if (j.is_null()) return c;
    check_keys(j,
               {"max_steps", "eta", "eta_max", "stall_window", "beta_init", "beta_floor",
                "beta_anneal_steps", "restarts", "min_repeats", "stall_tolerance",
                "fallback_nucleus_p", "allow_fallback", "multiplier_alpha", "multiplier_cadence",
                "multiplier_violation_boost", "multiplier_damping", "memory_cap_bytes"},
               "sampler config");
    c.max_steps = get_or<int64_t>(j, "max_steps", c.max_steps);
    c.eta = get_or<double>(j, "eta", c.eta);
    c.eta_max = get_or<double>(j, "eta_max", c.eta_max);
    c.stall_window = get_or<int64_t>(j, "stall_window", c.stall_window);
    c.noise.beta_init = get_or<double>(j, "beta_init", c.noise.beta_init);
    c.noise.beta_floor = get_or<double>(j, "beta_floor", c.noise.beta_floor);
    c.noise.anneal_steps = get_or<int64_t>(j, "beta_anneal_steps", c.noise.anneal_steps);
    c.restarts = get_or<int64_t>(j, "restarts", c.restarts);
    c.min_repeats = get_or<int64_t>(j, "min_repeats", c.min_repeats);
    c.stall_tolerance = get_or<double>(j, "stall_tolerance", c.stall_tolerance);
    c.fallback_nucleus_p = get_or<double>(j, "fallback_nucleus_p", c.fallback_nucleus_p);
    c.allow_fallback = get_or<bool>(j, "allow_fallback", c.allow_fallback);
    c.multipliers.alpha = get_or<double>(j, "multiplier_alpha", c.multipliers.alpha);
    c.multipliers.cadence = get_or<int64_t>(j, "multiplier_cadence", c.multipliers.cadence);
    c.multipliers.violation_boost = get_or<bool>(j, "multiplier_violation_boost", c.multipliers.violation_boost);
    c.multipliers.damping = get_or<double>(j, "multiplier_damping", c.multipliers.damping);
    c.memory_cap_bytes = get_or<uint64_t>(j, "memory_cap_bytes", c.memory_cap_bytes);
    c.validate();
    return c;
}

ConstraintSet parse_constraints(const json& arr, const std::shared_ptr<CausalLM>& lm) {
    ConstraintSet cs;
    if (arr.is_null()) return cs;
    if (!arr.is_array()) throw Error("config: constraints must be an array");
    const Lexicon& lex = lm->table->lexicon;
    for (const auto& c : arr) {
        const std::string type = require_str(c, "type", "constraint");
        if (type == "disc" || type == "disc_avoid") {
            check_keys(c, {"type", "classifier", "desired_label", "avoid_label", "p_min", "p_max", "name"},
                       "disc constraint");
            auto clf = std::make_shared<AttributeClassifier>(
                load_classifier(resolve_path(require_str(c, "classifier", "disc constraint"))));
            int desired;
            double p_min;
            if (type == "disc") {
                desired = c.at("desired_label").get<int>();
                p_min = get_or<double>(c, "p_min", 0.5);
            } else {
                // p_undesired < p_max realized as p_desired >= 1 - p_max
                const int avoid = c.at("avoid_label").get<int>();
                if (clf->n_labels != 2) throw Error("disc_avoid: needs a binary classifier");
                desired = 1 - avoid;
                p_min = 1.0 - get_or<double>(c, "p_max", kDefaultAvoidPMax);
            }
            cs.push_back(disc_constraint(std::move(clf), desired, p_min, get_or<std::string>(c, "name", "")));
        } else if (type == "gen") {
            check_keys(c, {"type", "class_lms", "desired_label", "other_label", "name"}, "gen constraint");
            std::vector<std::shared_ptr<const CausalLM>> lms;
            for (const auto& p : c.at("class_lms"))
                lms.push_back(std::make_shared<const CausalLM>(load_lm(resolve_path(p.get<std::string>()))));
            auto cond = std::make_shared<const ConditionalLM>(ConditionalLM::from_class_lms(std::move(lms)));
            const int desired = c.at("desired_label").get<int>();
            if (c.contains("other_label")) {
                cs.push_back(gen_constraint(cond, desired, c.at("other_label").get<int>(),
                                            get_or<std::string>(c, "name", "")));
            } else {
                for (auto& g : gen_constraints_nclass(cond, desired)) cs.push_back(std::move(g));
            }
        } else if (type == "gen_prompt") {
            check_keys(c, {"type", "desired_label", "other_label", "verbalizers", "name"},
                       "gen_prompt constraint");
            std::vector<std::string> verbs =
                get_or<std::vector<std::string>>(c, "verbalizers", {"<cls0>", "<cls1>"});
            std::vector<int32_t> verb_ids;
            for (const auto& v : verbs) {
                const auto id = lex.lookup(v);
                if (!id.has_value()) throw Error("gen_prompt: verbalizer '" + v + "' not in lexicon");
                verb_ids.push_back(*id);
            }
            auto cond = std::make_shared<const ConditionalLM>(ConditionalLM::verbalized(lm, verb_ids));
            const int desired = c.at("desired_label").get<int>();
            if (c.contains("other_label")) {
                cs.push_back(gen_constraint(cond, desired, c.at("other_label").get<int>(),
                                            get_or<std::string>(c, "name", "")));
            } else {
                for (auto& g : gen_constraints_nclass(cond, desired)) cs.push_back(std::move(g));
            }
        } else if (type == "keyword") {
            check_keys(c, {"type", "phrase", "tau", "delta", "name"}, "keyword constraint");
            const auto phrase = encode_strict(lex, require_str(c, "phrase", "keyword constraint"), "keyword");
            if (phrase.empty()) throw Error("keyword constraint: empty phrase");
            cs.push_back(keyword_constraint(lm->table, phrase, get_or<double>(c, "tau", kDefaultGumbelTau),
                                            get_or<double>(c, "delta", kDefaultThresholdDelta),
                                            get_or<std::string>(c, "name", "")));
        } else if (type == "keyword_set") {
            check_keys(c, {"type", "words", "tau", "delta", "name"}, "keyword_set constraint");
            std::vector<std::vector<int32_t>> members;
            for (const auto& w : c.at("words")) {
                auto ids = encode_strict(lex, w.get<std::string>(), "keyword_set");
                if (ids.empty()) throw Error("keyword_set constraint: empty member phrase");
                members.push_back(std::move(ids));
            }
            cs.push_back(keyword_set_constraint(lm->table, std::move(members),
                                                get_or<double>(c, "tau", kDefaultGumbelTau),
                                                get_or<double>(c, "delta", kDefaultThresholdDelta),
                                                get_or<std::string>(c, "name", "")));
        } else {
            throw Error("config: unknown constraint type '" + type + "'");
        }
    }
    return cs;
}

SampleSetup parse_sample_config(const json& config, const CliOptions& opts) {
    check_keys(config,
               {"lm", "prompts", "prompts_file", "output_length", "output_lengths", "samples_per_prompt",
                "mode", "constraints", "sampler", "seed", "include_trace", "trace_gzip", "out"},
               "sample config");
    SampleSetup s;
    s.lm = std::make_shared<CausalLM>(load_lm(resolve_path(require_str(config, "lm", "sample config"))));
    s.out_path = opts.out.value_or(require_str(config, "out", "sample config"));

    if (config.contains("prompts") == config.contains("prompts_file"))
        throw Error("sample config: give exactly one of 'prompts' or 'prompts_file'");
    if (config.contains("prompts"))
        s.prompt_texts = config.at("prompts").get<std::vector<std::string>>();
    else
        for (const auto& line : read_lines(resolve_path(config.at("prompts_file").get<std::string>())))
            if (!line.empty()) s.prompt_texts.push_back(line);
    if (s.prompt_texts.empty()) throw Error("sample config: no prompts");
    for (const auto& p : s.prompt_texts)
        s.prompt_ids.push_back(encode_strict(s.lm->table->lexicon, p, "prompt"));

    if (config.contains("output_length") == config.contains("output_lengths"))
        throw Error("sample config: give exactly one of 'output_length' or 'output_lengths'");
    if (config.contains("output_length"))
        s.lengths = {config.at("output_length").get<int64_t>()};
    else
        s.lengths = config.at("output_lengths").get<std::vector<int64_t>>();
    if (s.lengths.empty()) throw Error("sample config: empty output_lengths");

    s.samples_per_prompt = get_or<int64_t>(config, "samples_per_prompt", 1);
    if (s.samples_per_prompt < 1) throw Error("sample config: samples_per_prompt must be >= 1");

    const std::string mode = get_or<std::string>(config, "mode", "embeds");
    if (mode != "embeds" && mode != "simplex") throw Error("sample config: mode must be embeds or simplex");
    s.simplex = mode == "simplex";

    const uint64_t seed = opts.seed.value_or(get_or<uint64_t>(config, "seed", 0));
    s.sampler = parse_sampler_config(config.contains("sampler") ? config.at("sampler") : json(), seed);
    s.constraints = parse_constraints(config.contains("constraints") ? config.at("constraints") : json(),
                                      s.lm);
    s.include_trace = get_or<bool>(config, "include_trace", false);
    s.trace_gzip = get_or<bool>(config, "trace_gzip", false);
    s.sampler.keep_trace = s.include_trace || s.trace_gzip;

    // every constraint model must share the base LM's table
    const uint64_t lm_hash = s.lm->table->content_hash();
    for (const auto& c : s.constraints) {
        const uint64_t h = c->table_hash();
        if (h != 0 && h != lm_hash)
            throw Error("sample config: constraint '" + c->name() +
                        "' was trained on a different embedding table (content hash mismatch)");
    }
    return s;
}

}  // namespace

int cmd_sample(const json& config, const CliOptions& opts) {
    const SampleSetup s = parse_sample_config(config, opts);
    const int64_t n_prompts = static_cast<int64_t>(s.prompt_texts.size());
    const int64_t n_chains = n_prompts * s.samples_per_prompt;
    const int64_t n_lengths = static_cast<int64_t>(s.lengths.size());

    std::vector<std::optional<SampleRecord>> results(static_cast<size_t>(n_chains));
    std::mutex err_mutex;
    std::optional<std::string> first_error;
    std::atomic<int64_t> next{0};

    auto run_chain_job = [&](int64_t chain) {
        const int64_t prompt_idx = chain / s.samples_per_prompt;
        const auto& prompt = s.prompt_ids[static_cast<size_t>(prompt_idx)];
        std::optional<SampleRecord> chosen;
        std::optional<SampleRecord> last;
        for (int64_t li = 0; li < n_lengths; ++li) {
            const ChainSeeds seeds =
                chain_seeds(s.sampler.seed, static_cast<uint64_t>(chain * n_lengths + li));
            SampleRecord rec = s.simplex
                                   ? simplex_sample(*s.lm, prompt, s.lengths[static_cast<size_t>(li)],
                                                    s.constraints, s.sampler, seeds)
                                   : sample(*s.lm, prompt, s.lengths[static_cast<size_t>(li)],
                                            s.constraints, s.sampler, seeds);
            const bool ok = rec.termination != Termination::FallbackAutoregressive &&
                            rec.termination != Termination::FailedRestartExhausted &&
                            std::all_of(rec.constraints.begin(), rec.constraints.end(),
                                        [](const ConstraintOutcome& c) { return c.satisfied; });
            if (ok && !rec.output_ids.empty()) {
                const double ppl = rec.nll / static_cast<double>(rec.output_ids.size());
                if (!chosen.has_value() ||
                    ppl < chosen->nll / static_cast<double>(chosen->output_ids.size()))
                    chosen = rec;
            }
            last = std::move(rec);
        }
        results[static_cast<size_t>(chain)] = chosen.has_value() ? std::move(*chosen) : std::move(*last);
    };

    const int jobs = std::max(1, opts.jobs);
    std::vector<std::thread> workers;
    for (int w = 0; w < jobs; ++w)
        workers.emplace_back([&] {
            for (;;) {
                const int64_t chain = next.fetch_add(1);
                if (chain >= n_chains) return;
                try {
                    run_chain_job(chain);
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error.has_value())
                        first_error = "chain " + std::to_string(chain) + ": " + e.what();
                    return;
                }
            }
        });
    for (auto& w : workers) w.join();

    // flush whatever contiguous prefix completed, then report the failure
    std::vector<json> lines;
    std::string traces;
    for (int64_t chain = 0; chain < n_chains; ++chain) {
        const auto& r = results[static_cast<size_t>(chain)];
        if (!r.has_value()) break;
        const int64_t prompt_idx = chain / s.samples_per_prompt;
        lines.push_back(record_to_json(*r, s.prompt_texts[static_cast<size_t>(prompt_idx)],
                                       s.include_trace));
        if (s.trace_gzip) {
            json tj{{"chain", chain},
                    {"trace", record_to_json(*r, "", true).at("trace")}};
            traces += tj.dump() + "\n";
        }
    }
    write_jsonl(s.out_path, lines);
    if (s.trace_gzip) write_gzip_file(s.out_path + ".traces.gz", traces);

    if (first_error.has_value()) {
        std::cerr << "sample: " << *first_error << " (" << lines.size()
                  << " completed records flushed)" << std::endl;
        return 1;
    }

    int64_t satisfied = 0, fallbacks = 0;
    for (const auto& r : results) {
        if (r->termination == Termination::FallbackAutoregressive) ++fallbacks;
        if (std::all_of(r->constraints.begin(), r->constraints.end(),
                        [](const ConstraintOutcome& c) { return c.satisfied; }))
            ++satisfied;
    }
    json summary{{"records", n_chains},
                 {"out", s.out_path},
                 {"satisfaction_rate", n_chains > 0 ? static_cast<double>(satisfied) / static_cast<double>(n_chains) : 0.0},
                 {"fallbacks", fallbacks},
                 {"mode", s.simplex ? "simplex" : "embeds"}};
    outs(opts) << summary.dump() << std::endl;
    return 0;
}

// ------------------------------------------------------------------- eval

int cmd_eval(const json& config, const CliOptions& opts) {
    check_keys(config, {"samples", "lm", "keywords", "out_csv"}, "eval config");
    const std::string samples_path = resolve_path(require_str(config, "samples", "eval config"));
    const CausalLM lm = load_lm(resolve_path(require_str(config, "lm", "eval config")));
    const std::vector<ParsedRecord> records = read_jsonl(samples_path);
    if (records.empty()) throw Error("eval: no records in " + samples_path);

    // group outputs by prompt, in first-appearance order
    std::vector<std::string> prompt_order;
    std::vector<std::vector<std::vector<int32_t>>> groups;
    std::vector<std::pair<std::vector<int32_t>, std::vector<int32_t>>> scorable;
    for (const auto& r : records) {
        size_t gi = 0;
        for (; gi < prompt_order.size(); ++gi)
            if (prompt_order[gi] == r.prompt) break;
        if (gi == prompt_order.size()) {
            prompt_order.push_back(r.prompt);
            groups.emplace_back();
        }
        groups[gi].push_back(r.record.output_ids);
        if (!r.record.output_ids.empty())
            scorable.emplace_back(encode_strict(lm.table->lexicon, r.prompt, "prompt"),
                                  r.record.output_ids);
    }

    MetricReport rep;
    rep.sample_count = static_cast<int64_t>(records.size());
    rep.dist1 = dist_n_grouped(groups, 1);
    rep.dist2 = dist_n_grouped(groups, 2);
    rep.dist3 = dist_n_grouped(groups, 3);

    std::vector<std::string> cnames;
    std::vector<std::pair<int64_t, int64_t>> tallies;  // satisfied, total
    for (const auto& r : records)
        for (const auto& c : r.record.constraints) {
            size_t ci = 0;
            for (; ci < cnames.size(); ++ci)
                if (cnames[ci] == c.name) break;
            if (ci == cnames.size()) {
                cnames.push_back(c.name);
                tallies.emplace_back(0, 0);
            }
            ++tallies[ci].second;
            if (c.satisfied) ++tallies[ci].first;
        }
    for (size_t ci = 0; ci < cnames.size(); ++ci)
        rep.satisfaction_rates.emplace_back(
            cnames[ci], static_cast<double>(tallies[ci].first) / static_cast<double>(tallies[ci].second));

    const PerplexityResult ppl = perplexity(lm, scorable);
    rep.mean_nll = ppl.mean_nll;
    rep.self_perplexity = ppl.perplexity;

    json jrep{{"sample_count", rep.sample_count},
              {"dist_1", rep.dist1},
              {"dist_2", rep.dist2},
              {"dist_3", rep.dist3},
              {"mean_nll", rep.mean_nll},
              {"self_perplexity", rep.self_perplexity}};
    json sat = json::object();
    for (const auto& [name, rate] : rep.satisfaction_rates) sat[name] = rate;
    jrep["satisfaction"] = sat;

    if (config.contains("keywords")) {
        std::vector<std::vector<int32_t>> phrases;
        for (const auto& k : config.at("keywords"))
            phrases.push_back(encode_strict(lm.table->lexicon, k.get<std::string>(), "keyword"));
        std::vector<std::vector<int32_t>> all_outputs;
        for (const auto& r : records) all_outputs.push_back(r.record.output_ids);
        const CoverageResult cov = coverage(all_outputs, phrases);
        jrep["coverage_count"] = cov.count;
        jrep["coverage_percent"] = cov.percent;
    }

    if (config.contains("out_csv")) {
        const std::string csv_path = config.at("out_csv").get<std::string>();
        std::ofstream csv(csv_path);
        if (!csv) throw Error("cannot write: " + csv_path);
        csv << "metric,value\n";
        for (const auto& [k, v] : jrep.items())
            if (v.is_number()) csv << k << "," << v.dump() << "\n";
        for (const auto& [name, rate] : rep.satisfaction_rates)
            csv << "satisfaction." << name << "," << rate << "\n";
    }

    outs(opts) << jrep.dump() << std::endl;
    return 0;
}

// ---------------------------------------------------------- ablate-memory

int cmd_ablate_memory(const json& config, const CliOptions& opts) {
    check_keys(config, {"lm", "lengths", "memory_cap_bytes", "steps", "seed", "out"},
               "ablate-memory config");
    const CausalLM lm = load_lm(resolve_path(require_str(config, "lm", "ablate-memory config")));
    if (!config.contains("memory_cap_bytes"))
        throw Error("ablate-memory config: memory_cap_bytes is required");
    const uint64_t cap = config.at("memory_cap_bytes").get<uint64_t>();
    const std::vector<int64_t> lengths =
        get_or<std::vector<int64_t>>(config, "lengths", {10, 20, 50, 100, 200, 500, 1000});
    const int64_t steps = get_or<int64_t>(config, "steps", 3);
    const uint64_t seed = opts.seed.value_or(get_or<uint64_t>(config, "seed", 0));

    for (int64_t length : lengths)
        if (length + 1 > lm.context_limit)
            throw Error("ablate-memory: length " + std::to_string(length) +
                        " exceeds the model context limit " + std::to_string(lm.context_limit) +
                        "; train the model with a larger context_limit");

    SamplerConfig cfg;
    cfg.seed = seed;
    cfg.max_steps = steps;
    cfg.min_repeats = 1;
    cfg.restarts = 0;
    cfg.allow_fallback = false;
    cfg.keep_trace = false;
    cfg.memory_cap_bytes = cap;

    std::vector<MemoryRow> rows = state_memory_rows(lengths, lm.vocab(), lm.dim());
    const ConstraintSet none;
    int64_t max_ok_embeds = 0, max_ok_simplex = 0;
    for (auto& row : rows) {
        try {
            const SampleRecord r = sample(lm, {}, row.length, none, cfg, chain_seeds(seed, 0));
            row.embeds_peak_bytes = r.state_peak_bytes;
            row.embeds_under_cap = true;
            max_ok_embeds = std::max(max_ok_embeds, row.length);
        } catch (const CapExceeded& e) {
            row.embeds_peak_bytes = e.required_bytes;
            row.embeds_under_cap = false;
        }
        try {
            const SampleRecord r = simplex_sample(lm, {}, row.length, none, cfg, chain_seeds(seed, 1));
            row.simplex_peak_bytes = r.state_peak_bytes;
            row.simplex_under_cap = true;
            max_ok_simplex = std::max(max_ok_simplex, row.length);
        } catch (const CapExceeded& e) {
            row.simplex_peak_bytes = e.required_bytes;
            row.simplex_under_cap = false;
        }
    }

    json table = json::array();
    for (const auto& r : rows)
        table.push_back({{"length", r.length},
                         {"embeds_params", r.embeds_params},
                         {"simplex_params", r.simplex_params},
                         {"param_ratio", r.param_ratio},
                         {"embeds_peak_bytes", r.embeds_peak_bytes},
                         {"simplex_peak_bytes", r.simplex_peak_bytes},
                         {"embeds_under_cap", r.embeds_under_cap},
                         {"simplex_under_cap", r.simplex_under_cap}});
    json out{{"vocab", lm.vocab()},
             {"d", lm.dim()},
             {"memory_cap_bytes", cap},
             {"max_length_embeds", max_ok_embeds},
             {"max_length_simplex", max_ok_simplex},
             {"rows", table}};
    if (config.contains("out") || opts.out.has_value()) {
        const std::string p = opts.out.value_or(get_or<std::string>(config, "out", ""));
        std::ofstream f(p);
        if (!f) throw Error("cannot write: " + p);
        f << out.dump(2) << "\n";
    }
    outs(opts) << out.dump() << std::endl;
    return 0;
}

// ----------------------------------------------------------------- verify

namespace {

json separation_to_json(const SeparationReport& rep) {
    json v = json::array();
    for (const auto& viol : rep.violations)
        v.push_back({{"token", viol.token}, {"rival", viol.rival},
                     {"side", viol.column_side ? "column" : "row"}});
    return json{{"vocab", rep.vocab},
                {"violations", v},
                {"violation_count", rep.violations.size()},
                {"min_pairwise_sqdist", rep.min_pairwise_sqdist},
                {"ok", rep.ok()}};
}

}  // namespace

int cmd_verify_embeddings(const json& config, const CliOptions& opts) {
    check_keys(config, {"lm"}, "verify-embeddings config");
    const CausalLM lm = load_lm(resolve_path(require_str(config, "lm", "verify-embeddings config")));
    const SeparationReport rep = verify_separation(*lm.table);
    outs(opts) << separation_to_json(rep).dump() << std::endl;
    return rep.ok() ? 0 : 1;
}

int cmd_verify(const json& config, const CliOptions& opts) {
    check_keys(config, {"lm", "fd_instances", "seed", "tolerance"}, "verify config");
    const CausalLM lm = load_lm(resolve_path(require_str(config, "lm", "verify config")));
    const int instances = get_or<int>(config, "fd_instances", 20);
    const uint64_t seed = opts.seed.value_or(get_or<uint64_t>(config, "seed", 0));
    const double tol = get_or<double>(config, "tolerance", 1e-4);

    const SeparationReport sep = verify_separation(*lm.table);
    const auto grad = run_gradient_suite(op_gradient_problems(), seed, instances, tol);

    bool all_pass = sep.ok();
    double worst = 0.0;
    json gj = json::array();
    for (const auto& g : grad) {
        gj.push_back({{"op", g.name}, {"instances", g.instances}, {"max_rel_err", g.max_rel_err},
                      {"pass", g.pass}});
        worst = std::max(worst, g.max_rel_err);
        if (!g.pass) all_pass = false;
    }
    json out{{"separation", separation_to_json(sep)},
             {"gradients", gj},
             {"max_rel_err", worst},
             {"tolerance", tol},
             {"pass", all_pass}};
    outs(opts) << out.dump() << std::endl;
    return all_pass ? 0 : 1;
}

}  // namespace lcs
