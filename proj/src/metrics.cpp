#include "lcs/metrics.hpp"

#include <cmath>
#include <cstring>
#include <unordered_set>

namespace lcs {

namespace {

std::string pack_ngram(std::span<const int32_t> ids) {
    std::string key(ids.size() * sizeof(int32_t), '\0');
    std::memcpy(key.data(), ids.data(), key.size());
    return key;
}

bool contains_phrase(const std::vector<int32_t>& ids, const std::vector<int32_t>& phrase) {
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

}  // namespace

DistNResult dist_n(const std::vector<std::vector<int32_t>>& samples, int64_t n) {
    if (n < 1) throw Error("dist_n: n must be >= 1");
    if (samples.empty()) throw Error("dist_n: empty sample set");
    DistNResult res;
    std::unordered_set<std::string> seen;
    for (const auto& s : samples) {
        if (static_cast<int64_t>(s.size()) < n) {
            ++res.excluded;
            continue;
        }
        for (size_t p = 0; p + static_cast<size_t>(n) <= s.size(); ++p) {
            seen.insert(pack_ngram({s.data() + p, static_cast<size_t>(n)}));
            ++res.total;
        }
    }
    if (res.total == 0) throw Error("dist_n: no sample of length >= " + std::to_string(n));
    res.distinct = static_cast<int64_t>(seen.size());
    res.ratio = static_cast<double>(res.distinct) / static_cast<double>(res.total);
    return res;
}

double dist_n_grouped(const std::vector<std::vector<std::vector<int32_t>>>& groups, int64_t n) {
    if (groups.empty()) throw Error("dist_n: empty group list");
    double acc = 0.0;
    for (const auto& g : groups) acc += dist_n(g, n).ratio;
    return acc / static_cast<double>(groups.size());
}

CoverageResult coverage(const std::vector<std::vector<int32_t>>& samples,
                        const std::vector<std::vector<int32_t>>& keyword_phrases) {
    if (samples.empty()) throw Error("coverage: empty sample set");
    if (keyword_phrases.empty()) throw Error("coverage: no keywords given");
    for (const auto& p : keyword_phrases)
        if (p.empty()) throw Error("coverage: empty keyword phrase");
    CoverageResult res;
    for (const auto& s : samples) {
        int64_t present = 0;
        for (const auto& p : keyword_phrases)
            if (contains_phrase(s, p)) ++present;
        res.count += static_cast<double>(present);
        if (present == static_cast<int64_t>(keyword_phrases.size())) res.percent += 1.0;
    }
    res.count /= static_cast<double>(samples.size());
    res.percent /= static_cast<double>(samples.size());
    return res;
}

PerplexityResult perplexity(const CausalLM& lm,
                            const std::vector<std::pair<std::vector<int32_t>, std::vector<int32_t>>>&
                                prompt_output_pairs) {
    if (prompt_output_pairs.empty()) throw Error("perplexity: empty sample set");
    double nll = 0.0, tokens = 0.0;
    for (const auto& [prompt, output] : prompt_output_pairs) {
        if (output.empty()) continue;
        nll += lm.nll_discrete(prompt, output);
        tokens += static_cast<double>(output.size());
    }
    if (tokens == 0.0) throw Error("perplexity: no scorable tokens");
    PerplexityResult res;
    res.mean_nll = nll / tokens;
    res.perplexity = std::exp(res.mean_nll);
    return res;
}

std::vector<MemoryRow> state_memory_rows(std::span<const int64_t> lengths, int64_t vocab, int64_t d) {
    if (vocab <= 0 || d <= 0) throw Error("state_memory_rows: dimensions must be positive");
    std::vector<MemoryRow> rows;
    for (int64_t length : lengths) {
        if (length <= 0) throw Error("state_memory_rows: lengths must be positive");
        MemoryRow r;
        r.length = length;
        r.embeds_params = length * d;
        r.simplex_params = length * vocab;
        r.param_ratio = static_cast<double>(vocab) / static_cast<double>(d);
        rows.push_back(r);
    }
    return rows;
}

}  // namespace lcs
