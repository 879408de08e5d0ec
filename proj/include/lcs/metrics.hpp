#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lcs/models.hpp"

namespace lcs {

struct DistNResult {
    double ratio = 0.0;
    int64_t distinct = 0;
    int64_t total = 0;
    int64_t excluded = 0;  // samples shorter than n
};

// distinct n-grams / total n-grams over one set of samples
DistNResult dist_n(const std::vector<std::vector<int32_t>>& samples, int64_t n);

// mean of per-group dist-n ratios (the per-prompt grouping)
double dist_n_grouped(const std::vector<std::vector<std::vector<int32_t>>>& groups, int64_t n);

struct CoverageResult {
    double count = 0.0;    // mean number of keywords present per sample
    double percent = 0.0;  // fraction of samples containing all keywords
};

// presence of each keyword phrase as a contiguous token-id subsequence
CoverageResult coverage(const std::vector<std::vector<int32_t>>& samples,
                        const std::vector<std::vector<int32_t>>& keyword_phrases);

struct PerplexityResult {
    double mean_nll = 0.0;  // per token
    double perplexity = 0.0;
};

// exp of the corpus mean per-token NLL under teacher forcing
PerplexityResult perplexity(const CausalLM& lm,
                            const std::vector<std::pair<std::vector<int32_t>, std::vector<int32_t>>>&
                                prompt_output_pairs);

struct MemoryRow {
    int64_t length = 0;
    int64_t embeds_params = 0;   // L * d
    int64_t simplex_params = 0;  // L * V
    double param_ratio = 0.0;    // V / d
    uint64_t embeds_peak_bytes = 0;  // measured; 0 = not run
    uint64_t simplex_peak_bytes = 0;
    bool embeds_under_cap = true;
    bool simplex_under_cap = true;
};

std::vector<MemoryRow> state_memory_rows(std::span<const int64_t> lengths, int64_t vocab, int64_t d);

struct MetricReport {
    int64_t sample_count = 0;
    double dist1 = 0.0, dist2 = 0.0, dist3 = 0.0;
    std::vector<std::pair<std::string, double>> satisfaction_rates;
    double mean_nll = 0.0;
    double self_perplexity = 0.0;
    bool has_coverage = false;
    double coverage_count = 0.0;
    double coverage_percent = 0.0;
};

}  // namespace lcs
