#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lcs/tensor.hpp"

namespace lcs {

// token-string <-> id map; ids 0..4 are reserved
class Lexicon {
public:
    static constexpr int32_t kBos = 0;
    static constexpr int32_t kEos = 1;
    static constexpr int32_t kUnk = 2;
    static constexpr int32_t kCls0 = 3;
    static constexpr int32_t kCls1 = 4;

    Lexicon();
    explicit Lexicon(const std::vector<std::string>& tokens);  // full list incl. reserved

    // builds the id space from whitespace tokens of the corpus lines,
    // reserved tokens first, the rest sorted
    static Lexicon from_corpus(const std::vector<std::string>& lines);

    int32_t id(const std::string& tok) const;              // kUnk when missing
    std::optional<int32_t> lookup(const std::string& tok) const;
    const std::string& token(int32_t id) const;
    int32_t size() const { return static_cast<int32_t>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::vector<int32_t> encode(const std::string& text) const;   // unknown -> kUnk
    std::string decode(const std::vector<int32_t>& ids) const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int32_t> by_name_;
};

// The shared V x d matrix every model looks up and projects onto.
struct EmbeddingTable {
    Tensor rows;  // V x d
    Lexicon lexicon;

    int64_t vocab() const { return rows.dim(0); }
    int64_t dim() const { return rows.dim(1); }
    const double* row(int32_t id) const { return rows.row(id); }

    uint64_t content_hash() const;  // FNV-1a over the raw row bytes

    // smallest pairwise squared distance and the closest pair
    struct MinGap {
        double sqdist;
        int32_t a, b;
    };
    MinGap min_pairwise_sqdist() const;
};

struct Projection {
    int32_t id;
    double sqdist;
};

// Optimizer state of one chain: continuous vectors plus their current
// projection onto the table. projected_ids is refreshed on every update.
struct SoftSequence {
    Tensor vectors;                    // L x d
    std::vector<int32_t> projected_ids;

    int64_t length() const { return vectors.dim(0); }
    void refresh_projection(const EmbeddingTable& table);
};

struct TokenDistribution {
    std::vector<double> probs;  // V entries, sums to 1
    int32_t argmax() const;
};

// argmin_j ||e_j - v||^2, ties broken toward the lowest id
Projection project(const EmbeddingTable& table, const double* v);
Projection project(const EmbeddingTable& table, const Tensor& v);

// softmax over negated squared distances from v to every row
TokenDistribution token_distribution(const EmbeddingTable& table, const double* v);
TokenDistribution token_distribution(const EmbeddingTable& table, const Tensor& v);

// -log pi_row[col] computed stably straight from distances
double log_pi(const EmbeddingTable& table, const double* v, int32_t col);

struct SeparationViolation {
    int32_t token;      // w whose guarantee fails
    int32_t rival;      // the index that beats or ties it
    bool column_side;   // false: argmax_j pi_w[j] != w, true: argmax_j pi_j[w] != w
};

struct SeparationReport {
    int64_t vocab = 0;
    std::vector<SeparationViolation> violations;
    double min_pairwise_sqdist = 0.0;
    bool ok() const { return violations.empty(); }
};

// Checks, for every token w, that pi_w[w] is the strict maximum of both its
// row and its column of the pi matrix. Violations (including ties) are report
// content, not errors.
SeparationReport verify_separation(const EmbeddingTable& table);

bool token_separated(const EmbeddingTable& table, int32_t w);

}  // namespace lcs
