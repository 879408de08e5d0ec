#include "lcs/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "lcs/kernels.hpp"

namespace lcs {

namespace {
const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> r{"<bos>", "<eos>", "<unk>", "<cls0>", "<cls1>"};
    return r;
}
}  // namespace

Lexicon::Lexicon() : Lexicon(reserved_tokens()) {}

Lexicon::Lexicon(const std::vector<std::string>& tokens) : tokens_(tokens) {
    for (size_t i = 0; i < tokens_.size(); ++i) {
        if (!by_name_.emplace(tokens_[i], static_cast<int32_t>(i)).second)
            throw Error("lexicon: duplicate token '" + tokens_[i] + "'");
    }
    if (tokens_.size() < reserved_tokens().size()) throw Error("lexicon: reserved tokens missing");
}

Lexicon Lexicon::from_corpus(const std::vector<std::string>& lines) {
    std::set<std::string> words;
    for (const auto& line : lines) {
        std::istringstream ss(line);
        std::string w;
        while (ss >> w) words.insert(w);
    }
    std::vector<std::string> tokens = reserved_tokens();
    for (const auto& w : words) {
        bool is_reserved = std::find(tokens.begin(), tokens.end(), w) != tokens.end();
        if (!is_reserved) tokens.push_back(w);
    }
    return Lexicon(tokens);
}

int32_t Lexicon::id(const std::string& tok) const {
    auto it = by_name_.find(tok);
    return it == by_name_.end() ? kUnk : it->second;
}

std::optional<int32_t> Lexicon::lookup(const std::string& tok) const {
    auto it = by_name_.find(tok);
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
}

const std::string& Lexicon::token(int32_t id) const {
    if (id < 0 || id >= size()) throw Error("lexicon: id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<size_t>(id)];
}

std::vector<int32_t> Lexicon::encode(const std::string& text) const {
    std::vector<int32_t> out;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) out.push_back(id(w));
    return out;
}

std::string Lexicon::decode(const std::vector<int32_t>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i > 0) out += ' ';
        out += token(ids[i]);
    }
    return out;
}

uint64_t EmbeddingTable::content_hash() const {
    uint64_t h = 14695981039346656037ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(rows.data());
    const size_t n = rows.numel() * sizeof(double);
    for (size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

EmbeddingTable::MinGap EmbeddingTable::min_pairwise_sqdist() const {
    const auto& k = kern::active();
    MinGap best{1e300, -1, -1};
    const int64_t v = vocab(), d = dim();
    for (int64_t i = 0; i < v; ++i)
        for (int64_t j = i + 1; j < v; ++j) {
            const double s = k.sqdist(rows.row(i), rows.row(j), static_cast<size_t>(d));
            if (s < best.sqdist) best = {s, static_cast<int32_t>(i), static_cast<int32_t>(j)};
        }
    return best;
}

void SoftSequence::refresh_projection(const EmbeddingTable& table) {
    projected_ids.resize(static_cast<size_t>(length()));
    for (int64_t n = 0; n < length(); ++n)
        projected_ids[static_cast<size_t>(n)] = project(table, vectors.row(n)).id;
}

int32_t TokenDistribution::argmax() const {
    int32_t best = 0;
    for (size_t j = 1; j < probs.size(); ++j)
        if (probs[j] > probs[static_cast<size_t>(best)]) best = static_cast<int32_t>(j);
    return best;
}

Projection project(const EmbeddingTable& table, const double* v) {
    const auto& k = kern::active();
    const int64_t n = table.vocab(), d = table.dim();
    for (int64_t c = 0; c < d; ++c)
        if (!std::isfinite(v[c])) throw Error("project: non-finite input vector");
    Projection best{0, k.sqdist(v, table.rows.row(0), static_cast<size_t>(d))};
    for (int64_t j = 1; j < n; ++j) {
        const double s = k.sqdist(v, table.rows.row(j), static_cast<size_t>(d));
        if (s < best.sqdist) best = {static_cast<int32_t>(j), s};
    }
    return best;
}

Projection project(const EmbeddingTable& table, const Tensor& v) {
    if (v.numel() != static_cast<size_t>(table.dim()))
        throw Error("project: vector size " + std::to_string(v.numel()) + " != table dim " +
                    std::to_string(table.dim()));
    return project(table, v.data());
}

TokenDistribution token_distribution(const EmbeddingTable& table, const double* v) {
    const auto& k = kern::active();
    const int64_t n = table.vocab(), d = table.dim();
    for (int64_t c = 0; c < d; ++c)
        if (!std::isfinite(v[c])) throw Error("token_distribution: non-finite input vector");
    std::vector<double> neg(static_cast<size_t>(n));
    double mx = -1e300;
    for (int64_t j = 0; j < n; ++j) {
        neg[static_cast<size_t>(j)] = -k.sqdist(v, table.rows.row(j), static_cast<size_t>(d));
        mx = std::max(mx, neg[static_cast<size_t>(j)]);
    }
    TokenDistribution out;
    out.probs.resize(static_cast<size_t>(n));
    double z = 0.0;
    for (int64_t j = 0; j < n; ++j) {
        out.probs[static_cast<size_t>(j)] = std::exp(neg[static_cast<size_t>(j)] - mx);
        z += out.probs[static_cast<size_t>(j)];
    }
    for (auto& p : out.probs) p /= z;
    return out;
}

TokenDistribution token_distribution(const EmbeddingTable& table, const Tensor& v) {
    if (v.numel() != static_cast<size_t>(table.dim()))
        throw Error("token_distribution: vector size mismatch");
    return token_distribution(table, v.data());
}

double log_pi(const EmbeddingTable& table, const double* v, int32_t col) {
    const auto& k = kern::active();
    const int64_t n = table.vocab(), d = table.dim();
    double mx = -1e300;
    std::vector<double> neg(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) {
        neg[static_cast<size_t>(j)] = -k.sqdist(v, table.rows.row(j), static_cast<size_t>(d));
        mx = std::max(mx, neg[static_cast<size_t>(j)]);
    }
    double z = 0.0;
    for (int64_t j = 0; j < n; ++j) z += std::exp(neg[static_cast<size_t>(j)] - mx);
    return neg[static_cast<size_t>(col)] - (mx + std::log(z));
}

SeparationReport verify_separation(const EmbeddingTable& table) {
    const auto& k = kern::active();
    const int64_t v = table.vocab(), d = table.dim();
    SeparationReport report;
    report.vocab = v;
    report.min_pairwise_sqdist = table.min_pairwise_sqdist().sqdist;

    // D[i][j] symmetric; pi_i[j] = exp(-D[i][j]) / Z_i
    Tensor dist({v, v});
    for (int64_t i = 0; i < v; ++i)
        for (int64_t j = 0; j < v; ++j)
            dist.row(i)[j] = k.sqdist(table.rows.row(i), table.rows.row(j), static_cast<size_t>(d));

    std::vector<double> log_z(static_cast<size_t>(v));
    for (int64_t i = 0; i < v; ++i) {
        double mx = -1e300;
        for (int64_t j = 0; j < v; ++j) mx = std::max(mx, -dist.row(i)[j]);
        double z = 0.0;
        for (int64_t j = 0; j < v; ++j) z += std::exp(-dist.row(i)[j] - mx);
        log_z[static_cast<size_t>(i)] = mx + std::log(z);
    }
    auto log_pi_at = [&](int64_t i, int64_t j) { return -dist.row(i)[j] - log_z[static_cast<size_t>(i)]; };

    for (int64_t w = 0; w < v; ++w) {
        const double self = log_pi_at(w, w);
        for (int64_t j = 0; j < v; ++j) {
            if (j == w) continue;
            if (log_pi_at(w, j) >= self)
                report.violations.push_back({static_cast<int32_t>(w), static_cast<int32_t>(j), false});
            if (log_pi_at(j, w) >= self)
                report.violations.push_back({static_cast<int32_t>(w), static_cast<int32_t>(j), true});
        }
    }
    return report;
}

bool token_separated(const EmbeddingTable& table, int32_t w) {
    const auto& k = kern::active();
    const int64_t v = table.vocab(), d = table.dim();
    // row side: pi_w[w] strict max over j. Self-distance is 0 and all other
    // distances positive, so this only fails on a duplicate row.
    for (int64_t j = 0; j < v; ++j) {
        if (j == w) continue;
        if (k.sqdist(table.rows.row(w), table.rows.row(j), static_cast<size_t>(d)) <= 0.0) return false;
    }
    // column side: pi_j[w] < pi_w[w] for all j != w
    const double self = log_pi(table, table.rows.row(w), w);
    for (int64_t j = 0; j < v; ++j) {
        if (j == w) continue;
        if (log_pi(table, table.rows.row(j), w) >= self) return false;
    }
    return true;
}

}  // namespace lcs
