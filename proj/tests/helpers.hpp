#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "lcs/constraints.hpp"
#include "lcs/models.hpp"
#include "lcs/rng.hpp"

namespace lcs::testing {

inline std::shared_ptr<EmbeddingTable> random_table(int64_t vocab, int64_t d, uint64_t seed,
                                                    double std_dev = 1.0) {
    auto table = std::make_shared<EmbeddingTable>();
    std::vector<std::string> tokens = Lexicon().tokens();
    for (int64_t i = static_cast<int64_t>(tokens.size()); i < vocab; ++i)
        tokens.push_back("tok" + std::to_string(i));
    table->lexicon = Lexicon(tokens);
    table->rows = Tensor({vocab, d});
    Rng rng(seed);
    for (size_t i = 0; i < table->rows.numel(); ++i) table->rows[i] = rng.gaussian() * std_dev;
    return table;
}

// rows = scaled identity basis; requires d >= vocab
inline std::shared_ptr<EmbeddingTable> orthonormal_table(int64_t vocab, int64_t d) {
    auto table = random_table(vocab, d, 0);
    for (int64_t i = 0; i < vocab; ++i)
        for (int64_t j = 0; j < d; ++j) table->rows.row(i)[j] = (i == j) ? 1.0 : 0.0;
    return table;
}

// long-double softmax of negated squared distances, independent of the
// library path
inline std::vector<double> pi_oracle(const EmbeddingTable& table, const double* v) {
    const int64_t n = table.vocab(), d = table.dim();
    std::vector<long double> neg(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) {
        long double s = 0.0L;
        for (int64_t c = 0; c < d; ++c) {
            const long double diff = static_cast<long double>(v[c]) - table.row(static_cast<int32_t>(j))[c];
            s += diff * diff;
        }
        neg[static_cast<size_t>(j)] = -s;
    }
    long double mx = neg[0];
    for (auto x : neg) mx = std::max(mx, x);
    long double z = 0.0L;
    for (auto x : neg) z += expl(x - mx);
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j)
        out[static_cast<size_t>(j)] = static_cast<double>(expl(neg[static_cast<size_t>(j)] - mx) / z);
    return out;
}

// two-class toy review corpus; label 1 is the "positive" class
struct ReviewCorpus {
    std::vector<std::string> lm_lines;       // unlabeled, both classes
    std::vector<std::string> labeled_train;  // label<TAB>text
    std::vector<std::string> labeled_held;
    std::vector<std::string> prompts;
};

inline ReviewCorpus make_review_corpus(uint64_t seed, int per_class = 240) {
    const std::vector<std::string> subjects{"the movie",  "the film",    "this show",  "the plot",
                                            "the acting", "the story",   "the dinner", "the food",
                                            "the service", "this place", "the music",  "the ending",
                                            "this book",  "the cast",    "the script", "the evening"};
    const std::vector<std::string> verbs{"was", "felt", "seemed", "looked", "sounded", "turned"};
    const std::vector<std::string> adverbs{"really", "quite", "very", "truly", "rather", "fairly"};
    const std::vector<std::string> pos{"great",    "wonderful", "lovely", "delightful", "brilliant",
                                       "charming", "superb",    "excellent", "pleasant", "graceful",
                                       "splendid", "vivid"};
    const std::vector<std::string> neg{"awful",   "terrible", "boring", "dreadful", "bland",
                                       "tedious", "dismal",   "poor",   "dull",     "grim",
                                       "clumsy",  "hollow"};
    const std::vector<std::string> tails{"overall", "honestly", "indeed", "somehow", "tonight",
                                         "altogether"};

    Rng rng(seed);
    auto pick = [&](const std::vector<std::string>& v) { return v[rng.uniform_int(v.size())]; };
    ReviewCorpus c;
    for (int label = 0; label < 2; ++label) {
        const auto& adjs = label == 1 ? pos : neg;
        for (int i = 0; i < per_class; ++i) {
            std::string text = pick(subjects) + " " + pick(verbs) + " " + pick(adverbs) + " " + pick(adjs);
            if (rng.uniform() < 0.5) text += " and " + pick(adverbs) + " " + pick(adjs);
            if (rng.uniform() < 0.3) text += " " + pick(tails);
            c.lm_lines.push_back(text);
            auto& dst = (i % 4 == 3) ? c.labeled_held : c.labeled_train;
            dst.push_back(std::to_string(label) + "\t" + text);
        }
    }
    for (const auto& s : subjects) c.prompts.push_back(s);
    return c;
}

// small-vocab world for keyword experiments (V stays under 64)
inline std::vector<std::string> make_keyword_corpus(uint64_t seed, int lines = 240) {
    const std::vector<std::string> subjects{"the cat",  "the dog",  "a bird",  "the fox",
                                            "a horse",  "the mouse", "the owl", "a rabbit",
                                            "the wolf", "a deer"};
    const std::vector<std::string> verbs{"chased", "watched", "found", "followed", "crossed",
                                         "circled"};
    const std::vector<std::string> objects{"the ball",  "the river", "a tree",   "the garden",
                                           "the house", "a shadow",  "the field", "a bridge",
                                           "the barn",  "a path"};
    const std::vector<std::string> ends{"today", "quietly", "again", "slowly", "twice", "alone"};
    Rng rng(seed);
    auto pick = [&](const std::vector<std::string>& v) { return v[rng.uniform_int(v.size())]; };
    std::vector<std::string> out;
    for (int i = 0; i < lines; ++i) {
        std::string text = pick(subjects) + " " + pick(verbs) + " " + pick(objects);
        if (rng.uniform() < 0.5) text += " " + pick(ends);
        out.push_back(text);
    }
    return out;
}

inline std::vector<std::string> alternating_corpus(int lines = 64, int len = 12) {
    std::vector<std::string> out;
    for (int i = 0; i < lines; ++i) {
        std::string s;
        for (int j = 0; j < len; ++j) s += (j % 2 == 0) ? "a " : "b ";
        out.push_back(s);
    }
    return out;
}

inline SoftSequence exact_sequence(const EmbeddingTable& table, const std::vector<int32_t>& ids) {
    SoftSequence seq;
    seq.vectors = Tensor({static_cast<int64_t>(ids.size()), table.dim()});
    for (size_t i = 0; i < ids.size(); ++i)
        for (int64_t c = 0; c < table.dim(); ++c)
            seq.vectors.row(static_cast<int64_t>(i))[c] = table.row(ids[i])[c];
    seq.projected_ids = ids;
    return seq;
}

}  // namespace lcs::testing
