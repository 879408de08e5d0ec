#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lcs/embedding.hpp"
#include "lcs/graph.hpp"
#include "lcs/rng.hpp"

namespace lcs {

// Small causal LM over the shared table: sinusoidal positions, pre-LN
// single-head attention blocks, tanh FFN, final LN, tied output head
// logits = h E^T + b.
class CausalLM {
public:
    struct Layer {
        Tensor ln1_g, ln1_b;
        Tensor wq, wk, wv, wo;  // d x d
        Tensor ln2_g, ln2_b;
        Tensor w1, b1;  // d x h, h
        Tensor w2, b2;  // h x d, d
    };

    std::shared_ptr<EmbeddingTable> table;
    std::vector<Layer> layers;
    Tensor lnf_g, lnf_b;
    Tensor out_bias;  // V
    int64_t context_limit = 64;

    static CausalLM init(std::shared_ptr<EmbeddingTable> table, int n_layers, int64_t ffn_hidden,
                         int64_t context_limit, Rng& rng, double init_std = 0.1);
    // every sequence-mixing parameter zero: the next-token distribution is
    // exactly uniform, handy as a fixture
    static CausalLM zeroed(std::shared_ptr<EmbeddingTable> table, int n_layers, int64_t ffn_hidden,
                           int64_t context_limit);

    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;

    int64_t dim() const { return table->dim(); }
    int64_t vocab() const { return table->vocab(); }

    struct Bound {
        VarId table;
        std::vector<VarId> params;
    };
    // Records table and parameters on the tape; trainable -> leaves with
    // gradients, otherwise constants.
    Bound bind(Tape& t, bool trainable) const;

    // final hidden states (after the output LN) for a T x d input row matrix
    VarId hidden_states(Tape& t, const Bound& b, VarId input_rows) const;

    // -sum_n log P(e~_{n+1} | e~_{1:n}, x) with continuous target vectors.
    // The target-side bias is the bias of each vector's current projection.
    VarId nll_soft(Tape& t, const Bound& b, std::span<const int32_t> prompt, VarId soft,
                   std::span<const int32_t> projected_ids) const;

    // teacher-forced NLL of all next-token factors of [bos] seq... (training)
    VarId nll_tokens(Tape& t, const Bound& b, std::span<const int32_t> seq) const;

    // soft-target factors plus discrete prompt factors starting at
    // prompt_score_from; class-conditional joints are built on this
    VarId nll_mixed(Tape& t, const Bound& b, std::span<const int32_t> prompt, VarId soft,
                    std::span<const int32_t> projected_ids, int64_t prompt_score_from) const;

    // discrete-path oracle: NLL of `output` after `prompt`, ordinary lookup
    double nll_discrete(std::span<const int32_t> prompt, std::span<const int32_t> output) const;

    // next-token distribution after [bos] prompt ctx
    std::vector<double> next_distribution(std::span<const int32_t> ctx) const;

private:
    Tensor positional_rows(int64_t tlen) const;
};

// nucleus sampling; p = 1 is ancestral, p -> 0 approaches greedy argmax
constexpr double kDefaultNucleusP = 0.96;
std::vector<int32_t> ar_sample(const CausalLM& lm, std::span<const int32_t> prompt, int64_t max_len,
                               double nucleus_p, Rng& rng);

// Mean-pooled one-layer encoder over raw embeddings; shares the frozen table.
class AttributeClassifier {
public:
    std::shared_ptr<EmbeddingTable> table;
    int n_labels = 2;
    Tensor w1, b1;  // d x h, h
    Tensor w2, b2;  // labels x h, labels

    static AttributeClassifier init(std::shared_ptr<EmbeddingTable> table, int n_labels,
                                    int64_t hidden, Rng& rng, double init_std = 0.1);
    static AttributeClassifier zeroed(std::shared_ptr<EmbeddingTable> table, int n_labels,
                                      int64_t hidden);

    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;

    struct Bound {
        VarId table;
        VarId w1, b1, w2, b2;
    };
    Bound bind(Tape& t, bool trainable) const;

    VarId logits(Tape& t, const Bound& b, VarId input_rows) const;       // rank-1 [labels]
    VarId logprob(Tape& t, const Bound& b, VarId input_rows, int label) const;

    double logprob_discrete(std::span<const int32_t> ids, int label) const;
    int predict(std::span<const int32_t> ids) const;
};

// Class-conditional likelihoods: one LM per label, or one base LM with a
// verbalizer token prefixed per label.
class ConditionalLM {
public:
    std::vector<std::shared_ptr<const CausalLM>> class_lms;  // empty when verbalized
    std::shared_ptr<const CausalLM> base;                    // verbalizer variant
    std::vector<int32_t> verbalizer_ids;

    static ConditionalLM from_class_lms(std::vector<std::shared_ptr<const CausalLM>> lms);
    static ConditionalLM verbalized(std::shared_ptr<const CausalLM> base, std::vector<int32_t> verbalizers);

    int n_labels() const;
    const CausalLM& lm_for(int label) const;
    const EmbeddingTable& shared_table() const;

    // joint NLL of (prompt, soft outputs) under class `label`; prompt factors included
    VarId nll_joint(Tape& t, int label, std::span<const int32_t> prompt, VarId soft,
                    std::span<const int32_t> projected_ids) const;
    double nll_joint_discrete(int label, std::span<const int32_t> prompt,
                              std::span<const int32_t> output) const;
};

// Bayes posterior over labels under a uniform prior, via log-sum-exp
std::vector<double> generative_classprob(const ConditionalLM& cond, std::span<const int32_t> prompt,
                                         const SoftSequence& seq);

struct TrainLmOptions {
    int64_t d = 32;
    int n_layers = 1;
    int64_t ffn_hidden = 0;  // 0 -> 4d
    int64_t context_limit = 64;
    int epochs = 40;
    int batch_size = 8;
    double lr = 0.2;
    double heldout_fraction = 0.1;
    // extra <eos> targets appended per line; fixed-length sampling produces
    // trailing positions past the sentence end, and these teach the model
    // that <eos> continues as <eos> instead of leaving such inputs unseen
    int eos_repeats = 3;
    double init_std = 0.1;
    // row scale sets the nearest-neighbor gaps the Langevin updates must
    // cross; 0.35 puts the beta-floor update magnitude on the order of the
    // median gap for d around 32
    double table_init_std = 0.35;
    uint64_t seed = 1;
};

struct TrainLmResult {
    CausalLM lm;
    double heldout_nll = 0.0;   // per token
    double uniform_nll = 0.0;   // log V
    double final_train_nll = 0.0;
    SeparationReport separation;
};

// Trains from scratch (vocabulary built from the corpus) or on top of an
// existing frozen table (constraint models must not perturb it).
TrainLmResult train_lm(const std::vector<std::string>& corpus_lines, const TrainLmOptions& opts,
                       std::shared_ptr<EmbeddingTable> frozen_table = nullptr);

struct TrainClassifierOptions {
    int64_t hidden = 24;
    int n_labels = 2;
    int epochs = 30;
    int batch_size = 16;
    double lr = 0.5;
    double heldout_fraction = 0.1;
    double init_std = 0.1;
    // L2 penalty on the weight matrices; keeps log-probabilities calibrated
    // so constraint values stay in a few-nat range off the data manifold
    double weight_decay = 1e-3;
    // smoothed targets {1-s/2, s/2} bound the trained log-odds, and with them
    // the magnitude of -log p seen by the Lagrangian
    double label_smoothing = 0.1;
    // fraction of extra random-token examples trained toward the uniform
    // label; calibrates the classifier to ~p=1/labels away from the data
    // manifold, which is where annealing-phase iterates live
    double noise_augment = 0.25;
    uint64_t seed = 1;
};

struct TrainClassifierResult {
    AttributeClassifier clf;
    double train_accuracy = 0.0;
    double heldout_accuracy = 0.0;
    double final_train_loss = 0.0;
};

// lines are "label<TAB>text"
TrainClassifierResult train_classifier(std::shared_ptr<EmbeddingTable> table,
                                       const std::vector<std::string>& labeled_lines,
                                       const TrainClassifierOptions& opts);

std::vector<std::pair<int, std::string>> parse_labeled_lines(const std::vector<std::string>& lines);

// checkpoint io: one-line JSON header, then little-endian f64 payload
void save_lm(const std::string& path, const CausalLM& lm);
CausalLM load_lm(const std::string& path);
void save_classifier(const std::string& path, const AttributeClassifier& clf);
AttributeClassifier load_classifier(const std::string& path);

std::vector<std::string> read_lines(const std::string& path);

}  // namespace lcs
