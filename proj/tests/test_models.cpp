#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "helpers.hpp"
#include "lcs/gradcheck.hpp"
#include "lcs/models.hpp"

using namespace lcs;
using namespace lcs::testing;

namespace {

CausalLM tiny_random_lm(uint64_t seed = 2, int64_t vocab = 9, int64_t d = 6) {
    auto table = random_table(vocab, d, 1, 0.7);
    Rng rng(seed);
    return CausalLM::init(table, 1, 2 * d, 24, rng, 0.2);
}

}  // namespace

TEST_CASE("all-zero parameters give the uniform next-token distribution") {
    auto table = random_table(11, 5, 3);
    const CausalLM lm = CausalLM::zeroed(table, 1, 20, 24);
    const double logv = std::log(11.0);

    SUBCASE("discrete path") {
        const std::vector<int32_t> prompt{5, 6};
        const std::vector<int32_t> out{7, 8, 9, 10};
        CHECK(lm.nll_discrete(prompt, out) == doctest::Approx(4.0 * logv).epsilon(1e-12));
    }
    SUBCASE("soft path") {
        const SoftSequence seq = exact_sequence(*table, {5, 6, 7});
        Tape t;
        const auto b = lm.bind(t, false);
        const VarId soft = t.leaf(seq.vectors);
        const double nll = t.value(lm.nll_soft(t, b, {}, soft, seq.projected_ids)).item();
        CHECK(nll == doctest::Approx(3.0 * logv).epsilon(1e-12));
    }
    SUBCASE("distribution sums to one") {
        const std::vector<int32_t> ctx5{5};
        const auto p = lm.next_distribution(ctx5);
        double sum = 0.0;
        for (double x : p) sum += x;
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("soft NLL on exact table rows equals the discrete evaluation") {
    const CausalLM lm = tiny_random_lm();
    const std::vector<int32_t> prompt{3, 8};
    const std::vector<int32_t> out{5, 2, 7, 5};
    const SoftSequence seq = exact_sequence(*lm.table, out);

    Tape t;
    const auto b = lm.bind(t, false);
    const VarId soft = t.leaf(seq.vectors);
    const double soft_nll = t.value(lm.nll_soft(t, b, prompt, soft, seq.projected_ids)).item();
    const double disc_nll = lm.nll_discrete(prompt, out);
    CHECK(std::abs(soft_nll - disc_nll) <= 1e-9);
}

TEST_CASE("soft NLL gradient w.r.t. the soft vectors matches finite differences") {
    const CausalLM lm = tiny_random_lm();
    const std::vector<int32_t> prompt{1, 4};
    GradProblem p{
        "lm_nll_soft",
        [&](Rng& r) {
            Tensor soft({3, lm.dim()});
            for (size_t i = 0; i < soft.numel(); ++i) soft[i] = r.gaussian() * 0.5;
            return std::vector<Tensor>{soft};
        },
        [&](Tape& t, const std::vector<Tensor>& in) {
            const VarId soft = t.leaf(in[0]);
            SoftSequence tmp;
            tmp.vectors = in[0];
            tmp.refresh_projection(*lm.table);
            const auto b = lm.bind(t, false);
            return std::make_pair(lm.nll_soft(t, b, prompt, soft, tmp.projected_ids),
                                  std::vector<VarId>{soft});
        }};
    Rng rng(6);
    for (int i = 0; i < 5; ++i) CHECK(max_relative_grad_error(p, p.make_inputs(rng)) < 1e-4);
}

TEST_CASE("non-finite soft vectors and over-limit lengths are rejected") {
    const CausalLM lm = tiny_random_lm();
    Tape t;
    const auto b = lm.bind(t, false);
    Tensor soft({30, lm.dim()});  // 30 + prompt exceeds context_limit 24
    std::vector<int32_t> ids(30, 0);
    const VarId sv = t.leaf(soft);
    const std::vector<int32_t> short_prompt{1, 2};
    CHECK_THROWS_AS(lm.nll_soft(t, b, short_prompt, sv, ids), Error);
}

TEST_CASE("tied embeddings: one storage backs lookups and output logits") {
    CausalLM lm = tiny_random_lm();
    const std::vector<int32_t> prompt{3};
    const std::vector<int32_t> out{5, 2};
    const double before = lm.nll_discrete(prompt, out);
    // perturb one coordinate of a row that appears both as input and target
    // (a uniform all-coordinate shift would sit in the layer-norm null space)
    lm.table->rows.row(5)[0] += 0.5;
    const double after = lm.nll_discrete(prompt, out);
    CHECK(before != after);
    // training gradient reaches the table through both paths
    Tape t;
    const auto b = lm.bind(t, true);
    t.backward(lm.nll_tokens(t, b, out));
    const Tensor g = t.grad(b.table);
    double row5 = 0.0;
    for (int64_t c = 0; c < lm.dim(); ++c) row5 += std::abs(g.row(5)[c]);
    CHECK(row5 > 0.0);
}

TEST_CASE("training on an alternating corpus reaches near-zero heldout NLL") {
    TrainLmOptions opt;
    opt.d = 12;
    opt.epochs = 15;
    opt.lr = 0.2;
    opt.seed = 4;
    const TrainLmResult res = train_lm(alternating_corpus(48, 12), opt);
    // the corpus is deterministic, so a bigram frequency oracle sits at ~0 nats
    CHECK(res.heldout_nll < 0.1);
    CHECK(res.heldout_nll < res.uniform_nll);
    CHECK(res.separation.ok());
}

TEST_CASE("empty corpus is an error") {
    TrainLmOptions opt;
    CHECK_THROWS_AS(train_lm({}, opt), Error);
    CHECK_THROWS_AS(train_lm({"", "  "}, opt), Error);
}

TEST_CASE("seed-fixed training is bit-reproducible") {
    TrainLmOptions opt;
    opt.d = 10;
    opt.epochs = 3;
    opt.seed = 12;
    const auto corpus = alternating_corpus(16, 8);
    const TrainLmResult a = train_lm(corpus, opt);
    const TrainLmResult b = train_lm(corpus, opt);
    REQUIRE(a.lm.table->rows.numel() == b.lm.table->rows.numel());
    for (size_t i = 0; i < a.lm.table->rows.numel(); ++i)
        CHECK(a.lm.table->rows[i] == b.lm.table->rows[i]);
    const auto pa = a.lm.named_params();
    const auto pb = b.lm.named_params();
    for (size_t i = 0; i < pa.size(); ++i)
        for (size_t j = 0; j < pa[i].second->numel(); ++j)
            CHECK((*pa[i].second)[j] == (*pb[i].second)[j]);
}

TEST_CASE("zero-parameter classifier answers log(1/2)") {
    auto table = random_table(9, 5, 7);
    const AttributeClassifier clf = AttributeClassifier::zeroed(table, 2, 8);
    CHECK(clf.logprob_discrete(std::vector<int32_t>{5, 6, 7}, 0) ==
          doctest::Approx(std::log(0.5)).epsilon(1e-12));
    CHECK_THROWS_AS(clf.logprob_discrete(std::vector<int32_t>{5}, 2), Error);
}

TEST_CASE("classifier probabilities normalize") {
    auto table = random_table(9, 5, 7);
    Rng rng(5);
    const AttributeClassifier clf = AttributeClassifier::init(table, 3, 8, rng, 0.4);
    const std::vector<int32_t> ids{1, 5, 8, 3};
    double sum = 0.0;
    for (int c = 0; c < 3; ++c) sum += std::exp(clf.logprob_discrete(ids, c));
    CHECK(std::abs(sum - 1.0) < 1e-9);
}

TEST_CASE("classifier gradient w.r.t. input embeddings matches finite differences") {
    auto table = random_table(9, 5, 7);
    Rng rng(5);
    const AttributeClassifier clf = AttributeClassifier::init(table, 2, 8, rng, 0.4);
    GradProblem p{
        "classifier_logprob",
        [&](Rng& r) {
            Tensor x({4, 5});
            for (size_t i = 0; i < x.numel(); ++i) x[i] = r.gaussian() * 0.5;
            return std::vector<Tensor>{x};
        },
        [&](Tape& t, const std::vector<Tensor>& in) {
            const VarId x = t.leaf(in[0]);
            const auto b = clf.bind(t, false);
            return std::make_pair(clf.logprob(t, b, x, 1), std::vector<VarId>{x});
        }};
    Rng prng(9);
    for (int i = 0; i < 5; ++i) CHECK(max_relative_grad_error(p, p.make_inputs(prng)) < 1e-4);
}

TEST_CASE("classifier training separates the review classes") {
    ReviewCorpus corpus = make_review_corpus(77, 120);
    TrainLmOptions lopt;
    lopt.d = 24;
    lopt.epochs = 15;
    lopt.lr = 0.12;
    const TrainLmResult lm = train_lm(corpus.lm_lines, lopt);
    TrainClassifierOptions copt;
    copt.hidden = 16;
    copt.epochs = 100;
    copt.label_smoothing = 0.05;
    const TrainClassifierResult res = train_classifier(lm.lm.table, corpus.labeled_train, copt);
    CHECK(res.heldout_accuracy > 0.9);
    // the spec open question: capacity surfaced, not asserted beyond sanity
    CHECK(res.train_accuracy > 0.9);
}

TEST_CASE("generative posterior is symmetric for identical class models") {
    auto table = random_table(9, 5, 7);
    Rng rng(8);
    auto lm = std::make_shared<const CausalLM>(CausalLM::init(table, 1, 10, 24, rng, 0.2));
    const ConditionalLM cond = ConditionalLM::from_class_lms({lm, lm});
    const SoftSequence seq = exact_sequence(*table, {5, 6, 7});
    const auto probs = generative_classprob(cond, std::vector<int32_t>{8}, seq);
    CHECK(probs[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(probs[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("generative posterior equals the hand-computed Bayes ratio") {
    auto table = random_table(9, 5, 7);
    Rng r1(8), r2(99);
    auto lm0 = std::make_shared<const CausalLM>(CausalLM::init(table, 1, 10, 24, r1, 0.2));
    auto lm1 = std::make_shared<const CausalLM>(CausalLM::init(table, 1, 10, 24, r2, 0.25));
    const ConditionalLM cond = ConditionalLM::from_class_lms({lm0, lm1});
    const std::vector<int32_t> prompt{8};
    const std::vector<int32_t> out{5, 6, 7};
    const SoftSequence seq = exact_sequence(*table, out);

    const double nll0 = cond.nll_joint_discrete(0, prompt, out);
    const double nll1 = cond.nll_joint_discrete(1, prompt, out);
    const double want0 = std::exp(-nll0) / (std::exp(-nll0) + std::exp(-nll1));

    const auto probs = generative_classprob(cond, prompt, seq);
    CHECK(probs[0] == doctest::Approx(want0).epsilon(1e-9));
    CHECK(probs[0] + probs[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("verbalized conditional is two NLL evaluations differing only in prefix") {
    auto table = random_table(9, 5, 7);
    Rng rng(8);
    auto lm = std::make_shared<const CausalLM>(CausalLM::init(table, 1, 10, 24, rng, 0.2));
    const ConditionalLM cond = ConditionalLM::verbalized(lm, {Lexicon::kCls0, Lexicon::kCls1});
    const std::vector<int32_t> prompt{8};
    const std::vector<int32_t> out{5, 6};

    for (int label = 0; label < 2; ++label) {
        Tape t;
        const auto b = lm->bind(t, false);
        const SoftSequence seq = exact_sequence(*table, out);
        const VarId soft = t.constant(seq.vectors);
        std::vector<int32_t> prefixed{label == 0 ? Lexicon::kCls0 : Lexicon::kCls1, 8};
        const double direct =
            t.value(lm->nll_mixed(t, b, prefixed, soft, seq.projected_ids, 1)).item();
        CHECK(cond.nll_joint_discrete(label, prompt, out) == doctest::Approx(direct).epsilon(1e-12));
    }
}

TEST_CASE("nucleus sampling at p=1 matches the model distribution within 3 sigma") {
    const CausalLM lm = tiny_random_lm(41);
    const std::vector<int32_t> ctx{3};
    const std::vector<double> probs = lm.next_distribution(ctx);
    std::vector<int> counts(probs.size(), 0);
    Rng rng(1234);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto out = ar_sample(lm, ctx, 1, 1.0, rng);
        if (!out.empty()) ++counts[static_cast<size_t>(out[0])];
    }
    int emitted = 0;
    for (int c : counts) emitted += c;
    // eos draws terminate without emitting; renormalize against non-eos mass
    double non_eos = 0.0;
    for (size_t j = 0; j < probs.size(); ++j)
        if (j != static_cast<size_t>(Lexicon::kEos)) non_eos += probs[j];
    for (size_t j = 0; j < probs.size(); ++j) {
        if (j == static_cast<size_t>(Lexicon::kEos)) continue;
        const double p = probs[j];
        const double expect = p * n;
        const double sigma = std::sqrt(n * p * (1 - p));
        CHECK(std::abs(counts[j] - expect) <= 3.0 * sigma + 1.0);
    }
    CHECK(emitted == doctest::Approx(n * non_eos).epsilon(0.05));
}

TEST_CASE("nucleus sampling at tiny p is greedy argmax") {
    const CausalLM lm = tiny_random_lm(41);
    const std::vector<int32_t> ctx3{3};
    const std::vector<double> probs = lm.next_distribution(ctx3);
    int32_t argmax = 0;
    for (size_t j = 1; j < probs.size(); ++j)
        if (probs[j] > probs[static_cast<size_t>(argmax)]) argmax = static_cast<int32_t>(j);
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        const auto out = ar_sample(lm, ctx3, 1, 1e-12, rng);
        if (argmax == Lexicon::kEos) {
            CHECK(out.empty());
        } else {
            REQUIRE(out.size() == 1);
            CHECK(out[0] == argmax);
        }
    }
}

TEST_CASE("nucleus default and precondition") {
    CHECK(kDefaultNucleusP == 0.96);
    const CausalLM lm = tiny_random_lm();
    Rng rng(1);
    CHECK_THROWS_AS(ar_sample(lm, {}, 4, 0.0, rng), Error);
    CHECK_THROWS_AS(ar_sample(lm, {}, 4, 1.5, rng), Error);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    const CausalLM lm = tiny_random_lm(77);
    const std::string path = "test_lm_roundtrip.ckpt";
    save_lm(path, lm);
    const CausalLM loaded = load_lm(path);
    CHECK(loaded.table->content_hash() == lm.table->content_hash());
    CHECK(loaded.context_limit == lm.context_limit);
    CHECK(loaded.table->lexicon.tokens() == lm.table->lexicon.tokens());
    const auto pa = lm.named_params();
    const auto pb = loaded.named_params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i)
        for (size_t j = 0; j < pa[i].second->numel(); ++j)
            CHECK((*pa[i].second)[j] == (*pb[i].second)[j]);

    // byte-identical re-serialization
    save_lm(path + ".again", loaded);
    std::ifstream f1(path, std::ios::binary), f2(path + ".again", std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::remove(path.c_str());
    std::remove((path + ".again").c_str());
}

TEST_CASE("checkpoint loading is length-checked") {
    const CausalLM lm = tiny_random_lm(78);
    const std::string path = "test_lm_truncated.ckpt";
    save_lm(path, lm);
    // truncate the payload
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 16));
    out.close();
    CHECK_THROWS_AS(load_lm(path), Error);
    std::remove(path.c_str());
}

TEST_CASE("classifier checkpoints round-trip") {
    auto table = random_table(9, 5, 7);
    Rng rng(5);
    const AttributeClassifier clf = AttributeClassifier::init(table, 2, 8, rng, 0.4);
    const std::string path = "test_clf_roundtrip.ckpt";
    save_classifier(path, clf);
    const AttributeClassifier loaded = load_classifier(path);
    CHECK(loaded.table->content_hash() == clf.table->content_hash());
    CHECK(loaded.logprob_discrete(std::vector<int32_t>{1, 2}, 1) ==
          clf.logprob_discrete(std::vector<int32_t>{1, 2}, 1));
    CHECK_THROWS_AS(load_lm(path), Error);  // kind mismatch
    std::remove(path.c_str());
}

TEST_CASE("labeled corpus parsing errors are specific") {
    CHECK_THROWS_WITH_AS(parse_labeled_lines({"no tab here"}),
                         doctest::Contains("line 1"), Error);
    CHECK_THROWS_AS(parse_labeled_lines({"x\ttext"}), Error);
    CHECK_THROWS_AS(parse_labeled_lines({"1\t  "}), Error);
    const auto ok = parse_labeled_lines({"0\thello world", "1\tbye"});
    CHECK(ok.size() == 2);
    CHECK(ok[1].first == 1);
}
