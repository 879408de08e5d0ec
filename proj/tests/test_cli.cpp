#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "helpers.hpp"
#include "lcs/cli.hpp"
#include "lcs/metrics.hpp"
#include "lcs/records.hpp"
#include "test_paths.hpp"

using namespace lcs;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// every invocation happens through the real binary, like an operator would
struct CliRun {
    int exit_code;
    std::string out;
    std::string err;
};

CliRun run_cli(const std::string& args) {
    const std::string dir = "cli_tmp";
    const std::string cmd = std::string(LCS_CLI_PATH) + " " + args + " >" + dir + "/stdout.txt 2>" +
                            dir + "/stderr.txt";
    const int rc = std::system(cmd.c_str());
    auto slurp = [](const std::string& p) {
        std::ifstream f(p);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    return CliRun{WEXITSTATUS(rc), slurp(dir + "/stdout.txt"), slurp(dir + "/stderr.txt")};
}

void write_json(const std::string& path, const json& j) {
    std::ofstream f(path);
    f << j.dump(2) << "\n";
}

std::string slurp_file(const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// train the shared fixture models once per binary run
struct Fixture {
    std::string dir = "cli_tmp";
    std::string lm = "cli_tmp/lm.ckpt";
    std::string clf = "cli_tmp/clf.ckpt";
};

const Fixture& fixture() {
    static Fixture f = [] {
        Fixture fx;
        fs::create_directories(fx.dir);
        write_json(fx.dir + "/train_lm.json", json{{"corpus", std::string(LCS_DATA_DIR) + "/animals_lm.txt"},
                                                   {"out", fx.lm},
                                                   {"d", 24},
                                                   {"epochs", 20},
                                                   {"lr", 0.12},
                                                   {"seed", 7}});
        REQUIRE(run_cli("train-lm --config " + fx.dir + "/train_lm.json").exit_code == 0);

        write_json(fx.dir + "/train_clf.json",
                   json{{"corpus", std::string(LCS_DATA_DIR) + "/reviews_train.txt"},
                        {"lm", fx.lm},
                        {"out", fx.clf},
                        {"hidden", 12},
                        {"epochs", 10},
                        {"seed", 21}});
        // classifier over the animals table: review tokens map to <unk>, which
        // is fine for CLI plumbing tests (constraint quality is tested at the
        // library level)
        REQUIRE(run_cli("train-classifier --config " + fx.dir + "/train_clf.json").exit_code == 0);
        return fx;
    }();
    return f;
}

}  // namespace

TEST_CASE("train-lm emits a summary and a loadable checkpoint") {
    const Fixture& fx = fixture();
    const json summary = json::parse(run_cli("train-lm --config " + fx.dir + "/train_lm.json").out);
    CHECK(summary.at("below_uniform").get<bool>());
    CHECK(summary.at("separation_violations").get<int>() == 0);
    const CausalLM lm = load_lm(fx.lm);
    CHECK(lm.dim() == 24);
}

TEST_CASE("seed-fixed training writes byte-identical checkpoints") {
    const Fixture& fx = fixture();
    write_json(fx.dir + "/train_tiny.json",
               json{{"corpus", std::string(LCS_DATA_DIR) + "/tiny_alternating.txt"},
                    {"out", fx.dir + "/tiny_a.ckpt"},
                    {"d", 10},
                    {"epochs", 4},
                    {"seed", 3}});
    CHECK(run_cli("train-lm --config " + fx.dir + "/train_tiny.json").exit_code == 0);
    CHECK(run_cli("train-lm --config " + fx.dir + "/train_tiny.json --out " + fx.dir + "/tiny_b.ckpt")
              .exit_code == 0);
    CHECK(slurp_file(fx.dir + "/tiny_a.ckpt") == slurp_file(fx.dir + "/tiny_b.ckpt"));
}

TEST_CASE("a missing corpus path fails before any training") {
    const Fixture& fx = fixture();
    write_json(fx.dir + "/bad_corpus.json",
               json{{"corpus", "no/such/file.txt"}, {"out", fx.dir + "/x.ckpt"}});
    const CliRun r = run_cli("train-lm --config " + fx.dir + "/bad_corpus.json");
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("does not exist") != std::string::npos);
    CHECK_FALSE(fs::exists(fx.dir + "/x.ckpt"));
}

TEST_CASE("unknown config keys are rejected by name") {
    const Fixture& fx = fixture();
    write_json(fx.dir + "/unknown_key.json",
               json{{"corpus", std::string(LCS_DATA_DIR) + "/tiny_alternating.txt"},
                    {"out", fx.dir + "/x.ckpt"},
                    {"learning_rate", 0.1}});
    const CliRun r = run_cli("train-lm --config " + fx.dir + "/unknown_key.json");
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("learning_rate") != std::string::npos);
}

TEST_CASE("sample campaigns produce schema-complete JSONL deterministically") {
    const Fixture& fx = fixture();
    const json config{{"lm", fx.lm},
                      {"prompts", json::array({"the cat", ""})},
                      {"output_length", 6},
                      {"samples_per_prompt", 2},
                      {"constraints", json::array({json{{"type", "keyword"}, {"phrase", "river"}}})},
                      {"sampler", json{{"max_steps", 40}}},
                      {"seed", 5},
                      {"out", fx.dir + "/samples.jsonl"}};
    write_json(fx.dir + "/sample.json", config);
    const CliRun r = run_cli("sample --config " + fx.dir + "/sample.json");
    CHECK(r.exit_code == 0);
    const json summary = json::parse(r.out);
    CHECK(summary.at("records").get<int>() == 4);

    const auto records = read_jsonl(fx.dir + "/samples.jsonl");
    REQUIRE(records.size() == 4);
    for (const auto& rec : records) {
        CHECK(rec.record.constraints.size() == 1);
        CHECK(rec.record.constraints[0].name.find("river") != std::string::npos);
    }
    // raw schema keys on the first line
    std::ifstream f(fx.dir + "/samples.jsonl");
    std::string line;
    std::getline(f, line);
    const json j = json::parse(line);
    for (const char* key : {"version", "prompt", "output_ids", "output_text", "termination",
                            "constraints", "nll", "iterations"})
        CHECK(j.contains(key));

    // byte-identical rerun, also under --jobs 2
    const std::string bytes = slurp_file(fx.dir + "/samples.jsonl");
    CHECK(run_cli("sample --config " + fx.dir + "/sample.json --out " + fx.dir + "/samples2.jsonl")
              .exit_code == 0);
    CHECK(slurp_file(fx.dir + "/samples2.jsonl") == bytes);
    CHECK(run_cli("sample --config " + fx.dir + "/sample.json --jobs 2 --out " + fx.dir +
                  "/samples3.jsonl")
              .exit_code == 0);
    CHECK(slurp_file(fx.dir + "/samples3.jsonl") == bytes);
}

TEST_CASE("the sentiment campaign shape: 15 prompts x 20 samples") {
    const Fixture& fx = fixture();
    json prompts = json::array();
    const CausalLM lm = load_lm(fx.lm);
    for (int i = 0; i < 15; ++i) prompts.push_back("the cat");
    const json config{{"lm", fx.lm},
                      {"prompts", prompts},
                      {"output_length", 4},
                      {"samples_per_prompt", 20},
                      {"sampler", json{{"max_steps", 3}, {"min_repeats", 1}}},
                      {"seed", 9},
                      {"out", fx.dir + "/campaign.jsonl"}};
    write_json(fx.dir + "/campaign.json", config);
    CHECK(run_cli("sample --config " + fx.dir + "/campaign.json --jobs 2").exit_code == 0);
    CHECK(read_jsonl(fx.dir + "/campaign.jsonl").size() == 300);
}

TEST_CASE("zero-constraint records never fall back") {
    const Fixture& fx = fixture();
    const json config{{"lm", fx.lm},
                      {"prompts", json::array({""})},
                      {"output_length", 5},
                      {"samples_per_prompt", 4},
                      {"sampler", json{{"max_steps", 60}}},
                      {"seed", 12},
                      {"out", fx.dir + "/unconstrained.jsonl"}};
    write_json(fx.dir + "/unconstrained.json", config);
    CHECK(run_cli("sample --config " + fx.dir + "/unconstrained.json").exit_code == 0);
    for (const auto& rec : read_jsonl(fx.dir + "/unconstrained.jsonl")) {
        const bool ok = rec.record.termination == Termination::ConvergedEarlyStop ||
                        rec.record.termination == Termination::SelectedByRepeat;
        CHECK(ok);
    }
}

TEST_CASE("an embedding-table hash mismatch is a hard error") {
    const Fixture& fx = fixture();
    // a second LM trained with a different seed has a different table
    write_json(fx.dir + "/train_lm2.json", json{{"corpus", std::string(LCS_DATA_DIR) + "/animals_lm.txt"},
                                                {"out", fx.dir + "/lm2.ckpt"},
                                                {"d", 24},
                                                {"epochs", 2},
                                                {"seed", 123}});
    REQUIRE(run_cli("train-lm --config " + fx.dir + "/train_lm2.json").exit_code == 0);
    const json config{{"lm", fx.dir + "/lm2.ckpt"},
                      {"prompts", json::array({""})},
                      {"output_length", 4},
                      {"constraints",
                       json::array({json{{"type", "disc"}, {"classifier", fx.clf}, {"desired_label", 1},
                                         {"p_min", 0.9}}})},
                      {"out", fx.dir + "/mismatch.jsonl"}};
    write_json(fx.dir + "/mismatch.json", config);
    const CliRun r = run_cli("sample --config " + fx.dir + "/mismatch.json");
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("hash") != std::string::npos);
}

TEST_CASE("a failing chain flushes the completed prefix and exits non-zero") {
    const Fixture& fx = fixture();
    // second prompt exceeds the context limit only at chain runtime
    std::string longprompt;
    for (int i = 0; i < 70; ++i) longprompt += "cat ";
    const json config{{"lm", fx.lm},
                      {"prompts", json::array({"the cat", longprompt})},
                      {"output_length", 4},
                      {"samples_per_prompt", 1},
                      {"sampler", json{{"max_steps", 3}, {"min_repeats", 1}}},
                      {"seed", 2},
                      {"out", fx.dir + "/partial.jsonl"}};
    write_json(fx.dir + "/partial.json", config);
    const CliRun r = run_cli("sample --config " + fx.dir + "/partial.json");
    CHECK(r.exit_code != 0);
    CHECK(read_jsonl(fx.dir + "/partial.jsonl").size() == 1);
    CHECK(r.err.find("context") != std::string::npos);
}

TEST_CASE("eval reproduces library metrics and reports per-constraint satisfaction") {
    const Fixture& fx = fixture();
    REQUIRE(fs::exists(fx.dir + "/samples.jsonl"));
    const json config{{"samples", fx.dir + "/samples.jsonl"},
                      {"lm", fx.lm},
                      {"keywords", json::array({"river"})},
                      {"out_csv", fx.dir + "/metrics.csv"}};
    write_json(fx.dir + "/eval.json", config);
    const CliRun r = run_cli("eval --config " + fx.dir + "/eval.json");
    REQUIRE(r.exit_code == 0);
    const json rep = json::parse(r.out);

    // direct-call oracle over the same records
    const auto records = read_jsonl(fx.dir + "/samples.jsonl");
    std::vector<std::string> order;
    std::vector<std::vector<std::vector<int32_t>>> groups;
    for (const auto& rec : records) {
        size_t gi = 0;
        for (; gi < order.size(); ++gi)
            if (order[gi] == rec.prompt) break;
        if (gi == order.size()) {
            order.push_back(rec.prompt);
            groups.emplace_back();
        }
        groups[gi].push_back(rec.record.output_ids);
    }
    CHECK(rep.at("dist_1").get<double>() == dist_n_grouped(groups, 1));
    CHECK(rep.at("dist_2").get<double>() == dist_n_grouped(groups, 2));
    CHECK(rep.contains("coverage_percent"));
    CHECK(fs::exists(fx.dir + "/metrics.csv"));
    CHECK(rep.at("sample_count").get<int>() == 4);
}

TEST_CASE("a corrupted JSONL line is reported with its line number") {
    const Fixture& fx = fixture();
    std::string bytes = slurp_file(fx.dir + "/samples.jsonl");
    bytes += "{not json\n";
    std::ofstream(fx.dir + "/corrupt.jsonl", std::ios::binary) << bytes;
    const json config{{"samples", fx.dir + "/corrupt.jsonl"}, {"lm", fx.lm}};
    write_json(fx.dir + "/eval_corrupt.json", config);
    const CliRun r = run_cli("eval --config " + fx.dir + "/eval_corrupt.json");
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("line 5") != std::string::npos);
}

TEST_CASE("a schema version from the future is refused") {
    const Fixture& fx = fixture();
    const auto records = read_jsonl(fx.dir + "/samples.jsonl");
    json j = record_to_json(records[0].record, records[0].prompt, false);
    j["version"] = 999;
    std::ofstream(fx.dir + "/future.jsonl") << j.dump() << "\n";
    const json config{{"samples", fx.dir + "/future.jsonl"}, {"lm", fx.lm}};
    write_json(fx.dir + "/eval_future.json", config);
    const CliRun r = run_cli("eval --config " + fx.dir + "/eval_future.json");
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("version") != std::string::npos);
}

TEST_CASE("ablate-memory: the simplex fails at a strictly smaller length") {
    const Fixture& fx = fixture();
    write_json(fx.dir + "/train_wide.json", json{{"corpus", std::string(LCS_DATA_DIR) + "/animals_lm.txt"},
                                                 {"out", fx.dir + "/wide.ckpt"},
                                                 {"d", 24},
                                                 {"context_limit", 160},
                                                 {"epochs", 2},
                                                 {"seed", 7}});
    REQUIRE(run_cli("train-lm --config " + fx.dir + "/train_wide.json").exit_code == 0);
    const CausalLM lm = load_lm(fx.dir + "/wide.ckpt");
    const uint64_t cap = state_bytes_required(100, lm.dim()) + 1;
    const json config{{"lm", fx.dir + "/wide.ckpt"},
                      {"lengths", json::array({10, 50, 100})},
                      {"memory_cap_bytes", cap},
                      {"steps", 2},
                      {"seed", 1}};
    write_json(fx.dir + "/ablate.json", config);
    const CliRun r = run_cli("ablate-memory --config " + fx.dir + "/ablate.json");
    REQUIRE(r.exit_code == 0);
    const json rep = json::parse(r.out);
    CHECK(rep.at("max_length_embeds").get<int>() == 100);
    CHECK(rep.at("max_length_simplex").get<int>() < 100);
    for (const auto& row : rep.at("rows")) {
        CHECK(row.at("param_ratio").get<double>() ==
              static_cast<double>(lm.vocab()) / static_cast<double>(lm.dim()));
        if (row.at("embeds_under_cap").get<bool>() && row.at("simplex_under_cap").get<bool>()) {
            const double measured = static_cast<double>(row.at("simplex_peak_bytes").get<uint64_t>()) /
                                    static_cast<double>(row.at("embeds_peak_bytes").get<uint64_t>());
            CHECK(measured == doctest::Approx(row.at("param_ratio").get<double>()).epsilon(1e-12));
        }
    }
    // cap is a required key
    write_json(fx.dir + "/ablate_nocap.json", json{{"lm", fx.dir + "/wide.ckpt"}});
    CHECK(run_cli("ablate-memory --config " + fx.dir + "/ablate_nocap.json").exit_code != 0);
}

TEST_CASE("verify passes on a trained checkpoint") {
    const Fixture& fx = fixture();
    write_json(fx.dir + "/verify.json", json{{"lm", fx.lm}, {"fd_instances", 5}});
    const CliRun r = run_cli("verify --config " + fx.dir + "/verify.json");
    CHECK(r.exit_code == 0);
    const json rep = json::parse(r.out);
    CHECK(rep.at("pass").get<bool>());
    CHECK(rep.at("max_rel_err").get<double>() < 1e-4);
    CHECK(rep.at("separation").at("ok").get<bool>());
}

TEST_CASE("verify-embeddings flags a planted duplicate row with both ids") {
    const Fixture& fx = fixture();
    CausalLM lm = load_lm(fx.lm);
    for (int64_t c = 0; c < lm.dim(); ++c) lm.table->rows.row(9)[c] = lm.table->rows.row(6)[c];
    save_lm(fx.dir + "/dup.ckpt", lm);
    write_json(fx.dir + "/verify_dup.json", json{{"lm", fx.dir + "/dup.ckpt"}});
    const CliRun r = run_cli("verify-embeddings --config " + fx.dir + "/verify_dup.json");
    CHECK(r.exit_code != 0);
    const json rep = json::parse(r.out);
    CHECK_FALSE(rep.at("ok").get<bool>());
    bool saw6 = false, saw9 = false;
    for (const auto& v : rep.at("violations")) {
        if (v.at("token").get<int>() == 6) saw6 = true;
        if (v.at("token").get<int>() == 9) saw9 = true;
    }
    CHECK(saw6);
    CHECK(saw9);

    write_json(fx.dir + "/verify_ok.json", json{{"lm", fx.lm}});
    CHECK(run_cli("verify-embeddings --config " + fx.dir + "/verify_ok.json").exit_code == 0);
}

TEST_CASE("relative paths resolve through the data-directory env var") {
    const Fixture& fx = fixture();
    write_json(fx.dir + "/envpath.json", json{{"corpus", "tiny_alternating.txt"},
                                              {"out", fx.dir + "/env.ckpt"},
                                              {"d", 10},
                                              {"epochs", 2},
                                              {"seed", 3}});
    // without the env var the relative corpus cannot be found
    CHECK(run_cli("train-lm --config " + fx.dir + "/envpath.json").exit_code != 0);
    const std::string env = std::string(kDataDirEnv) + "=" + LCS_DATA_DIR + " ";
    const int rc = std::system((env + LCS_CLI_PATH + " train-lm --config " + fx.dir +
                                "/envpath.json >/dev/null 2>&1")
                                   .c_str());
    CHECK(WEXITSTATUS(rc) == 0);
    CHECK(fs::exists(fx.dir + "/env.ckpt"));
}

TEST_CASE("--seed overrides the config seed") {
    const Fixture& fx = fixture();
    write_json(fx.dir + "/seedtest.json", json{{"corpus", std::string(LCS_DATA_DIR) + "/tiny_alternating.txt"},
                                               {"out", fx.dir + "/seed_a.ckpt"},
                                               {"d", 10},
                                               {"epochs", 2},
                                               {"seed", 3}});
    CHECK(run_cli("train-lm --config " + fx.dir + "/seedtest.json").exit_code == 0);
    CHECK(run_cli("train-lm --config " + fx.dir + "/seedtest.json --seed 99 --out " + fx.dir +
                  "/seed_b.ckpt")
              .exit_code == 0);
    CHECK(slurp_file(fx.dir + "/seed_a.ckpt") != slurp_file(fx.dir + "/seed_b.ckpt"));
}

TEST_CASE("gzip trace sidecars are deterministic") {
    const Fixture& fx = fixture();
    const json config{{"lm", fx.lm},
                      {"prompts", json::array({""})},
                      {"output_length", 4},
                      {"samples_per_prompt", 1},
                      {"sampler", json{{"max_steps", 5}, {"min_repeats", 1}}},
                      {"trace_gzip", true},
                      {"seed", 77},
                      {"out", fx.dir + "/traced.jsonl"}};
    write_json(fx.dir + "/traced.json", config);
    CHECK(run_cli("sample --config " + fx.dir + "/traced.json").exit_code == 0);
    REQUIRE(fs::exists(fx.dir + "/traced.jsonl.traces.gz"));
    const std::string first = slurp_file(fx.dir + "/traced.jsonl.traces.gz");
    CHECK(run_cli("sample --config " + fx.dir + "/traced.json").exit_code == 0);
    CHECK(slurp_file(fx.dir + "/traced.jsonl.traces.gz") == first);
    CHECK(first.size() > 20);
    // gzip magic
    CHECK(static_cast<unsigned char>(first[0]) == 0x1f);
    CHECK(static_cast<unsigned char>(first[1]) == 0x8b);
}
