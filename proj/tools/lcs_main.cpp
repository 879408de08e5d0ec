#include <iostream>

#include <CLI11.hpp>

#include "lcs/cli.hpp"
#include "lcs/tensor.hpp"

// lcs: train toy models over a shared embedding table, sample from them under
// differentiable constraints with projected Langevin updates, and evaluate
// the results. Subcommands: train-lm, train-classifier, sample, eval,
// ablate-memory, verify, verify-embeddings.

int main(int argc, char** argv) {
    CLI::App app{"constrained Langevin sampling workbench"};
    app.require_subcommand(1);

    std::string config_path;
    lcs::CliOptions opts;
    uint64_t seed = 0;
    std::string out;
    bool have_seed = false, have_out = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run config")->required();
        cmd->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
            have_seed = true;
        });
        cmd->add_option("--out", out, "override the config output path")->each([&](const std::string&) {
            have_out = true;
        });
        cmd->add_option("--jobs", opts.jobs, "parallel sampling chains")->check(CLI::PositiveNumber);
    };

    CLI::App* train_lm = app.add_subcommand("train-lm", "train the base language model");
    CLI::App* train_clf = app.add_subcommand("train-classifier", "train an attribute classifier");
    CLI::App* sample = app.add_subcommand("sample", "run a constrained sampling campaign");
    CLI::App* eval = app.add_subcommand("eval", "compute metrics over a JSONL sample file");
    CLI::App* ablate = app.add_subcommand("ablate-memory", "embeddings-vs-simplex state memory table");
    CLI::App* verify = app.add_subcommand("verify", "separation + gradient checks on a checkpoint");
    CLI::App* verify_emb = app.add_subcommand("verify-embeddings", "emit the separation report as JSON");
    for (CLI::App* c : {train_lm, train_clf, sample, eval, ablate, verify, verify_emb}) add_common(c);

    CLI11_PARSE(app, argc, argv);

    if (have_seed) opts.seed = seed;
    if (have_out) opts.out = out;

    try {
        const nlohmann::json config = lcs::load_config(config_path);
        if (train_lm->parsed()) return lcs::cmd_train_lm(config, opts);
        if (train_clf->parsed()) return lcs::cmd_train_classifier(config, opts);
        if (sample->parsed()) return lcs::cmd_sample(config, opts);
        if (eval->parsed()) return lcs::cmd_eval(config, opts);
        if (ablate->parsed()) return lcs::cmd_ablate_memory(config, opts);
        if (verify->parsed()) return lcs::cmd_verify(config, opts);
        if (verify_emb->parsed()) return lcs::cmd_verify_embeddings(config, opts);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 2;
}
