#pragma once

#include <optional>
#include <ostream>
#include <string>

#include <json.hpp>

namespace lcs {

// LCS_DATA_DIR provides the fallback directory for relative paths in configs.
constexpr const char* kDataDirEnv = "LCS_DATA_DIR";

struct CliOptions {
    std::optional<uint64_t> seed;       // --seed overrides the config seed
    std::optional<std::string> out;     // --out overrides the config output path
    int jobs = 1;                       // parallel chains
    std::ostream* out_stream = nullptr; // defaults to std::cout
};

nlohmann::json load_config(const std::string& path);

// each returns a process exit code; invalid configs fail before any compute
int cmd_train_lm(const nlohmann::json& config, const CliOptions& opts);
int cmd_train_classifier(const nlohmann::json& config, const CliOptions& opts);
int cmd_sample(const nlohmann::json& config, const CliOptions& opts);
int cmd_eval(const nlohmann::json& config, const CliOptions& opts);
int cmd_ablate_memory(const nlohmann::json& config, const CliOptions& opts);
int cmd_verify(const nlohmann::json& config, const CliOptions& opts);
int cmd_verify_embeddings(const nlohmann::json& config, const CliOptions& opts);

std::string resolve_path(const std::string& path);

}  // namespace lcs
