#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "lcs/sampler.hpp"

namespace lcs {

constexpr int kRecordSchemaVersion = 1;

// JSONL record: {version, prompt, output_ids, output_text, termination,
// constraints: [{name, f_final, epsilon, satisfied}], nll, iterations}
// plus "trace" when requested. Non-finite values serialize as null.
nlohmann::json record_to_json(const SampleRecord& rec, const std::string& prompt_text,
                              bool include_trace);

struct ParsedRecord {
    std::string prompt;
    SampleRecord record;
};

ParsedRecord record_from_json(const nlohmann::json& j);

void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& records);
// errors cite the 1-based line number of a corrupted record
std::vector<ParsedRecord> read_jsonl(const std::string& path);

}  // namespace lcs
