#include "lcs/records.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace lcs {

using nlohmann::json;

namespace {

json finite_or_null(double v) {
    if (!std::isfinite(v)) return nullptr;
    return v;
}

double null_or_double(const json& j) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    return j.get<double>();
}

}  // namespace

json record_to_json(const SampleRecord& rec, const std::string& prompt_text, bool include_trace) {
    json constraints = json::array();
    for (const auto& c : rec.constraints)
        constraints.push_back({{"name", c.name},
                               {"f_final", finite_or_null(c.f_final)},
                               {"epsilon", c.epsilon},
                               {"satisfied", c.satisfied}});
    json j{{"version", kRecordSchemaVersion},
           {"prompt", prompt_text},
           {"output_ids", rec.output_ids},
           {"output_text", rec.output_text},
           {"termination", termination_name(rec.termination)},
           {"constraints", constraints},
           {"nll", finite_or_null(rec.nll)},
           {"iterations", rec.iterations}};
    j["method"] = rec.method;
    j["restarts_used"] = rec.restarts_used;
    j["state_peak_bytes"] = rec.state_peak_bytes;
    if (include_trace) {
        json trace = json::array();
        for (const auto& e : rec.trace)
            trace.push_back({{"attempt", e.attempt},
                             {"iter", e.iter},
                             {"energy", finite_or_null(e.energy)},
                             {"nll", finite_or_null(e.nll)},
                             {"f", e.f},
                             {"lambda", e.lambda},
                             {"beta", e.beta},
                             {"eta", e.eta},
                             {"ids_hash", e.ids_hash}});
        j["trace"] = trace;
    }
    return j;
}

ParsedRecord record_from_json(const json& j) {
    if (!j.contains("version"))
        throw Error("record: missing schema version");
    if (j.at("version").get<int>() != kRecordSchemaVersion)
        throw Error("record: schema version " + j.at("version").dump() + " unsupported, expected " +
                    std::to_string(kRecordSchemaVersion));
    ParsedRecord out;
    out.prompt = j.at("prompt").get<std::string>();
    SampleRecord& r = out.record;
    r.output_ids = j.at("output_ids").get<std::vector<int32_t>>();
    r.output_text = j.at("output_text").get<std::string>();
    r.termination = termination_from_name(j.at("termination").get<std::string>());
    r.nll = null_or_double(j.at("nll"));
    r.iterations = j.at("iterations").get<int64_t>();
    if (j.contains("method")) r.method = j.at("method").get<std::string>();
    if (j.contains("restarts_used")) r.restarts_used = j.at("restarts_used").get<int32_t>();
    if (j.contains("state_peak_bytes")) r.state_peak_bytes = j.at("state_peak_bytes").get<uint64_t>();
    for (const auto& c : j.at("constraints")) {
        ConstraintOutcome oc;
        oc.name = c.at("name").get<std::string>();
        oc.f_final = null_or_double(c.at("f_final"));
        oc.epsilon = c.at("epsilon").get<double>();
        oc.satisfied = c.at("satisfied").get<bool>();
        r.constraints.push_back(std::move(oc));
    }
    return out;
}

void write_jsonl(const std::string& path, const std::vector<json>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write: " + path);
    for (const auto& r : records) out << r.dump() << '\n';
    if (!out) throw Error("write failed: " + path);
}

std::vector<ParsedRecord> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open: " + path);
    std::vector<ParsedRecord> out;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(record_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw Error(path + ": line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace lcs
