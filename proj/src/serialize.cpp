#include <cstring>
#include <fstream>

#include <json.hpp>

#include "lcs/models.hpp"

// Checkpoint layout: one line of JSON ({version, kind, dims, lexicon, params
// with shapes}), '\n', then every tensor's values as little-endian f64 in
// header order. The payload length is checked against the header on load.

namespace lcs {

using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;

void write_payload(std::ofstream& out, const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    for (const auto& [name, t] : tensors)
        out.write(reinterpret_cast<const char*>(t->data()),
                  static_cast<std::streamsize>(t->numel() * sizeof(double)));
}

json shapes_json(const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    json arr = json::array();
    for (const auto& [name, t] : tensors) arr.push_back({{"name", name}, {"shape", t->shape()}});
    return arr;
}

struct RawCheckpoint {
    json header;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& get(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw Error("checkpoint: missing tensor '" + name + "'");
    }
};

RawCheckpoint read_raw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint: " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) throw Error("checkpoint: missing header line: " + path);
    RawCheckpoint cp;
    try {
        cp.header = json::parse(header_line);
    } catch (const std::exception& e) {
        throw Error("checkpoint: bad header JSON in " + path + ": " + e.what());
    }
    if (!cp.header.contains("version") || cp.header["version"].get<int>() != kCheckpointVersion)
        throw Error("checkpoint: unsupported version in " + path);

    size_t expect = 0;
    for (const auto& p : cp.header.at("params")) {
        size_t n = 1;
        for (int64_t d : p.at("shape").get<std::vector<int64_t>>()) n *= static_cast<size_t>(d);
        expect += n;
    }
    const std::streampos payload_start = in.tellg();
    in.seekg(0, std::ios::end);
    const size_t payload_bytes = static_cast<size_t>(in.tellg() - payload_start);
    if (payload_bytes != expect * sizeof(double))
        throw Error("checkpoint: payload length " + std::to_string(payload_bytes) + " != expected " +
                    std::to_string(expect * sizeof(double)) + " bytes in " + path);
    in.seekg(payload_start);

    for (const auto& p : cp.header.at("params")) {
        Tensor t(p.at("shape").get<std::vector<int64_t>>());
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
        cp.tensors.emplace_back(p.at("name").get<std::string>(), std::move(t));
    }
    if (!in) throw Error("checkpoint: truncated payload in " + path);
    return cp;
}

void write_file(const std::string& path, json header,
                const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    header["version"] = kCheckpointVersion;
    header["params"] = shapes_json(tensors);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint: " + path);
    out << header.dump() << '\n';
    write_payload(out, tensors);
    if (!out) throw Error("checkpoint write failed: " + path);
}

}  // namespace

void save_lm(const std::string& path, const CausalLM& lm) {
    json header{{"kind", "causal_lm"},
                {"d", lm.dim()},
                {"layers", lm.layers.size()},
                {"ffn_hidden", lm.layers.empty() ? 0 : lm.layers[0].w1.dim(1)},
                {"context_limit", lm.context_limit},
                {"lexicon", lm.table->lexicon.tokens()}};
    std::vector<std::pair<std::string, const Tensor*>> tensors{{"table", &lm.table->rows}};
    for (auto& [name, t] : lm.named_params()) tensors.emplace_back(name, t);
    write_file(path, std::move(header), tensors);
}

CausalLM load_lm(const std::string& path) {
    const RawCheckpoint cp = read_raw(path);
    if (cp.header.at("kind").get<std::string>() != "causal_lm")
        throw Error("checkpoint: " + path + " is not a causal_lm");
    auto table = std::make_shared<EmbeddingTable>();
    table->lexicon = Lexicon(cp.header.at("lexicon").get<std::vector<std::string>>());
    table->rows = cp.get("table");
    CausalLM lm = CausalLM::zeroed(table, cp.header.at("layers").get<int>(),
                                   cp.header.at("ffn_hidden").get<int64_t>(),
                                   cp.header.at("context_limit").get<int64_t>());
    for (auto& [name, t] : lm.named_params()) {
        const Tensor& src = cp.get(name);
        if (!src.same_shape(*t))
            throw Error("checkpoint: tensor '" + name + "' has shape " + src.shape_str() +
                        ", expected " + t->shape_str());
        *t = src;
    }
    return lm;
}

void save_classifier(const std::string& path, const AttributeClassifier& clf) {
    json header{{"kind", "classifier"},
                {"d", clf.table->dim()},
                {"labels", clf.n_labels},
                {"hidden", clf.w1.dim(1)},
                {"lexicon", clf.table->lexicon.tokens()}};
    std::vector<std::pair<std::string, const Tensor*>> tensors{{"table", &clf.table->rows}};
    for (auto& [name, t] : clf.named_params()) tensors.emplace_back(name, t);
    write_file(path, std::move(header), tensors);
}

AttributeClassifier load_classifier(const std::string& path) {
    const RawCheckpoint cp = read_raw(path);
    if (cp.header.at("kind").get<std::string>() != "classifier")
        throw Error("checkpoint: " + path + " is not a classifier");
    auto table = std::make_shared<EmbeddingTable>();
    table->lexicon = Lexicon(cp.header.at("lexicon").get<std::vector<std::string>>());
    table->rows = cp.get("table");
    AttributeClassifier clf = AttributeClassifier::zeroed(table, cp.header.at("labels").get<int>(),
                                                          cp.header.at("hidden").get<int64_t>());
    for (auto& [name, t] : clf.named_params()) {
        const Tensor& src = cp.get(name);
        if (!src.same_shape(*t))
            throw Error("checkpoint: tensor '" + name + "' has shape " + src.shape_str() +
                        ", expected " + t->shape_str());
        *t = src;
    }
    return clf;
}

}  // namespace lcs
