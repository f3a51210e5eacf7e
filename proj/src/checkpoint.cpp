#include "comchain/checkpoint.hpp"
#include "comchain/config_json.hpp"
#include "comchain/util.hpp"

#include <cstring>

namespace comchain {

namespace {

constexpr char kMagic[4] = {'C', 'O', 'M', 'C'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::vector<uint8_t>& out, T v) {
    const auto* p = reinterpret_cast<const uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(const std::vector<uint8_t>& bytes, size_t& off, const std::string& path) {
    if (off + sizeof(T) > bytes.size()) throw CheckpointError(path + ": truncated checkpoint");
    T v;
    std::memcpy(&v, bytes.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

std::string save_checkpoint(const ParamSet& params, const ModelConfig& config,
                            const std::string& path) {
    const std::string cfg_blob = nlohmann::json(config).dump();
    std::vector<uint8_t> bytes;
    bytes.insert(bytes.end(), kMagic, kMagic + 4);
    put(bytes, kVersion);
    put(bytes, static_cast<uint32_t>(cfg_blob.size()));
    bytes.insert(bytes.end(), cfg_blob.begin(), cfg_blob.end());
    put(bytes, static_cast<uint64_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        put(bytes, static_cast<uint16_t>(name.size()));
        bytes.insert(bytes.end(), name.begin(), name.end());
        put(bytes, static_cast<uint8_t>(tensor.shape.size()));
        for (int64_t d : tensor.shape) put(bytes, static_cast<uint64_t>(d));
        const auto* p = reinterpret_cast<const uint8_t*>(tensor.data.data());
        bytes.insert(bytes.end(), p, p + tensor.data.size() * sizeof(float));
    }
    write_file(path, bytes.data(), bytes.size());
    return sha256_hex(bytes.data(), bytes.size());
}

LoadedCheckpoint load_checkpoint(const std::string& path, const ModelConfig* expect) {
    const auto bytes = read_file(path);
    LoadedCheckpoint out;
    out.sha256 = sha256_hex(bytes.data(), bytes.size());
    size_t off = 0;
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw CheckpointError(path + ": bad magic");
    off = 4;
    if (take<uint32_t>(bytes, off, path) != kVersion)
        throw CheckpointError(path + ": unsupported version");
    const auto cfg_len = take<uint32_t>(bytes, off, path);
    if (off + cfg_len > bytes.size()) throw CheckpointError(path + ": truncated checkpoint");
    try {
        out.config = nlohmann::json::parse(bytes.begin() + static_cast<int64_t>(off),
                                           bytes.begin() + static_cast<int64_t>(off + cfg_len))
                         .get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(path + ": bad config blob: " + e.what());
    }
    off += cfg_len;

    std::map<std::string, std::vector<int64_t>> expected;
    for (const auto& ts : schema(expect ? *expect : out.config)) expected[ts.name] = ts.shape;

    const auto count = take<uint64_t>(bytes, off, path);
    for (uint64_t i = 0; i < count; ++i) {
        const auto name_len = take<uint16_t>(bytes, off, path);
        if (off + name_len > bytes.size()) throw CheckpointError(path + ": truncated checkpoint");
        std::string name(reinterpret_cast<const char*>(bytes.data() + off), name_len);
        off += name_len;
        const auto rank = take<uint8_t>(bytes, off, path);
        std::vector<int64_t> shape;
        for (uint8_t d = 0; d < rank; ++d)
            shape.push_back(static_cast<int64_t>(take<uint64_t>(bytes, off, path)));
        auto it = expected.find(name);
        if (it == expected.end())
            throw CheckpointError(path + ": tensor '" + name + "' not in the model schema");
        if (it->second != shape)
            throw CheckpointError(path + ": tensor '" + name + "' has shape " +
                                  shape_str(shape) + ", schema expects " + shape_str(it->second));
        Tensor t(shape);
        const size_t nbytes = t.data.size() * sizeof(float);
        if (off + nbytes > bytes.size()) throw CheckpointError(path + ": truncated checkpoint");
        std::memcpy(t.data.data(), bytes.data() + off, nbytes);
        off += nbytes;
        expected.erase(it);
        out.params.emplace(std::move(name), std::move(t));
    }
    if (!expected.empty())
        throw CheckpointError(path + ": tensor '" + expected.begin()->first + "' missing");
    if (off != bytes.size()) throw CheckpointError(path + ": trailing bytes");
    return out;
}

}  // namespace comchain
