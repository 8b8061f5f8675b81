#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "dpcqa/tensor.hpp"

namespace dpcqa {

// Checkpoint file layout:
//   [u64 little-endian header length] [header JSON] [raw tensor payloads]
// The header is an ordered JSON object:
//   { "format": "dpcqa-checkpoint-v1",
//     "config": <arbitrary JSON carried along with the weights>,
//     "tensors": { name: {"dtype": "f32"|"f64", "shape": [...], "offset": N} } }
// Payload offsets are relative to the end of the header; tensors are laid
// out in insertion order with little-endian raw bytes, so save/load round
// trips are bit-exact.

namespace ckpt_detail {

template <typename T>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>) return "f32";
    else if constexpr (std::is_same_v<T, double>) return "f64";
    else static_assert(sizeof(T) == 0, "unsupported checkpoint dtype");
}

}  // namespace ckpt_detail

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, TensorPtr<T>>>;

template <typename T>
void save_checkpoint(const std::string& path, const nlohmann::ordered_json& config,
                     const NamedTensors<T>& tensors) {
    nlohmann::ordered_json header;
    header["format"] = "dpcqa-checkpoint-v1";
    header["config"] = config;
    nlohmann::ordered_json tens = nlohmann::ordered_json::object();
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        nlohmann::ordered_json entry;
        entry["dtype"] = ckpt_detail::dtype_name<T>();
        entry["shape"] = t->shape;
        entry["offset"] = offset;
        tens[name] = std::move(entry);
        offset += static_cast<uint64_t>(t->data.size()) * sizeof(T);
    }
    header["tensors"] = std::move(tens);

    std::string head = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    uint64_t hlen = head.size();
    char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((hlen >> (8 * i)) & 0xff);
    out.write(lenbuf, 8);
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& [name, t] : tensors) {
        out.write(reinterpret_cast<const char*>(t->data.data()),
                  static_cast<std::streamsize>(t->data.size() * sizeof(T)));
    }
    if (!out) throw IoError("short write while saving checkpoint: " + path);
}

template <typename T>
struct LoadedCheckpoint {
    nlohmann::ordered_json config;
    NamedTensors<T> tensors;

    const TensorPtr<T>& find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw IoError("checkpoint has no tensor named '" + name + "'");
    }
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char lenbuf[8];
    if (!in.read(lenbuf, 8)) throw IoError("checkpoint truncated before header length: " + path);
    uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i)
        hlen |= static_cast<uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
    if (hlen == 0 || hlen > (64u << 20))
        throw IoError("checkpoint header length is implausible: " + path);
    std::string head(hlen, '\0');
    if (!in.read(head.data(), static_cast<std::streamsize>(hlen)))
        throw IoError("checkpoint truncated inside header: " + path);

    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(head);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint header is not valid JSON: " + std::string(e.what()));
    }
    if (header.value("format", "") != std::string("dpcqa-checkpoint-v1"))
        throw IoError("unrecognized checkpoint format in " + path);
    if (!header.contains("tensors") || !header["tensors"].is_object())
        throw IoError("checkpoint header missing tensor table: " + path);

    LoadedCheckpoint<T> loaded;
    loaded.config = header.value("config", nlohmann::ordered_json::object());
    uint64_t expect_offset = 0;
    for (const auto& [name, entry] : header["tensors"].items()) {
        std::string dtype = entry.value("dtype", "");
        if (dtype != ckpt_detail::dtype_name<T>())
            throw IoError("tensor '" + name + "' has dtype " + dtype + ", expected " +
                          ckpt_detail::dtype_name<T>());
        Shape shape = entry.at("shape").template get<Shape>();
        uint64_t offset = entry.at("offset").template get<uint64_t>();
        if (offset != expect_offset)
            throw IoError("tensor '" + name + "' has unexpected payload offset");
        int64_t numel = shape_numel(shape);
        if (numel < 0) throw IoError("tensor '" + name + "' has a negative dimension");
        auto t = zeros<T>(shape);
        if (!in.read(reinterpret_cast<char*>(t->data.data()),
                     static_cast<std::streamsize>(t->data.size() * sizeof(T))))
            throw IoError("checkpoint truncated inside payload of '" + name + "'");
        expect_offset = offset + static_cast<uint64_t>(t->data.size()) * sizeof(T);
        loaded.tensors.emplace_back(name, std::move(t));
    }
    char extra;
    if (in.read(&extra, 1)) throw IoError("checkpoint has trailing bytes after payload: " + path);
    return loaded;
}

}  // namespace dpcqa
