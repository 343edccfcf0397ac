#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "samora/nn.hpp"

namespace samora {

// Checkpoint directory layout: a human-readable manifest plus one flat
// little-endian float32 row-major blob per tensor. Loads fail loudly on any
// shape, hash, or size mismatch, naming the offending tensor.
struct CheckpointInfo {
    std::string stage;  // stage1-image / stage1-patch / stage1-pixel / stage2 / teacher-*
    std::string config_hash;
    std::uint64_t seed = 0;
};

namespace detail_ckpt {

struct TensorEntry {
    std::string name;
    std::string file;
    Shape shape;
    std::uint64_t hash = 0;
};

struct Manifest {
    CheckpointInfo info;
    std::vector<TensorEntry> tensors;
};

inline Manifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.txt");
    if (!f) throw std::runtime_error("samora: no checkpoint manifest in " + dir.string());
    std::string line;
    if (!std::getline(f, line) || line != "samora-checkpoint v1")
        throw std::runtime_error("samora: bad checkpoint magic in " + dir.string());
    Manifest m;
    while (std::getline(f, line)) {
        std::istringstream is(line);
        std::string tag;
        is >> tag;
        if (tag == "stage") {
            std::string eq;
            is >> eq >> m.info.stage;
        } else if (tag == "config_hash") {
            std::string eq;
            is >> eq >> m.info.config_hash;
        } else if (tag == "seed") {
            std::string eq;
            is >> eq >> m.info.seed;
        } else if (tag == "tensor") {
            TensorEntry e;
            int ndim = 0;
            std::string dtype, hash_hex;
            is >> e.name >> e.file >> dtype >> ndim;
            if (dtype != "f32") throw std::runtime_error("samora: unsupported dtype " + dtype);
            for (int i = 0; i < ndim; ++i) {
                int d = 0;
                is >> d;
                e.shape.push_back(d);
            }
            is >> hash_hex;
            e.hash = std::stoull(hash_hex, nullptr, 16);
            if (!is) throw std::runtime_error("samora: malformed tensor line in " + dir.string());
            m.tensors.push_back(std::move(e));
        }
    }
    return m;
}

}  // namespace detail_ckpt

template <class T>
void save_checkpoint(const std::filesystem::path& dir, const CheckpointInfo& info, const ParamList<T>& params) {
    std::filesystem::create_directories(dir);
    std::ofstream mf(dir / "manifest.txt");
    if (!mf) throw std::runtime_error("samora: cannot write manifest in " + dir.string());
    mf << "samora-checkpoint v1\n";
    mf << "stage = " << info.stage << "\n";
    mf << "config_hash = " << info.config_hash << "\n";
    mf << "seed = " << info.seed << "\n";
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        std::vector<float> blob(p.tensor.numel());
        for (std::size_t j = 0; j < blob.size(); ++j) blob[j] = static_cast<float>(p.tensor.data()[j]);
        char file[32];
        std::snprintf(file, sizeof(file), "t%05zu.bin", i);
        std::ofstream bf(dir / file, std::ios::binary);
        bf.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(float)));
        const std::uint64_t h = fnv1a(blob.data(), blob.size() * sizeof(float));
        mf << "tensor " << p.name << " " << file << " f32 " << p.tensor.ndim();
        for (int d = 0; d < p.tensor.ndim(); ++d) mf << " " << p.tensor.dim(d);
        char hex[17];
        std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
        mf << " " << hex << "\n";
    }
}

// Fills `params` (matched by name) from the checkpoint. Every requested
// tensor must be present with the exact shape and an intact blob. When
// `expected_config_hash` is non-empty it must match the manifest.
template <class T>
CheckpointInfo load_checkpoint(const std::filesystem::path& dir, ParamList<T>& params,
                               const std::string& expected_config_hash = "") {
    const auto m = detail_ckpt::read_manifest(dir);
    if (!expected_config_hash.empty() && m.info.config_hash != expected_config_hash)
        throw std::runtime_error("samora: checkpoint config hash mismatch in " + dir.string() + " (have " +
                                 m.info.config_hash + ", want " + expected_config_hash + ")");
    std::map<std::string, const detail_ckpt::TensorEntry*> index;
    for (const auto& e : m.tensors) index[e.name] = &e;
    for (auto& p : params) {
        const auto it = index.find(p.name);
        if (it == index.end())
            throw std::runtime_error("samora: checkpoint " + dir.string() + " is missing tensor " + p.name);
        const auto& e = *it->second;
        if (e.shape != p.tensor.shape())
            throw std::runtime_error("samora: shape mismatch for tensor " + p.name + ": checkpoint " +
                                     shape_str(e.shape) + " vs model " + shape_str(p.tensor.shape()));
        std::ifstream bf(dir / e.file, std::ios::binary);
        if (!bf) throw std::runtime_error("samora: missing blob for tensor " + p.name);
        std::vector<float> blob(p.tensor.numel());
        bf.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(float)));
        if (static_cast<std::size_t>(bf.gcount()) != blob.size() * sizeof(float))
            throw std::runtime_error("samora: truncated blob for tensor " + p.name);
        const std::uint64_t h = fnv1a(blob.data(), blob.size() * sizeof(float));
        if (h != e.hash) throw std::runtime_error("samora: blob hash mismatch for tensor " + p.name);
        for (std::size_t j = 0; j < blob.size(); ++j) p.tensor.data()[j] = static_cast<T>(blob[j]);
    }
    return m.info;
}

inline bool checkpoint_exists(const std::filesystem::path& dir) {
    return std::filesystem::exists(dir / "manifest.txt");
}

inline CheckpointInfo checkpoint_info(const std::filesystem::path& dir) {
    return detail_ckpt::read_manifest(dir).info;
}

}  // namespace samora
