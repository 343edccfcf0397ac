#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "samora/nn.hpp"

namespace samora {

enum class Level { Image = 0, Patch = 1, Pixel = 2, Composite = 3 };

inline const char* level_name(Level l) {
    switch (l) {
        case Level::Image: return "image";
        case Level::Patch: return "patch";
        case Level::Pixel: return "pixel";
        case Level::Composite: return "composite";
    }
    return "?";
}

inline Level level_from_name(const std::string& s) {
    if (s == "image") return Level::Image;
    if (s == "patch") return Level::Patch;
    if (s == "pixel") return Level::Pixel;
    throw std::invalid_argument("samora: unknown LoRA level '" + s + "'");
}

// Hierarchy used by HL-Attn pairing: image outranks patch outranks pixel.
inline bool level_higher(Level a, Level b) { return static_cast<int>(a) < static_cast<int>(b); }

// How the expert path reads its weights: delta-only keeps just the low-rank
// maps on adapted projections (frozen k/out/norms stay as shared plumbing);
// theta-plus-delta is the conventional LoRA forward with W + BA.
enum class ExpertPath { DeltaOnly, ThetaPlusDelta };

inline ExpertPath expert_path_from_name(const std::string& s) {
    if (s == "delta") return ExpertPath::DeltaOnly;
    if (s == "theta_delta") return ExpertPath::ThetaPlusDelta;
    throw std::invalid_argument("samora: unknown expert path '" + s + "'");
}

// One low-rank pair; applied as (x . a) . b so the delta is a[in,r] b[r,out].
template <class T>
struct LoraAdapter {
    TensorT<T> a;  // [in, r]
    TensorT<T> b;  // [r, out], zero-initialized

    static LoraAdapter create(int in, int out, int rank, Rng& rng) {
        LoraAdapter ad;
        ad.a = TensorT<T>::trunc_normal({in, rank}, rng, T(0.02)).set_requires_grad();
        ad.b = TensorT<T>::zeros({rank, out}).set_requires_grad();
        return ad;
    }

    TensorT<T> forward(const TensorT<T>& x) const { return matmul(matmul(x, a), b); }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".a", a});
        out.push_back({prefix + ".b", b});
    }
};

// Adapters for every adapted projection of every encoder block: the q and v
// attention projections plus both FFN projections.
template <class T>
struct LoraExpertSet {
    struct BlockAdapters {
        LoraAdapter<T> q, v, fc1, fc2;
    };

    Level level = Level::Image;
    int rank = 4;
    std::vector<BlockAdapters> blocks;

    const BlockAdapters& block(std::size_t i) const {
        if (i >= blocks.size())
            throw std::invalid_argument("samora: no adapter for block " + std::to_string(i) + " in " +
                                        level_name(level) + " expert");
        return blocks[i];
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string bp = prefix + ".block" + std::to_string(i);
            blocks[i].q.collect(bp + ".q", out);
            blocks[i].v.collect(bp + ".v", out);
            blocks[i].fc1.collect(bp + ".fc1", out);
            blocks[i].fc2.collect(bp + ".fc2", out);
        }
    }

    ParamList<T> params(const std::string& prefix = "lora") {
        ParamList<T> out;
        collect(prefix + "." + level_name(level), out);
        return out;
    }

    void set_trainable(bool trainable) {
        for (auto& b : blocks) {
            b.q.a.set_requires_grad(trainable);
            b.q.b.set_requires_grad(trainable);
            b.v.a.set_requires_grad(trainable);
            b.v.b.set_requires_grad(trainable);
            b.fc1.a.set_requires_grad(trainable);
            b.fc1.b.set_requires_grad(trainable);
            b.fc2.a.set_requires_grad(trainable);
            b.fc2.b.set_requires_grad(trainable);
        }
    }
};

}  // namespace samora
