#pragma once

#include <array>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "samora/fusion.hpp"
#include "samora/model.hpp"

namespace samora {

enum class FusionKind { HlAttn, Lac, Gated, Compose };

inline const char* fusion_kind_name(FusionKind k) {
    switch (k) {
        case FusionKind::HlAttn: return "hl_attn";
        case FusionKind::Lac: return "lac";
        case FusionKind::Gated: return "gated";
        case FusionKind::Compose: return "compose";
    }
    return "?";
}

inline FusionKind fusion_kind_from_name(const std::string& s) {
    if (s == "hl_attn") return FusionKind::HlAttn;
    if (s == "lac") return FusionKind::Lac;
    if (s == "gated") return FusionKind::Gated;
    if (s == "compose") return FusionKind::Compose;
    throw std::invalid_argument("samora: unknown fusion strategy '" + s + "'");
}

// Heatmap hooks filled during a captured forward pass: per-expert token
// contribution magnitudes and the final block's fused cross-attention.
template <class T>
struct ModelCaptures {
    std::map<Level, std::vector<T>> expert_token_norm;  // [L] per expert, last block
    AttnCapture<T> fused;                               // stage-2 cross-attention, last block
    bool valid = false;
};

// The stage-2 model: frozen encoder, frozen experts, one fusion strategy and
// the trainable decoder. Experts register by level; duplicates are rejected.
template <class T>
struct SamoraModel {
    Encoder<T> encoder;
    std::vector<LoraExpertSet<T>> experts;
    ExpertPath path = ExpertPath::DeltaOnly;
    FusionKind kind = FusionKind::HlAttn;
    FusionOrder order;
    std::vector<HlAttnBlock<T>> hl;
    TensorT<T> lac_weights;
    bool lac_trainable = false;
    std::vector<MixtureGate<T>> gates;
    std::optional<LoraExpertSet<T>> composite;
    std::array<double, 3> compose_coeffs = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    SegDecoder<T> decoder;

    void add_expert(LoraExpertSet<T> set) {
        for (const auto& e : experts)
            if (e.level == set.level)
                throw std::invalid_argument(std::string("samora: duplicate LoRA level injection: ") +
                                            level_name(set.level));
        set.set_trainable(false);
        experts.push_back(std::move(set));
    }

    const LoraExpertSet<T>* expert(Level l) const {
        for (const auto& e : experts)
            if (e.level == l) return &e;
        return nullptr;
    }

    void init_fusion(Rng& rng, bool use_norm = true) {
        hl.clear();
        gates.clear();
        const int d = encoder.cfg.dim;
        switch (kind) {
            case FusionKind::HlAttn:
                for (int i = 0; i < encoder.cfg.depth; ++i)
                    hl.push_back(HlAttnBlock<T>::create(d, encoder.cfg.heads, order, rng, use_norm));
                break;
            case FusionKind::Lac:
                lac_weights = TensorT<T>::full({3}, T(1.0 / 3.0)).set_requires_grad(lac_trainable);
                break;
            case FusionKind::Gated:
                for (int i = 0; i < encoder.cfg.depth; ++i) gates.push_back(MixtureGate<T>::create(d, rng));
                break;
            case FusionKind::Compose:
                rebuild_composite();
                break;
        }
    }

    void rebuild_composite() {
        const auto* im = expert(Level::Image);
        const auto* pa = expert(Level::Patch);
        const auto* pi = expert(Level::Pixel);
        if (!im || !pa || !pi) throw std::invalid_argument("samora: compose fusion needs all three experts");
        composite = weight_compose(compose_coeffs, *im, *pa, *pi);
        composite->set_trainable(false);
    }

    TensorT<T> forward(const TensorT<T>& image, ModelCaptures<T>* captures = nullptr) const {
        return decoder.forward(forward_features(image, captures));
    }

    TensorT<T> forward_features(const TensorT<T>& image, ModelCaptures<T>* captures = nullptr) const {
        auto x = encoder.embed(image);
        for (std::size_t i = 0; i < encoder.blocks.size(); ++i) {
            const bool last = i + 1 == encoder.blocks.size();
            const auto& blk = encoder.blocks[i];
            auto f = forward_frozen_block(blk, x);
            auto e_omega = fuse_block(i, blk, x, (captures && last) ? captures : nullptr);
            x = block_output(f, e_omega);
        }
        if (captures) captures->valid = true;
        return x;
    }

    // Frozen-path-only forward (the stage-2 zero-init reference).
    TensorT<T> forward_frozen_only(const TensorT<T>& image) const {
        return decoder.forward(encoder.forward_frozen(image));
    }

    ParamList<T> fusion_params() {
        ParamList<T> out;
        switch (kind) {
            case FusionKind::HlAttn:
                for (std::size_t i = 0; i < hl.size(); ++i) hl[i].collect("fusion.hl" + std::to_string(i), out);
                break;
            case FusionKind::Lac:
                if (lac_trainable) out.push_back({"fusion.lac_weights", lac_weights});
                break;
            case FusionKind::Gated:
                for (std::size_t i = 0; i < gates.size(); ++i) gates[i].collect("fusion.gate" + std::to_string(i), out);
                break;
            case FusionKind::Compose:
                break;
        }
        return out;
    }

    ParamList<T> frozen_params() {
        ParamList<T> out;
        encoder.collect("encoder", out);
        for (auto& e : experts) e.collect(std::string("lora.") + level_name(e.level), out);
        return out;
    }

private:
    TensorT<T> fuse_block(std::size_t i, const EncoderBlock<T>& blk, const TensorT<T>& x,
                          ModelCaptures<T>* captures) const {
        if (kind == FusionKind::Compose) {
            auto e = forward_expert_block(blk, composite->block(i), x, path);
            if (captures) captures->expert_token_norm[Level::Composite] = token_delta_norm(e, x);
            return e;
        }
        if (experts.size() == 1) {
            if (kind != FusionKind::HlAttn)
                throw std::invalid_argument("samora: single-expert assembly is only defined for hl_attn fusion");
            auto e = forward_expert_block(blk, experts[0].block(i), x, path);
            if (captures) captures->expert_token_norm[experts[0].level] = token_delta_norm(e, x);
            HlAttnCaptures<T> hc;
            auto out = hl_attn_fuse_single(hl[i], e, captures ? &hc : nullptr);
            if (captures) captures->fused = hc.self_attn;
            return out;
        }
        const auto* im = expert(Level::Image);
        const auto* pa = expert(Level::Patch);
        const auto* pi = expert(Level::Pixel);
        if (!im || !pa || !pi) throw std::invalid_argument("samora: fusion needs all three experts");
        auto e_im = forward_expert_block(blk, im->block(i), x, path);
        auto e_pa = forward_expert_block(blk, pa->block(i), x, path);
        auto e_pi = forward_expert_block(blk, pi->block(i), x, path);
        if (captures) {
            captures->expert_token_norm[Level::Image] = token_delta_norm(e_im, x);
            captures->expert_token_norm[Level::Patch] = token_delta_norm(e_pa, x);
            captures->expert_token_norm[Level::Pixel] = token_delta_norm(e_pi, x);
        }
        switch (kind) {
            case FusionKind::HlAttn: {
                HlAttnCaptures<T> hc;
                auto out = hl_attn_fuse(hl[i], e_im, e_pa, e_pi, captures ? &hc : nullptr);
                if (captures) captures->fused = hc.stage2;
                return out;
            }
            case FusionKind::Lac:
                return lac_fuse(lac_weights, e_im, e_pa, e_pi);
            case FusionKind::Gated:
                return gated_mixture_fuse(gates[i], e_im, e_pa, e_pi, x);
            default:
                throw std::logic_error("samora: unreachable fusion kind");
        }
    }

    static std::vector<T> token_delta_norm(const TensorT<T>& e, const TensorT<T>& x) {
        const int L = e.dim(0), d = e.dim(1);
        std::vector<T> out(static_cast<std::size_t>(L), T(0));
        for (int l = 0; l < L; ++l) {
            T s = T(0);
            for (int c = 0; c < d; ++c) {
                const T v = e.data()[static_cast<std::size_t>(l) * d + c] - x.data()[static_cast<std::size_t>(l) * d + c];
                s += v * v;
            }
            out[static_cast<std::size_t>(l)] = std::sqrt(s);
        }
        return out;
    }
};

}  // namespace samora
