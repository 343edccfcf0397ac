#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "samora/lora.hpp"
#include "samora/nn.hpp"

namespace samora {

// Stage assignment per level, digits in image-patch-pixel position. Exactly
// two levels fuse at stage 1 and one at stage 2; the valid orders are the
// three rows 211 / 112 / 121.
struct FusionOrder {
    int image = 2, patch = 1, pixel = 1;

    static FusionOrder from_code(int code) {
        FusionOrder o;
        o.image = code / 100;
        o.patch = (code / 10) % 10;
        o.pixel = code % 10;
        o.validate();
        return o;
    }

    int code() const { return image * 100 + patch * 10 + pixel; }

    int stage_of(Level l) const {
        switch (l) {
            case Level::Image: return image;
            case Level::Patch: return patch;
            case Level::Pixel: return pixel;
            default: throw std::invalid_argument("samora: no fusion stage for composite level");
        }
    }

    void validate() const {
        const int c = code();
        if (c != 211 && c != 112 && c != 121)
            throw std::invalid_argument("samora: invalid fusion order " + std::to_string(c) +
                                        " (valid: 211, 112, 121)");
    }
};

template <class T>
struct CrossAttnParams {
    TensorT<T> wq, wk, wv;  // [d,d]
    TensorT<T> wo;          // [d,d], zero-initialized
    int heads = 4;
    LayerNorm<T> norm;
    bool use_norm = true;

    static CrossAttnParams create(int dim, int heads, Rng& rng, bool use_norm = true) {
        CrossAttnParams p;
        p.wq = TensorT<T>::trunc_normal({dim, dim}, rng, T(0.02)).set_requires_grad();
        p.wk = TensorT<T>::trunc_normal({dim, dim}, rng, T(0.02)).set_requires_grad();
        p.wv = TensorT<T>::trunc_normal({dim, dim}, rng, T(0.02)).set_requires_grad();
        p.wo = TensorT<T>::zeros({dim, dim}).set_requires_grad();
        p.heads = heads;
        p.norm = LayerNorm<T>::create(dim);
        p.use_norm = use_norm;
        return p;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".wq", wq});
        out.push_back({prefix + ".wk", wk});
        out.push_back({prefix + ".wv", wv});
        out.push_back({prefix + ".wo", wo});
        norm.collect(prefix + ".norm", out);
    }
};

// Eq.-8 kernel wrapped in a residual on the query path: the higher-level
// feature queries the lower-level keys/values, the context is out-projected
// (zero-initialized) and added back, then layer-normed when enabled.
template <class T>
TensorT<T> cross_attend(const CrossAttnParams<T>& p, const TensorT<T>& q_feat, const TensorT<T>& kv_feat,
                        AttnCapture<T>* capture = nullptr) {
    if (q_feat.ndim() != 2 || kv_feat.ndim() != 2 || q_feat.dim(1) != kv_feat.dim(1))
        shape_error("cross_attend", q_feat.shape(), kv_feat.shape());
    auto ctx = attention_kernel(matmul(q_feat, p.wq), matmul(kv_feat, p.wk), matmul(kv_feat, p.wv), p.heads, capture);
    auto out = add(q_feat, matmul(ctx, p.wo));
    return p.use_norm ? p.norm.forward(out) : out;
}

// Per-encoder-block HL-Attn unit: two cross-attention stages, one
// self-attention pass, and a zero-initialized final output projection that
// gates the fused contribution into Eq. 7.
template <class T>
struct HlAttnBlock {
    CrossAttnParams<T> stage1;
    CrossAttnParams<T> stage2;
    CrossAttnParams<T> self_attn;
    TensorT<T> out_proj;  // [d,d], zero-initialized
    FusionOrder order;

    static HlAttnBlock create(int dim, int heads, FusionOrder order, Rng& rng, bool use_norm = true) {
        order.validate();
        HlAttnBlock h;
        h.stage1 = CrossAttnParams<T>::create(dim, heads, rng, use_norm);
        h.stage2 = CrossAttnParams<T>::create(dim, heads, rng, use_norm);
        h.self_attn = CrossAttnParams<T>::create(dim, heads, rng, use_norm);
        h.out_proj = TensorT<T>::zeros({dim, dim}).set_requires_grad();
        h.order = order;
        return h;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        stage1.collect(prefix + ".stage1", out);
        stage2.collect(prefix + ".stage2", out);
        self_attn.collect(prefix + ".self", out);
        out.push_back({prefix + ".out_proj", out_proj});
    }
};

// Q/K-V roles per stage, derived from the order: the hierarchically higher
// side is always the query, and the stage-1 intermediate inherits the level
// of its highest constituent.
struct FusionPairing {
    Level stage1_q, stage1_kv;
    Level stage2_level;       // the late-fused expert
    bool stage2_expert_is_q;  // true when the late expert outranks the intermediate
};

inline FusionPairing fusion_pairing(const FusionOrder& order) {
    order.validate();
    std::vector<Level> early, late;
    for (Level l : {Level::Image, Level::Patch, Level::Pixel})
        (order.stage_of(l) == 1 ? early : late).push_back(l);
    FusionPairing p;
    p.stage1_q = level_higher(early[0], early[1]) ? early[0] : early[1];
    p.stage1_kv = level_higher(early[0], early[1]) ? early[1] : early[0];
    p.stage2_level = late[0];
    const Level intermediate_tag = p.stage1_q;  // highest constituent of the stage-1 pair
    p.stage2_expert_is_q = level_higher(p.stage2_level, intermediate_tag);
    return p;
}

template <class T>
struct HlAttnCaptures {
    AttnCapture<T> stage1, stage2, self_attn;
};

// E_Omega = HL-Attn over the three expert outputs.
template <class T>
TensorT<T> hl_attn_fuse(const HlAttnBlock<T>& h, const TensorT<T>& e_im, const TensorT<T>& e_pa,
                        const TensorT<T>& e_pi, HlAttnCaptures<T>* captures = nullptr) {
    if (e_im.shape() != e_pa.shape() || e_im.shape() != e_pi.shape()) shape_error("hl_attn_fuse", e_im.shape(), e_pa.shape());
    const FusionPairing pr = fusion_pairing(h.order);
    auto of = [&](Level l) -> const TensorT<T>& { return l == Level::Image ? e_im : (l == Level::Patch ? e_pa : e_pi); };
    auto intermediate = cross_attend(h.stage1, of(pr.stage1_q), of(pr.stage1_kv), captures ? &captures->stage1 : nullptr);
    auto fused = pr.stage2_expert_is_q
                     ? cross_attend(h.stage2, of(pr.stage2_level), intermediate, captures ? &captures->stage2 : nullptr)
                     : cross_attend(h.stage2, intermediate, of(pr.stage2_level), captures ? &captures->stage2 : nullptr);
    auto refined = cross_attend(h.self_attn, fused, fused, captures ? &captures->self_attn : nullptr);
    return matmul(refined, h.out_proj);
}

// Single-expert degeneration used by the per-level ablations: no cross
// stages, just the self-attention refinement behind the gating projection.
template <class T>
TensorT<T> hl_attn_fuse_single(const HlAttnBlock<T>& h, const TensorT<T>& e, HlAttnCaptures<T>* captures = nullptr) {
    auto refined = cross_attend(h.self_attn, e, e, captures ? &captures->self_attn : nullptr);
    return matmul(refined, h.out_proj);
}

// Eq. 7: O(x) = F_theta(x) + E_Omega(x).
template <class T>
TensorT<T> block_output(const TensorT<T>& f_theta, const TensorT<T>& e_omega) {
    if (f_theta.shape() != e_omega.shape()) shape_error("block_output", f_theta.shape(), e_omega.shape());
    return add(f_theta, e_omega);
}

// Linear arithmetic composition baseline: fixed (or trainable scalar) weights.
template <class T>
TensorT<T> lac_fuse(const TensorT<T>& weights, const TensorT<T>& e_im, const TensorT<T>& e_pa,
                    const TensorT<T>& e_pi) {
    if (weights.numel() != 3) shape_error("lac_fuse", weights.shape(), {3});
    for (T w : weights.data())
        if (!std::isfinite(static_cast<double>(w))) throw std::invalid_argument("samora: non-finite LAC weight");
    auto w = reshape(weights, {3, 1});
    auto acc = mul(e_im, reshape(slice0(w, 0, 1), {1}));
    acc = add(acc, mul(e_pa, reshape(slice0(w, 1, 1), {1})));
    return add(acc, mul(e_pi, reshape(slice0(w, 2, 1), {1})));
}

// MOLE-style gate: softmax over 3 logits computed from the mean-pooled block
// input; output is the simplex-weighted sum of the expert outputs.
template <class T>
struct MixtureGate {
    Linear<T> gate;  // [d, 3]

    static MixtureGate create(int dim, Rng& rng) {
        MixtureGate g;
        g.gate = Linear<T>::create(dim, 3, rng);
        return g;
    }

    void collect(const std::string& prefix, ParamList<T>& out) { gate.collect(prefix, out); }
};

template <class T>
TensorT<T> gated_mixture_fuse(const MixtureGate<T>& g, const TensorT<T>& e_im, const TensorT<T>& e_pa,
                              const TensorT<T>& e_pi, const TensorT<T>& x, TensorT<T>* weights_out = nullptr) {
    auto pooled = reshape(mean_axis0(x), {1, x.dim(1)});
    auto w = softmax_lastdim(g.gate.forward(pooled));  // [1,3]
    if (weights_out) *weights_out = w;
    auto wc = reshape(w, {3, 1});
    auto acc = mul(e_im, reshape(slice0(wc, 0, 1), {1}));
    acc = add(acc, mul(e_pa, reshape(slice0(wc, 1, 1), {1})));
    return add(acc, mul(e_pi, reshape(slice0(wc, 2, 1), {1})));
}

// LoRAHub-style composition in delta space: the composite adapter represents
// delta = sum_i c_i * B_i A_i exactly, by stacking the rank spaces and
// scaling the up-projections.
template <class T>
LoraExpertSet<T> weight_compose(const std::array<double, 3>& coeffs, const LoraExpertSet<T>& im,
                                const LoraExpertSet<T>& pa, const LoraExpertSet<T>& pi) {
    const LoraExpertSet<T>* experts[3] = {&im, &pa, &pi};
    if (im.rank != pa.rank || im.rank != pi.rank)
        throw std::invalid_argument("samora: weight_compose requires equal ranks across experts");
    if (im.blocks.size() != pa.blocks.size() || im.blocks.size() != pi.blocks.size())
        throw std::invalid_argument("samora: weight_compose requires equal block counts");
    LoraExpertSet<T> out;
    out.level = Level::Composite;
    out.rank = im.rank * 3;
    auto compose_one = [&](auto member) {
        std::vector<LoraAdapter<T>> parts;
        for (int i = 0; i < 3; ++i) parts.push_back(member(*experts[i]));
        const int in = parts[0].a.dim(0), r = parts[0].a.dim(1), o = parts[0].b.dim(1);
        LoraAdapter<T> ad;
        ad.a = TensorT<T>::zeros({in, 3 * r});
        ad.b = TensorT<T>::zeros({3 * r, o});
        for (int i = 0; i < 3; ++i) {
            for (int row = 0; row < in; ++row)
                for (int c = 0; c < r; ++c)
                    ad.a.data()[static_cast<std::size_t>(row) * 3 * r + i * r + c] =
                        parts[i].a.data()[static_cast<std::size_t>(row) * r + c];
            for (int row = 0; row < r; ++row)
                for (int c = 0; c < o; ++c)
                    ad.b.data()[static_cast<std::size_t>(i * r + row) * o + c] =
                        static_cast<T>(coeffs[i]) * parts[i].b.data()[static_cast<std::size_t>(row) * o + c];
        }
        return ad;
    };
    for (std::size_t bi = 0; bi < im.blocks.size(); ++bi) {
        typename LoraExpertSet<T>::BlockAdapters ad;
        ad.q = compose_one([bi](const LoraExpertSet<T>& e) { return e.blocks[bi].q; });
        ad.v = compose_one([bi](const LoraExpertSet<T>& e) { return e.blocks[bi].v; });
        ad.fc1 = compose_one([bi](const LoraExpertSet<T>& e) { return e.blocks[bi].fc1; });
        ad.fc2 = compose_one([bi](const LoraExpertSet<T>& e) { return e.blocks[bi].fc2; });
        out.blocks.push_back(std::move(ad));
    }
    return out;
}

}  // namespace samora
