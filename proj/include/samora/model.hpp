#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "samora/lora.hpp"
#include "samora/nn.hpp"

namespace samora {

struct EncoderConfig {
    int depth = 6;
    int dim = 128;
    int heads = 4;
    int patch_size = 8;
    int image_size = 64;
    double mlp_ratio = 4.0;

    int grid() const { return image_size / patch_size; }
    int seq_len() const { return grid() * grid(); }
    int mlp_dim() const { return static_cast<int>(dim * mlp_ratio); }

    void validate() const {
        if (depth <= 0 || dim <= 0 || heads <= 0 || patch_size <= 0 || image_size <= 0 || mlp_ratio <= 0)
            throw std::invalid_argument("samora: encoder config fields must be positive");
        if (dim % heads != 0) throw std::invalid_argument("samora: heads must divide dim");
        if (image_size % patch_size != 0)
            throw std::invalid_argument("samora: image_size must be divisible by patch_size");
    }
};

// One pre-norm transformer block. All tensors are frozen after construction;
// attention projections carry no bias.
template <class T>
struct EncoderBlock {
    TensorT<T> wq, wk, wv, wo;  // [d,d]
    Linear<T> fc1, fc2;
    LayerNorm<T> ln1, ln2;
    int heads = 4;

    static EncoderBlock create(const EncoderConfig& cfg, Rng& rng) {
        EncoderBlock b;
        const int d = cfg.dim;
        b.wq = TensorT<T>::trunc_normal({d, d}, rng, T(0.02));
        b.wk = TensorT<T>::trunc_normal({d, d}, rng, T(0.02));
        b.wv = TensorT<T>::trunc_normal({d, d}, rng, T(0.02));
        b.wo = TensorT<T>::trunc_normal({d, d}, rng, T(0.02));
        b.fc1 = Linear<T>::create(d, cfg.mlp_dim(), rng);
        b.fc2 = Linear<T>::create(cfg.mlp_dim(), d, rng);
        b.ln1 = LayerNorm<T>::create(d);
        b.ln2 = LayerNorm<T>::create(d);
        b.heads = cfg.heads;
        b.freeze();
        return b;
    }

    void freeze() {
        ParamList<T> ps;
        collect("", ps);
        freeze_all(ps);
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".attn.wq", wq});
        out.push_back({prefix + ".attn.wk", wk});
        out.push_back({prefix + ".attn.wv", wv});
        out.push_back({prefix + ".attn.wo", wo});
        fc1.collect(prefix + ".ffn.fc1", out);
        fc2.collect(prefix + ".ffn.fc2", out);
        ln1.collect(prefix + ".ln1", out);
        ln2.collect(prefix + ".ln2", out);
    }
};

template <class T>
void check_feature_shape(const TensorT<T>& x, int d, const char* where) {
    if (x.ndim() != 2 || x.dim(1) != d) shape_error(where, x.shape(), {-1, d});
}

// F_theta: x' = x + Attn(LN(x)), out = x' + FFN(LN(x')).
template <class T>
TensorT<T> forward_frozen_block(const EncoderBlock<T>& block, const TensorT<T>& x,
                                AttnCapture<T>* capture = nullptr) {
    check_feature_shape(x, block.wq.dim(0), "forward_frozen_block");
    auto z = block.ln1.forward(x);
    auto ctx = attention_kernel(matmul(z, block.wq), matmul(z, block.wk), matmul(z, block.wv), block.heads, capture);
    auto x1 = add(x, matmul(ctx, block.wo));
    auto h = block.ln2.forward(x1);
    auto ffn = block.fc2.forward(gelu(block.fc1.forward(h)));
    return add(x1, ffn);
}

// E_delta: the expert path through one block. Adapted projections (q, v and
// both FFN projections) read their weights per `mode`; the k/out projections,
// norms and activation are the frozen block's own.
template <class T>
TensorT<T> forward_expert_block(const EncoderBlock<T>& block, const typename LoraExpertSet<T>::BlockAdapters& ad,
                                const TensorT<T>& x, ExpertPath mode, AttnCapture<T>* capture = nullptr) {
    check_feature_shape(x, block.wq.dim(0), "forward_expert_block");
    auto z = block.ln1.forward(x);
    TensorT<T> q, v;
    if (mode == ExpertPath::DeltaOnly) {
        q = ad.q.forward(z);
        v = ad.v.forward(z);
    } else {
        q = add(matmul(z, block.wq), ad.q.forward(z));
        v = add(matmul(z, block.wv), ad.v.forward(z));
    }
    auto k = matmul(z, block.wk);
    auto ctx = attention_kernel(q, k, v, block.heads, capture);
    auto x1 = add(x, matmul(ctx, block.wo));
    auto h = block.ln2.forward(x1);
    TensorT<T> ffn;
    if (mode == ExpertPath::DeltaOnly) {
        ffn = ad.fc2.forward(gelu(ad.fc1.forward(h)));
    } else {
        auto u = gelu(add(block.fc1.forward(h), ad.fc1.forward(h)));
        ffn = add(block.fc2.forward(u), ad.fc2.forward(u));
    }
    return add(x1, ffn);
}

// Frozen ViT-style encoder: linear patch embedding + learned positions +
// `depth` blocks. Stands in for the pretrained SAM encoder.
template <class T>
struct Encoder {
    EncoderConfig cfg;
    Linear<T> patch_embed;  // [ps*ps, d]
    TensorT<T> pos_embed;   // [L, d]
    std::vector<EncoderBlock<T>> blocks;

    static Encoder create(const EncoderConfig& cfg, Rng& rng) {
        cfg.validate();
        Encoder e;
        e.cfg = cfg;
        e.patch_embed = Linear<T>::create(cfg.patch_size * cfg.patch_size, cfg.dim, rng);
        e.pos_embed = TensorT<T>::trunc_normal({cfg.seq_len(), cfg.dim}, rng, T(0.02));
        e.blocks.reserve(cfg.depth);
        for (int i = 0; i < cfg.depth; ++i) e.blocks.push_back(EncoderBlock<T>::create(cfg, rng));
        e.patch_embed.w.set_requires_grad(false);
        e.patch_embed.b.set_requires_grad(false);
        e.pos_embed.set_requires_grad(false);
        return e;
    }

    // image [1,H,W] -> tokens [L,d]
    TensorT<T> embed(const TensorT<T>& image) const {
        if (image.ndim() != 3 || image.dim(1) != cfg.image_size || image.dim(2) != cfg.image_size)
            shape_error("encoder.embed", image.shape(), {1, cfg.image_size, cfg.image_size});
        return add(patch_embed.forward(patchify(image, cfg.patch_size)), pos_embed);
    }

    // Full frozen forward: F_theta composition over all blocks.
    TensorT<T> forward_frozen(const TensorT<T>& image) const {
        auto x = embed(image);
        for (const auto& b : blocks) x = forward_frozen_block(b, x);
        return x;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        patch_embed.collect(prefix + ".patch_embed", out);
        out.push_back({prefix + ".pos_embed", pos_embed});
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
    }

    ParamList<T> params(const std::string& prefix = "encoder") {
        ParamList<T> out;
        collect(prefix, out);
        return out;
    }
};

// Creates one adapter pair per adapted projection per block. B matrices start
// at zero so the expert contributes no delta until trained. Level uniqueness
// is enforced by the assembly registry.
template <class T>
LoraExpertSet<T> inject_lora(const Encoder<T>& encoder, Level level, int rank, Rng& rng) {
    if (rank <= 0) throw std::invalid_argument("samora: LoRA rank must be positive");
    if (rank > encoder.cfg.dim) throw std::invalid_argument("samora: LoRA rank exceeds encoder dim");
    LoraExpertSet<T> set;
    set.level = level;
    set.rank = rank;
    const int d = encoder.cfg.dim;
    const int m = encoder.cfg.mlp_dim();
    set.blocks.reserve(encoder.blocks.size());
    for (std::size_t i = 0; i < encoder.blocks.size(); ++i) {
        typename LoraExpertSet<T>::BlockAdapters ad;
        ad.q = LoraAdapter<T>::create(d, d, rank, rng);
        ad.v = LoraAdapter<T>::create(d, d, rank, rng);
        ad.fc1 = LoraAdapter<T>::create(d, m, rank, rng);
        ad.fc2 = LoraAdapter<T>::create(m, d, rank, rng);
        set.blocks.push_back(std::move(ad));
    }
    return set;
}

// Trainable dimension-alignment between teacher and student feature widths.
template <class T>
struct Projector {
    Linear<T> map;  // [teacher_dim, student_dim]

    static Projector create(int teacher_dim, int student_dim, Rng& rng) {
        Projector p;
        p.map = Linear<T>::create(teacher_dim, student_dim, rng);
        return p;
    }

    void collect(const std::string& prefix, ParamList<T>& out) { map.collect(prefix, out); }

    void set_trainable(bool t) {
        map.w.set_requires_grad(t);
        map.b.set_requires_grad(t);
    }
};

template <class T>
TensorT<T> project_features(const Projector<T>& p, const TensorT<T>& teacher_feat) {
    if (teacher_feat.dim(teacher_feat.ndim() - 1) != p.map.w.dim(0))
        shape_error("project_features", teacher_feat.shape(), p.map.w.shape());
    return p.map.forward(teacher_feat);
}

// Prompt-free upsampling decoder: tokens [L,d] -> per-class logits
// [num_classes+1, H, W] via log2(patch) transposed-conv doublings and a 1x1
// class head. Channel 0 is background.
template <class T>
struct SegDecoder {
    int num_classes = 4;  // foreground classes
    int grid = 8;
    int image_size = 64;
    int dim = 128;
    std::vector<ConvTranspose2d<T>> up;
    Conv2d<T> head;

    static SegDecoder create(const EncoderConfig& cfg, int num_classes, Rng& rng) {
        if (num_classes <= 0) throw std::invalid_argument("samora: decoder needs >= 1 foreground class");
        int stages = 0, ps = cfg.patch_size;
        while (ps > 1) {
            if (ps % 2 != 0) throw std::invalid_argument("samora: decoder requires power-of-two patch size");
            ps /= 2;
            ++stages;
        }
        SegDecoder dec;
        dec.num_classes = num_classes;
        dec.grid = cfg.grid();
        dec.image_size = cfg.image_size;
        dec.dim = cfg.dim;
        int cin = cfg.dim;
        for (int s = 0; s < stages; ++s) {
            const int cout = std::max(8, 64 >> s);
            dec.up.push_back(ConvTranspose2d<T>::create(cin, cout, 2, 2, rng));
            cin = cout;
        }
        dec.head = Conv2d<T>::create(cin, num_classes + 1, 1, 1, 0, rng);
        return dec;
    }

    TensorT<T> forward(const TensorT<T>& features) const {
        if (features.ndim() != 2 || features.dim(0) != grid * grid || features.dim(1) != dim)
            shape_error("forward_decoder", features.shape(), {grid * grid, dim});
        auto x = reshape(transpose2(features), {dim, grid, grid});
        for (const auto& u : up) x = relu(u.forward(x));
        return head.forward(x);
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        for (std::size_t i = 0; i < up.size(); ++i) up[i].collect(prefix + ".up" + std::to_string(i), out);
        head.collect(prefix + ".head", out);
    }

    ParamList<T> params(const std::string& prefix = "decoder") {
        ParamList<T> out;
        collect(prefix, out);
        return out;
    }

    void set_trainable(bool t) {
        ParamList<T> ps = params();
        for (auto& p : ps) p.tensor.set_requires_grad(t);
    }
};

template <class T>
TensorT<T> forward_decoder(const SegDecoder<T>& dec, const TensorT<T>& features) {
    return dec.forward(features);
}

}  // namespace samora
