#pragma once

#include <string>
#include <vector>

#include "samora/model.hpp"
#include "samora/nn.hpp"

namespace samora {

// Image-level teacher: a small strided conv encoder with a two-layer MLP
// projection head, the desk-scale stand-in for SimCLRv2's ResNet50 (2X+SK).
template <class T>
struct ConvTeacher {
    std::vector<Conv2d<T>> convs;
    Linear<T> head1, head2;
    int feature_dim = 64;
    int proj_dim = 32;
    bool frozen = false;

    static ConvTeacher create(int feature_dim, int proj_dim, Rng& rng) {
        ConvTeacher t;
        t.feature_dim = feature_dim;
        t.proj_dim = proj_dim;
        const int chans[5] = {1, 16, 32, feature_dim, feature_dim};
        for (int i = 0; i < 4; ++i) t.convs.push_back(Conv2d<T>::create(chans[i], chans[i + 1], 3, 2, 1, rng));
        t.head1 = Linear<T>::create(feature_dim, feature_dim, rng);
        t.head2 = Linear<T>::create(feature_dim, proj_dim, rng);
        return t;
    }

    // Pooled global embedding of [1,H,W], pre-head.
    TensorT<T> backbone(const TensorT<T>& image) const {
        auto x = image;
        for (const auto& c : convs) x = gelu(c.forward(x));
        return spatial_mean(x);
    }

    // Contrastive embedding for NT-Xent, [1, proj_dim].
    TensorT<T> project(const TensorT<T>& emb) const {
        return head2.forward(gelu(head1.forward(reshape(emb, {1, feature_dim}))));
    }

    ParamList<T> params(const std::string& prefix = "teacher.image") {
        ParamList<T> out;
        for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(prefix + ".conv" + std::to_string(i), out);
        head1.collect(prefix + ".head1", out);
        head2.collect(prefix + ".head2", out);
        return out;
    }

    void freeze() {
        auto ps = params();
        freeze_all(ps);
        frozen = true;
    }
};

// Patch-level teacher: a small trainable ViT with a per-token reconstruction
// head, the desk-scale stand-in for the MAE ViT-Large. Shares the student's
// patch geometry so token sequences align for distillation.
template <class T>
struct ViTTeacher {
    EncoderConfig cfg;
    Linear<T> patch_embed;
    TensorT<T> pos_embed;
    std::vector<EncoderBlock<T>> blocks;
    Linear<T> recon_head;  // [dim, ps*ps]
    bool frozen = false;

    static ViTTeacher create(int dim, int depth, int heads, int patch_size, int image_size, Rng& rng) {
        ViTTeacher t;
        t.cfg.depth = depth;
        t.cfg.dim = dim;
        t.cfg.heads = heads;
        t.cfg.patch_size = patch_size;
        t.cfg.image_size = image_size;
        t.cfg.validate();
        t.patch_embed = Linear<T>::create(patch_size * patch_size, dim, rng);
        t.pos_embed = TensorT<T>::trunc_normal({t.cfg.seq_len(), dim}, rng, T(0.02)).set_requires_grad();
        for (int i = 0; i < depth; ++i) t.blocks.push_back(EncoderBlock<T>::create(t.cfg, rng));
        t.recon_head = Linear<T>::create(dim, patch_size * patch_size, rng);
        t.set_trainable(true);
        return t;
    }

    TensorT<T> tokens(const TensorT<T>& image) const {
        auto x = add(patch_embed.forward(patchify(image, cfg.patch_size)), pos_embed);
        for (const auto& b : blocks) x = forward_frozen_block(b, x);
        return x;
    }

    // Per-token pixel reconstruction, [L, ps*ps].
    TensorT<T> reconstruct(const TensorT<T>& image) const { return recon_head.forward(tokens(image)); }

    ParamList<T> params(const std::string& prefix = "teacher.patch") {
        ParamList<T> out;
        patch_embed.collect(prefix + ".patch_embed", out);
        out.push_back({prefix + ".pos_embed", pos_embed});
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
        recon_head.collect(prefix + ".recon_head", out);
        return out;
    }

    void set_trainable(bool t) {
        auto ps = params();
        for (auto& p : ps) p.tensor.set_requires_grad(t);
    }

    void freeze() {
        set_trainable(false);
        frozen = true;
    }
};

}  // namespace samora
