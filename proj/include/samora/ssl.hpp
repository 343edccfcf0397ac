#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "samora/bridge.hpp"
#include "samora/data.hpp"
#include "samora/losses.hpp"
#include "samora/model.hpp"
#include "samora/optim.hpp"
#include "samora/teacher.hpp"

namespace samora {

// Stage-1 pretext settings; defaults mirror the stage-1 config table
// (optimizer, base lr, weight decay, warmup and epoch counts per level) with
// the batch size cut to desk scale.
struct PretextConfig {
    Level level = Level::Image;
    std::string optimizer = "lars";
    double base_lr = 0.075;
    int batch_size = 16;
    double weight_decay = 1e-4;
    int warmup_epochs = 30;
    int epochs = 80;
    int cpt_epochs = -1;  // -1: same as epochs
    double beta2 = 0.999;
    double temperature = 0.1;   // image level
    double mask_ratio = 0.75;   // patch level
    double noise_sigma = 0.1;   // pixel level
    int teacher_dim = 64;
    int teacher_depth = 4;
    int teacher_heads = 4;
    int proj_dim = 32;
    std::uint64_t seed = 42;

    static PretextConfig defaults(Level level) {
        PretextConfig c;
        c.level = level;
        switch (level) {
            case Level::Image:
                break;  // lars / 0.075 / wd 1e-4 / warmup 30 / 80 epochs
            case Level::Patch:
                c.optimizer = "adamw";
                c.base_lr = 1.5e-4;
                c.weight_decay = 0.05;
                c.warmup_epochs = 30;
                c.epochs = 60;
                c.beta2 = 0.95;
                c.teacher_dim = 128;
                break;
            case Level::Pixel:
                c.optimizer = "adamw";
                c.base_lr = 1e-4;
                c.weight_decay = 0.05;
                c.warmup_epochs = 10;
                c.epochs = 30;
                c.beta2 = 0.99;
                break;
            default:
                throw std::invalid_argument("samora: no pretext for composite level");
        }
        return c;
    }

    int effective_cpt_epochs() const { return cpt_epochs < 0 ? epochs : cpt_epochs; }
};

// Linear warmup then cosine decay, stage-1 convention.
inline double stage1_lr(double base_lr, long long step, long long warmup_steps, long long total_steps) {
    if (warmup_steps > 0 && step < warmup_steps)
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    if (total_steps <= warmup_steps) return base_lr;
    const double p = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, p)));
}

// ---------------------------------------------------------------------------
// pretext primitives

// floor(ratio * L) token indices masked uniformly at random; visible and
// masked sets are disjoint, exhaustive and sorted.
inline std::pair<std::vector<int>, std::vector<int>> mae_mask(int num_tokens, double ratio, std::uint64_t seed) {
    if (ratio < 0.0 || ratio >= 1.0) throw std::invalid_argument("samora: mask ratio must be in [0,1)");
    const int m = static_cast<int>(std::floor(ratio * num_tokens));
    std::vector<int> order(static_cast<std::size_t>(num_tokens));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(substream(seed, "mae_mask"));
    rng.shuffle(order);
    std::vector<int> masked(order.begin(), order.begin() + m);
    std::vector<int> visible(order.begin() + m, order.end());
    std::sort(masked.begin(), masked.end());
    std::sort(visible.begin(), visible.end());
    return {visible, masked};
}

// Zero-fill the masked patches of a raster (both teacher and student see the
// same corrupted input).
inline Raster apply_patch_mask(const Raster& image, const std::vector<int>& masked_idx, int patch_size) {
    Raster out = image;
    const int gw = image.w / patch_size;
    for (int idx : masked_idx) {
        const int gi = idx / gw, gj = idx % gw;
        for (int a = 0; a < patch_size; ++a)
            for (int b = 0; b < patch_size; ++b) out.at(gi * patch_size + a, gj * patch_size + b) = 0.f;
    }
    return out;
}

// Additive Gaussian noise, clipped to the [0,1] intensity range.
inline Raster add_noise(const Raster& image, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw std::invalid_argument("samora: noise sigma must be >= 0");
    Raster out = image;
    if (sigma == 0.0) return out;
    Rng rng(substream(seed, "noise"));
    for (auto& v : out.v) v = static_cast<float>(std::clamp(static_cast<double>(v) + rng.normal(0.0, sigma), 0.0, 1.0));
    return out;
}

template <class T>
double psnr(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape()) shape_error("psnr", a.shape(), b.shape());
    double mse = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    return 10.0 * std::log10(1.0 / std::max(mse, 1e-12));
}

// Conventional LoRA student forward: every block runs with theta + delta on
// the adapted projections.
template <class T>
TensorT<T> student_tokens(const Encoder<T>& enc, const LoraExpertSet<T>& expert, const TensorT<T>& image) {
    auto x = enc.embed(image);
    for (std::size_t i = 0; i < enc.blocks.size(); ++i)
        x = forward_expert_block(enc.blocks[i], expert.block(i), x, ExpertPath::ThetaPlusDelta);
    return x;
}

// ---------------------------------------------------------------------------
// teacher continual pre-training

struct TrainCurve {
    std::vector<double> step_loss;
    bool degenerate = false;

    double smoothed(std::size_t start, std::size_t window) const {
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t i = start; i < std::min(start + window, step_loss.size()); ++i, ++n) s += step_loss[i];
        return n ? s / static_cast<double>(n) : 0.0;
    }
};

namespace detail_ssl {

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(substream(seed, "epoch_order", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    return order;
}

inline AugmentConfig simclr_augment() {
    AugmentConfig a;
    a.elastic_alpha = 0.0;  // contrastive views: rigid + photometric only
    return a;
}

}  // namespace detail_ssl

// SimCLR-style continual pre-training of the image-level teacher on the
// unlabeled corpus. The teacher is frozen on return.
template <class T>
TrainCurve cpt_teacher(ConvTeacher<T>& teacher, const std::vector<Raster>& corpus, const PretextConfig& cfg) {
    if (corpus.empty()) throw std::invalid_argument("samora: empty unlabeled corpus");
    if (cfg.batch_size < 2) throw std::invalid_argument("samora: contrastive CPT needs batch >= 2");
    TrainCurve curve;
    const int epochs = cfg.effective_cpt_epochs();
    auto opt = make_optimizer<T>(cfg.optimizer, teacher.params(), cfg.weight_decay, 0.9, cfg.beta2);
    const long long steps_per_epoch = std::max<long long>(1, static_cast<long long>(corpus.size()) / cfg.batch_size);
    const long long total_steps = steps_per_epoch * epochs;
    const long long warmup_steps = steps_per_epoch * cfg.warmup_epochs;
    const AugmentConfig aug = detail_ssl::simclr_augment();
    long long step = 0;
    for (int e = 0; e < epochs; ++e) {
        auto order = detail_ssl::epoch_order(corpus.size(), cfg.seed, e);
        for (long long b = 0; b < steps_per_epoch; ++b, ++step) {
            std::vector<TensorT<T>> view_a, view_b;
            for (int k = 0; k < cfg.batch_size; ++k) {
                const std::size_t idx = order[(b * cfg.batch_size + k) % order.size()];
                SegSample s;
                s.image = corpus[idx];
                auto pre = preprocess(s, corpus[idx].h);
                const std::uint64_t vs = substream(cfg.seed, "view", static_cast<std::uint64_t>(step) * 1000 + k);
                auto embed_view = [&](std::uint64_t view_seed) {
                    auto img = tensor_from_raster<T>(augment(pre, aug, view_seed).image);
                    return teacher.project(teacher.backbone(img));
                };
                view_a.push_back(embed_view(substream(vs, "a")));
                view_b.push_back(embed_view(substream(vs, "b")));
            }
            auto za = concat0<T>(view_a);
            auto zb = concat0<T>(view_b);
            auto loss = nt_xent_loss(za, zb, static_cast<T>(cfg.temperature));
            opt->zero_grad();
            loss.backward();
            opt->step(stage1_lr(cfg.base_lr, step, warmup_steps, total_steps));
            curve.step_loss.push_back(static_cast<double>(loss.item()));
        }
    }
    teacher.freeze();
    return curve;
}

// MAE-style continual pre-training of the patch-level teacher: reconstruct
// the pixels of masked patches from the corrupted input.
template <class T>
TrainCurve cpt_teacher(ViTTeacher<T>& teacher, const std::vector<Raster>& corpus, const PretextConfig& cfg) {
    if (corpus.empty()) throw std::invalid_argument("samora: empty unlabeled corpus");
    TrainCurve curve;
    const int epochs = cfg.effective_cpt_epochs();
    auto opt = make_optimizer<T>(cfg.optimizer, teacher.params(), cfg.weight_decay, 0.9, cfg.beta2);
    const long long steps_per_epoch = std::max<long long>(1, static_cast<long long>(corpus.size()) / cfg.batch_size);
    const long long total_steps = steps_per_epoch * epochs;
    const long long warmup_steps = steps_per_epoch * cfg.warmup_epochs;
    const int L = teacher.cfg.seq_len();
    long long step = 0;
    for (int e = 0; e < epochs; ++e) {
        auto order = detail_ssl::epoch_order(corpus.size(), cfg.seed, e);
        for (long long b = 0; b < steps_per_epoch; ++b, ++step) {
            TensorT<T> loss = TensorT<T>::scalar(T(0));
            for (int k = 0; k < cfg.batch_size; ++k) {
                const std::size_t idx = order[(b * cfg.batch_size + k) % order.size()];
                SegSample s;
                s.image = corpus[idx];
                auto pre = preprocess(s, corpus[idx].h);
                const auto [visible, masked] =
                    mae_mask(L, cfg.mask_ratio, substream(cfg.seed, "cpt_mask", static_cast<std::uint64_t>(step) * 1000 + k));
                auto corrupted = apply_patch_mask(pre.image, masked, teacher.cfg.patch_size);
                auto recon = teacher.reconstruct(tensor_from_raster<T>(corrupted));
                auto target = patchify(tensor_from_raster<T>(pre.image), teacher.cfg.patch_size);
                if (!masked.empty())
                    loss = add(loss, recon_loss(gather_rows(recon, masked), gather_rows(target, masked)));
                else
                    loss = add(loss, recon_loss(recon, target));
            }
            loss = scale(loss, T(1) / static_cast<T>(cfg.batch_size));
            opt->zero_grad();
            loss.backward();
            opt->step(stage1_lr(cfg.base_lr, step, warmup_steps, total_steps));
            curve.step_loss.push_back(static_cast<double>(loss.item()));
        }
    }
    teacher.freeze();
    return curve;
}

// ---------------------------------------------------------------------------
// distillation into the image/patch LoRA experts

template <class T>
struct ImageLevelTeacherRef {
    const ConvTeacher<T>* teacher = nullptr;
};
template <class T>
struct PatchLevelTeacherRef {
    const ViTTeacher<T>* teacher = nullptr;
};

// Teacher-student distillation: the frozen encoder plus the level's LoRA
// runs as the student; only that expert and the projector receive updates.
template <class T>
TrainCurve distill_level(Level level, const ConvTeacher<T>* image_teacher, const ViTTeacher<T>* patch_teacher,
                         Encoder<T>& student, LoraExpertSet<T>& expert, Projector<T>& projector,
                         const std::vector<Raster>& corpus, const PretextConfig& cfg) {
    if (corpus.empty()) throw std::invalid_argument("samora: empty unlabeled corpus");
    if (level != expert.level) throw std::invalid_argument("samora: expert level does not match distill level");
    if (level == Level::Image) {
        if (!image_teacher) throw std::invalid_argument("samora: image distillation needs a conv teacher");
        if (!image_teacher->frozen) throw std::runtime_error("samora: refusing to distill from an unfrozen teacher");
    } else if (level == Level::Patch) {
        if (!patch_teacher) throw std::invalid_argument("samora: patch distillation needs a ViT teacher");
        if (!patch_teacher->frozen) throw std::runtime_error("samora: refusing to distill from an unfrozen teacher");
    } else {
        throw std::invalid_argument("samora: distill_level handles image/patch only");
    }

    expert.set_trainable(true);
    projector.set_trainable(true);
    ParamList<T> trainables = expert.params();
    projector.collect("projector", trainables);
    auto opt = make_optimizer<T>(cfg.optimizer, trainables, cfg.weight_decay, 0.9, cfg.beta2);

    TrainCurve curve;
    const long long steps_per_epoch = std::max<long long>(1, static_cast<long long>(corpus.size()) / cfg.batch_size);
    const long long total_steps = steps_per_epoch * cfg.epochs;
    const long long warmup_steps = steps_per_epoch * cfg.warmup_epochs;
    const int L = student.cfg.seq_len();
    long long step = 0;
    for (int e = 0; e < cfg.epochs; ++e) {
        auto order = detail_ssl::epoch_order(corpus.size(), cfg.seed, e);
        for (long long b = 0; b < steps_per_epoch; ++b, ++step) {
            TensorT<T> loss = TensorT<T>::scalar(T(0));
            for (int k = 0; k < cfg.batch_size; ++k) {
                const std::size_t idx = order[(b * cfg.batch_size + k) % order.size()];
                SegSample s;
                s.image = corpus[idx];
                auto pre = preprocess(s, student.cfg.image_size);
                if (level == Level::Image) {
                    auto img = tensor_from_raster<T>(pre.image);
                    auto teacher_emb = image_teacher->backbone(img);
                    auto target = project_features(projector, reshape(teacher_emb, {1, cfg.teacher_dim}));
                    auto pooled = reshape(mean_axis0(student_tokens(student, expert, img)), {1, student.cfg.dim});
                    loss = add(loss, recon_loss(target, pooled));
                } else {
                    const auto [visible, masked] = mae_mask(
                        L, cfg.mask_ratio, substream(cfg.seed, "distill_mask", static_cast<std::uint64_t>(step) * 1000 + k));
                    auto corrupted = apply_patch_mask(pre.image, masked, student.cfg.patch_size);
                    auto img = tensor_from_raster<T>(corrupted);
                    auto teacher_feat = project_features(projector, patch_teacher->tokens(img));
                    auto student_feat = student_tokens(student, expert, img);
                    loss = add(loss, recon_loss(teacher_feat, student_feat));
                }
            }
            loss = scale(loss, T(1) / static_cast<T>(cfg.batch_size));
            opt->zero_grad();
            loss.backward();
            opt->step(stage1_lr(cfg.base_lr, step, warmup_steps, total_steps));
            curve.step_loss.push_back(static_cast<double>(loss.item()));
        }
    }
    expert.set_trainable(false);
    projector.set_trainable(false);
    return curve;
}

// ---------------------------------------------------------------------------
// pixel-level denoising pretext

// U-Net-style reconstruction decoder: transposed-conv doublings back to image
// resolution, a skip concat of the noisy input, then two mixing convs.
template <class T>
struct DenoiseModel {
    std::vector<ConvTranspose2d<T>> up;
    Conv2d<T> mix1, mix2;
    int image_size = 64;
    int dim = 128;
    int grid = 8;

    static DenoiseModel create(const EncoderConfig& cfg, Rng& rng) {
        DenoiseModel m;
        m.image_size = cfg.image_size;
        m.dim = cfg.dim;
        m.grid = cfg.grid();
        int stages = 0, ps = cfg.patch_size;
        while (ps > 1) {
            ps /= 2;
            ++stages;
        }
        int cin = cfg.dim;
        for (int s = 0; s < stages; ++s) {
            const int cout = std::max(8, 32 >> s);
            m.up.push_back(ConvTranspose2d<T>::create(cin, cout, 2, 2, rng));
            cin = cout;
        }
        m.mix1 = Conv2d<T>::create(cin + 1, 16, 3, 1, 1, rng);
        m.mix2 = Conv2d<T>::create(16, 1, 3, 1, 1, rng);
        return m;
    }

    TensorT<T> forward(const TensorT<T>& tokens, const TensorT<T>& noisy_image) const {
        auto x = reshape(transpose2(tokens), {dim, grid, grid});
        for (const auto& u : up) x = relu(u.forward(x));
        auto cat = concat0<T>({x, noisy_image});
        return mix2.forward(relu(mix1.forward(cat)));
    }

    ParamList<T> params(const std::string& prefix = "denoise") {
        ParamList<T> out;
        for (std::size_t i = 0; i < up.size(); ++i) up[i].collect(prefix + ".up" + std::to_string(i), out);
        mix1.collect(prefix + ".mix1", out);
        mix2.collect(prefix + ".mix2", out);
        return out;
    }

    void set_trainable(bool t) {
        auto ps = params();
        for (auto& p : ps) p.tensor.set_requires_grad(t);
    }
};

struct DenoiseResult {
    TrainCurve curve;
    double psnr_start = 0.0;
    double psnr_end = 0.0;
};

// Denoising pretext: G(noisy) is trained against the identity "teacher"
// F(x) = x. Only the pixel adapters and the reconstruction decoder move; the
// decoder is discarded after stage 1.
template <class T>
DenoiseResult pretrain_pixel(Encoder<T>& student, LoraExpertSet<T>& expert, DenoiseModel<T>& decoder,
                             const std::vector<Raster>& corpus, const PretextConfig& cfg,
                             const std::vector<Raster>* heldout = nullptr) {
    if (corpus.empty()) throw std::invalid_argument("samora: empty unlabeled corpus");
    if (expert.level != Level::Pixel) throw std::invalid_argument("samora: pixel pretext needs the pixel expert");
    DenoiseResult result;
    if (cfg.noise_sigma == 0.0) result.curve.degenerate = true;

    expert.set_trainable(true);
    decoder.set_trainable(true);
    ParamList<T> trainables = expert.params();
    for (auto& p : decoder.params()) trainables.push_back(p);
    auto opt = make_optimizer<T>(cfg.optimizer, trainables, cfg.weight_decay, 0.9, cfg.beta2);

    auto eval_psnr = [&](const std::vector<Raster>& slices) {
        double acc = 0.0;
        for (std::size_t i = 0; i < slices.size(); ++i) {
            auto noisy = add_noise(slices[i], cfg.noise_sigma, substream(cfg.seed, "eval_noise", i));
            SegSample s;
            s.image = noisy;
            auto pre = preprocess(s, student.cfg.image_size);
            auto noisy_t = tensor_from_raster<T>(pre.image);
            auto recon = decoder.forward(student_tokens(student, expert, noisy_t), noisy_t);
            SegSample clean;
            clean.image = slices[i];
            acc += psnr(recon, tensor_from_raster<T>(resize_bilinear(slices[i], student.cfg.image_size,
                                                                     student.cfg.image_size)));
        }
        return slices.empty() ? 0.0 : acc / static_cast<double>(slices.size());
    };
    if (heldout) result.psnr_start = eval_psnr(*heldout);

    const long long steps_per_epoch = std::max<long long>(1, static_cast<long long>(corpus.size()) / cfg.batch_size);
    const long long total_steps = steps_per_epoch * cfg.epochs;
    const long long warmup_steps = steps_per_epoch * cfg.warmup_epochs;
    long long step = 0;
    for (int e = 0; e < cfg.epochs; ++e) {
        auto order = detail_ssl::epoch_order(corpus.size(), cfg.seed, e);
        for (long long b = 0; b < steps_per_epoch; ++b, ++step) {
            TensorT<T> loss = TensorT<T>::scalar(T(0));
            for (int k = 0; k < cfg.batch_size; ++k) {
                const std::size_t idx = order[(b * cfg.batch_size + k) % order.size()];
                auto noisy = add_noise(corpus[idx], cfg.noise_sigma,
                                       substream(cfg.seed, "noise", static_cast<std::uint64_t>(step) * 1000 + k));
                SegSample s;
                s.image = noisy;
                auto pre = preprocess(s, student.cfg.image_size);
                auto noisy_t = tensor_from_raster<T>(pre.image);
                auto recon = decoder.forward(student_tokens(student, expert, noisy_t), noisy_t);
                auto clean = tensor_from_raster<T>(
                    resize_bilinear(corpus[idx], student.cfg.image_size, student.cfg.image_size));
                loss = add(loss, recon_loss(clean, recon));
            }
            loss = scale(loss, T(1) / static_cast<T>(cfg.batch_size));
            opt->zero_grad();
            loss.backward();
            opt->step(stage1_lr(cfg.base_lr, step, warmup_steps, total_steps));
            result.curve.step_loss.push_back(static_cast<double>(loss.item()));
        }
    }
    if (heldout) result.psnr_end = eval_psnr(*heldout);
    expert.set_trainable(false);
    decoder.set_trainable(false);
    return result;
}

}  // namespace samora
