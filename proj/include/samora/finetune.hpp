#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "samora/assembly.hpp"
#include "samora/bridge.hpp"
#include "samora/losses.hpp"
#include "samora/optim.hpp"
#include "samora/ssl.hpp"

namespace samora {

struct FinetuneConfig {
    double lambda_ce = 0.2;
    double lambda_dice = 0.8;
    double base_lr = 0.005;
    long long warmup_steps = 250;
    long long max_iters = 18600;
    int batch_size = 8;
    int epochs = 20;
    double weight_decay = 0.1;
    double beta1 = 0.9, beta2 = 0.999;
    double fewshot_fraction = 0.1;
    bool augment_train = true;
    std::uint64_t seed = 42;

    void validate() const {
        if (warmup_steps < 0 || max_iters <= 0) throw std::invalid_argument("samora: WP >= 0 and MI > 0 required");
        if (epochs < 0 || batch_size <= 0) throw std::invalid_argument("samora: bad finetune epochs/batch");
    }
};

enum class TrainStage { Stage1Image, Stage1Patch, Stage1Pixel, Stage2 };

inline TrainStage stage1_for(Level level) {
    switch (level) {
        case Level::Image: return TrainStage::Stage1Image;
        case Level::Patch: return TrainStage::Stage1Patch;
        case Level::Pixel: return TrainStage::Stage1Pixel;
        default: throw std::invalid_argument("samora: unknown stage");
    }
}

// Stage 2 tunes exactly the fusion parameters and the decoder; the encoder
// and every adapter stay frozen. Flags requires_grad accordingly and returns
// the trainable set.
template <class T>
ParamList<T> trainable_parameters(SamoraModel<T>& model, TrainStage stage) {
    if (stage != TrainStage::Stage2) throw std::invalid_argument("samora: stage-1 trainables need the student view");
    auto frozen = model.frozen_params();
    freeze_all(frozen);
    ParamList<T> out = model.fusion_params();
    for (auto& p : out) p.tensor.set_requires_grad(true);
    model.decoder.set_trainable(true);
    for (auto& p : model.decoder.params()) out.push_back(p);
    return out;
}

// Stage-1 view: level-k adapters plus the projector, plus the denoise decoder
// for the pixel pretext.
template <class T>
ParamList<T> trainable_parameters(LoraExpertSet<T>& expert, Projector<T>* projector, DenoiseModel<T>* denoise,
                                  TrainStage stage) {
    Level level;
    switch (stage) {
        case TrainStage::Stage1Image: level = Level::Image; break;
        case TrainStage::Stage1Patch: level = Level::Patch; break;
        case TrainStage::Stage1Pixel: level = Level::Pixel; break;
        default: throw std::invalid_argument("samora: use the model overload for stage 2");
    }
    if (expert.level != level) throw std::invalid_argument("samora: expert level does not match stage");
    expert.set_trainable(true);
    ParamList<T> out = expert.params();
    if (level != Level::Pixel) {
        if (!projector) throw std::invalid_argument("samora: distillation stages need the projector");
        projector->set_trainable(true);
        projector->collect("projector", out);
    }
    if (level == Level::Pixel) {
        if (!denoise) throw std::invalid_argument("samora: pixel stage needs the denoise decoder");
        denoise->set_trainable(true);
        for (auto& p : denoise->params()) out.push_back(p);
    }
    return out;
}

struct TrainState {
    long long step = 0;
    double lr = 0.0;
    struct Row {
        long long step;
        double lr, loss_ce, loss_dice, loss_total;
    };
    std::vector<Row> history;

    void write_report(const std::filesystem::path& path) const {
        std::ofstream f(path);
        for (const auto& r : history)
            f << "step=" << r.step << " lr=" << r.lr << " loss_ce=" << r.loss_ce << " loss_dice=" << r.loss_dice
              << " loss_total=" << r.loss_total << "\n";
    }
};

// Supervised stage-2 loop: combined CE+Dice loss under the Eq.-11 schedule
// with AdamW. `labeled` carries raw [0,1] slices; preprocessing and (when
// enabled) augmentation happen here.
template <class T>
TrainState finetune(SamoraModel<T>& model, const std::vector<SegSample>& labeled, const FinetuneConfig& cfg) {
    cfg.validate();
    if (labeled.empty()) throw std::invalid_argument("samora: empty labeled dataset");
    auto trainables = trainable_parameters(model, TrainStage::Stage2);
    AdamW<T> opt(trainables, cfg.beta1, cfg.beta2, cfg.weight_decay);

    std::vector<SegSample> pre;
    pre.reserve(labeled.size());
    for (const auto& s : labeled) pre.push_back(preprocess(s, model.encoder.cfg.image_size));

    AugmentConfig aug;
    TrainState state;
    const long long steps_per_epoch =
        std::max<long long>(1, static_cast<long long>(pre.size()) / cfg.batch_size);
    for (int e = 0; e < cfg.epochs; ++e) {
        auto order = detail_ssl::epoch_order(pre.size(), cfg.seed, e);
        for (long long b = 0; b < steps_per_epoch; ++b) {
            TensorT<T> loss_ce = TensorT<T>::scalar(T(0));
            TensorT<T> loss_dice = TensorT<T>::scalar(T(0));
            for (int k = 0; k < cfg.batch_size; ++k) {
                const std::size_t idx = order[(b * cfg.batch_size + k) % order.size()];
                SegSample s = pre[idx];
                if (cfg.augment_train)
                    s = augment(s, aug, substream(cfg.seed, "ft_aug", static_cast<std::uint64_t>(state.step) * 1000 + k));
                auto logits = model.forward(tensor_from_raster<T>(s.image));
                const auto labels = labels_from_mask(s.mask);
                loss_ce = add(loss_ce, ce_pixels(logits, labels));
                loss_dice = add(loss_dice, soft_dice_loss(logits, labels));
            }
            loss_ce = scale(loss_ce, T(1) / static_cast<T>(cfg.batch_size));
            loss_dice = scale(loss_dice, T(1) / static_cast<T>(cfg.batch_size));
            auto total = add(scale(loss_ce, static_cast<T>(cfg.lambda_ce)), scale(loss_dice, static_cast<T>(cfg.lambda_dice)));
            state.lr = lr_at(cfg.base_lr, state.step, cfg.warmup_steps, cfg.max_iters);
            opt.zero_grad();
            total.backward();
            opt.step(state.lr);
            state.history.push_back({state.step, state.lr, static_cast<double>(loss_ce.item()),
                                     static_cast<double>(loss_dice.item()), static_cast<double>(total.item())});
            ++state.step;
        }
    }
    return state;
}

// Argmax segmentation of one raw slice.
template <class T>
MaskRaster predict_mask(const SamoraModel<T>& model, const SegSample& raw) {
    auto pre = preprocess(raw, model.encoder.cfg.image_size);
    auto logits = model.forward(tensor_from_raster<T>(pre.image));
    const int C = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
    MaskRaster out(H, W);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    for (std::size_t p = 0; p < hw; ++p) {
        int best = 0;
        T bv = logits.data()[p];
        for (int c = 1; c < C; ++c)
            if (logits.data()[c * hw + p] > bv) {
                bv = logits.data()[c * hw + p];
                best = c;
            }
        out.v[p] = static_cast<std::uint8_t>(best);
    }
    return out;
}

}  // namespace samora
