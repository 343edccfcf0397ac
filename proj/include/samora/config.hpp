#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "samora/assembly.hpp"
#include "samora/data.hpp"
#include "samora/finetune.hpp"
#include "samora/model.hpp"
#include "samora/ssl.hpp"

namespace samora {

// Flat dotted-key configuration covering every experiment knob. The text
// form is line-oriented `key = value` with `#` comments; unknown keys are
// rejected and the canonical serialization (sorted keys, pinned number
// formatting) is what gets hashed into artifacts.
struct ExperimentConfig {
    std::uint64_t seed = 42;

    int encoder_depth = 6;
    int encoder_dim = 128;
    int encoder_heads = 4;
    int encoder_patch_size = 8;
    int encoder_image_size = 64;
    double encoder_mlp_ratio = 4.0;

    int lora_rank = 4;
    std::string lora_expert_path = "delta";  // delta | theta_delta

    std::string pretext_image_optimizer = "lars";
    double pretext_image_base_lr = 0.075;
    int pretext_image_batch_size = 16;
    double pretext_image_weight_decay = 1e-4;
    int pretext_image_warmup_epochs = 30;
    int pretext_image_epochs = 80;
    int pretext_image_cpt_epochs = -1;
    double pretext_image_temperature = 0.1;
    int pretext_image_teacher_dim = 64;
    int pretext_image_proj_dim = 32;

    std::string pretext_patch_optimizer = "adamw";
    double pretext_patch_base_lr = 1.5e-4;
    int pretext_patch_batch_size = 16;
    double pretext_patch_weight_decay = 0.05;
    int pretext_patch_warmup_epochs = 30;
    int pretext_patch_epochs = 60;
    int pretext_patch_cpt_epochs = -1;
    double pretext_patch_mask_ratio = 0.75;
    int pretext_patch_teacher_dim = 128;
    int pretext_patch_teacher_depth = 4;
    int pretext_patch_teacher_heads = 4;

    std::string pretext_pixel_optimizer = "adamw";
    double pretext_pixel_base_lr = 1e-4;
    int pretext_pixel_batch_size = 16;
    double pretext_pixel_weight_decay = 0.05;
    int pretext_pixel_warmup_epochs = 10;
    int pretext_pixel_epochs = 30;
    double pretext_pixel_noise_sigma = 0.1;

    std::string fusion_strategy = "hl_attn";  // hl_attn | lac | gated | compose
    int fusion_order = 211;                   // 211 | 112 | 121
    bool fusion_layer_norm = true;
    bool fusion_lac_trainable = false;
    int fusion_compose_rounds = 20;
    double fusion_compose_range = 1.5;

    double finetune_lambda_ce = 0.2;
    double finetune_lambda_dice = 0.8;
    double finetune_base_lr = 0.005;
    long long finetune_warmup_steps = 250;
    long long finetune_max_iters = 18600;
    int finetune_batch_size = 8;
    int finetune_epochs = 20;
    double finetune_weight_decay = 0.1;
    double finetune_fewshot_fraction = 0.1;
    bool finetune_augment = true;

    int data_num_cases = 20;
    int data_slices_per_case = 10;
    int data_num_classes = 4;
    int data_test_cases = 6;
    int data_unlabeled_images = 80;
    double data_blob_scale = 0.34;
    double data_subregion_scale = 0.10;
    double data_texture_noise = 0.06;

    double aug_rotation_deg = 15.0;
    double aug_flip_prob = 0.5;
    double aug_scale_min = 0.9;
    double aug_scale_max = 1.1;
    double aug_elastic_alpha = 10.0;
    double aug_elastic_sigma = 4.0;
    double aug_contrast_jitter = 0.2;
    double aug_brightness_jitter = 0.1;

    bool eval_hd95 = false;

    // ---- key registry ----
    struct KeyDef {
        std::string key;
        std::function<std::string(const ExperimentConfig&)> get;
        std::function<void(ExperimentConfig&, const std::string&)> set;
    };

    static std::string fmt_double(double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    }

    static const std::vector<KeyDef>& keys();

    static ExperimentConfig parse(const std::string& text) {
        ExperimentConfig cfg;
        cfg.apply(text);
        return cfg;
    }

    void apply(const std::string& text) {
        std::istringstream is(text);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash_pos = line.find('#');
            if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("samora: config line " + std::to_string(lineno) + " has no '='");
            set_key(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    void set_key(const std::string& key, const std::string& value) {
        for (const auto& k : keys())
            if (k.key == key) {
                k.set(*this, value);
                return;
            }
        throw std::invalid_argument("samora: unknown config key '" + key + "'");
    }

    std::string get_key(const std::string& key) const {
        for (const auto& k : keys())
            if (k.key == key) return k.get(*this);
        throw std::invalid_argument("samora: unknown config key '" + key + "'");
    }

    static ExperimentConfig load(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("samora: cannot read config " + path.string());
        std::ostringstream os;
        os << f.rdbuf();
        return parse(os.str());
    }

    std::string serialize() const {
        std::ostringstream os;
        for (const auto& k : keys()) os << k.key << " = " << k.get(*this) << "\n";
        return os.str();
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream f(path);
        f << serialize();
    }

    std::uint64_t hash() const { return fnv1a(serialize()); }

    std::string hash_hex() const {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
        return buf;
    }

    // Hash restricted to keys under the given prefixes (plus the seed), used
    // for per-stage cache keys.
    std::uint64_t section_hash(const std::vector<std::string>& prefixes) const {
        std::ostringstream os;
        os << "seed = " << seed << "\n";
        for (const auto& k : keys())
            for (const auto& p : prefixes)
                if (k.key.rfind(p, 0) == 0) {
                    os << k.key << " = " << k.get(*this) << "\n";
                    break;
                }
        return fnv1a(os.str());
    }

    // ---- typed views ----
    EncoderConfig encoder() const {
        EncoderConfig e;
        e.depth = encoder_depth;
        e.dim = encoder_dim;
        e.heads = encoder_heads;
        e.patch_size = encoder_patch_size;
        e.image_size = encoder_image_size;
        e.mlp_ratio = encoder_mlp_ratio;
        e.validate();
        return e;
    }

    PretextConfig pretext(Level level) const {
        PretextConfig p = PretextConfig::defaults(level);
        p.seed = seed;
        switch (level) {
            case Level::Image:
                p.optimizer = pretext_image_optimizer;
                p.base_lr = pretext_image_base_lr;
                p.batch_size = pretext_image_batch_size;
                p.weight_decay = pretext_image_weight_decay;
                p.warmup_epochs = pretext_image_warmup_epochs;
                p.epochs = pretext_image_epochs;
                p.cpt_epochs = pretext_image_cpt_epochs;
                p.temperature = pretext_image_temperature;
                p.teacher_dim = pretext_image_teacher_dim;
                p.proj_dim = pretext_image_proj_dim;
                break;
            case Level::Patch:
                p.optimizer = pretext_patch_optimizer;
                p.base_lr = pretext_patch_base_lr;
                p.batch_size = pretext_patch_batch_size;
                p.weight_decay = pretext_patch_weight_decay;
                p.warmup_epochs = pretext_patch_warmup_epochs;
                p.epochs = pretext_patch_epochs;
                p.cpt_epochs = pretext_patch_cpt_epochs;
                p.mask_ratio = pretext_patch_mask_ratio;
                p.teacher_dim = pretext_patch_teacher_dim;
                p.teacher_depth = pretext_patch_teacher_depth;
                p.teacher_heads = pretext_patch_teacher_heads;
                break;
            case Level::Pixel:
                p.optimizer = pretext_pixel_optimizer;
                p.base_lr = pretext_pixel_base_lr;
                p.batch_size = pretext_pixel_batch_size;
                p.weight_decay = pretext_pixel_weight_decay;
                p.warmup_epochs = pretext_pixel_warmup_epochs;
                p.epochs = pretext_pixel_epochs;
                p.noise_sigma = pretext_pixel_noise_sigma;
                break;
            default:
                throw std::invalid_argument("samora: no pretext config for composite level");
        }
        return p;
    }

    FinetuneConfig finetune_cfg() const {
        FinetuneConfig f;
        f.lambda_ce = finetune_lambda_ce;
        f.lambda_dice = finetune_lambda_dice;
        f.base_lr = finetune_base_lr;
        f.warmup_steps = finetune_warmup_steps;
        f.max_iters = finetune_max_iters;
        f.batch_size = finetune_batch_size;
        f.epochs = finetune_epochs;
        f.weight_decay = finetune_weight_decay;
        f.fewshot_fraction = finetune_fewshot_fraction;
        f.augment_train = finetune_augment;
        f.seed = seed;
        f.validate();
        return f;
    }

    SyntheticSpec synthetic() const {
        SyntheticSpec s;
        s.num_cases = data_num_cases;
        s.slices_per_case = data_slices_per_case;
        s.num_classes = data_num_classes;
        s.resolution = encoder_image_size;
        s.test_cases = data_test_cases;
        s.unlabeled_images = data_unlabeled_images;
        s.blob_scale = data_blob_scale;
        s.subregion_scale = data_subregion_scale;
        s.texture_noise = data_texture_noise;
        return s;
    }

    AugmentConfig augment_cfg() const {
        AugmentConfig a;
        a.rotation_deg = aug_rotation_deg;
        a.flip_prob = aug_flip_prob;
        a.scale_min = aug_scale_min;
        a.scale_max = aug_scale_max;
        a.elastic_alpha = aug_elastic_alpha;
        a.elastic_sigma = aug_elastic_sigma;
        a.contrast_jitter = aug_contrast_jitter;
        a.brightness_jitter = aug_brightness_jitter;
        return a;
    }

    FusionKind fusion_kind() const { return fusion_kind_from_name(fusion_strategy); }
    FusionOrder fusion_order_cfg() const { return FusionOrder::from_code(fusion_order); }
    ExpertPath expert_path() const { return expert_path_from_name(lora_expert_path); }
};

namespace detail_config {

inline long long parse_ll(const std::string& v) {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("samora: bad integer '" + v + "'");
    return x;
}

inline double parse_d(const std::string& v) {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("samora: bad number '" + v + "'");
    return x;
}

inline bool parse_b(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("samora: bad boolean '" + v + "'");
}

}  // namespace detail_config

#define SAMORA_KEY_INT(name, field)                                                             \
    {name, [](const ExperimentConfig& c) { return std::to_string(c.field); },                   \
     [](ExperimentConfig& c, const std::string& v) { c.field = static_cast<int>(detail_config::parse_ll(v)); }}
#define SAMORA_KEY_LL(name, field)                                                              \
    {name, [](const ExperimentConfig& c) { return std::to_string(c.field); },                   \
     [](ExperimentConfig& c, const std::string& v) { c.field = detail_config::parse_ll(v); }}
#define SAMORA_KEY_U64(name, field)                                                             \
    {name, [](const ExperimentConfig& c) { return std::to_string(c.field); },                   \
     [](ExperimentConfig& c, const std::string& v) { c.field = static_cast<std::uint64_t>(detail_config::parse_ll(v)); }}
#define SAMORA_KEY_DBL(name, field)                                                             \
    {name, [](const ExperimentConfig& c) { return ExperimentConfig::fmt_double(c.field); },     \
     [](ExperimentConfig& c, const std::string& v) { c.field = detail_config::parse_d(v); }}
#define SAMORA_KEY_BOOL(name, field)                                                            \
    {name, [](const ExperimentConfig& c) { return c.field ? std::string("true") : std::string("false"); }, \
     [](ExperimentConfig& c, const std::string& v) { c.field = detail_config::parse_b(v); }}
#define SAMORA_KEY_STR(name, field)                                                             \
    {name, [](const ExperimentConfig& c) { return c.field; },                                   \
     [](ExperimentConfig& c, const std::string& v) { c.field = v; }}

inline const std::vector<ExperimentConfig::KeyDef>& ExperimentConfig::keys() {
    static const std::vector<KeyDef> defs = {
        SAMORA_KEY_U64("seed", seed),
        SAMORA_KEY_INT("encoder.depth", encoder_depth),
        SAMORA_KEY_INT("encoder.dim", encoder_dim),
        SAMORA_KEY_INT("encoder.heads", encoder_heads),
        SAMORA_KEY_INT("encoder.patch_size", encoder_patch_size),
        SAMORA_KEY_INT("encoder.image_size", encoder_image_size),
        SAMORA_KEY_DBL("encoder.mlp_ratio", encoder_mlp_ratio),
        SAMORA_KEY_INT("lora.rank", lora_rank),
        SAMORA_KEY_STR("lora.expert_path", lora_expert_path),
        SAMORA_KEY_STR("pretext.image.optimizer", pretext_image_optimizer),
        SAMORA_KEY_DBL("pretext.image.base_lr", pretext_image_base_lr),
        SAMORA_KEY_INT("pretext.image.batch_size", pretext_image_batch_size),
        SAMORA_KEY_DBL("pretext.image.weight_decay", pretext_image_weight_decay),
        SAMORA_KEY_INT("pretext.image.warmup_epochs", pretext_image_warmup_epochs),
        SAMORA_KEY_INT("pretext.image.epochs", pretext_image_epochs),
        SAMORA_KEY_INT("pretext.image.cpt_epochs", pretext_image_cpt_epochs),
        SAMORA_KEY_DBL("pretext.image.temperature", pretext_image_temperature),
        SAMORA_KEY_INT("pretext.image.teacher_dim", pretext_image_teacher_dim),
        SAMORA_KEY_INT("pretext.image.proj_dim", pretext_image_proj_dim),
        SAMORA_KEY_STR("pretext.patch.optimizer", pretext_patch_optimizer),
        SAMORA_KEY_DBL("pretext.patch.base_lr", pretext_patch_base_lr),
        SAMORA_KEY_INT("pretext.patch.batch_size", pretext_patch_batch_size),
        SAMORA_KEY_DBL("pretext.patch.weight_decay", pretext_patch_weight_decay),
        SAMORA_KEY_INT("pretext.patch.warmup_epochs", pretext_patch_warmup_epochs),
        SAMORA_KEY_INT("pretext.patch.epochs", pretext_patch_epochs),
        SAMORA_KEY_INT("pretext.patch.cpt_epochs", pretext_patch_cpt_epochs),
        SAMORA_KEY_DBL("pretext.patch.mask_ratio", pretext_patch_mask_ratio),
        SAMORA_KEY_INT("pretext.patch.teacher_dim", pretext_patch_teacher_dim),
        SAMORA_KEY_INT("pretext.patch.teacher_depth", pretext_patch_teacher_depth),
        SAMORA_KEY_INT("pretext.patch.teacher_heads", pretext_patch_teacher_heads),
        SAMORA_KEY_STR("pretext.pixel.optimizer", pretext_pixel_optimizer),
        SAMORA_KEY_DBL("pretext.pixel.base_lr", pretext_pixel_base_lr),
        SAMORA_KEY_INT("pretext.pixel.batch_size", pretext_pixel_batch_size),
        SAMORA_KEY_DBL("pretext.pixel.weight_decay", pretext_pixel_weight_decay),
        SAMORA_KEY_INT("pretext.pixel.warmup_epochs", pretext_pixel_warmup_epochs),
        SAMORA_KEY_INT("pretext.pixel.epochs", pretext_pixel_epochs),
        SAMORA_KEY_DBL("pretext.pixel.noise_sigma", pretext_pixel_noise_sigma),
        SAMORA_KEY_STR("fusion.strategy", fusion_strategy),
        SAMORA_KEY_INT("fusion.order", fusion_order),
        SAMORA_KEY_BOOL("fusion.layer_norm", fusion_layer_norm),
        SAMORA_KEY_BOOL("fusion.lac_trainable", fusion_lac_trainable),
        SAMORA_KEY_INT("fusion.compose_rounds", fusion_compose_rounds),
        SAMORA_KEY_DBL("fusion.compose_range", fusion_compose_range),
        SAMORA_KEY_DBL("finetune.lambda_ce", finetune_lambda_ce),
        SAMORA_KEY_DBL("finetune.lambda_dice", finetune_lambda_dice),
        SAMORA_KEY_DBL("finetune.base_lr", finetune_base_lr),
        SAMORA_KEY_LL("finetune.warmup_steps", finetune_warmup_steps),
        SAMORA_KEY_LL("finetune.max_iters", finetune_max_iters),
        SAMORA_KEY_INT("finetune.batch_size", finetune_batch_size),
        SAMORA_KEY_INT("finetune.epochs", finetune_epochs),
        SAMORA_KEY_DBL("finetune.weight_decay", finetune_weight_decay),
        SAMORA_KEY_DBL("finetune.fewshot_fraction", finetune_fewshot_fraction),
        SAMORA_KEY_BOOL("finetune.augment", finetune_augment),
        SAMORA_KEY_INT("data.num_cases", data_num_cases),
        SAMORA_KEY_INT("data.slices_per_case", data_slices_per_case),
        SAMORA_KEY_INT("data.num_classes", data_num_classes),
        SAMORA_KEY_INT("data.test_cases", data_test_cases),
        SAMORA_KEY_INT("data.unlabeled_images", data_unlabeled_images),
        SAMORA_KEY_DBL("data.blob_scale", data_blob_scale),
        SAMORA_KEY_DBL("data.subregion_scale", data_subregion_scale),
        SAMORA_KEY_DBL("data.texture_noise", data_texture_noise),
        SAMORA_KEY_DBL("data.aug.rotation_deg", aug_rotation_deg),
        SAMORA_KEY_DBL("data.aug.flip_prob", aug_flip_prob),
        SAMORA_KEY_DBL("data.aug.scale_min", aug_scale_min),
        SAMORA_KEY_DBL("data.aug.scale_max", aug_scale_max),
        SAMORA_KEY_DBL("data.aug.elastic_alpha", aug_elastic_alpha),
        SAMORA_KEY_DBL("data.aug.elastic_sigma", aug_elastic_sigma),
        SAMORA_KEY_DBL("data.aug.contrast_jitter", aug_contrast_jitter),
        SAMORA_KEY_DBL("data.aug.brightness_jitter", aug_brightness_jitter),
        SAMORA_KEY_BOOL("eval.hd95", eval_hd95),
    };
    return defs;
}

#undef SAMORA_KEY_INT
#undef SAMORA_KEY_LL
#undef SAMORA_KEY_U64
#undef SAMORA_KEY_DBL
#undef SAMORA_KEY_BOOL
#undef SAMORA_KEY_STR

}  // namespace samora
