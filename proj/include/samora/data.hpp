#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "samora/rng.hpp"

namespace samora {

struct Raster {
    int h = 0, w = 0;
    std::vector<float> v;

    Raster() = default;
    Raster(int h_, int w_, float fill = 0.f) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}
    float& at(int i, int j) { return v[static_cast<std::size_t>(i) * w + j]; }
    float at(int i, int j) const { return v[static_cast<std::size_t>(i) * w + j]; }
};

struct MaskRaster {
    int h = 0, w = 0;
    std::vector<std::uint8_t> v;

    MaskRaster() = default;
    MaskRaster(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, 0) {}
    std::uint8_t& at(int i, int j) { return v[static_cast<std::size_t>(i) * w + j]; }
    std::uint8_t at(int i, int j) const { return v[static_cast<std::size_t>(i) * w + j]; }
};

struct SegSample {
    Raster image;
    MaskRaster mask;
    int case_id = 0;
    int slice_index = 0;
};

// ---------------------------------------------------------------------------
// synthetic data

// Desk-scale stand-in for an abdominal CT corpus. Every slice carries one
// large smooth organ blob (global structure), one labeled sub-region per
// foreground class placed inside it (regional structure), and a per-class
// intensity texture (fine-grained structure). Sub-region positions are
// shuffled per case so texture, not location, identifies the class.
struct SyntheticSpec {
    int num_cases = 20;
    int slices_per_case = 10;
    int num_classes = 4;  // foreground
    int resolution = 64;
    int test_cases = 6;
    int unlabeled_images = 80;
    double blob_scale = 0.34;      // organ radius as a fraction of image size
    double subregion_scale = 0.10; // sub-region radius fraction
    double texture_noise = 0.06;

    // Expected pixel fraction per foreground class given the geometry.
    double target_fraction() const { return M_PI * subregion_scale * subregion_scale; }
};

struct SyntheticData {
    std::vector<SegSample> train;
    std::vector<SegSample> test;
    std::vector<Raster> unlabeled;
};

namespace detail_data {

struct Ellipse {
    double ci, cj, ri, rj, angle;

    bool contains(double i, double j) const {
        const double di = i - ci, dj = j - cj;
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double u = (ca * di + sa * dj) / ri;
        const double v = (-sa * di + ca * dj) / rj;
        return u * u + v * v <= 1.0;
    }
};

// Per-class fine texture in [-1, 1]: distinct dominant frequency/orientation
// per class plus speckle.
inline double class_texture(int cls, double i, double j, Rng& speckle) {
    switch (cls % 4) {
        case 0: return std::sin(i * 1.9) * std::sin(j * 1.9);
        case 1: return std::sin((i + j) * 1.1);
        case 2: return speckle.uniform(-1.0, 1.0);
        default: return std::sin(i * 0.35) * std::cos(j * 2.3);
    }
}

inline SegSample synth_slice(const SyntheticSpec& spec, std::uint64_t case_seed, int case_id, int slice_index,
                             int total_slices, bool labeled) {
    const int n = spec.resolution;
    Rng case_rng(case_seed);
    // case-level anatomy
    Ellipse organ;
    organ.ci = n * (0.5 + case_rng.uniform(-0.06, 0.06));
    organ.cj = n * (0.5 + case_rng.uniform(-0.06, 0.06));
    const double base_r = n * spec.blob_scale * (1.0 + case_rng.uniform(-0.1, 0.1));
    organ.angle = case_rng.uniform(0.0, M_PI);
    const double organ_ecc = case_rng.uniform(0.8, 1.2);
    // class order around the organ is shuffled per case
    std::vector<int> class_at_slot(static_cast<std::size_t>(spec.num_classes));
    std::iota(class_at_slot.begin(), class_at_slot.end(), 1);
    case_rng.shuffle(class_at_slot);
    const double phase = case_rng.uniform(0.0, 2.0 * M_PI);
    std::vector<double> sub_r(static_cast<std::size_t>(spec.num_classes));
    for (auto& r : sub_r) r = n * spec.subregion_scale * (1.0 + case_rng.uniform(-0.1, 0.1));

    // slice-level modulation: anatomy shrinks toward the case ends
    const double t = total_slices > 1 ? static_cast<double>(slice_index) / (total_slices - 1) : 0.5;
    const double slice_mod = 0.85 + 0.3 * std::sin(M_PI * (0.15 + 0.7 * t));
    organ.ri = base_r * slice_mod;
    organ.rj = base_r * slice_mod * organ_ecc;

    std::vector<Ellipse> subs;
    for (int s = 0; s < spec.num_classes; ++s) {
        Ellipse e;
        const double theta = phase + 2.0 * M_PI * s / spec.num_classes;
        const double rad = 0.52 * std::min(organ.ri, organ.rj);
        e.ci = organ.ci + rad * std::cos(theta);
        e.cj = organ.cj + rad * std::sin(theta);
        e.ri = std::max(2.0, sub_r[static_cast<std::size_t>(s)] * slice_mod);
        e.rj = e.ri;
        e.angle = 0.0;
        subs.push_back(e);
    }

    Rng pix_rng(substream(case_seed, "pixels", static_cast<std::uint64_t>(slice_index)));
    SegSample out;
    out.case_id = case_id;
    out.slice_index = slice_index;
    out.image = Raster(n, n);
    out.mask = MaskRaster(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double val = 0.15;
            int label = 0;
            if (organ.contains(i, j)) val = 0.45;
            for (int s = 0; s < spec.num_classes; ++s)
                if (subs[static_cast<std::size_t>(s)].contains(i, j)) {
                    label = class_at_slot[static_cast<std::size_t>(s)];
                    val = 0.55 + 0.12 * class_texture(label - 1, i, j, pix_rng);
                    break;
                }
            val += pix_rng.normal(0.0, spec.texture_noise);
            out.image.at(i, j) = static_cast<float>(std::clamp(val, 0.0, 1.0));
            out.mask.at(i, j) = labeled ? static_cast<std::uint8_t>(label) : 0;
        }
    return out;
}

}  // namespace detail_data

inline SyntheticData generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.num_cases <= 0 || spec.slices_per_case <= 0 || spec.num_classes <= 0 || spec.resolution <= 0)
        throw std::invalid_argument("samora: invalid synthetic spec");
    SyntheticData data;
    for (int c = 0; c < spec.num_cases + spec.test_cases; ++c) {
        const bool is_test = c >= spec.num_cases;
        const std::uint64_t case_seed = substream(seed, "case", static_cast<std::uint64_t>(c));
        for (int s = 0; s < spec.slices_per_case; ++s) {
            auto sample = detail_data::synth_slice(spec, case_seed, c, s, spec.slices_per_case, true);
            (is_test ? data.test : data.train).push_back(std::move(sample));
        }
    }
    for (int u = 0; u < spec.unlabeled_images; ++u) {
        const std::uint64_t us = substream(seed, "unlabeled", static_cast<std::uint64_t>(u));
        auto sample = detail_data::synth_slice(spec, us, -1, 0, 1, false);
        data.unlabeled.push_back(std::move(sample.image));
    }
    return data;
}

// ---------------------------------------------------------------------------
// preprocessing

inline Raster resize_bilinear(const Raster& src, int h, int w) {
    Raster out(h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double si = (i + 0.5) * src.h / h - 0.5;
            const double sj = (j + 0.5) * src.w / w - 0.5;
            const int i0 = std::clamp(static_cast<int>(std::floor(si)), 0, src.h - 1);
            const int j0 = std::clamp(static_cast<int>(std::floor(sj)), 0, src.w - 1);
            const int i1 = std::min(i0 + 1, src.h - 1);
            const int j1 = std::min(j0 + 1, src.w - 1);
            const double fi = std::clamp(si - i0, 0.0, 1.0);
            const double fj = std::clamp(sj - j0, 0.0, 1.0);
            const double v = (1 - fi) * ((1 - fj) * src.at(i0, j0) + fj * src.at(i0, j1)) +
                             fi * ((1 - fj) * src.at(i1, j0) + fj * src.at(i1, j1));
            out.at(i, j) = static_cast<float>(v);
        }
    return out;
}

inline MaskRaster resize_nearest(const MaskRaster& src, int h, int w) {
    MaskRaster out(h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const int si = std::clamp(static_cast<int>((i + 0.5) * src.h / h), 0, src.h - 1);
            const int sj = std::clamp(static_cast<int>((j + 0.5) * src.w / w), 0, src.w - 1);
            out.at(i, j) = src.at(si, sj);
        }
    return out;
}

// Resize to the configured resolution and z-score normalize. A constant
// slice maps to all zeros (the variance floor guards the division).
inline SegSample preprocess(const SegSample& raw, int resolution) {
    for (float f : raw.image.v)
        if (!std::isfinite(f)) throw std::invalid_argument("samora: non-finite intensity in raw slice");
    SegSample out;
    out.case_id = raw.case_id;
    out.slice_index = raw.slice_index;
    out.image = (raw.image.h == resolution && raw.image.w == resolution) ? raw.image
                                                                         : resize_bilinear(raw.image, resolution, resolution);
    if (raw.mask.h > 0)
        out.mask = (raw.mask.h == resolution && raw.mask.w == resolution) ? raw.mask
                                                                          : resize_nearest(raw.mask, resolution, resolution);
    double mean = 0.0;
    for (float f : out.image.v) mean += f;
    mean /= static_cast<double>(out.image.v.size());
    double var = 0.0;
    for (float f : out.image.v) var += (f - mean) * (f - mean);
    var /= static_cast<double>(out.image.v.size());
    const double sd = std::max(std::sqrt(var), 1e-8);
    for (float& f : out.image.v) f = static_cast<float>((f - mean) / sd);
    return out;
}

// ---------------------------------------------------------------------------
// augmentation

struct AugmentConfig {
    double rotation_deg = 15.0;
    double flip_prob = 0.5;
    double scale_min = 0.9;
    double scale_max = 1.1;
    double elastic_alpha = 10.0;  // peak displacement, px
    double elastic_sigma = 4.0;   // smoothing, px
    double contrast_jitter = 0.2;
    double brightness_jitter = 0.1;
    bool geometric = true;
    bool photometric = true;
};

namespace detail_data {

inline std::vector<float> gaussian_blur_field(const std::vector<float>& f, int h, int w, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));
        ksum += kernel[static_cast<std::size_t>(k + radius)];
    }
    for (auto& k : kernel) k /= ksum;
    std::vector<float> tmp(f.size()), out(f.size());
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double s = 0.0;
            for (int k = -radius; k <= radius; ++k)
                s += kernel[static_cast<std::size_t>(k + radius)] * f[static_cast<std::size_t>(i) * w + std::clamp(j + k, 0, w - 1)];
            tmp[static_cast<std::size_t>(i) * w + j] = static_cast<float>(s);
        }
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double s = 0.0;
            for (int k = -radius; k <= radius; ++k)
                s += kernel[static_cast<std::size_t>(k + radius)] * tmp[static_cast<std::size_t>(std::clamp(i + k, 0, h - 1)) * w + j];
            out[static_cast<std::size_t>(i) * w + j] = static_cast<float>(s);
        }
    return out;
}

}  // namespace detail_data

// Drawn parameters for one augmentation; exposed so tests can check the
// sampled ranges directly.
struct AugmentDraw {
    double angle_rad = 0.0;
    bool flip_h = false, flip_v = false;
    double scale = 1.0;
    double contrast = 1.0;
    double brightness = 0.0;
};

inline AugmentDraw draw_augment(const AugmentConfig& cfg, Rng& rng) {
    AugmentDraw d;
    d.angle_rad = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg) * M_PI / 180.0;
    d.flip_h = rng.bernoulli(cfg.flip_prob);
    d.flip_v = rng.bernoulli(cfg.flip_prob);
    d.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
    d.contrast = 1.0 + rng.uniform(-cfg.contrast_jitter, cfg.contrast_jitter);
    d.brightness = rng.uniform(-cfg.brightness_jitter, cfg.brightness_jitter);
    return d;
}

// Identical geometric transform for image (bilinear) and mask (nearest);
// photometric jitter touches the image only. Deterministic per seed.
inline SegSample augment(const SegSample& sample, const AugmentConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    const AugmentDraw d = draw_augment(cfg, rng);
    const int h = sample.image.h, w = sample.image.w;
    std::vector<float> disp_i, disp_j;
    if (cfg.geometric && cfg.elastic_alpha > 0.0) {
        std::vector<float> raw_i(static_cast<std::size_t>(h) * w), raw_j(static_cast<std::size_t>(h) * w);
        for (auto& f : raw_i) f = static_cast<float>(rng.uniform(-1.0, 1.0));
        for (auto& f : raw_j) f = static_cast<float>(rng.uniform(-1.0, 1.0));
        disp_i = detail_data::gaussian_blur_field(raw_i, h, w, cfg.elastic_sigma);
        disp_j = detail_data::gaussian_blur_field(raw_j, h, w, cfg.elastic_sigma);
        float mx = 1e-12f;
        for (std::size_t k = 0; k < disp_i.size(); ++k)
            mx = std::max({mx, std::abs(disp_i[k]), std::abs(disp_j[k])});
        for (std::size_t k = 0; k < disp_i.size(); ++k) {
            disp_i[k] = static_cast<float>(disp_i[k] / mx * cfg.elastic_alpha);
            disp_j[k] = static_cast<float>(disp_j[k] / mx * cfg.elastic_alpha);
        }
    }

    SegSample out;
    out.case_id = sample.case_id;
    out.slice_index = sample.slice_index;
    out.image = Raster(h, w);
    const bool has_mask = sample.mask.h > 0;
    if (has_mask) out.mask = MaskRaster(h, w);

    const double ci = (h - 1) / 2.0, cj = (w - 1) / 2.0;
    const double ca = std::cos(d.angle_rad), sa = std::sin(d.angle_rad);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double si = i, sj = j;
            if (cfg.geometric) {
                // inverse map: output -> source
                double di = i - ci, dj = j - cj;
                if (d.flip_v) di = -di;
                if (d.flip_h) dj = -dj;
                const double ri = (ca * di + sa * dj) / d.scale;
                const double rj = (-sa * di + ca * dj) / d.scale;
                si = ri + ci;
                sj = rj + cj;
                if (!disp_i.empty()) {
                    si += disp_i[static_cast<std::size_t>(i) * w + j];
                    sj += disp_j[static_cast<std::size_t>(i) * w + j];
                }
            }
            // image: bilinear with border clamp
            const int i0 = std::clamp(static_cast<int>(std::floor(si)), 0, h - 1);
            const int j0 = std::clamp(static_cast<int>(std::floor(sj)), 0, w - 1);
            const int i1 = std::min(i0 + 1, h - 1);
            const int j1 = std::min(j0 + 1, w - 1);
            const double fi = std::clamp(si - i0, 0.0, 1.0);
            const double fj = std::clamp(sj - j0, 0.0, 1.0);
            double v = (1 - fi) * ((1 - fj) * sample.image.at(i0, j0) + fj * sample.image.at(i0, j1)) +
                       fi * ((1 - fj) * sample.image.at(i1, j0) + fj * sample.image.at(i1, j1));
            if (si < -0.5 || si > h - 0.5 || sj < -0.5 || sj > w - 0.5) v = 0.0;
            if (cfg.photometric) v = v * d.contrast + d.brightness;
            out.image.at(i, j) = static_cast<float>(v);
            if (has_mask) {
                const int ni = static_cast<int>(std::lround(si));
                const int nj = static_cast<int>(std::lround(sj));
                out.mask.at(i, j) = (ni >= 0 && ni < h && nj >= 0 && nj < w) ? sample.mask.at(ni, nj) : 0;
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// few-shot split

// Slice-level sampling stratified across cases: quotas follow each case's
// share (largest remainder), every case contributes at least one slice when
// the budget allows, and floor(fraction * N) slices are drawn in total.
inline std::pair<std::vector<SegSample>, std::vector<SegSample>> split_fewshot(const std::vector<SegSample>& dataset,
                                                                               double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0) throw std::invalid_argument("samora: few-shot fraction must be in (0,1]");
    const std::size_t total = dataset.size();
    const std::size_t want = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total)));
    if (want == 0) throw std::invalid_argument("samora: few-shot fraction yields zero slices");

    std::map<int, std::vector<std::size_t>> by_case;
    for (std::size_t i = 0; i < total; ++i) by_case[dataset[i].case_id].push_back(i);

    std::vector<int> cases;
    for (auto& [cid, _] : by_case) cases.push_back(cid);

    std::map<int, std::size_t> quota;
    std::size_t assigned = 0;
    std::vector<std::pair<double, int>> remainders;
    for (int cid : cases) {
        const double share = fraction * static_cast<double>(by_case[cid].size());
        quota[cid] = static_cast<std::size_t>(std::floor(share));
        assigned += quota[cid];
        remainders.emplace_back(share - std::floor(share), cid);
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (std::size_t r = 0; assigned < want; r = (r + 1) % remainders.size()) {
        const int cid = remainders[r].second;
        if (quota[cid] < by_case[cid].size()) {
            ++quota[cid];
            ++assigned;
        }
    }
    while (assigned > want)
        for (auto it = remainders.rbegin(); it != remainders.rend() && assigned > want; ++it)
            if (quota[it->second] > 0) {
                --quota[it->second];
                --assigned;
            }
    // every case contributes when the budget allows
    if (want >= cases.size()) {
        for (int cid : cases) {
            if (quota[cid] > 0) continue;
            for (int donor : cases)
                if (quota[donor] > 1) {
                    --quota[donor];
                    ++quota[cid];
                    break;
                }
        }
    }

    Rng rng(substream(seed, "fewshot"));
    std::vector<bool> picked(total, false);
    for (int cid : cases) {
        auto idxs = by_case[cid];
        rng.shuffle(idxs);
        for (std::size_t k = 0; k < quota[cid] && k < idxs.size(); ++k) picked[idxs[k]] = true;
    }
    std::pair<std::vector<SegSample>, std::vector<SegSample>> out;
    for (std::size_t i = 0; i < total; ++i) (picked[i] ? out.first : out.second).push_back(dataset[i]);
    return out;
}

// ---------------------------------------------------------------------------
// on-disk formats

namespace detail_data {

inline void write_header(std::ofstream& f, const char* magic, int h, int w) {
    f << magic << "\n" << h << " " << w << "\n";
}

inline std::pair<int, int> read_header(std::ifstream& f, const char* magic, const std::string& path) {
    std::string line;
    if (!std::getline(f, line) || line != magic)
        throw std::runtime_error("samora: bad magic in " + path + " (expected " + magic + ")");
    int h = 0, w = 0;
    f >> h >> w;
    f.get();  // single newline after dims
    if (h <= 0 || w <= 0) throw std::runtime_error("samora: bad raster dims in " + path);
    return {h, w};
}

}  // namespace detail_data

inline void write_img(const std::filesystem::path& path, const Raster& r) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("samora: cannot write " + path.string());
    detail_data::write_header(f, "SAMR-IMG1", r.h, r.w);
    f.write(reinterpret_cast<const char*>(r.v.data()), static_cast<std::streamsize>(r.v.size() * sizeof(float)));
}

inline Raster read_img(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("samora: cannot read " + path.string());
    auto [h, w] = detail_data::read_header(f, "SAMR-IMG1", path.string());
    Raster r(h, w);
    f.read(reinterpret_cast<char*>(r.v.data()), static_cast<std::streamsize>(r.v.size() * sizeof(float)));
    if (!f) throw std::runtime_error("samora: truncated raster " + path.string());
    return r;
}

inline void write_msk(const std::filesystem::path& path, const MaskRaster& m) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("samora: cannot write " + path.string());
    detail_data::write_header(f, "SAMR-MSK1", m.h, m.w);
    f.write(reinterpret_cast<const char*>(m.v.data()), static_cast<std::streamsize>(m.v.size()));
}

inline MaskRaster read_msk(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("samora: cannot read " + path.string());
    auto [h, w] = detail_data::read_header(f, "SAMR-MSK1", path.string());
    MaskRaster m(h, w);
    f.read(reinterpret_cast<char*>(m.v.data()), static_cast<std::streamsize>(m.v.size()));
    if (!f) throw std::runtime_error("samora: truncated mask " + path.string());
    return m;
}

// Binary PGM (P5), 8- or 16-bit, mapped to [0,1].
inline Raster read_pgm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("samora: cannot read " + path.string());
    std::string magic;
    f >> magic;
    if (magic != "P5") throw std::runtime_error("samora: " + path.string() + " is not binary PGM");
    auto next_token = [&]() {
        std::string tok;
        for (;;) {
            f >> tok;
            if (!tok.empty() && tok[0] == '#') {
                std::string rest;
                std::getline(f, rest);
                continue;
            }
            return tok;
        }
    };
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    f.get();
    Raster r(h, w);
    if (maxval < 256) {
        std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w);
        f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        for (std::size_t i = 0; i < buf.size(); ++i) r.v[i] = static_cast<float>(buf[i]) / static_cast<float>(maxval);
    } else {
        std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w * 2);
        f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) {
            const int v = (buf[2 * i] << 8) | buf[2 * i + 1];
            r.v[i] = static_cast<float>(v) / static_cast<float>(maxval);
        }
    }
    if (!f) throw std::runtime_error("samora: truncated PGM " + path.string());
    return r;
}

inline std::string slice_stem(int case_id, int slice_index) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "case%03d_slice%03d", case_id, slice_index);
    return buf;
}

// Writes train/test slices plus the unlabeled corpus under `dir` with a
// manifest listing the splits.
inline void save_dataset(const std::filesystem::path& dir, const SyntheticData& data) {
    std::filesystem::create_directories(dir);
    std::filesystem::create_directories(dir / "unlabeled");
    std::ofstream manifest(dir / "manifest.txt");
    auto dump = [&](const std::vector<SegSample>& split, const char* tag) {
        for (const auto& s : split) {
            const std::string stem = slice_stem(s.case_id, s.slice_index);
            write_img(dir / (stem + ".img"), s.image);
            write_msk(dir / (stem + ".msk"), s.mask);
            manifest << tag << " " << stem << "\n";
        }
    };
    dump(data.train, "train");
    dump(data.test, "test");
    for (std::size_t u = 0; u < data.unlabeled.size(); ++u) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "img%05zu.img", u);
        write_img(dir / "unlabeled" / buf, data.unlabeled[u]);
        manifest << "unlabeled unlabeled/" << buf << "\n";
    }
}

inline SyntheticData load_dataset(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw std::runtime_error("samora: no manifest in " + dir.string());
    SyntheticData data;
    std::string tag, stem;
    while (manifest >> tag >> stem) {
        if (tag == "unlabeled") {
            data.unlabeled.push_back(read_img(dir / stem));
            continue;
        }
        SegSample s;
        s.image = read_img(dir / (stem + ".img"));
        s.mask = read_msk(dir / (stem + ".msk"));
        if (std::sscanf(stem.c_str(), "case%d_slice%d", &s.case_id, &s.slice_index) != 2)
            throw std::runtime_error("samora: bad slice stem " + stem);
        (tag == "train" ? data.train : data.test).push_back(std::move(s));
    }
    return data;
}

// Generic loader for a directory of grayscale rasters (.img or .pgm),
// usable as a real-data unlabeled corpus.
inline std::vector<Raster> load_raster_dir(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto ext = e.path().extension();
        if (ext == ".img" || ext == ".pgm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Raster> out;
    for (const auto& p : files) out.push_back(p.extension() == ".pgm" ? read_pgm(p) : read_img(p));
    return out;
}

}  // namespace samora
