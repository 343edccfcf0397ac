#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "samora/data.hpp"

namespace samora {

// 2D or 3D boolean mask with voxel spacing; shape is (H,W) or (D,H,W).
struct BinaryMask {
    std::vector<int> shape;
    std::vector<std::uint8_t> v;
    std::array<double, 3> spacing = {1.0, 1.0, 1.0};

    static BinaryMask from_labels(const std::vector<int>& shape, const std::vector<std::uint8_t>& labels, int cls) {
        BinaryMask m;
        m.shape = shape;
        m.v.resize(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) m.v[i] = labels[i] == cls ? 1 : 0;
        return m;
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : v) n += b ? 1 : 0;
        return n;
    }

    double diagonal() const {
        double s = 0.0;
        for (std::size_t i = 0; i < shape.size(); ++i) {
            const double e = shape[i] * spacing[i + (3 - shape.size())];
            s += e * e;
        }
        return std::sqrt(s);
    }
};

// Eq. 10 left: 2|A n B| / (|A| + |B|). Both masks empty counts as perfect
// agreement; exactly one empty counts as total miss.
inline double dice(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.shape != gt.shape) throw std::invalid_argument("samora: dice shape mismatch");
    std::size_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        a += pred.v[i] ? 1 : 0;
        b += gt.v[i] ? 1 : 0;
        inter += (pred.v[i] && gt.v[i]) ? 1 : 0;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

namespace detail_metrics {

// Boundary voxels: foreground with a background face-neighbor or touching
// the array border. Coordinates are scaled by spacing.
inline std::vector<std::array<double, 3>> boundary_points(const BinaryMask& m) {
    std::vector<std::array<double, 3>> pts;
    const bool is3d = m.shape.size() == 3;
    const int D = is3d ? m.shape[0] : 1;
    const int H = m.shape[is3d ? 1 : 0];
    const int W = m.shape[is3d ? 2 : 1];
    const double sd = m.spacing[0], sh = m.spacing[1], sw = m.spacing[2];
    auto at = [&](int d, int i, int j) { return m.v[(static_cast<std::size_t>(d) * H + i) * W + j] != 0; };
    for (int d = 0; d < D; ++d)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                if (!at(d, i, j)) continue;
                bool border = i == 0 || i == H - 1 || j == 0 || j == W - 1 || (is3d && (d == 0 || d == D - 1));
                bool exposed = border;
                if (!exposed) {
                    exposed = !at(d, i - 1, j) || !at(d, i + 1, j) || !at(d, i, j - 1) || !at(d, i, j + 1);
                    if (!exposed && is3d) exposed = !at(d - 1, i, j) || !at(d + 1, i, j);
                }
                if (exposed) pts.push_back({is3d ? d * sd : 0.0, i * sh, j * sw});
            }
    return pts;
}

inline double directed_max_min(const std::vector<std::array<double, 3>>& a,
                               const std::vector<std::array<double, 3>>& b) {
    double worst = 0.0;
    for (const auto& p : a) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : b) {
            const double d0 = p[0] - q[0], d1 = p[1] - q[1], d2 = p[2] - q[2];
            best = std::min(best, d0 * d0 + d1 * d1 + d2 * d2);
        }
        worst = std::max(worst, best);
    }
    return std::sqrt(worst);
}

inline double directed_percentile(const std::vector<std::array<double, 3>>& a,
                                  const std::vector<std::array<double, 3>>& b, double pct) {
    std::vector<double> mins;
    mins.reserve(a.size());
    for (const auto& p : a) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : b) {
            const double d0 = p[0] - q[0], d1 = p[1] - q[1], d2 = p[2] - q[2];
            best = std::min(best, d0 * d0 + d1 * d1 + d2 * d2);
        }
        mins.push_back(std::sqrt(best));
    }
    std::sort(mins.begin(), mins.end());
    const std::size_t k = std::min(mins.size() - 1, static_cast<std::size_t>(std::ceil(pct * mins.size())) - 0);
    return mins[std::min(k, mins.size() - 1)];
}

}  // namespace detail_metrics

// Symmetric (max-min) Hausdorff distance between boundary point sets, in
// spacing units. Conventions: both masks empty -> 0; exactly one empty ->
// the image diagonal.
inline double hausdorff(const BinaryMask& pred, const BinaryMask& gt, bool hd95 = false) {
    if (pred.shape != gt.shape) throw std::invalid_argument("samora: hausdorff shape mismatch");
    const bool pe = pred.count() == 0, ge = gt.count() == 0;
    if (pe && ge) return 0.0;
    if (pe || ge) return pred.diagonal();
    auto bp = detail_metrics::boundary_points(pred);
    auto bg = detail_metrics::boundary_points(gt);
    if (hd95) {
        const double p = 0.95;
        return std::max(detail_metrics::directed_percentile(bp, bg, p), detail_metrics::directed_percentile(bg, bp, p));
    }
    return std::max(detail_metrics::directed_max_min(bp, bg), detail_metrics::directed_max_min(bg, bp));
}

// Eq. 10 right: mean over volumes of the symmetric Hausdorff distance.
inline double avg_hausdorff(const std::vector<std::pair<BinaryMask, BinaryMask>>& volumes, bool hd95 = false) {
    if (volumes.empty()) throw std::invalid_argument("samora: avg_hausdorff needs at least one volume");
    double s = 0.0;
    for (const auto& [pred, gt] : volumes) s += hausdorff(pred, gt, hd95);
    return s / static_cast<double>(volumes.size());
}

// ---------------------------------------------------------------------------
// volume-level evaluation protocol

struct VolumeGroup {
    int case_id = 0;
    std::vector<int> slice_indices;      // strictly increasing, no gaps
    std::vector<MaskRaster> pred_slices;
    std::vector<MaskRaster> gt_slices;
};

// Stacks each test case's slices into a 3D volume. Refuses duplicated or
// missing slices (the volume protocol needs complete cases).
inline std::vector<VolumeGroup> group_volumes(const std::vector<SegSample>& test_set,
                                              const std::vector<MaskRaster>& predictions) {
    if (test_set.size() != predictions.size())
        throw std::invalid_argument("samora: prediction count does not match test set");
    std::map<int, std::vector<std::size_t>> by_case;
    for (std::size_t i = 0; i < test_set.size(); ++i) by_case[test_set[i].case_id].push_back(i);
    std::vector<VolumeGroup> groups;
    for (auto& [cid, idxs] : by_case) {
        std::sort(idxs.begin(), idxs.end(),
                  [&](std::size_t a, std::size_t b) { return test_set[a].slice_index < test_set[b].slice_index; });
        VolumeGroup g;
        g.case_id = cid;
        for (std::size_t i : idxs) {
            if (!g.slice_indices.empty()) {
                if (test_set[i].slice_index == g.slice_indices.back())
                    throw std::invalid_argument("samora: duplicate slice in case " + std::to_string(cid));
                if (test_set[i].slice_index != g.slice_indices.back() + 1)
                    throw std::invalid_argument("samora: missing slice in case " + std::to_string(cid) +
                                                " (volume protocol violation)");
            }
            g.slice_indices.push_back(test_set[i].slice_index);
            g.pred_slices.push_back(predictions[i]);
            g.gt_slices.push_back(test_set[i].mask);
        }
        groups.push_back(std::move(g));
    }
    return groups;
}

struct MetricsReport {
    int num_classes = 0;  // foreground
    std::vector<double> dice_pct;  // per class
    std::vector<double> hd;        // per class
    double mean_dice_pct = 0.0;
    double mean_hd = 0.0;
    struct VolumeRow {
        int case_id;
        std::vector<double> dice_pct;
        std::vector<double> hd;
    };
    std::vector<VolumeRow> volumes;
    std::uint64_t seed = 0;
    std::string config_hash;
    bool hd95 = false;

    std::string to_csv() const {
        std::ostringstream os;
        os << "row,case_id,class,dice_pct,hd\n";
        for (const auto& v : volumes)
            for (int c = 0; c < num_classes; ++c)
                os << "volume," << v.case_id << "," << c + 1 << "," << v.dice_pct[static_cast<std::size_t>(c)] << ","
                   << v.hd[static_cast<std::size_t>(c)] << "\n";
        for (int c = 0; c < num_classes; ++c)
            os << "class,," << c + 1 << "," << dice_pct[static_cast<std::size_t>(c)] << ","
               << hd[static_cast<std::size_t>(c)] << "\n";
        os << "summary,,mean," << mean_dice_pct << "," << mean_hd << "\n";
        return os.str();
    }

    std::string to_text() const {
        std::ostringstream os;
        os << "volume-level evaluation (" << volumes.size() << " cases, " << num_classes << " classes, "
           << (hd95 ? "HD95" : "max Hausdorff") << ")\n";
        for (int c = 0; c < num_classes; ++c)
            os << "  class " << c + 1 << ": dice " << dice_pct[static_cast<std::size_t>(c)] << "%  hd "
               << hd[static_cast<std::size_t>(c)] << "\n";
        os << "  mean dice " << mean_dice_pct << "%  mean hd " << mean_hd << "\n";
        os << "  seed " << seed << "  config " << config_hash << "\n";
        return os.str();
    }
};

// Per-class Dice/HD on stacked 3D masks per case, averaged over cases then
// classes, mirroring the per-organ-columns-plus-mean table layout.
inline MetricsReport evaluate_volume_groups(const std::vector<VolumeGroup>& groups, int num_classes,
                                            std::array<double, 3> spacing = {1.0, 1.0, 1.0}, bool hd95 = false) {
    if (groups.empty()) throw std::invalid_argument("samora: no volumes to evaluate");
    MetricsReport rep;
    rep.num_classes = num_classes;
    rep.hd95 = hd95;
    std::vector<double> dice_acc(static_cast<std::size_t>(num_classes), 0.0);
    std::vector<double> hd_acc(static_cast<std::size_t>(num_classes), 0.0);
    for (const auto& g : groups) {
        const int D = static_cast<int>(g.pred_slices.size());
        const int H = g.pred_slices[0].h, W = g.pred_slices[0].w;
        std::vector<std::uint8_t> pred(static_cast<std::size_t>(D) * H * W), gt(pred.size());
        for (int d = 0; d < D; ++d) {
            if (g.pred_slices[static_cast<std::size_t>(d)].h != H || g.gt_slices[static_cast<std::size_t>(d)].h != H)
                throw std::invalid_argument("samora: inconsistent slice shapes in case " + std::to_string(g.case_id));
            std::copy(g.pred_slices[static_cast<std::size_t>(d)].v.begin(),
                      g.pred_slices[static_cast<std::size_t>(d)].v.end(),
                      pred.begin() + static_cast<std::size_t>(d) * H * W);
            std::copy(g.gt_slices[static_cast<std::size_t>(d)].v.begin(),
                      g.gt_slices[static_cast<std::size_t>(d)].v.end(), gt.begin() + static_cast<std::size_t>(d) * H * W);
        }
        MetricsReport::VolumeRow row;
        row.case_id = g.case_id;
        for (int c = 1; c <= num_classes; ++c) {
            auto pm = BinaryMask::from_labels({D, H, W}, pred, c);
            auto gm = BinaryMask::from_labels({D, H, W}, gt, c);
            pm.spacing = spacing;
            gm.spacing = spacing;
            const double dc = dice(pm, gm) * 100.0;
            const double hc = hausdorff(pm, gm, hd95);
            row.dice_pct.push_back(dc);
            row.hd.push_back(hc);
            dice_acc[static_cast<std::size_t>(c - 1)] += dc;
            hd_acc[static_cast<std::size_t>(c - 1)] += hc;
        }
        rep.volumes.push_back(std::move(row));
    }
    for (int c = 0; c < num_classes; ++c) {
        rep.dice_pct.push_back(dice_acc[static_cast<std::size_t>(c)] / static_cast<double>(groups.size()));
        rep.hd.push_back(hd_acc[static_cast<std::size_t>(c)] / static_cast<double>(groups.size()));
    }
    rep.mean_dice_pct = std::accumulate(rep.dice_pct.begin(), rep.dice_pct.end(), 0.0) / num_classes;
    rep.mean_hd = std::accumulate(rep.hd.begin(), rep.hd.end(), 0.0) / num_classes;
    return rep;
}

// ---------------------------------------------------------------------------
// paired t-test (two-sided, with 95% CI of the mean difference)

namespace detail_metrics {

// Regularized incomplete beta via Lentz's continued fraction.
inline double betacf(double a, double b, double x) {
    const double eps = 3e-14, fpmin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

inline double betai(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                               b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail_metrics

inline double student_t_cdf(double t, double dof) {
    const double ib = detail_metrics::betai(dof / 2.0, 0.5, dof / (dof + t * t));
    return t >= 0.0 ? 1.0 - 0.5 * ib : 0.5 * ib;
}

inline double student_t_quantile(double p, double dof) {
    double lo = 0.0, hi = 1.0;
    while (student_t_cdf(hi, dof) < p) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (student_t_cdf(mid, dof) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

struct PairedTTest {
    int n = 0;
    double mean_diff = 0.0;
    double t = 0.0;
    double p = 1.0;
    double ci_lo = 0.0, ci_hi = 0.0;
    bool degenerate = false;
};

inline PairedTTest paired_t_test(const std::vector<double>& scores_a, const std::vector<double>& scores_b) {
    if (scores_a.size() != scores_b.size()) throw std::invalid_argument("samora: paired t-test needs equal lengths");
    const int n = static_cast<int>(scores_a.size());
    if (n < 2) throw std::invalid_argument("samora: paired t-test needs n >= 2");
    PairedTTest r;
    r.n = n;
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += scores_a[static_cast<std::size_t>(i)] - scores_b[static_cast<std::size_t>(i)];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = scores_a[static_cast<std::size_t>(i)] - scores_b[static_cast<std::size_t>(i)] - mean;
        var += d * d;
    }
    var /= (n - 1);
    r.mean_diff = mean;
    if (var == 0.0) {
        r.degenerate = true;
        r.p = mean != 0.0 ? 0.0 : 1.0;
        r.t = mean != 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
        r.ci_lo = r.ci_hi = mean;
        return r;
    }
    const double se = std::sqrt(var / n);
    r.t = mean / se;
    const double dof = n - 1;
    r.p = 2.0 * (1.0 - student_t_cdf(std::abs(r.t), dof));
    const double tq = student_t_quantile(0.975, dof);
    r.ci_lo = mean - tq * se;
    r.ci_hi = mean + tq * se;
    return r;
}

}  // namespace samora
