#pragma once

#include <stdexcept>
#include <vector>

#include "samora/tensor.hpp"

namespace samora {

// Eq.-1 reconstruction loss, normalized per element so values are
// scale-comparable across the three pretext levels.
template <class T>
TensorT<T> recon_loss(const TensorT<T>& f_out, const TensorT<T>& g_out) {
    if (f_out.shape() != g_out.shape()) shape_error("recon_loss", f_out.shape(), g_out.shape());
    auto d = sub(f_out, g_out);
    return mean_all(mul(d, d));
}

// SimCLR-style normalized temperature cross-entropy. za/zb are the [N,dim]
// embeddings of the two augmented views; row i of za pairs with row i of zb.
template <class T>
TensorT<T> nt_xent_loss(const TensorT<T>& za, const TensorT<T>& zb, T temperature) {
    if (za.ndim() != 2 || za.shape() != zb.shape()) shape_error("nt_xent_loss", za.shape(), zb.shape());
    const int n = za.dim(0);
    if (n < 2) throw std::invalid_argument("samora: nt_xent_loss needs batch >= 2 (no negatives)");
    if (temperature <= T(0)) throw std::invalid_argument("samora: nt_xent_loss needs temperature > 0");
    auto z = row_l2_normalize(concat0<T>({za, zb}));  // [2n, dim]
    auto sim = scale(matmul(z, transpose2(z)), T(1) / temperature);
    // Self-similarities are excluded from the denominator.
    auto mask = TensorT<T>::zeros({2 * n, 2 * n});
    for (int i = 0; i < 2 * n; ++i) mask.data()[static_cast<std::size_t>(i) * (2 * n + 1)] = T(-1e9);
    auto logits = add(sim, mask);
    std::vector<int> positives(static_cast<std::size_t>(2 * n));
    for (int i = 0; i < n; ++i) {
        positives[static_cast<std::size_t>(i)] = n + i;
        positives[static_cast<std::size_t>(n + i)] = i;
    }
    return ce_rows(logits, positives);
}

// Soft multi-class Dice loss over foreground classes; channel 0 (background)
// is excluded from the average.
template <class T>
TensorT<T> soft_dice_loss(const TensorT<T>& logits, const std::vector<int>& labels, T eps = T(1e-5)) {
    if (logits.ndim() != 3) shape_error("soft_dice_loss", logits.shape(), logits.shape());
    const int C = logits.dim(0);
    const std::size_t hw = static_cast<std::size_t>(logits.dim(1)) * logits.dim(2);
    if (labels.size() != hw) shape_error("soft_dice_loss", logits.shape(), {static_cast<int>(labels.size())});
    for (int v : labels)
        if (v < 0 || v >= C) throw std::out_of_range("samora: soft_dice_loss label out of range");
    // softmax over the class axis via a [HW, C] view
    auto probs_hw_c = softmax_lastdim(transpose2(reshape(logits, {C, static_cast<int>(hw)})));  // [HW, C]
    auto probs = transpose2(probs_hw_c);                                                        // [C, HW]
    TensorT<T> acc = TensorT<T>::scalar(T(0));
    for (int c = 1; c < C; ++c) {
        auto onehot = TensorT<T>::zeros({1, static_cast<int>(hw)});
        T qsum = T(0);
        for (std::size_t p = 0; p < hw; ++p)
            if (labels[p] == c) {
                onehot.data()[p] = T(1);
                qsum += T(1);
            }
        auto pc = slice0(probs, c, 1);  // [1, HW]
        auto inter = sum_all(mul(pc, onehot));
        auto psum = sum_all(pc);
        auto num = add_const(scale(inter, T(2)), eps);
        auto den = add_const(add(psum, TensorT<T>::scalar(qsum)), eps);
        acc = add(acc, div(num, den));
    }
    const T nfg = static_cast<T>(C - 1);
    return add_const(scale(acc, T(-1) / nfg), T(1));
}

// Eq. 9: lambda_ce * CE + lambda_dice * Dice.
template <class T>
struct CombinedLossParts {
    TensorT<T> ce;
    TensorT<T> dice;
    TensorT<T> total;
};

template <class T>
CombinedLossParts<T> combined_loss(const TensorT<T>& logits, const std::vector<int>& labels, T lambda_ce,
                                   T lambda_dice) {
    CombinedLossParts<T> parts;
    parts.ce = ce_pixels(logits, labels);
    parts.dice = soft_dice_loss(logits, labels);
    parts.total = add(scale(parts.ce, lambda_ce), scale(parts.dice, lambda_dice));
    return parts;
}

}  // namespace samora
