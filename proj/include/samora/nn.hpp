#pragma once

#include <string>
#include <utility>
#include <vector>

#include "samora/tensor.hpp"

namespace samora {

template <class T>
struct Param {
    std::string name;
    TensorT<T> tensor;
};

template <class T>
using ParamList = std::vector<Param<T>>;

template <class T>
void freeze_all(ParamList<T>& params) {
    for (auto& p : params) p.tensor.set_requires_grad(false);
}

// 64-bit fingerprint over raw parameter bytes; order follows the list.
template <class T>
std::uint64_t param_fingerprint(const ParamList<T>& params) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& p : params) {
        h = fnv1a(p.name, h);
        h = fnv1a(p.tensor.data().data(), p.tensor.data().size() * sizeof(T), h);
    }
    return h;
}

template <class T>
struct Linear {
    TensorT<T> w;  // [in, out]
    TensorT<T> b;  // [out]
    bool has_bias = true;

    static Linear create(int in, int out, Rng& rng, T wstd = T(0.02), bool bias = true) {
        Linear l;
        l.w = TensorT<T>::trunc_normal({in, out}, rng, wstd).set_requires_grad();
        l.b = TensorT<T>::zeros({out}).set_requires_grad();
        l.has_bias = bias;
        return l;
    }

    static Linear zeros(int in, int out, bool bias = true) {
        Linear l;
        l.w = TensorT<T>::zeros({in, out}).set_requires_grad();
        l.b = TensorT<T>::zeros({out}).set_requires_grad();
        l.has_bias = bias;
        return l;
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        const int in = w.dim(0);
        Shape xs = x.shape();
        const int rows = static_cast<int>(x.numel() / static_cast<std::size_t>(in));
        auto y = matmul(reshape(x, {rows, in}), w);
        if (has_bias) y = add_rowvec(y, b);
        Shape out_shape(xs.begin(), xs.end() - 1);
        out_shape.push_back(w.dim(1));
        return reshape(y, out_shape);
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".w", w});
        if (has_bias) out.push_back({prefix + ".b", b});
    }
};

template <class T>
struct LayerNorm {
    TensorT<T> gamma;
    TensorT<T> beta;
    T eps = T(1e-6);

    static LayerNorm create(int dim, T eps = T(1e-6)) {
        LayerNorm ln;
        ln.gamma = TensorT<T>::full({dim}, T(1)).set_requires_grad();
        ln.beta = TensorT<T>::zeros({dim}).set_requires_grad();
        ln.eps = eps;
        return ln;
    }

    TensorT<T> forward(const TensorT<T>& x) const { return layer_norm(x, gamma, beta, eps); }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

template <class T>
struct Conv2d {
    TensorT<T> w;  // [Cout,Cin,kh,kw]
    TensorT<T> b;  // [Cout]
    int stride = 1;
    int pad = 0;

    static Conv2d create(int cin, int cout, int k, int stride, int pad, Rng& rng) {
        Conv2d c;
        const T wstd = static_cast<T>(std::sqrt(2.0 / (cin * k * k)));
        c.w = TensorT<T>::trunc_normal({cout, cin, k, k}, rng, wstd).set_requires_grad();
        c.b = TensorT<T>::zeros({cout}).set_requires_grad();
        c.stride = stride;
        c.pad = pad;
        return c;
    }

    TensorT<T> forward(const TensorT<T>& x) const { return conv2d(x, w, b, stride, pad); }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".w", w});
        out.push_back({prefix + ".b", b});
    }
};

template <class T>
struct ConvTranspose2d {
    TensorT<T> w;  // [Cin,Cout,kh,kw]
    TensorT<T> b;  // [Cout]
    int stride = 2;

    static ConvTranspose2d create(int cin, int cout, int k, int stride, Rng& rng) {
        ConvTranspose2d c;
        const T wstd = static_cast<T>(std::sqrt(2.0 / (cin * k * k)));
        c.w = TensorT<T>::trunc_normal({cin, cout, k, k}, rng, wstd).set_requires_grad();
        c.b = TensorT<T>::zeros({cout}).set_requires_grad();
        c.stride = stride;
        return c;
    }

    TensorT<T> forward(const TensorT<T>& x) const { return conv_transpose2d(x, w, b, stride); }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".w", w});
        out.push_back({prefix + ".b", b});
    }
};

// Detached copy of one attention map, [heads, Lq, Lk].
template <class T>
struct AttnCapture {
    Shape shape;
    std::vector<T> weights;
};

// Scaled dot-product multi-head attention kernel over already-projected
// features. Returns the head-concatenated context before any output
// projection; `capture`, when given, receives the softmax weights.
template <class T>
TensorT<T> attention_kernel(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v, int heads,
                            AttnCapture<T>* capture = nullptr) {
    if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2) shape_error("attention_kernel", q.shape(), k.shape());
    const int Lq = q.dim(0), d = q.dim(1), Lk = k.dim(0);
    if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != Lk) shape_error("attention_kernel", k.shape(), v.shape());
    if (d % heads != 0) throw std::invalid_argument("samora: head count must divide dim");
    const int dk = d / heads;
    auto qh = permute3(reshape(q, {Lq, heads, dk}), {1, 0, 2});  // [H,Lq,dk]
    auto kh = permute3(reshape(k, {Lk, heads, dk}), {1, 0, 2});
    auto vh = permute3(reshape(v, {Lk, heads, dk}), {1, 0, 2});
    auto scores = scale(matmul3(qh, permute3(kh, {0, 2, 1})), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk))));
    auto attn = softmax_lastdim(scores);  // [H,Lq,Lk]
    if (capture) {
        capture->shape = attn.shape();
        capture->weights = attn.data();
    }
    auto ctx = matmul3(attn, vh);                       // [H,Lq,dk]
    auto merged = permute3(ctx, {1, 0, 2});             // [Lq,H,dk]
    return reshape(merged, {Lq, d});
}

}  // namespace samora
