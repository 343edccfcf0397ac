#pragma once

#include "samora/data.hpp"
#include "samora/tensor.hpp"

namespace samora {

template <class T>
TensorT<T> tensor_from_raster(const Raster& r) {
    std::vector<T> v(r.v.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(r.v[i]);
    return TensorT<T>::from_data({1, r.h, r.w}, std::move(v));
}

template <class T>
Raster raster_from_tensor(const TensorT<T>& t) {
    if (t.ndim() != 3 || t.dim(0) != 1) shape_error("raster_from_tensor", t.shape(), {1, -1, -1});
    Raster r(t.dim(1), t.dim(2));
    for (std::size_t i = 0; i < r.v.size(); ++i) r.v[i] = static_cast<float>(t.data()[i]);
    return r;
}

inline std::vector<int> labels_from_mask(const MaskRaster& m) {
    std::vector<int> out(m.v.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(m.v[i]);
    return out;
}

}  // namespace samora
