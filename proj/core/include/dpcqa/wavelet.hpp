#pragma once

#include "dpcqa/ops.hpp"

namespace dpcqa {

// One level of 2-d orthonormal Haar analysis. Per 2x2 block (a b; c d):
//   LL=(a+b+c+d)/2  LH=(a+b-c-d)/2  HL=(a-b+c-d)/2  HH=(a-b-c+d)/2
// The kernel matrix is symmetric and orthogonal, so synthesis applies the
// same signs. Odd inputs are edge-padded by one row/column; the original
// size is recorded so idwt2 crops back exactly.
template <typename T>
struct SubBands {
    TensorPtr<T> ll, lh, hl, hh;
    int64_t orig_h = 0, orig_w = 0;

    const TensorPtr<T>& band(int i) const {
        switch (i) {
            case 0: return ll;
            case 1: return lh;
            case 2: return hl;
            default: return hh;
        }
    }
    TensorPtr<T>& band(int i) {
        return const_cast<TensorPtr<T>&>(static_cast<const SubBands&>(*this).band(i));
    }
};

namespace detail {

// sign of band b at block position (dy, dx); pos = 2*dy + dx
inline int haar_sign(int band, int pos) {
    static const int s[4][4] = {
        {1, 1, 1, 1},
        {1, 1, -1, -1},
        {1, -1, 1, -1},
        {1, -1, -1, 1},
    };
    return s[band][pos];
}

}  // namespace detail

template <typename T>
SubBands<T> dwt2(Tape<T>& tape, const TensorPtr<T>& x) {
    if (x->rank() != 3) throw ShapeError("dwt2 expects [C x H x W]");
    int64_t c = x->shape[0], h = x->shape[1], w = x->shape[2];
    if (c == 0 || h == 0 || w == 0) throw ShapeError("dwt2 on empty tensor");
    int64_t hp = h + (h % 2), wp = w + (w % 2);
    int64_t bh = hp / 2, bw = wp / 2;

    SubBands<T> bands;
    bands.orig_h = h;
    bands.orig_w = w;
    std::array<TensorPtr<T>, 4> outs;
    for (int b = 0; b < 4; ++b) {
        outs[b] = detail::alloc_like_shape<T>(Shape{c, bh, bw}, x->requires_grad);
    }
    auto clampi = [](int64_t i, int64_t n) { return i < n ? i : n - 1; };
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t by = 0; by < bh; ++by)
            for (int64_t bx = 0; bx < bw; ++bx) {
                T v[4];
                for (int pos = 0; pos < 4; ++pos) {
                    int64_t iy = clampi(2 * by + pos / 2, h);
                    int64_t ix = clampi(2 * bx + pos % 2, w);
                    v[pos] = x->at3(ch, iy, ix);
                }
                for (int b = 0; b < 4; ++b) {
                    T acc(0);
                    for (int pos = 0; pos < 4; ++pos)
                        acc += static_cast<T>(detail::haar_sign(b, pos)) * v[pos];
                    outs[b]->at3(ch, by, bx) = acc * T(0.5);
                }
            }
    for (int b = 0; b < 4; ++b) {
        check_finite(*outs[b], "dwt2");
        // each band is an independent linear function of x
        auto band = outs[b];
        tape.record(band, {x}, [x, band, b, c, bh, bw, h, w, clampi] {
            if (!x->requires_grad) return;
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t by = 0; by < bh; ++by)
                    for (int64_t bx = 0; bx < bw; ++bx) {
                        T g = band->grad[static_cast<size_t>((ch * bh + by) * bw + bx)] * T(0.5);
                        for (int pos = 0; pos < 4; ++pos) {
                            int64_t iy = clampi(2 * by + pos / 2, h);
                            int64_t ix = clampi(2 * bx + pos % 2, w);
                            x->grad[static_cast<size_t>((ch * h + iy) * w + ix)] +=
                                static_cast<T>(detail::haar_sign(b, pos)) * g;
                        }
                    }
        });
    }
    bands.ll = outs[0];
    bands.lh = outs[1];
    bands.hl = outs[2];
    bands.hh = outs[3];
    return bands;
}

template <typename T>
TensorPtr<T> idwt2(Tape<T>& tape, const SubBands<T>& bands) {
    const auto& ll = bands.ll;
    if (!ll || ll->rank() != 3) throw ShapeError("idwt2 expects [C x Hb x Wb] bands");
    for (int b = 1; b < 4; ++b)
        if (!bands.band(b) || bands.band(b)->shape != ll->shape)
            throw ShapeError("idwt2: band shapes disagree");
    int64_t c = ll->shape[0], bh = ll->shape[1], bw = ll->shape[2];
    int64_t h = bands.orig_h > 0 ? bands.orig_h : 2 * bh;
    int64_t w = bands.orig_w > 0 ? bands.orig_w : 2 * bw;
    if (h > 2 * bh || w > 2 * bw || h < 2 * bh - 1 || w < 2 * bw - 1)
        throw ShapeError("idwt2: recorded original size inconsistent with bands");

    bool rg = false;
    for (int b = 0; b < 4; ++b) rg = rg || bands.band(b)->requires_grad;
    auto out = detail::alloc_like_shape<T>(Shape{c, h, w}, rg);
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t by = 0; by < bh; ++by)
            for (int64_t bx = 0; bx < bw; ++bx) {
                T bv[4];
                for (int b = 0; b < 4; ++b) bv[b] = bands.band(b)->at3(ch, by, bx);
                for (int pos = 0; pos < 4; ++pos) {
                    int64_t iy = 2 * by + pos / 2;
                    int64_t ix = 2 * bx + pos % 2;
                    if (iy >= h || ix >= w) continue;  // padded region, cropped away
                    T acc(0);
                    for (int b = 0; b < 4; ++b)
                        acc += static_cast<T>(detail::haar_sign(b, pos)) * bv[b];
                    out->at3(ch, iy, ix) = acc * T(0.5);
                }
            }
    check_finite(*out, "idwt2");
    std::array<TensorPtr<T>, 4> band_arr{bands.ll, bands.lh, bands.hl, bands.hh};
    tape.record(out, {bands.ll, bands.lh, bands.hl, bands.hh},
                [band_arr, out, c, bh, bw, h, w] {
                    for (int64_t ch = 0; ch < c; ++ch)
                        for (int64_t by = 0; by < bh; ++by)
                            for (int64_t bx = 0; bx < bw; ++bx)
                                for (int pos = 0; pos < 4; ++pos) {
                                    int64_t iy = 2 * by + pos / 2;
                                    int64_t ix = 2 * bx + pos % 2;
                                    if (iy >= h || ix >= w) continue;
                                    T g = out->grad[static_cast<size_t>((ch * h + iy) * w + ix)] *
                                          T(0.5);
                                    for (int b = 0; b < 4; ++b) {
                                        if (!band_arr[b]->requires_grad) continue;
                                        band_arr[b]
                                            ->grad[static_cast<size_t>((ch * bh + by) * bw + bx)] +=
                                            static_cast<T>(detail::haar_sign(b, pos)) * g;
                                    }
                                }
                });
    return out;
}

// Recursive decomposition of the LL band; levels[j] holds level j+1 bands.
template <typename T>
struct WaveletPyramid {
    std::vector<SubBands<T>> levels;
    TensorPtr<T> final_ll;
};

template <typename T>
WaveletPyramid<T> wavelet_pyramid(Tape<T>& tape, const TensorPtr<T>& x, int levels) {
    if (levels < 1) throw ShapeError("wavelet_pyramid: levels must be >= 1");
    int64_t min_side = std::min(x->shape[1], x->shape[2]);
    if (min_side < (int64_t{1} << levels))
        throw ShapeError("wavelet_pyramid: " + std::to_string(levels) +
                         " levels too deep for spatial size " + std::to_string(min_side));
    WaveletPyramid<T> pyr;
    TensorPtr<T> cur = x;
    for (int j = 0; j < levels; ++j) {
        SubBands<T> b = dwt2(tape, cur);
        cur = b.ll;
        pyr.levels.push_back(std::move(b));
    }
    pyr.final_ll = cur;
    return pyr;
}

}  // namespace dpcqa
