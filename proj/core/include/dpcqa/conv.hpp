#pragma once

#include "dpcqa/ops.hpp"

namespace dpcqa {

// 2-d cross-correlation over [C_in x H x W] with zero padding.
// Weights are [C_out x C_in/groups x kh x kw]; depthwise when
// groups == C_in, pointwise when kh == kw == 1 and groups == 1.
// Output size H' = (H + 2p - kh) / stride + 1.
template <typename T>
TensorPtr<T> conv2d(Tape<T>& tape, const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const TensorPtr<T>& bias, int64_t stride = 1, int64_t pad_h = 0,
                    int64_t pad_w = -1, int64_t groups = 1) {
    if (pad_w < 0) pad_w = pad_h;
    if (x->rank() != 3 || w->rank() != 4) throw ShapeError("conv2d expects x[CxHxW], w[OxIxKhxKw]");
    int64_t cin = x->shape[0], h = x->shape[1], wd = x->shape[2];
    int64_t cout = w->shape[0], cin_g = w->shape[1], kh = w->shape[2], kw = w->shape[3];
    if (groups < 1 || cin % groups != 0 || cout % groups != 0)
        throw ShapeError("conv2d: channels not divisible by groups");
    if (cin / groups != cin_g)
        throw ShapeError("conv2d: weight input channels " + std::to_string(cin_g) +
                         " != C_in/groups " + std::to_string(cin / groups));
    if (bias && bias->numel() != cout) throw ShapeError("conv2d: bias length must equal C_out");
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    int64_t oh = (h + 2 * pad_h - kh) / stride + 1;
    int64_t ow = (wd + 2 * pad_w - kw) / stride + 1;
    if (kh > h + 2 * pad_h || kw > wd + 2 * pad_w || oh < 1 || ow < 1)
        throw ShapeError("conv2d: kernel larger than padded input");

    bool rg = x->requires_grad || w->requires_grad || (bias && bias->requires_grad);
    auto out = detail::alloc_like_shape<T>(Shape{cout, oh, ow}, rg);
    int64_t ocpg = cout / groups;  // output channels per group

    for (int64_t oc = 0; oc < cout; ++oc) {
        int64_t g = oc / ocpg;
        T bv = bias ? bias->data[static_cast<size_t>(oc)] : T(0);
        for (int64_t oy = 0; oy < oh; ++oy)
            for (int64_t ox = 0; ox < ow; ++ox) {
                T acc = bv;
                for (int64_t ic = 0; ic < cin_g; ++ic) {
                    int64_t xc = g * cin_g + ic;
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        int64_t iy = oy * stride - pad_h + ky;
                        if (iy < 0 || iy >= h) continue;
                        const T* xrow = x->data.data() + (xc * h + iy) * wd;
                        const T* wrow = w->data.data() + ((oc * cin_g + ic) * kh + ky) * kw;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            int64_t ix = ox * stride - pad_w + kx;
                            if (ix < 0 || ix >= wd) continue;
                            acc += xrow[ix] * wrow[kx];
                        }
                    }
                }
                out->data[static_cast<size_t>((oc * oh + oy) * ow + ox)] = acc;
            }
    }
    check_finite(*out, "conv2d");

    std::vector<TensorPtr<T>> inputs{x, w};
    if (bias) inputs.push_back(bias);
    tape.record(out, inputs,
                [x, w, bias, out, cin_g, ocpg, cout, oh, ow, h, wd, kh, kw, stride, pad_h, pad_w] {
                    for (int64_t oc = 0; oc < cout; ++oc) {
                        int64_t g = oc / ocpg;
                        for (int64_t oy = 0; oy < oh; ++oy)
                            for (int64_t ox = 0; ox < ow; ++ox) {
                                T go = out->grad[static_cast<size_t>((oc * oh + oy) * ow + ox)];
                                if (go == T(0)) continue;
                                if (bias && bias->requires_grad)
                                    bias->grad[static_cast<size_t>(oc)] += go;
                                for (int64_t ic = 0; ic < cin_g; ++ic) {
                                    int64_t xc = g * cin_g + ic;
                                    for (int64_t ky = 0; ky < kh; ++ky) {
                                        int64_t iy = oy * stride - pad_h + ky;
                                        if (iy < 0 || iy >= h) continue;
                                        for (int64_t kx = 0; kx < kw; ++kx) {
                                            int64_t ix = ox * stride - pad_w + kx;
                                            if (ix < 0 || ix >= wd) continue;
                                            size_t xi = static_cast<size_t>((xc * h + iy) * wd + ix);
                                            size_t wi = static_cast<size_t>(
                                                ((oc * cin_g + ic) * kh + ky) * kw + kx);
                                            if (w->requires_grad) w->grad[wi] += go * x->data[xi];
                                            if (x->requires_grad) x->grad[xi] += go * w->data[wi];
                                        }
                                    }
                                }
                            }
                    }
                });
    return out;
}

// 2x2 average pooling with stride 2; requires even spatial dims.
template <typename T>
TensorPtr<T> avg_pool2(Tape<T>& tape, const TensorPtr<T>& x) {
    if (x->rank() != 3) throw ShapeError("avg_pool2 expects [C x H x W]");
    int64_t c = x->shape[0], h = x->shape[1], w = x->shape[2];
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("avg_pool2: H and W must be even");
    int64_t oh = h / 2, ow = w / 2;
    auto out = detail::alloc_like_shape<T>(Shape{c, oh, ow}, x->requires_grad);
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t oy = 0; oy < oh; ++oy)
            for (int64_t ox = 0; ox < ow; ++ox) {
                T s = x->at3(ch, 2 * oy, 2 * ox) + x->at3(ch, 2 * oy, 2 * ox + 1) +
                      x->at3(ch, 2 * oy + 1, 2 * ox) + x->at3(ch, 2 * oy + 1, 2 * ox + 1);
                out->at3(ch, oy, ox) = s * T(0.25);
            }
    tape.record(out, {x}, [x, out, c, oh, ow] {
        if (!x->requires_grad) return;
        int64_t h = x->shape[1], w = x->shape[2];
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t oy = 0; oy < oh; ++oy)
                for (int64_t ox = 0; ox < ow; ++ox) {
                    T g = out->grad[static_cast<size_t>((ch * oh + oy) * ow + ox)] * T(0.25);
                    x->grad[static_cast<size_t>((ch * h + 2 * oy) * w + 2 * ox)] += g;
                    x->grad[static_cast<size_t>((ch * h + 2 * oy) * w + 2 * ox + 1)] += g;
                    x->grad[static_cast<size_t>((ch * h + 2 * oy + 1) * w + 2 * ox)] += g;
                    x->grad[static_cast<size_t>((ch * h + 2 * oy + 1) * w + 2 * ox + 1)] += g;
                }
    });
    return out;
}

// Nearest-neighbour 2x upsampling.
template <typename T>
TensorPtr<T> upsample_nearest2(Tape<T>& tape, const TensorPtr<T>& x) {
    if (x->rank() != 3) throw ShapeError("upsample_nearest2 expects [C x H x W]");
    int64_t c = x->shape[0], h = x->shape[1], w = x->shape[2];
    auto out = detail::alloc_like_shape<T>(Shape{c, 2 * h, 2 * w}, x->requires_grad);
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < 2 * h; ++y)
            for (int64_t xx = 0; xx < 2 * w; ++xx)
                out->at3(ch, y, xx) = x->at3(ch, y / 2, xx / 2);
    tape.record(out, {x}, [x, out, c, h, w] {
        if (!x->requires_grad) return;
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t y = 0; y < 2 * h; ++y)
                for (int64_t xx = 0; xx < 2 * w; ++xx)
                    x->grad[static_cast<size_t>((ch * h + y / 2) * w + xx / 2)] +=
                        out->grad[static_cast<size_t>((ch * 2 * h + y) * 2 * w + xx)];
    });
    return out;
}

}  // namespace dpcqa
