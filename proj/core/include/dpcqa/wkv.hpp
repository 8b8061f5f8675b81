#pragma once

#include <array>
#include <limits>

#include "dpcqa/ops.hpp"

namespace dpcqa {

// Bidirectional WKV mixing. Per token t and channel c:
//
//   wkv_t = ( sum_{i!=t} e^{k_i - w|t-i|} v_i + e^{u + k_t} v_t )
//         / ( sum_{i!=t} e^{k_i - w|t-i|}     + e^{u + k_t}     )
//
// with per-channel decay w >= 0 and self-bonus u. The linear-time path
// evaluates the two-sided sums with forward/backward prefix recurrences;
// every running sum is kept scaled by its running-maximum exponent so no
// intermediate can overflow. Accumulation is in double for both
// precisions. wkv_reference_values is the O(n^2 D) direct sum the kernel
// is validated against.

namespace wkv_detail {

using Acc = double;
constexpr Acc kNegInf = -std::numeric_limits<Acc>::infinity();

// One-directional scan state for self-excluded sums
//   S(x)_t = sum_i e^{s_i - w*dist(t,i)} x_i
// over elements already absorbed. True sums are (s1,s2)*e^m and the
// distance-weighted pair (d1,d2)*e^m. Query before absorbing position t,
// then absorb and decay.
struct DecayScan {
    Acc m = kNegInf;
    Acc s1 = 0, s2 = 0;
    Acc d1 = 0, d2 = 0;

    void reset() {
        m = kNegInf;
        s1 = s2 = d1 = d2 = 0;
    }

    void absorb(Acc score, Acc x1, Acc x2) {
        Acc m2 = std::max(m, score);
        Acc ea = std::exp(m - m2);  // 0 when the state was empty
        Acc eb = std::exp(score - m2);
        d1 = (d1 + s1) * ea + x1 * eb;
        d2 = (d2 + s2) * ea + x2 * eb;
        s1 = s1 * ea + x1 * eb;
        s2 = s2 * ea + x2 * eb;
        m = m2;
    }

    void decay(Acc w) {
        if (m != kNegInf) m -= w;
    }
};

}  // namespace wkv_detail

template <typename T>
void wkv_check_args(const TensorPtr<T>& k, const TensorPtr<T>& v, const TensorPtr<T>& w,
                    const TensorPtr<T>& u) {
    if (k->rank() != 2 || !same_shape(*k, *v)) throw ShapeError("wkv: k and v must be [n x D]");
    int64_t d = k->shape[1];
    if (w->numel() != d || u->numel() != d)
        throw ShapeError("wkv: decay/bonus must be per-channel vectors of length D");
    for (T dv : w->data)
        if (dv < T(0)) throw NumericalError("wkv: decay must be non-negative");
}

// O(n^2 D) direct evaluation, max-stabilized per output element. Oracle
// path; does not participate in autodiff.
template <typename T>
TensorPtr<T> wkv_reference_values(const TensorPtr<T>& k, const TensorPtr<T>& v,
                                  const TensorPtr<T>& w, const TensorPtr<T>& u) {
    using Acc = wkv_detail::Acc;
    wkv_check_args(k, v, w, u);
    int64_t n = k->shape[0], d = k->shape[1];
    auto out = zeros<T>(Shape{n, d});
    for (int64_t c = 0; c < d; ++c) {
        Acc wc = static_cast<Acc>(w->data[static_cast<size_t>(c)]);
        Acc uc = static_cast<Acc>(u->data[static_cast<size_t>(c)]);
        for (int64_t t = 0; t < n; ++t) {
            Acc mx = wkv_detail::kNegInf;
            for (int64_t i = 0; i < n; ++i) {
                Acc e = static_cast<Acc>(k->data[static_cast<size_t>(i * d + c)]);
                e += (i == t) ? uc : -wc * static_cast<Acc>(std::abs(t - i));
                mx = std::max(mx, e);
            }
            Acc num = 0, den = 0;
            for (int64_t i = 0; i < n; ++i) {
                Acc e = static_cast<Acc>(k->data[static_cast<size_t>(i * d + c)]);
                e += (i == t) ? uc : -wc * static_cast<Acc>(std::abs(t - i));
                Acc wt = std::exp(e - mx);
                num += wt * static_cast<Acc>(v->data[static_cast<size_t>(i * d + c)]);
                den += wt;
            }
            out->data[static_cast<size_t>(t * d + c)] = static_cast<T>(num / den);
        }
    }
    check_finite(*out, "wkv_reference");
    return out;
}

// Linear-time forward + backward.
template <typename T>
TensorPtr<T> wkv(Tape<T>& tape, const TensorPtr<T>& k, const TensorPtr<T>& v,
                 const TensorPtr<T>& w, const TensorPtr<T>& u) {
    using Acc = wkv_detail::Acc;
    using wkv_detail::DecayScan;
    using wkv_detail::kNegInf;
    wkv_check_args(k, v, w, u);
    int64_t n = k->shape[0], d = k->shape[1];

    bool rg = k->requires_grad || v->requires_grad || w->requires_grad || u->requires_grad;
    auto out = detail::alloc_like_shape<T>(Shape{n, d}, rg);
    // saved for backward: scaled denominator and its scale exponent per element
    auto zhat = std::make_shared<std::vector<Acc>>(static_cast<size_t>(n * d));
    auto mscale = std::make_shared<std::vector<Acc>>(static_cast<size_t>(n * d));

    std::vector<Acc> suf_m(static_cast<size_t>(n)), suf_sv(static_cast<size_t>(n)),
        suf_s1(static_cast<size_t>(n));
    for (int64_t c = 0; c < d; ++c) {
        Acc wc = static_cast<Acc>(w->data[static_cast<size_t>(c)]);
        Acc uc = static_cast<Acc>(u->data[static_cast<size_t>(c)]);
        auto kat = [&](int64_t t) { return static_cast<Acc>(k->data[static_cast<size_t>(t * d + c)]); };
        auto vat = [&](int64_t t) { return static_cast<Acc>(v->data[static_cast<size_t>(t * d + c)]); };

        DecayScan scan;
        scan.reset();
        for (int64_t t = n - 1; t >= 0; --t) {
            suf_m[static_cast<size_t>(t)] = scan.m;
            suf_sv[static_cast<size_t>(t)] = scan.s1;
            suf_s1[static_cast<size_t>(t)] = scan.s2;
            scan.absorb(kat(t), vat(t), Acc(1));
            scan.decay(wc);
        }
        scan.reset();
        for (int64_t t = 0; t < n; ++t) {
            Acc self_e = uc + kat(t);
            Acc big = std::max(std::max(scan.m, suf_m[static_cast<size_t>(t)]), self_e);
            Acc ep = scan.m == kNegInf ? Acc(0) : std::exp(scan.m - big);
            Acc es = suf_m[static_cast<size_t>(t)] == kNegInf
                         ? Acc(0)
                         : std::exp(suf_m[static_cast<size_t>(t)] - big);
            Acc eself = std::exp(self_e - big);
            Acc num = scan.s1 * ep + suf_sv[static_cast<size_t>(t)] * es + vat(t) * eself;
            Acc den = scan.s2 * ep + suf_s1[static_cast<size_t>(t)] * es + eself;
            out->data[static_cast<size_t>(t * d + c)] = static_cast<T>(num / den);
            (*zhat)[static_cast<size_t>(t * d + c)] = den;
            (*mscale)[static_cast<size_t>(t * d + c)] = big;
            scan.absorb(kat(t), vat(t), Acc(1));
            scan.decay(wc);
        }
    }
    check_finite(*out, "wkv");

    tape.record(out, {k, v, w, u}, [k, v, w, u, out, zhat, mscale, n, d] {
        // Let G_t = g_t / Z_t and H_t = G_t * y_t (true scale). Then
        //   dv_i = e^{k_i} U(G)_i + G_i e^{u+k_i}
        //   dk_i = e^{k_i} (v_i U(G)_i - U(H)_i) + (G_i v_i - H_i) e^{u+k_i}
        //   du   = sum_i (G_i v_i - H_i) e^{u+k_i}
        //   dw   = -sum_i e^{k_i} (v_i Udist(G)_i - Udist(H)_i)
        // where U(P)_i = sum_{t!=i} P_t e^{-w|t-i|} and Udist adds a |t-i|
        // factor; all are the same two-sided decayed sums with source
        // scores -M_t and payloads g_t/Zhat_t, so the backward is O(n D)
        // too.
        using Acc = wkv_detail::Acc;
        using wkv_detail::DecayScan;
        using wkv_detail::kNegInf;
        std::vector<Acc> gs(static_cast<size_t>(n)), hs(static_cast<size_t>(n));
        std::vector<Acc> sm(static_cast<size_t>(n)), sg(static_cast<size_t>(n)),
            sh(static_cast<size_t>(n)), sdg(static_cast<size_t>(n)), sdh(static_cast<size_t>(n));
        for (int64_t c = 0; c < d; ++c) {
            Acc wc = static_cast<Acc>(w->data[static_cast<size_t>(c)]);
            Acc uc = static_cast<Acc>(u->data[static_cast<size_t>(c)]);
            for (int64_t t = 0; t < n; ++t) {
                size_t idx = static_cast<size_t>(t * d + c);
                Acc ghat = static_cast<Acc>(out->grad[idx]) / (*zhat)[idx];
                gs[static_cast<size_t>(t)] = ghat;
                hs[static_cast<size_t>(t)] = ghat * static_cast<Acc>(out->data[idx]);
            }
            DecayScan scan;
            scan.reset();
            for (int64_t t = n - 1; t >= 0; --t) {
                sm[static_cast<size_t>(t)] = scan.m;
                sg[static_cast<size_t>(t)] = scan.s1;
                sh[static_cast<size_t>(t)] = scan.s2;
                sdg[static_cast<size_t>(t)] = scan.d1;
                sdh[static_cast<size_t>(t)] = scan.d2;
                scan.absorb(-(*mscale)[static_cast<size_t>(t * d + c)], gs[static_cast<size_t>(t)],
                            hs[static_cast<size_t>(t)]);
                scan.decay(wc);
            }
            Acc du_c = 0, dw_c = 0;
            scan.reset();
            for (int64_t i = 0; i < n; ++i) {
                size_t idx = static_cast<size_t>(i * d + c);
                Acc ki = static_cast<Acc>(k->data[idx]);
                Acc vi = static_cast<Acc>(v->data[idx]);
                // combine prefix and suffix scaled sums at a shared scale
                Acc mu = std::max(scan.m, sm[static_cast<size_t>(i)]);
                Acc ug = 0, uh = 0, udg = 0, udh = 0;
                if (mu != kNegInf) {
                    Acc ep = scan.m == kNegInf ? Acc(0) : std::exp(scan.m - mu);
                    Acc es = sm[static_cast<size_t>(i)] == kNegInf
                                 ? Acc(0)
                                 : std::exp(sm[static_cast<size_t>(i)] - mu);
                    ug = scan.s1 * ep + sg[static_cast<size_t>(i)] * es;
                    uh = scan.s2 * ep + sh[static_cast<size_t>(i)] * es;
                    udg = scan.d1 * ep + sdg[static_cast<size_t>(i)] * es;
                    udh = scan.d2 * ep + sdh[static_cast<size_t>(i)] * es;
                }
                Acc cross = mu == kNegInf ? Acc(0) : std::exp(ki + mu);
                Acc self = std::exp(uc + ki - (*mscale)[idx]);
                Acc gi = gs[static_cast<size_t>(i)], hi = hs[static_cast<size_t>(i)];
                if (v->requires_grad)
                    v->grad[idx] += static_cast<T>(cross * ug + gi * self);
                if (k->requires_grad)
                    k->grad[idx] += static_cast<T>(cross * (vi * ug - uh) + (gi * vi - hi) * self);
                du_c += (gi * vi - hi) * self;
                dw_c -= cross * (vi * udg - udh);
                scan.absorb(-(*mscale)[idx], gi, hi);
                scan.decay(wc);
            }
            if (u->requires_grad) u->grad[static_cast<size_t>(c)] += static_cast<T>(du_c);
            if (w->requires_grad) w->grad[static_cast<size_t>(c)] += static_cast<T>(dw_c);
        }
    });
    return out;
}

// Full Bi-WKV token-mixing layer: projections, WKV core, receptance gate,
// output projection. The direct implementation swaps in the quadratic
// oracle (forward only).
template <typename T>
struct BiWkvParams {
    TensorPtr<T> w_r, w_k, w_v, w_out;  // [D x D]
    TensorPtr<T> decay_raw;             // [D], pre-softplus
    TensorPtr<T> bonus;                 // [D]
};

enum class WkvImpl { linear, direct };

template <typename T>
TensorPtr<T> bi_wkv(Tape<T>& tape, const TensorPtr<T>& tokens, const BiWkvParams<T>& p,
                    WkvImpl impl = WkvImpl::linear) {
    if (tokens->rank() != 2) throw ShapeError("bi_wkv expects tokens [n x D]");
    if (tokens->shape[0] < 1) throw ShapeError("bi_wkv: need at least one token");
    auto r = matmul(tape, tokens, p.w_r);
    auto kk = matmul(tape, tokens, p.w_k);
    auto vv = matmul(tape, tokens, p.w_v);
    auto decay = softplus(tape, p.decay_raw);
    TensorPtr<T> mixed;
    if (impl == WkvImpl::linear) {
        mixed = wkv(tape, kk, vv, decay, p.bonus);
    } else {
        mixed = wkv_reference_values(kk, vv, decay, p.bonus);
    }
    auto gated = mul(tape, sigmoid(tape, r), mixed);
    return matmul(tape, gated, p.w_out);
}

}  // namespace dpcqa
