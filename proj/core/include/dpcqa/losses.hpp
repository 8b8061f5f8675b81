#pragma once

#include "dpcqa/fusion.hpp"

namespace dpcqa {

struct LossWeights {
    double lambda1 = 0.5;  // pairwise difference term
    double lambda2 = 0.1;  // wavelet fidelity term
    double lambda3 = 0.5;  // aggregation consistency term
};

// |s - s*| averaged over the batch
template <typename T>
TensorPtr<T> loss_reg(Tape<T>& tape, const std::vector<TensorPtr<T>>& scores,
                      const std::vector<double>& targets) {
    if (scores.empty() || scores.size() != targets.size())
        throw ShapeError("loss_reg: scores/targets mismatch");
    std::vector<TensorPtr<T>> terms;
    for (size_t i = 0; i < scores.size(); ++i) {
        auto t = scalar_tensor<T>(static_cast<T>(targets[i]));
        terms.push_back(abs_val(tape, sub(tape, scores[i], t)));
    }
    return scale(tape, add_all(tape, terms), T(1.0 / static_cast<double>(terms.size())));
}

// Pairwise score-difference supervision. Pairs are (2m, 2m+1) positions of
// a seeded permutation; an odd batch drops its last element. Mean over
// pairs of | |t_i - t_j| - |s_i - s_j| |.
template <typename T>
TensorPtr<T> loss_diff(Tape<T>& tape, const std::vector<TensorPtr<T>>& scores,
                       const std::vector<double>& targets, uint64_t pair_seed) {
    if (scores.size() < 2 || scores.size() != targets.size())
        throw ShapeError("loss_diff: need a batch of at least 2");
    Rng rng(pair_seed);
    std::vector<int64_t> perm = rng.permutation(static_cast<int64_t>(scores.size()));
    std::vector<TensorPtr<T>> terms;
    for (size_t m = 0; m + 1 < perm.size(); m += 2) {
        size_t i = static_cast<size_t>(perm[m]), j = static_cast<size_t>(perm[m + 1]);
        auto d = scalar_tensor<T>(static_cast<T>(std::abs(targets[i] - targets[j])));
        auto pd = abs_val(tape, sub(tape, scores[i], scores[j]));
        terms.push_back(abs_val(tape, sub(tape, d, pd)));
    }
    return scale(tape, add_all(tape, terms), T(1.0 / static_cast<double>(terms.size())));
}

// sum over both pyramid levels and orientations (plus the final LL) of
// mean absolute coefficient differences
template <typename T>
TensorPtr<T> loss_wavelet(Tape<T>& tape, const TensorPtr<T>& img, const TensorPtr<T>& recon,
                          int levels = 2) {
    detail::require_same_shape(img, recon, "loss_wavelet");
    WaveletPyramid<T> pa = wavelet_pyramid(tape, img, levels);
    WaveletPyramid<T> pb = wavelet_pyramid(tape, recon, levels);
    std::vector<TensorPtr<T>> terms;
    auto band_term = [&](const TensorPtr<T>& a, const TensorPtr<T>& b) {
        terms.push_back(mean(tape, abs_val(tape, sub(tape, a, b))));
    };
    for (size_t l = 0; l < pa.levels.size(); ++l) {
        band_term(pa.levels[l].lh, pb.levels[l].lh);
        band_term(pa.levels[l].hl, pb.levels[l].hl);
        band_term(pa.levels[l].hh, pb.levels[l].hh);
    }
    band_term(pa.final_ll, pb.final_ll);
    return add_all(tape, terms);
}

// Aggregation-consistency regularizer: the pooled cellular feature should
// not depend on instance order. Compares the canonical order with one
// seeded instance permutation applied to both token blocks.
template <typename T>
TensorPtr<T> loss_aggr(Tape<T>& tape, const CellEmbeddings<T>& emb, ModelParams<T>& p,
                       const ModelConfig& cfg, uint64_t perm_seed,
                       WkvImpl impl = WkvImpl::linear) {
    if (emb.n_cells == 0) return scalar_tensor<T>(T(0));
    Rng rng(perm_seed);
    std::vector<int64_t> perm = rng.permutation(emb.n_cells);
    CellEmbeddings<T> shuffled;
    shuffled.n_cells = emb.n_cells;
    shuffled.membrane_tokens = gather_rows(tape, emb.membrane_tokens, perm);
    shuffled.nucleus_tokens = gather_rows(tape, emb.nucleus_tokens, perm);
    auto a = aggr_rwkv(tape, emb, p, cfg, impl);
    auto b = aggr_rwkv(tape, shuffled, p, cfg, impl);
    return mean(tape, abs_val(tape, sub(tape, a, b)));
}

struct LossBreakdown {
    double total = 0, reg = 0, diff = 0, wavelet = 0, aggr = 0, sub = 0;
};

}  // namespace dpcqa
