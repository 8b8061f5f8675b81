#pragma once

#include "dpcqa/cellular.hpp"
#include "dpcqa/global_stream.hpp"

namespace dpcqa {

// single-query cross attention: the cellular vector attends over global
// tokens; weights are kept for heatmap emission
template <typename T>
struct AttentionOut {
    TensorPtr<T> fused;    // [D]
    TensorPtr<T> weights;  // [N_tok], rows sum to 1
};

template <typename T>
AttentionOut<T> cross_attention(Tape<T>& tape, const TensorPtr<T>& f_cell,
                                const TensorPtr<T>& f_global, ModelParams<T>& p) {
    if (f_global->rank() != 2 || f_global->shape[0] < 1)
        throw ShapeError("cross_attention: need at least one global token");
    int64_t d = f_global->shape[1];
    if (f_cell->numel() != d) throw ShapeError("cross_attention: query width mismatch");
    auto q = vecmat(tape, f_cell, p.w_q);
    auto k = matmul(tape, f_global, p.w_k);
    auto v = matmul(tape, f_global, p.w_v);
    auto scores = scale(tape, matvec(tape, k, q),
                        static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
    AttentionOut<T> out;
    out.weights = softmax(tape, scores, 0);
    out.fused = vecmat(tape, out.weights, v);
    return out;
}

// g = sigmoid(W [a ; b] + bias); output g*a + (1-g)*b, elementwise between
// the two inputs by construction
template <typename T>
TensorPtr<T> gated_fusion(Tape<T>& tape, const TensorPtr<T>& f_fusion,
                          const TensorPtr<T>& f_cell, ModelParams<T>& p) {
    detail::require_same_shape(f_fusion, f_cell, "gated_fusion");
    auto cat = concat(tape, {f_fusion, f_cell}, 0);
    auto g = sigmoid(tape, add(tape, matvec(tape, p.gate_w, cat), p.gate_b));
    auto ones = full<T>(g->shape, T(1));
    auto inv = sub(tape, ones, g);
    return add(tape, mul(tape, g, f_fusion), mul(tape, inv, f_cell));
}

template <typename T>
TensorPtr<T> regress_score(Tape<T>& tape, const TensorPtr<T>& f_fused, ModelParams<T>& p) {
    auto hidden = relu(tape, add(tape, matvec(tape, p.mlp_w1, f_fused), p.mlp_b1));
    return sigmoid(tape, add(tape, matvec(tape, p.mlp_w2, hidden), p.mlp_b2));
}

// scalar head over a pooled token set: sigmoid(w . x + b)
template <typename T>
TensorPtr<T> pooled_head(Tape<T>& tape, const TensorPtr<T>& pooled, const TensorPtr<T>& w,
                         const TensorPtr<T>& b) {
    auto dot = sum(tape, mul(tape, w, pooled));
    return sigmoid(tape, add(tape, dot, b));
}

inline double slide_score(const std::vector<double>& patch_scores) {
    if (patch_scores.empty()) throw ShapeError("slide_score: no patch scores");
    double s = 0;
    for (double v : patch_scores) s += v;
    return s / static_cast<double>(patch_scores.size());
}

struct QualityReport {
    std::string patch_id;
    double s_stain = 0, s_nuc = 0, s_mem = 0;
    bool usable = false;
};

// everything one training/scoring step needs from a single patch
template <typename T>
struct ForwardArtifacts {
    TensorPtr<T> s_stain, s_nuc, s_mem;  // scalars on tape
    TensorPtr<T> f_global, f_cell, f_fused;
    TensorPtr<T> attention;  // null when cross attention is ablated
    TensorPtr<T> stage1;     // global stage-1 features for the reconstruction head
    CellEmbeddings<T> cells;
    int64_t grid_h = 0, grid_w = 0;
};

template <typename T>
ForwardArtifacts<T> model_forward(Tape<T>& tape, const TensorPtr<T>& image, const MaskPair& masks,
                                  ModelParams<T>& p, const ModelConfig& cfg,
                                  WkvImpl impl = WkvImpl::linear) {
    ForwardArtifacts<T> art;
    GlobalOut<T> glob = global_forward(tape, image, p, cfg, impl);
    art.f_global = glob.f_global;
    art.stage1 = glob.stage1;
    art.grid_h = glob.grid_h;
    art.grid_w = glob.grid_w;

    art.cells = encode_cells(tape, image, masks, p, cfg);
    art.f_cell = aggr_rwkv(tape, art.cells, p, cfg, impl);

    TensorPtr<T> fusion_vec;
    if (cfg.use_cross_attention) {
        AttentionOut<T> att = cross_attention(tape, art.f_cell, art.f_global, p);
        fusion_vec = att.fused;
        art.attention = att.weights;
    } else {
        fusion_vec = mean_pool(tape, art.f_global, 0);
    }
    art.f_fused = gated_fusion(tape, fusion_vec, art.f_cell, p);
    art.s_stain = regress_score(tape, art.f_fused, p);

    TensorPtr<T> pooled_nuc, pooled_mem;
    if (art.cells.n_cells > 0) {
        pooled_nuc = mean_pool(tape, art.cells.nucleus_tokens, 0);
        pooled_mem = mean_pool(tape, art.cells.membrane_tokens, 0);
    } else {
        pooled_nuc = zeros<T>(Shape{cfg.cell_dim});
        pooled_mem = zeros<T>(Shape{cfg.cell_dim});
    }
    art.s_nuc = pooled_head(tape, pooled_nuc, p.head_nuc_w, p.head_nuc_b);
    art.s_mem = pooled_head(tape, pooled_mem, p.head_mem_w, p.head_mem_b);
    return art;
}

template <typename T>
QualityReport make_report(const std::string& patch_id, const ForwardArtifacts<T>& art,
                          double threshold) {
    QualityReport r;
    r.patch_id = patch_id;
    r.s_stain = static_cast<double>(art.s_stain->data[0]);
    r.s_nuc = static_cast<double>(art.s_nuc->data[0]);
    r.s_mem = static_cast<double>(art.s_mem->data[0]);
    r.usable = r.s_stain >= threshold;
    return r;
}

}  // namespace dpcqa
