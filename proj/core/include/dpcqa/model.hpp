#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dpcqa/rng.hpp"
#include "dpcqa/wkv.hpp"

namespace dpcqa {

struct ModelConfig {
    int64_t stem_channels = 16;
    int64_t hidden_dim = 256;  // D
    int64_t cell_dim = 64;     // D_c
    int64_t mlp_hidden = 128;
    int64_t crop_size = 24;
    int64_t dilation_radius = 2;
    double threshold = 0.5;
    bool use_wcg = true;
    bool use_aggr_rwkv = true;
    bool use_cross_attention = true;

    void validate() const {
        if (stem_channels < 1 || hidden_dim < 1 || cell_dim < 1 || mlp_hidden < 1)
            throw ShapeError("model config: dimensions must be positive");
        if (hidden_dim % 4 != 0)
            throw ShapeError("model config: hidden_dim must be divisible by 4 (shift groups)");
        if (cell_dim % 4 != 0)
            throw ShapeError("model config: cell_dim must be divisible by 4");
        if (crop_size < 4) throw ShapeError("model config: crop_size too small");
        if (dilation_radius < 1) throw ShapeError("model config: dilation_radius must be >= 1");
        if (threshold < 0 || threshold > 1)
            throw ShapeError("model config: threshold must lie in [0,1]");
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["stem_channels"] = stem_channels;
        j["hidden_dim"] = hidden_dim;
        j["cell_dim"] = cell_dim;
        j["mlp_hidden"] = mlp_hidden;
        j["crop_size"] = crop_size;
        j["dilation_radius"] = dilation_radius;
        j["threshold"] = threshold;
        j["use_wcg"] = use_wcg;
        j["use_aggr_rwkv"] = use_aggr_rwkv;
        j["use_cross_attention"] = use_cross_attention;
        return j;
    }

    static ModelConfig from_json(const nlohmann::ordered_json& j) {
        ModelConfig c;
        c.stem_channels = j.value("stem_channels", c.stem_channels);
        c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
        c.cell_dim = j.value("cell_dim", c.cell_dim);
        c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
        c.crop_size = j.value("crop_size", c.crop_size);
        c.dilation_radius = j.value("dilation_radius", c.dilation_radius);
        c.threshold = j.value("threshold", c.threshold);
        c.use_wcg = j.value("use_wcg", c.use_wcg);
        c.use_aggr_rwkv = j.value("use_aggr_rwkv", c.use_aggr_rwkv);
        c.use_cross_attention = j.value("use_cross_attention", c.use_cross_attention);
        c.validate();
        return c;
    }
};

template <typename T>
struct ConvParam {
    TensorPtr<T> w, b;
};

// one wavelet-convolution group: depthwise + pointwise per sub-band
template <typename T>
struct WcgParams {
    ConvParam<T> dw[4];  // band order ll, lh, hl, hh; [C x 1 x 3 x 3]
    ConvParam<T> pw[4];  // [C x C x 1 x 1]
};

template <typename T>
struct AffmParams {
    ConvParam<T> s1_a, s1_b;  // full-resolution branch, 1x3 then 3x1
    ConvParam<T> s2_a, s2_b;  // half-resolution branch
    ConvParam<T> proj;        // 1x1, C -> D
};

template <typename T>
struct CellEncoderParams {
    ConvParam<T> conv1;   // 8 x 3 x 3 x 3
    ConvParam<T> conv2;   // 16 x 8 x 3 x 3
    TensorPtr<T> fc_w;    // [D_c x 16]
    TensorPtr<T> fc_b;    // [D_c]
};

template <typename T>
struct ModelParams {
    // global stream
    ConvParam<T> stem;  // C x 3 x 3 x 3, pad 1
    WcgParams<T> wcg1, wcg2;
    AffmParams<T> affm;
    BiWkvParams<T> mix;   // token mixer at width D
    ConvParam<T> recon;   // 1x1 C -> 3, reconstruction head for the wavelet loss
    // cellular stream
    CellEncoderParams<T> enc_nuc, enc_mem;
    BiWkvParams<T> aggr;       // aggregation mixer at width D_c
    TensorPtr<T> aggr_out_w;   // [D_c x D]
    TensorPtr<T> aggr_out_b;   // [D]
    TensorPtr<T> default_cell; // [D], used when a patch has no cells
    // fusion and heads
    TensorPtr<T> w_q, w_k, w_v;  // [D x D]
    TensorPtr<T> gate_w;         // [D x 2D]
    TensorPtr<T> gate_b;         // [D]
    TensorPtr<T> mlp_w1;         // [mlp_hidden x D]
    TensorPtr<T> mlp_b1;
    TensorPtr<T> mlp_w2;  // [1 x mlp_hidden]
    TensorPtr<T> mlp_b2;
    TensorPtr<T> head_nuc_w, head_nuc_b;  // [D_c], [1]
    TensorPtr<T> head_mem_w, head_mem_b;
};

namespace model_detail {

template <typename T>
void add_biwkv(std::vector<std::pair<std::string, TensorPtr<T>&>>& out, const std::string& prefix,
               BiWkvParams<T>& p) {
    out.push_back({prefix + ".w_r", p.w_r});
    out.push_back({prefix + ".w_k", p.w_k});
    out.push_back({prefix + ".w_v", p.w_v});
    out.push_back({prefix + ".w_out", p.w_out});
    out.push_back({prefix + ".decay_raw", p.decay_raw});
    out.push_back({prefix + ".bonus", p.bonus});
}

template <typename T>
void add_conv(std::vector<std::pair<std::string, TensorPtr<T>&>>& out, const std::string& prefix,
              ConvParam<T>& p) {
    out.push_back({prefix + ".w", p.w});
    out.push_back({prefix + ".b", p.b});
}

template <typename T>
void add_encoder(std::vector<std::pair<std::string, TensorPtr<T>&>>& out,
                 const std::string& prefix, CellEncoderParams<T>& p) {
    add_conv(out, prefix + ".conv1", p.conv1);
    add_conv(out, prefix + ".conv2", p.conv2);
    out.push_back({prefix + ".fc_w", p.fc_w});
    out.push_back({prefix + ".fc_b", p.fc_b});
}

}  // namespace model_detail

// Stable name -> slot enumeration. Checkpoint layout, the optimizer
// parameter list, and initialization all walk this same order.
template <typename T>
std::vector<std::pair<std::string, TensorPtr<T>&>> param_slots(ModelParams<T>& p) {
    using model_detail::add_biwkv;
    using model_detail::add_conv;
    using model_detail::add_encoder;
    static const char* band[4] = {"ll", "lh", "hl", "hh"};
    std::vector<std::pair<std::string, TensorPtr<T>&>> out;
    add_conv(out, "global.stem", p.stem);
    for (int s = 0; s < 2; ++s) {
        WcgParams<T>& w = s == 0 ? p.wcg1 : p.wcg2;
        std::string prefix = "global.wcg" + std::to_string(s + 1);
        for (int b = 0; b < 4; ++b) add_conv(out, prefix + ".dw_" + band[b], w.dw[b]);
        for (int b = 0; b < 4; ++b) add_conv(out, prefix + ".pw_" + band[b], w.pw[b]);
    }
    add_conv(out, "global.affm.s1_a", p.affm.s1_a);
    add_conv(out, "global.affm.s1_b", p.affm.s1_b);
    add_conv(out, "global.affm.s2_a", p.affm.s2_a);
    add_conv(out, "global.affm.s2_b", p.affm.s2_b);
    add_conv(out, "global.affm.proj", p.affm.proj);
    add_biwkv(out, "global.mix", p.mix);
    add_conv(out, "global.recon", p.recon);
    add_encoder(out, "cell.enc_nuc", p.enc_nuc);
    add_encoder(out, "cell.enc_mem", p.enc_mem);
    add_biwkv(out, "cell.aggr", p.aggr);
    out.push_back({"cell.aggr_out_w", p.aggr_out_w});
    out.push_back({"cell.aggr_out_b", p.aggr_out_b});
    out.push_back({"cell.default", p.default_cell});
    out.push_back({"fusion.w_q", p.w_q});
    out.push_back({"fusion.w_k", p.w_k});
    out.push_back({"fusion.w_v", p.w_v});
    out.push_back({"fusion.gate_w", p.gate_w});
    out.push_back({"fusion.gate_b", p.gate_b});
    out.push_back({"head.mlp_w1", p.mlp_w1});
    out.push_back({"head.mlp_b1", p.mlp_b1});
    out.push_back({"head.mlp_w2", p.mlp_w2});
    out.push_back({"head.mlp_b2", p.mlp_b2});
    out.push_back({"head.nuc_w", p.head_nuc_w});
    out.push_back({"head.nuc_b", p.head_nuc_b});
    out.push_back({"head.mem_w", p.head_mem_w});
    out.push_back({"head.mem_b", p.head_mem_b});
    return out;
}

template <typename T>
std::vector<TensorPtr<T>> param_list(ModelParams<T>& p) {
    std::vector<TensorPtr<T>> out;
    for (auto& [name, slot] : param_slots(p)) out.push_back(slot);
    return out;
}

// Allocate every parameter at its configured shape, zero-filled.
template <typename T>
ModelParams<T> make_params(const ModelConfig& cfg) {
    cfg.validate();
    int64_t c = cfg.stem_channels, d = cfg.hidden_dim, dc = cfg.cell_dim, mh = cfg.mlp_hidden;
    ModelParams<T> p;
    auto conv = [](int64_t co, int64_t ci, int64_t kh, int64_t kw) {
        return ConvParam<T>{param_tensor<T>(Shape{co, ci, kh, kw}), param_tensor<T>(Shape{co})};
    };
    auto mat = [](int64_t rows, int64_t cols) { return param_tensor<T>(Shape{rows, cols}); };
    auto biwkv = [&](int64_t dim) {
        BiWkvParams<T> b;
        b.w_r = mat(dim, dim);
        b.w_k = mat(dim, dim);
        b.w_v = mat(dim, dim);
        b.w_out = mat(dim, dim);
        b.decay_raw = param_tensor<T>(Shape{dim});
        b.bonus = param_tensor<T>(Shape{dim});
        return b;
    };

    p.stem = conv(c, 3, 3, 3);
    for (auto* w : {&p.wcg1, &p.wcg2})
        for (int b = 0; b < 4; ++b) {
            w->dw[b] = conv(c, 1, 3, 3);  // depthwise: groups == C
            w->pw[b] = conv(c, c, 1, 1);
        }
    p.affm.s1_a = conv(c, c, 1, 3);
    p.affm.s1_b = conv(c, c, 3, 1);
    p.affm.s2_a = conv(c, c, 1, 3);
    p.affm.s2_b = conv(c, c, 3, 1);
    p.affm.proj = conv(d, c, 1, 1);
    p.mix = biwkv(d);
    p.recon = conv(3, c, 1, 1);

    for (auto* e : {&p.enc_nuc, &p.enc_mem}) {
        e->conv1 = conv(8, 3, 3, 3);
        e->conv2 = conv(16, 8, 3, 3);
        e->fc_w = mat(dc, 16);
        e->fc_b = param_tensor<T>(Shape{dc});
    }
    p.aggr = biwkv(dc);
    p.aggr_out_w = mat(dc, d);
    p.aggr_out_b = param_tensor<T>(Shape{d});
    p.default_cell = param_tensor<T>(Shape{d});

    p.w_q = mat(d, d);
    p.w_k = mat(d, d);
    p.w_v = mat(d, d);
    p.gate_w = mat(d, 2 * d);
    p.gate_b = param_tensor<T>(Shape{d});
    p.mlp_w1 = mat(mh, d);
    p.mlp_b1 = param_tensor<T>(Shape{mh});
    p.mlp_w2 = mat(1, mh);
    p.mlp_b2 = param_tensor<T>(Shape{1});
    p.head_nuc_w = param_tensor<T>(Shape{dc});
    p.head_nuc_b = param_tensor<T>(Shape{1});
    p.head_mem_w = param_tensor<T>(Shape{dc});
    p.head_mem_b = param_tensor<T>(Shape{1});
    return p;
}

// uniform(-s, s) with s = 1/sqrt(fan_in) for weights; biases zero; decay
// starts at 0.5 pre-softplus and the self-bonus at zero
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, uint64_t seed) {
    ModelParams<T> p = make_params<T>(cfg);
    Rng rng(sub_seed(seed, "init"));
    for (auto& [name, slot] : param_slots(p)) {
        const Shape& s = slot->shape;
        int64_t fan_in = 0;
        if (name.ends_with("decay_raw")) {
            std::fill(slot->data.begin(), slot->data.end(), T(0.5));
            continue;
        }
        if (name == "head.nuc_w" || name == "head.mem_w") {
            fan_in = s[0];  // rank-1 dot-product weights
        } else if (s.size() == 1) {
            std::fill(slot->data.begin(), slot->data.end(), T(0));
            continue;
        } else if (s.size() == 4) {
            fan_in = s[1] * s[2] * s[3];  // conv [out x in x kh x kw]
        } else {
            // matrices: fan_in is the contracted side; aggr_out_w is the
            // only non-square right-multiplied matrix
            fan_in = name == "cell.aggr_out_w" ? s[0] : s[1];
        }
        double sc = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : slot->data) v = static_cast<T>(rng.uniform(-sc, sc));
    }
    return p;
}

}  // namespace dpcqa
