#pragma once

#include "dpcqa/conv.hpp"
#include "dpcqa/masks.hpp"
#include "dpcqa/model.hpp"

namespace dpcqa {

template <typename T>
struct CellEmbeddings {
    TensorPtr<T> nucleus_tokens;   // [K x D_c], null when K == 0
    TensorPtr<T> membrane_tokens;  // [K x D_c]
    int64_t n_cells = 0;
};

namespace cell_detail {

// Fixed-size masked crop centered on a cell. Selection is data-independent
// so gradients flow straight back to the selected image pixels.
template <typename T>
TensorPtr<T> masked_crop(Tape<T>& tape, const TensorPtr<T>& image,
                         const std::vector<uint8_t>& mask, int64_t img_h, int64_t img_w,
                         int64_t cy, int64_t cx, int64_t size) {
    auto out = detail::alloc_like_shape<T>(Shape{3, size, size}, image->requires_grad);
    int64_t y0 = cy - size / 2, x0 = cx - size / 2;
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x) {
                int64_t sy = y0 + y, sx = x0 + x;
                bool inside = sy >= 0 && sy < img_h && sx >= 0 && sx < img_w &&
                              mask[static_cast<size_t>(sy * img_w + sx)] != 0;
                out->at3(c, y, x) = inside ? image->at3(c, sy, sx) : T(0);
            }
    auto mk = std::make_shared<std::vector<uint8_t>>(mask);
    tape.record(out, {image}, [image, out, mk, img_h, img_w, y0, x0, size] {
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < size; ++y)
                for (int64_t x = 0; x < size; ++x) {
                    int64_t sy = y0 + y, sx = x0 + x;
                    if (sy < 0 || sy >= img_h || sx < 0 || sx >= img_w) continue;
                    if (!(*mk)[static_cast<size_t>(sy * img_w + sx)]) continue;
                    image->grad[static_cast<size_t>((c * img_h + sy) * img_w + sx)] +=
                        out->grad[static_cast<size_t>((c * size + y) * size + x)];
                }
    });
    return out;
}

template <typename T>
TensorPtr<T> encode_one(Tape<T>& tape, const TensorPtr<T>& crop, const CellEncoderParams<T>& e) {
    auto y = relu(tape, conv2d(tape, crop, e.conv1.w, e.conv1.b, 1, 1, 1));
    y = relu(tape, conv2d(tape, y, e.conv2.w, e.conv2.b, 1, 1, 1));
    auto pooled = global_avg_pool(tape, y);
    return linear(tape, e.fc_w, pooled, e.fc_b);
}

}  // namespace cell_detail

// Per-instance masked crops through the nucleus/membrane encoders.
// Token order is the canonical (centroid row, col) instance order.
template <typename T>
CellEmbeddings<T> encode_cells(Tape<T>& tape, const TensorPtr<T>& image, const MaskPair& masks,
                               ModelParams<T>& p, const ModelConfig& cfg) {
    if (image->rank() != 3 || image->shape[0] != 3)
        throw ShapeError("encode_cells expects [3 x H x W]");
    if (image->shape[1] != masks.h || image->shape[2] != masks.w)
        throw ShapeError("encode_cells: mask grid does not match image");
    CellEmbeddings<T> emb;
    emb.n_cells = masks.n_instances;
    if (masks.n_instances == 0) return emb;

    std::vector<InstanceInfo> order = instance_geometry(masks);
    std::vector<TensorPtr<T>> nuc_toks, mem_toks;
    for (const InstanceInfo& info : order) {
        int64_t cy = static_cast<int64_t>(std::llround(info.cy));
        int64_t cx = static_cast<int64_t>(std::llround(info.cx));
        std::vector<uint8_t> nuc_mask(masks.labels.size(), 0);
        for (size_t i = 0; i < masks.labels.size(); ++i)
            nuc_mask[i] = masks.labels[i] == info.id;
        std::vector<uint8_t> mem_mask = instance_membrane(masks, info.id, cfg.dilation_radius);

        auto nuc_crop = cell_detail::masked_crop(tape, image, nuc_mask, masks.h, masks.w, cy, cx,
                                                 cfg.crop_size);
        auto mem_crop = cell_detail::masked_crop(tape, image, mem_mask, masks.h, masks.w, cy, cx,
                                                 cfg.crop_size);
        nuc_toks.push_back(cell_detail::encode_one(tape, nuc_crop, p.enc_nuc));
        mem_toks.push_back(cell_detail::encode_one(tape, mem_crop, p.enc_mem));
    }
    emb.nucleus_tokens = stack0(tape, nuc_toks);
    emb.membrane_tokens = stack0(tape, mem_toks);
    return emb;
}

// WKV mixing over [membrane ; nucleus] tokens, mean pool, project to D.
// K == 0 falls back to a learned default vector so empty patches still
// score. The ablated variant skips the mixer and just pools.
template <typename T>
TensorPtr<T> aggr_rwkv(Tape<T>& tape, const CellEmbeddings<T>& emb, ModelParams<T>& p,
                       const ModelConfig& cfg, WkvImpl impl = WkvImpl::linear) {
    if (emb.n_cells == 0) return p.default_cell;
    auto seq = concat(tape, {emb.membrane_tokens, emb.nucleus_tokens}, 0);
    check_finite(*seq, "aggr_rwkv input");
    TensorPtr<T> pooled;
    if (cfg.use_aggr_rwkv) {
        pooled = mean_pool(tape, bi_wkv(tape, seq, p.aggr, impl), 0);
    } else {
        pooled = mean_pool(tape, seq, 0);
    }
    return add(tape, vecmat(tape, pooled, p.aggr_out_w), p.aggr_out_b);
}

}  // namespace dpcqa
