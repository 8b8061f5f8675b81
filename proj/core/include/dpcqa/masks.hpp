#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "dpcqa/tensor.hpp"

namespace dpcqa {

// Instance masks for one patch. labels holds cell ids (0 = background,
// ids contiguous 1..K); nuc/mem are the derived binary masks. Membrane =
// dilation of the nuclei minus the nuclear interior, so mem and nuc are
// disjoint by construction.
struct MaskPair {
    int64_t h = 0, w = 0;
    std::vector<uint8_t> labels;
    std::vector<uint8_t> nuc;
    std::vector<uint8_t> mem;
    int64_t n_instances = 0;

    size_t idx(int64_t y, int64_t x) const { return static_cast<size_t>(y * w + x); }
};

// morphological dilation with a (2r+1) x (2r+1) square structuring element
inline std::vector<uint8_t> dilate(const std::vector<uint8_t>& mask, int64_t h, int64_t w,
                                   int64_t radius) {
    if (static_cast<int64_t>(mask.size()) != h * w)
        throw ShapeError("dilate: mask size does not match dimensions");
    if (radius < 1) throw ShapeError("dilate: radius must be >= 1");
    std::vector<uint8_t> out(mask.size(), 0);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            if (!mask[static_cast<size_t>(y * w + x)]) continue;
            int64_t y0 = std::max<int64_t>(0, y - radius), y1 = std::min(h - 1, y + radius);
            int64_t x0 = std::max<int64_t>(0, x - radius), x1 = std::min(w - 1, x + radius);
            for (int64_t yy = y0; yy <= y1; ++yy)
                for (int64_t xx = x0; xx <= x1; ++xx) out[static_cast<size_t>(yy * w + xx)] = 1;
        }
    return out;
}

inline std::vector<uint8_t> derive_membrane_mask(const std::vector<uint8_t>& nuc, int64_t h,
                                                 int64_t w, int64_t radius) {
    std::vector<uint8_t> mem = dilate(nuc, h, w, radius);
    for (size_t i = 0; i < mem.size(); ++i)
        if (nuc[i]) mem[i] = 0;
    return mem;
}

// Build the full pair from an instance label grid. Ids must be contiguous
// 1..K; gaps are an error because downstream token order keys off them.
inline MaskPair make_mask_pair(std::vector<uint8_t> labels, int64_t h, int64_t w,
                               int64_t radius) {
    if (static_cast<int64_t>(labels.size()) != h * w)
        throw ShapeError("make_mask_pair: label grid does not match dimensions");
    MaskPair mp;
    mp.h = h;
    mp.w = w;
    mp.labels = std::move(labels);
    uint8_t maxid = 0;
    for (uint8_t v : mp.labels) maxid = std::max(maxid, v);
    mp.n_instances = maxid;
    std::vector<uint8_t> seen(static_cast<size_t>(maxid) + 1, 0);
    mp.nuc.assign(mp.labels.size(), 0);
    for (size_t i = 0; i < mp.labels.size(); ++i) {
        seen[mp.labels[i]] = 1;
        mp.nuc[i] = mp.labels[i] != 0;
    }
    for (int64_t k = 1; k <= mp.n_instances; ++k)
        if (!seen[static_cast<size_t>(k)])
            throw ShapeError("make_mask_pair: instance ids not contiguous, missing id " +
                             std::to_string(k));
    mp.mem = mp.n_instances > 0 ? derive_membrane_mask(mp.nuc, h, w, radius)
                                : std::vector<uint8_t>(mp.labels.size(), 0);
    return mp;
}

struct InstanceInfo {
    int64_t id = 0;
    double cy = 0, cx = 0;  // centroid
    int64_t area = 0;
};

// instance geometry sorted by (centroid row, centroid col): the canonical
// token order for the aggregation recurrence
inline std::vector<InstanceInfo> instance_geometry(const MaskPair& mp) {
    std::vector<InstanceInfo> infos(static_cast<size_t>(mp.n_instances));
    for (int64_t k = 0; k < mp.n_instances; ++k) infos[static_cast<size_t>(k)].id = k + 1;
    for (int64_t y = 0; y < mp.h; ++y)
        for (int64_t x = 0; x < mp.w; ++x) {
            uint8_t id = mp.labels[mp.idx(y, x)];
            if (!id) continue;
            auto& in = infos[static_cast<size_t>(id - 1)];
            in.cy += static_cast<double>(y);
            in.cx += static_cast<double>(x);
            in.area += 1;
        }
    for (auto& in : infos) {
        if (in.area == 0) throw ShapeError("instance_geometry: empty instance id " +
                                           std::to_string(in.id));
        in.cy /= static_cast<double>(in.area);
        in.cx /= static_cast<double>(in.area);
    }
    std::stable_sort(infos.begin(), infos.end(), [](const InstanceInfo& a, const InstanceInfo& b) {
        if (a.cy != b.cy) return a.cy < b.cy;
        if (a.cx != b.cx) return a.cx < b.cx;
        return a.id < b.id;
    });
    return infos;
}

// binary mask of one instance's membrane ring: dilate that instance's
// pixels, subtract every nuclear pixel in the patch
inline std::vector<uint8_t> instance_membrane(const MaskPair& mp, int64_t id, int64_t radius) {
    std::vector<uint8_t> single(mp.labels.size(), 0);
    for (size_t i = 0; i < mp.labels.size(); ++i) single[i] = mp.labels[i] == id;
    std::vector<uint8_t> ring = dilate(single, mp.h, mp.w, radius);
    for (size_t i = 0; i < ring.size(); ++i)
        if (mp.nuc[i]) ring[i] = 0;
    return ring;
}

}  // namespace dpcqa
