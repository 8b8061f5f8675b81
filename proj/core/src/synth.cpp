#include "dpcqa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dpcqa/rng.hpp"

namespace dpcqa {

double stain_shift_norm(const DegradationSpec& d) {
    double s = 0;
    for (int c = 0; c < 3; ++c) {
        s += (d.stain_gain[static_cast<size_t>(c)] - 1.0) *
             (d.stain_gain[static_cast<size_t>(c)] - 1.0);
        s += d.stain_offset[static_cast<size_t>(c)] * d.stain_offset[static_cast<size_t>(c)];
    }
    return std::sqrt(s);
}

double severity(const DegradationSpec& d) {
    double s = 0.6 * std::min(d.blur_sigma / 3.0, 1.0);
    s += 0.25 * stain_shift_norm(d) / 0.5;
    s += 0.15 * std::min(d.noise_sigma / 0.1, 1.0);
    return std::clamp(s, 0.0, 1.0);
}

namespace {

struct Ellipse {
    double cy, cx, ry, rx;
};

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

SynthPatch generate_clean_patch(uint64_t seed, int64_t h, int64_t w, int64_t n_cells,
                                int64_t dilation_radius) {
    if (h < 32 || w < 32) throw ShapeError("generate_clean_patch: patch must be at least 32x32");
    if (n_cells < 0) throw ShapeError("generate_clean_patch: negative cell count");
    if (n_cells > 255) throw ShapeError("generate_clean_patch: more than 255 cells unsupported");
    Rng rng(seed);

    // eosin-pink background with a little texture so blur is measurable
    std::array<double, 3> bg{0.93, 0.80, 0.87};
    for (auto& c : bg) c += rng.uniform(-0.03, 0.03);
    auto image = zeros<float>(Shape{3, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                image->at3(c, y, x) =
                    clamp01(bg[static_cast<size_t>(c)] + rng.uniform(-0.02, 0.02));

    // place non-overlapping ellipses with bounded retries
    std::vector<Ellipse> cells;
    int64_t attempts_left = 60 * std::max<int64_t>(n_cells, 1);
    while (static_cast<int64_t>(cells.size()) < n_cells && attempts_left-- > 0) {
        Ellipse e;
        e.ry = rng.uniform(2.2, 3.6);
        e.rx = rng.uniform(2.2, 3.6);
        double margin = std::max(e.ry, e.rx) + static_cast<double>(dilation_radius);
        e.cy = rng.uniform(margin, static_cast<double>(h) - 1.0 - margin);
        e.cx = rng.uniform(margin, static_cast<double>(w) - 1.0 - margin);
        bool ok = true;
        for (const auto& o : cells) {
            double dy = e.cy - o.cy, dx = e.cx - o.cx;
            double min_sep = std::max(e.ry, e.rx) + std::max(o.ry, o.rx) + 1.5;
            if (dy * dy + dx * dx < min_sep * min_sep) {
                ok = false;
                break;
            }
        }
        if (ok) cells.push_back(e);
    }

    std::vector<uint8_t> labels(static_cast<size_t>(h * w), 0);
    for (size_t k = 0; k < cells.size(); ++k) {
        const Ellipse& e = cells[k];
        std::array<double, 3> nc{0.36 + rng.uniform(-0.05, 0.05), 0.25 + rng.uniform(-0.04, 0.04),
                                 0.56 + rng.uniform(-0.05, 0.05)};
        int64_t y0 = static_cast<int64_t>(std::floor(e.cy - e.ry)),
                y1 = static_cast<int64_t>(std::ceil(e.cy + e.ry));
        int64_t x0 = static_cast<int64_t>(std::floor(e.cx - e.rx)),
                x1 = static_cast<int64_t>(std::ceil(e.cx + e.rx));
        for (int64_t y = y0; y <= y1; ++y)
            for (int64_t x = x0; x <= x1; ++x) {
                double ny = (static_cast<double>(y) - e.cy) / e.ry;
                double nx = (static_cast<double>(x) - e.cx) / e.rx;
                double q = ny * ny + nx * nx;
                if (q > 1.0) continue;
                labels[static_cast<size_t>(y * w + x)] = static_cast<uint8_t>(k + 1);
                for (int64_t c = 0; c < 3; ++c)
                    image->at3(c, y, x) =
                        clamp01(nc[static_cast<size_t>(c)] * (0.78 + 0.3 * q));
            }
    }

    SynthPatch p;
    p.image = image;
    p.masks = make_mask_pair(std::move(labels), h, w, dilation_radius);
    p.n_cells = p.masks.n_instances;
    p.s_star = 1.0;

    // darker rim exactly on the derived membrane band, so the visual
    // structure and the mask agree
    std::array<double, 3> rim{0.58, 0.45, 0.66};
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            if (!p.masks.mem[p.masks.idx(y, x)]) continue;
            for (int64_t c = 0; c < 3; ++c)
                image->at3(c, y, x) = clamp01(0.35 * image->at3(c, y, x) +
                                              0.65 * rim[static_cast<size_t>(c)] +
                                              rng.uniform(-0.015, 0.015));
        }
    return p;
}

TensorPtr<float> gaussian_blur(const TensorPtr<float>& img, double sigma) {
    if (img->rank() != 3) throw ShapeError("gaussian_blur expects [C x H x W]");
    if (sigma <= 0) return make_tensor<float>(img->shape, img->data);
    int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double norm = 0;
    for (int64_t i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        kernel[static_cast<size_t>(i + radius)] = v;
        norm += v;
    }
    for (auto& v : kernel) v /= norm;

    int64_t ch = img->shape[0], h = img->shape[1], w = img->shape[2];
    auto reflect = [](int64_t i, int64_t n) {
        // reflect about the edge samples: -1 -> 1, n -> n-2
        while (i < 0 || i >= n) {
            if (i < 0) i = -i;
            if (i >= n) i = 2 * n - 2 - i;
        }
        return i;
    };
    auto tmp = zeros<float>(img->shape);
    auto out = zeros<float>(img->shape);
    for (int64_t c = 0; c < ch; ++c) {
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double acc = 0;
                for (int64_t i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<size_t>(i + radius)] *
                           static_cast<double>(img->at3(c, y, reflect(x + i, w)));
                tmp->at3(c, y, x) = static_cast<float>(acc);
            }
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double acc = 0;
                for (int64_t i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<size_t>(i + radius)] *
                           static_cast<double>(tmp->at3(c, reflect(y + i, h), x));
                out->at3(c, y, x) = static_cast<float>(acc);
            }
    }
    return out;
}

SynthPatch apply_degradation(const SynthPatch& p, const DegradationSpec& d, uint64_t noise_seed) {
    SynthPatch out = p;
    out.image = make_tensor<float>(p.image->shape, p.image->data);
    int64_t h = p.masks.h, w = p.masks.w;

    if (d.blur_sigma > 0) {
        auto blurred = gaussian_blur(out.image, d.blur_sigma);
        if (d.target == BlurTarget::global_patch) {
            out.image = blurred;
        } else {
            const auto& base =
                d.target == BlurTarget::membrane ? p.masks.mem : p.masks.nuc;
            std::vector<uint8_t> region = dilate(base, h, w, 2);
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    if (!region[static_cast<size_t>(y * w + x)]) continue;
                    for (int64_t c = 0; c < 3; ++c)
                        out.image->at3(c, y, x) = blurred->at3(c, y, x);
                }
        }
    }

    bool stained = false;
    if (stain_shift_norm(d) > 0) {
        stained = true;
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x)
                    out.image->at3(c, y, x) = clamp01(
                        d.stain_gain[static_cast<size_t>(c)] *
                            static_cast<double>(out.image->at3(c, y, x)) +
                        d.stain_offset[static_cast<size_t>(c)]);
    }
    if (d.noise_sigma > 0) {
        stained = true;
        Rng rng(noise_seed);
        for (auto& v : out.image->data)
            v = clamp01(static_cast<double>(v) + d.noise_sigma * rng.normal());
    }

    auto add_label = [&out](const char* name) {
        for (const auto& l : out.artefact_labels)
            if (l == name) return;
        out.artefact_labels.push_back(name);
    };
    if (stained) add_label("staining");
    if (d.blur_sigma > 0) {
        if (d.target == BlurTarget::membrane) add_label("membrane");
        else if (d.target == BlurTarget::nucleus) add_label("nucleus");
        else {
            add_label("membrane");
            add_label("nucleus");
        }
    }
    std::sort(out.artefact_labels.begin(), out.artefact_labels.end());
    out.s_star = std::clamp(out.s_star - severity(d), 0.0, 1.0);
    return out;
}

std::vector<SynthItem> synth_dataset(const SynthConfig& cfg) {
    if (cfg.n < 10) throw ShapeError("synth_dataset: need n >= 10");
    Rng layout_rng(sub_seed(cfg.seed, "synth.layout"));
    std::vector<int64_t> strata = layout_rng.permutation(cfg.n);

    std::vector<SynthItem> items;
    items.reserve(static_cast<size_t>(cfg.n));
    int64_t n_train = cfg.n * 7 / 10;
    int64_t n_val = cfg.n / 10;

    for (int64_t i = 0; i < cfg.n; ++i) {
        Rng rng(sub_seed(cfg.seed, "synth.patch", static_cast<uint64_t>(i)));
        int64_t cells = rng.uniform_int(cfg.min_cells, cfg.max_cells);
        SynthPatch clean = generate_clean_patch(sub_seed(cfg.seed, "synth.render",
                                                         static_cast<uint64_t>(i)),
                                                cfg.h, cfg.w, cells, cfg.dilation_radius);

        // stratified severity target, then split it across the three
        // degradation budgets (caps 0.6 blur / 0.25 stain / 0.15 noise).
        // Masked blur only dims a small footprint, so targeted patches get a
        // reduced blur share and lean on stain/noise; high-severity patches
        // are always globally degraded.
        double u = (static_cast<double>(strata[static_cast<size_t>(i)]) + rng.uniform()) /
                   static_cast<double>(cfg.n);
        double wb = rng.uniform(), ws = rng.uniform(), wn = rng.uniform();
        int64_t tgt = rng.uniform_int(0, 2);
        if (clean.n_cells == 0 || u > 0.55) tgt = 0;
        double cap_b = tgt == 0 ? 0.6 : 0.2;
        double wsum = wb + ws + wn;
        double pb = std::min(cap_b, u * wb / wsum);
        double ps = std::min(0.25, u * ws / wsum);
        double pn = std::min(0.15, u * wn / wsum);
        double leftover = u - pb - ps - pn;
        auto pour = [&leftover](double& p, double cap) {
            double room = std::min(leftover, cap - p);
            p += room;
            leftover -= room;
        };
        if (tgt == 0) {
            pour(pb, cap_b);
            pour(ps, 0.25);
            pour(pn, 0.15);
        } else {
            pour(ps, 0.25);
            pour(pn, 0.15);
            pour(pb, cap_b);
        }

        DegradationSpec spec;
        spec.blur_sigma = 5.0 * pb;
        spec.noise_sigma = (0.1 / 0.15) * pn;
        if (ps > 0) {
            std::array<double, 6> dir{};
            double norm = 0;
            for (auto& v : dir) {
                v = rng.normal();
                norm += v * v;
            }
            norm = std::sqrt(std::max(norm, 1e-12));
            double mag = 2.0 * ps;
            for (int c = 0; c < 3; ++c) {
                spec.stain_gain[static_cast<size_t>(c)] =
                    1.0 + mag * dir[static_cast<size_t>(c)] / norm;
                spec.stain_offset[static_cast<size_t>(c)] =
                    mag * dir[static_cast<size_t>(c + 3)] / norm;
            }
        }
        spec.target = tgt == 0   ? BlurTarget::global_patch
                      : tgt == 1 ? BlurTarget::membrane
                                 : BlurTarget::nucleus;

        SynthItem item;
        item.patch = apply_degradation(
            clean, spec, sub_seed(cfg.seed, "synth.noise", static_cast<uint64_t>(i)));
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "p%04d", static_cast<int>(i));
        item.patch.patch_id = idbuf;
        item.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
        items.push_back(std::move(item));
    }
    return items;
}

std::string manifest_csv(const std::vector<SynthItem>& items) {
    std::string out = "id,split,s_star,labels,n_cells\n";
    char buf[64];
    for (const auto& it : items) {
        std::string labels;
        for (size_t i = 0; i < it.patch.artefact_labels.size(); ++i) {
            if (i) labels += ";";
            labels += it.patch.artefact_labels[i];
        }
        std::snprintf(buf, sizeof(buf), "%.6f", it.patch.s_star);
        out += it.patch.patch_id + "," + it.split + "," + buf + "," + labels + "," +
               std::to_string(it.patch.n_cells) + "\n";
    }
    return out;
}

}  // namespace dpcqa
