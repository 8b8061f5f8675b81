#pragma once

#include <array>
#include <string>
#include <vector>

#include "dpcqa/masks.hpp"
#include "dpcqa/tensor.hpp"

namespace dpcqa {

enum class BlurTarget { global_patch, membrane, nucleus };

// Parametric degradation. The documented severity map:
//   severity = clamp(0.6*min(blur_sigma/3, 1)
//            + 0.25*||stain_shift||/0.5
//            + 0.15*min(noise_sigma/0.1, 1), 0, 1)
// with ||stain_shift|| = sqrt(sum (gain_c - 1)^2 + sum offset_c^2).
// Weights put blur first, mirroring how dominant defocus is among scan
// artefacts.
struct DegradationSpec {
    double blur_sigma = 0;
    std::array<double, 3> stain_gain{1, 1, 1};
    std::array<double, 3> stain_offset{0, 0, 0};
    double noise_sigma = 0;
    BlurTarget target = BlurTarget::global_patch;
};

double stain_shift_norm(const DegradationSpec& d);
double severity(const DegradationSpec& d);

struct SynthPatch {
    std::string patch_id;
    TensorPtr<float> image;  // 3 x H x W in [0,1]
    MaskPair masks;
    double s_star = 1.0;
    std::vector<std::string> artefact_labels;  // sorted subset of {membrane, nucleus, staining}
    int64_t n_cells = 0;
};

// pink eosin background, elliptical purple nuclei with darker membrane
// rims, exact instance masks; requested cells that cannot be placed
// without overlap are dropped (actual count recorded)
SynthPatch generate_clean_patch(uint64_t seed, int64_t h, int64_t w, int64_t n_cells,
                                int64_t dilation_radius = 2);

// degrade a copy; masks are never edited. s_star drops by severity(d),
// clamped to [0,1].
SynthPatch apply_degradation(const SynthPatch& p, const DegradationSpec& d, uint64_t noise_seed);

// separable Gaussian blur, radius ceil(3*sigma), reflect padding
TensorPtr<float> gaussian_blur(const TensorPtr<float>& img, double sigma);

struct SynthConfig {
    uint64_t seed = 0;
    int64_t n = 200;
    int64_t h = 32, w = 32;
    int64_t min_cells = 3, max_cells = 6;
    int64_t dilation_radius = 2;
};

struct SynthItem {
    SynthPatch patch;
    std::string split;  // train / val / test
};

// Degradation severities are stratified over [0,1]; splits are 70/10/20
// by floor arithmetic, disjoint by id.
std::vector<SynthItem> synth_dataset(const SynthConfig& cfg);

// columns: id,split,s_star,labels(semicolon-joined),n_cells
std::string manifest_csv(const std::vector<SynthItem>& items);

}  // namespace dpcqa
