#pragma once

#include <vector>

#include "openparts/config.hpp"
#include "openparts/eval.hpp"
#include "openparts/rng.hpp"
#include "openparts/routing.hpp"
#include "openparts/tensor.hpp"

namespace openparts::bench {

struct Dataset {
    Tensor2 x;             // n x d
    std::vector<int> y;    // class ids
    int n_old_classes = 0; // ids below this are the labeled ("old") classes
};

// Translation by a fixed vector, an orthogonal rotation, and isotropic
// noise: x' = R x + t + noise * N(0, I). The rotation strength blends the
// pre-orthogonalization matrix between the identity (0) and a full random
// Gaussian (1), so partial strengths misalign coordinates without erasing
// where the clusters were.
struct ShiftSpec {
    Tensor2 rotation;                // d x d, orthogonal
    std::vector<double> translation; // d
    double noise = 0.0;
};

ShiftSpec make_shift(int d, double rotate, double translation_scale, double noise, RngState& rng);
Tensor2 apply_shift(const Tensor2& x, const ShiftSpec& spec, RngState& rng);

struct Generated {
    Tensor2 means;    // C x d
    Dataset source;   // old classes only, unshifted
    Dataset target;   // all classes, shifted
    ShiftSpec shift;
    double sigma_used = 0.0;
    double delta_inter = 0.0;        // from the placed means
    eval::MarginStats achieved;      // measured on the pre-shift target draw
};

// Class means repelled onto a sphere of radius synth_radius, isotropic
// Gaussian clusters. When synth_margin_ratio > 0 the cluster width is set
// so that (mean squared intra distance) / (min centroid gap) hits the
// requested ratio.
Generated generate(const RunConfig& cfg, RngState& rng);

struct SynthesizedSample {
    routing::PatchFeatureSet pfs;
    std::vector<int> part_id;  // latent part per patch
};

// Plants part structure around an embedding: each patch is one of
// synth_parts_true part vectors (x plus a scaled unit offset) plus noise,
// and the attention rows put synth_attn_mass of their weight on the patches
// of the first half of the parts.
SynthesizedSample synthesize_patches(const std::vector<double>& x, const RunConfig& cfg,
                                     RngState& rng);

std::vector<SynthesizedSample> synthesize_all(const Tensor2& x, const RunConfig& cfg,
                                              RngState& rng);

}  // namespace openparts::bench
