#ifndef SEGLIFE_SYNTH_HPP
#define SEGLIFE_SYNTH_HPP

#include <cstdint>
#include <vector>

#include "seglife/data.hpp"

namespace seglife {

// Labelled 2D phantom: a large "head" ellipse (class 1) containing one blob
// per further structure class, class-dependent mean intensities plus texture.
struct PhantomSpec {
    int height = 64, width = 64;      // divisible by 8
    int num_structures = 3;           // classes = structures + background
    double head_radius_lo = 0.30;     // fractions of min(H,W)
    double head_radius_hi = 0.38;
    double blob_radius_lo = 0.07;
    double blob_radius_hi = 0.12;
    double placement_jitter = 0.05;   // fraction of min(H,W)
    double texture_std = 0.04;
    uint64_t seed = 0;

    int num_classes() const { return num_structures + 1; }
    void validate() const;
};

// Intensity-only scanner/protocol shift:
//   y = clamp(scale * (bias_field .* x)^gamma + offset + noise, 0, inf)
struct DomainTransform {
    int domain = 0;
    double gamma = 1.0;         // > 0
    double scale = 1.0;
    double offset = 0.0;
    double bias_amplitude = 0.0;
    int bias_cells = 4;         // spatial scale of the smooth bias field
    double noise_std = 0.0;
    uint64_t seed = 0;

    void validate() const;
};

std::vector<LabelledSlice> generate_phantoms(const PhantomSpec& spec, int count);

// Labels pass through untouched; only intensities change.
void apply_domain(std::vector<LabelledSlice>& slices, const DomainTransform& t);

} // namespace seglife

#endif
