#ifndef SEGLIFE_PREPROC_HPP
#define SEGLIFE_PREPROC_HPP

#include <vector>

#include "seglife/errors.hpp"

namespace seglife {

// Linear-interpolation percentile between order statistics.
double percentile(const std::vector<double>& values, double q);

// Divide a volume's intensities by its 98th percentile. Values above it
// come out > 1, which is fine.
void percentile_normalize(std::vector<double>& volume);

// Empirical CDF over fixed-width bins, the reference side of histogram
// matching.
struct ReferenceCdf {
    double lo = 0.0, hi = 1.0;
    std::vector<double> cdf; // cumulative mass per bin, last entry 1

    double bin_width() const { return (hi - lo) / static_cast<double>(cdf.size()); }
    // Intensity at cumulative mass q (inverse CDF).
    double quantile(double q) const;
};

ReferenceCdf build_reference_cdf(const std::vector<const std::vector<double>*>& images,
                                 int bins = 256);

// Monotone remap of source intensities so their empirical CDF approximates
// the reference's.
std::vector<double> histogram_match(const std::vector<double>& source, const ReferenceCdf& ref,
                                    int bins = 256);

} // namespace seglife

#endif
