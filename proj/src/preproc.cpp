#include "seglife/preproc.hpp"

#include <algorithm>
#include <cmath>

namespace seglife {

double percentile(const std::vector<double>& values, double q) {
    if (values.empty()) throw ParamError("percentile of empty set");
    std::vector<double> s = values;
    std::sort(s.begin(), s.end());
    const double rank = (static_cast<double>(s.size()) - 1.0) * q / 100.0;
    const size_t lo = static_cast<size_t>(std::floor(rank));
    const size_t hi = std::min(lo + 1, s.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return s[lo] + frac * (s[hi] - s[lo]);
}

void percentile_normalize(std::vector<double>& volume) {
    const double p98 = percentile(volume, 98.0);
    if (p98 <= 0.0) throw ParamError("percentile_normalize: 98th percentile is zero (all-zero volume?)");
    for (double& v : volume) v /= p98;
}

double ReferenceCdf::quantile(double q) const {
    q = std::clamp(q, 0.0, 1.0);
    const double bw = bin_width();
    double prev = 0.0;
    for (size_t b = 0; b < cdf.size(); ++b) {
        if (cdf[b] >= q) {
            const double span = cdf[b] - prev;
            const double frac = span > 0 ? (q - prev) / span : 1.0;
            return lo + (static_cast<double>(b) + frac) * bw;
        }
        prev = cdf[b];
    }
    return hi;
}

ReferenceCdf build_reference_cdf(const std::vector<const std::vector<double>*>& images, int bins) {
    if (images.empty()) throw ParamError("reference CDF needs at least one image");
    if (bins < 2) throw ParamError("reference CDF needs >= 2 bins");
    double lo = 0.0, hi = 0.0;
    bool first = true;
    long total = 0;
    for (const auto* img : images) {
        for (double v : *img) {
            if (first) {
                lo = hi = v;
                first = false;
            }
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        total += static_cast<long>(img->size());
    }
    if (total == 0) throw ParamError("reference CDF built from empty images");
    if (hi <= lo) hi = lo + 1.0; // degenerate constant reference

    ReferenceCdf ref;
    ref.lo = lo;
    ref.hi = hi;
    std::vector<long> hist(static_cast<size_t>(bins), 0);
    const double bw = (hi - lo) / bins;
    for (const auto* img : images)
        for (double v : *img) {
            int b = static_cast<int>((v - lo) / bw);
            b = std::clamp(b, 0, bins - 1);
            ++hist[static_cast<size_t>(b)];
        }
    ref.cdf.resize(static_cast<size_t>(bins));
    double acc = 0.0;
    for (int b = 0; b < bins; ++b) {
        acc += static_cast<double>(hist[static_cast<size_t>(b)]) / static_cast<double>(total);
        ref.cdf[static_cast<size_t>(b)] = acc;
    }
    ref.cdf.back() = 1.0;
    return ref;
}

std::vector<double> histogram_match(const std::vector<double>& source, const ReferenceCdf& ref,
                                    int bins) {
    if (ref.cdf.empty()) throw ParamError("histogram_match: empty reference CDF");
    if (source.empty()) return {};
    const std::vector<const std::vector<double>*> self = {&source};
    const ReferenceCdf src = build_reference_cdf(self, bins);
    const double sbw = src.bin_width();

    auto source_cdf_at = [&](double x) {
        double pos = (x - src.lo) / sbw;
        pos = std::clamp(pos, 0.0, static_cast<double>(bins));
        int b = std::min(static_cast<int>(pos), bins - 1);
        const double frac = pos - b;
        const double c0 = b > 0 ? src.cdf[static_cast<size_t>(b) - 1] : 0.0;
        return std::clamp(c0 + frac * (src.cdf[static_cast<size_t>(b)] - c0), 0.0, 1.0);
    };

    std::vector<double> out(source.size());
    for (size_t i = 0; i < source.size(); ++i) out[i] = ref.quantile(source_cdf_at(source[i]));
    return out;
}

} // namespace seglife
