#include "seglife/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace seglife {

namespace {

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

double class_mean(int k, int num_classes) {
    if (k == 0) return 0.12;
    if (num_classes <= 2) return 0.7;
    return 0.40 + 0.55 * (k - 1) / static_cast<double>(num_classes - 2);
}

void fill_ellipse(std::vector<uint8_t>& labels, int H, int W, double cy, double cx, double ry,
                  double rx, uint8_t cls) {
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            const double dy = (h - cy) / ry, dx = (w - cx) / rx;
            if (dy * dy + dx * dx <= 1.0) labels[static_cast<size_t>(h) * W + w] = cls;
        }
}

// Smooth field from a coarse Gaussian grid, bilinearly interpolated.
std::vector<double> smooth_field(std::mt19937_64& rng, int H, int W, int cells, double amplitude) {
    const int G = cells + 1;
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> grid(static_cast<size_t>(G) * G);
    for (double& v : grid) v = nd(rng);
    std::vector<double> field(static_cast<size_t>(H) * W);
    for (int h = 0; h < H; ++h) {
        const double gy = (H > 1) ? static_cast<double>(h) / (H - 1) * (G - 1) : 0.0;
        const int y0 = std::min(static_cast<int>(gy), G - 2);
        const double ty = gy - y0;
        for (int w = 0; w < W; ++w) {
            const double gx = (W > 1) ? static_cast<double>(w) / (W - 1) * (G - 1) : 0.0;
            const int x0 = std::min(static_cast<int>(gx), G - 2);
            const double tx = gx - x0;
            const double v00 = grid[static_cast<size_t>(y0) * G + x0];
            const double v01 = grid[static_cast<size_t>(y0) * G + x0 + 1];
            const double v10 = grid[static_cast<size_t>(y0 + 1) * G + x0];
            const double v11 = grid[static_cast<size_t>(y0 + 1) * G + x0 + 1];
            const double v = (v00 * (1 - tx) + v01 * tx) * (1 - ty) + (v10 * (1 - tx) + v11 * tx) * ty;
            field[static_cast<size_t>(h) * W + w] = amplitude * v;
        }
    }
    return field;
}

} // namespace

void PhantomSpec::validate() const {
    if (height % 8 != 0 || width % 8 != 0)
        throw ConfigError("phantom.image size must be divisible by 8, got " + std::to_string(height) +
                          "x" + std::to_string(width));
    if (num_structures < 1 || num_structures > 254)
        throw ConfigError("phantom.num_structures out of range");
    if (!(0 < head_radius_lo && head_radius_lo <= head_radius_hi && head_radius_hi < 0.5))
        throw ConfigError("phantom.head radius range infeasible (need 0 < lo <= hi < 0.5)");
    if (!(0 < blob_radius_lo && blob_radius_lo <= blob_radius_hi))
        throw ConfigError("phantom.blob radius range infeasible");
    if (blob_radius_hi >= head_radius_lo)
        throw ConfigError("phantom geometry infeasible: blobs cannot fit inside the head ellipse");
    if (texture_std < 0 || placement_jitter < 0) throw ConfigError("phantom noise/jitter must be >= 0");
}

std::vector<LabelledSlice> generate_phantoms(const PhantomSpec& spec, int count) {
    spec.validate();
    const int H = spec.height, W = spec.width, K = spec.num_classes();
    const double m = std::min(H, W);

    std::vector<LabelledSlice> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        LabelledSlice s;
        s.height = H;
        s.width = W;
        bool ok = false;
        for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
            std::mt19937_64 rng(mix_seed(spec.seed, static_cast<uint64_t>(i) * 64 + attempt));
            std::uniform_real_distribution<double> u01(0.0, 1.0);
            auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

            s.labels.assign(static_cast<size_t>(H) * W, 0);
            const double jit = spec.placement_jitter * m;
            const double hcy = H / 2.0 + uni(-jit, jit);
            const double hcx = W / 2.0 + uni(-jit, jit);
            const double hry = m * uni(spec.head_radius_lo, spec.head_radius_hi);
            const double hrx = m * uni(spec.head_radius_lo, spec.head_radius_hi);
            fill_ellipse(s.labels, H, W, hcy, hcx, hry, hrx, 1);

            for (int k = 2; k < K; ++k) {
                const double br = m * uni(spec.blob_radius_lo, spec.blob_radius_hi);
                const double ang = uni(0.0, 2.0 * M_PI);
                const double rad = uni(0.0, 1.0) * 0.55 * std::min(hry, hrx);
                fill_ellipse(s.labels, H, W, hcy + rad * std::sin(ang), hcx + rad * std::cos(ang),
                             br, br, static_cast<uint8_t>(k));
            }

            std::vector<bool> present(static_cast<size_t>(K), false);
            for (uint8_t l : s.labels) present[l] = true;
            ok = std::all_of(present.begin(), present.end(), [](bool b) { return b; });
            if (!ok) continue;

            std::normal_distribution<double> tex(0.0, spec.texture_std);
            const auto shading = smooth_field(rng, H, W, 4, 0.03);
            s.image.resize(s.labels.size());
            for (size_t p = 0; p < s.labels.size(); ++p) {
                const double v = class_mean(s.labels[p], K) + shading[p] + tex(rng);
                s.image[p] = round_to_float(std::max(v, 0.0));
            }
        }
        if (!ok)
            throw ConfigError("phantom geometry infeasible: could not place all " +
                              std::to_string(K) + " classes");
        out.push_back(std::move(s));
    }
    return out;
}

void DomainTransform::validate() const {
    if (gamma <= 0) throw ParamError("domain transform gamma must be > 0, got " + std::to_string(gamma));
    if (bias_cells < 1) throw ParamError("domain transform bias_cells must be >= 1");
    if (noise_std < 0) throw ParamError("domain transform noise_std must be >= 0");
}

void apply_domain(std::vector<LabelledSlice>& slices, const DomainTransform& t) {
    t.validate();
    for (size_t i = 0; i < slices.size(); ++i) {
        LabelledSlice& s = slices[i];
        std::mt19937_64 rng(mix_seed(t.seed, i));
        std::vector<double> bias;
        if (t.bias_amplitude != 0.0)
            bias = smooth_field(rng, s.height, s.width, t.bias_cells, t.bias_amplitude);
        std::normal_distribution<double> nd(0.0, 1.0);
        for (size_t p = 0; p < s.image.size(); ++p) {
            double x = s.image[p];
            if (!bias.empty()) x *= std::max(1.0 + bias[p], 0.05);
            double y = t.scale * std::pow(x, t.gamma) + t.offset;
            if (t.noise_std > 0) y += t.noise_std * nd(rng);
            s.image[p] = round_to_float(std::max(y, 0.0));
        }
        s.domain = t.domain;
    }
}

} // namespace seglife
