#include "cse/perlin.hpp"

#include <cmath>

#include "cse/errors.hpp"
#include "cse/rng.hpp"

namespace cse {

namespace {

// quintic fade, zero first and second derivative at the lattice
inline double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

// unit gradient at lattice point (xi, yi) for one octave
inline void gradient(std::uint64_t seed, int octave, int xi, int yi, double& gx, double& gy) {
    std::uint64_t k = Rng::mix(seed, static_cast<std::uint64_t>(octave) + 1);
    k = Rng::mix(k, (static_cast<std::uint64_t>(static_cast<std::uint32_t>(xi)) << 32) |
                        static_cast<std::uint32_t>(yi));
    const double angle = 2.0 * M_PI * (static_cast<double>(k >> 11) * 0x1.0p-53);
    gx = std::cos(angle);
    gy = std::sin(angle);
}

double sample_octave(std::uint64_t seed, int octave, double x, double y) {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double dx = x - x0, dy = y - y0;

    double g00x, g00y, g10x, g10y, g01x, g01y, g11x, g11y;
    gradient(seed, octave, x0, y0, g00x, g00y);
    gradient(seed, octave, x0 + 1, y0, g10x, g10y);
    gradient(seed, octave, x0, y0 + 1, g01x, g01y);
    gradient(seed, octave, x0 + 1, y0 + 1, g11x, g11y);

    const double n00 = g00x * dx + g00y * dy;
    const double n10 = g10x * (dx - 1.0) + g10y * dy;
    const double n01 = g01x * dx + g01y * (dy - 1.0);
    const double n11 = g11x * (dx - 1.0) + g11y * (dy - 1.0);

    const double u = fade(dx), v = fade(dy);
    const double nx0 = n00 + u * (n10 - n00);
    const double nx1 = n01 + u * (n11 - n01);
    // classic 2-D Perlin spans [-sqrt(2)/2, sqrt(2)/2]; rescale to [-1, 1]
    return (nx0 + v * (nx1 - nx0)) * M_SQRT2;
}

} // namespace

Tensor perlin_noise(const PerlinParams& params, int h, int w) {
    if (params.grid_res_x < 1 || params.grid_res_y < 1 || params.octaves < 1)
        throw InvalidInputError("perlin_noise: grid resolution and octaves must be >= 1");
    if (w < params.grid_res_x || h < params.grid_res_y)
        throw InvalidInputError("perlin_noise: grid resolution exceeds field size");

    Tensor field({h, w});
    double amp_total = 0.0;
    for (int o = 0; o < params.octaves; ++o) amp_total += std::pow(0.5, o);

    for (int o = 0; o < params.octaves; ++o) {
        const double amp = std::pow(0.5, o) / amp_total;
        const double fx = static_cast<double>(params.grid_res_x << o) / w;
        const double fy = static_cast<double>(params.grid_res_y << o) / h;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                field.data[static_cast<std::size_t>(y) * w + x] += static_cast<float>(
                    amp * sample_octave(params.seed, o, x * fx, y * fy));
    }

    for (auto& v : field.data) v = std::clamp(v, -1.0f, 1.0f);
    return field;
}

} // namespace cse
