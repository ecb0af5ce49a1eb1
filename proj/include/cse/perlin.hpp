#pragma once

#include <cstdint>

#include "cse/tensor.hpp"

namespace cse {

// Lattice gradient noise. grid_res_* is the number of lattice cells across
// the field; each is expected to be a power of two. Octaves stack doubled
// frequencies with halved amplitudes; the result is normalized to [-1, 1].
struct PerlinParams {
    int grid_res_x = 8;
    int grid_res_y = 8;
    int octaves = 1;
    std::uint64_t seed = 0;
};

// Deterministic fractal field, HxW, values in [-1, 1]. Sampling is
// corner-aligned: pixel (0,0) sits on a lattice point, so a single-octave
// field is exactly zero wherever pixels coincide with the lattice.
Tensor perlin_noise(const PerlinParams& params, int h, int w);

} // namespace cse
