#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hinet/pipeline.hpp"

namespace hinet {

// Memory is measured as live tracked scalars, not OS RSS: deterministic and
// portable across allocators.
struct BenchResult {
    MemProbe::Snapshot mem;
    double wall_ms = 0.0;
};

// Resets probe peaks, runs the workload, returns the observed peaks and wall
// time. Runs single-pipeline at a time.
BenchResult measure(const std::function<void()>& run);

struct SweepRow {
    int height = 0, width = 0;
    int tiles = 0;
    std::size_t peak_transient = 0;
    std::size_t peak_total = 0;
    double wall_ms = 0.0;
};

// Peak floats and runtime vs. resolution and tile count on seeded random
// inputs; peaks are monotone nonincreasing in the tile count.
std::vector<SweepRow> sweep_report(const Model& model, const std::vector<int>& resolutions,
                                   const std::vector<int>& tile_counts, std::uint64_t seed = 7);

std::string sweep_to_csv(const std::vector<SweepRow>& rows);

Image random_image(int h, int w, std::uint64_t seed);
Mask random_binary_mask(int h, int w, std::uint64_t seed, float fg_fraction = 0.3f);

}  // namespace hinet
