#include "hinet/bench.hpp"

#include <algorithm>
#include <chrono>
#include <random>
#include <sstream>

#include "hinet/common.hpp"

namespace hinet {

BenchResult measure(const std::function<void()>& run) {
    auto& probe = MemProbe::instance();
    probe.reset_peaks();
    const auto t0 = std::chrono::steady_clock::now();
    run();
    const auto t1 = std::chrono::steady_clock::now();
    BenchResult r;
    r.mem = probe.snapshot();
    r.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    return r;
}

Image random_image(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> uni(0.f, 1.f);
    Image img(h, w);
    for (auto& v : img.data) v = uni(rng);
    return img;
}

Mask random_binary_mask(int h, int w, std::uint64_t seed, float fg_fraction) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> uni(0.f, 1.f);
    Mask m(h, w);
    for (auto& v : m.data) v = uni(rng) < fg_fraction ? 1.f : 0.f;
    return m;
}

std::vector<SweepRow> sweep_report(const Model& model, const std::vector<int>& resolutions,
                                   const std::vector<int>& tile_counts, std::uint64_t seed) {
    std::vector<int> counts = tile_counts;
    std::sort(counts.begin(), counts.end());
    std::vector<SweepRow> rows;
    for (const int res : resolutions) {
        const Image img = random_image(res, res, seed);
        const Mask mask = random_binary_mask(res, res, seed + 1);
        std::size_t prev_peak = 0;
        bool first = true;
        for (const int tiles : counts) {
            const TilePlan plan = plan_tiles_by_count(res, res, tiles);
            Image out;
            const BenchResult r = measure([&] { out = harmonize_tiled(img, mask, model, plan); });
            SweepRow row;
            row.height = res;
            row.width = res;
            row.tiles = int(plan.tiles.size());
            row.peak_transient = r.mem.peak_transient();
            row.peak_total = r.mem.peak_total;
            row.wall_ms = r.wall_ms;
            rows.push_back(row);
            if (!first)
                require(row.peak_transient <= prev_peak,
                        "sweep_report: transient peak increased with tile count");
            prev_peak = row.peak_transient;
            first = false;
        }
    }
    return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream out;
    out << "height,width,tiles,peak_transient_floats,peak_total_floats,wall_ms\n";
    for (const auto& r : rows)
        out << r.height << ',' << r.width << ',' << r.tiles << ',' << r.peak_transient << ','
            << r.peak_total << ',' << r.wall_ms << '\n';
    return out.str();
}

}  // namespace hinet
