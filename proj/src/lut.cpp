#include "hinet/lut.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hinet/common.hpp"

namespace hinet {

bool Lut3D::is_identity() const {
    if (dim < 2) return false;
    const float scale = 1.f / float(dim - 1);
    std::size_t k = 0;
    for (int r = 0; r < dim; ++r)
        for (int g = 0; g < dim; ++g)
            for (int b = 0; b < dim; ++b) {
                if (lattice[k++] != float(r) * scale) return false;
                if (lattice[k++] != float(g) * scale) return false;
                if (lattice[k++] != float(b) * scale) return false;
            }
    return true;
}

Lut3D lut_identity(int dim) {
    require(dim >= 2, "lut_identity: dim must be >= 2");
    Lut3D lut(dim);
    const float scale = 1.f / float(dim - 1);
    for (int r = 0; r < dim; ++r)
        for (int g = 0; g < dim; ++g)
            for (int b = 0; b < dim; ++b) {
                float* e = lut.entry(r, g, b);
                e[0] = float(r) * scale;
                e[1] = float(g) * scale;
                e[2] = float(b) * scale;
            }
    return lut;
}

namespace {

// Locates a channel value against the float-rounded knots i/(D-1); the
// fraction is exactly 0/1 at knots so lattice points reproduce exactly.
void knot_locate(float c, int dim, int& idx, double& frac) {
    c = std::clamp(c, 0.f, 1.f);
    const int n = dim - 1;
    int k = std::min(int(double(c) * n), n - 1);
    k = std::max(k, 0);
    while (k > 0 && c < float(k) / float(n)) --k;
    while (k < n - 1 && c >= float(k + 1) / float(n)) ++k;
    const double k0 = double(float(k) / float(n));
    const double k1 = double(float(k + 1) / float(n));
    idx = k;
    frac = std::clamp((double(c) - k0) / (k1 - k0), 0.0, 1.0);
}

}  // namespace

namespace {

std::array<float, 3> apply_trilinear(const Lut3D& lut, const std::array<float, 3>& rgb) {
    int ir, ig, ib;
    double fr, fg, fb;
    knot_locate(rgb[0], lut.dim, ir, fr);
    knot_locate(rgb[1], lut.dim, ig, fg);
    knot_locate(rgb[2], lut.dim, ib, fb);

    std::array<float, 3> out{};
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int dr = 0; dr < 2; ++dr)
            for (int dg = 0; dg < 2; ++dg)
                for (int db = 0; db < 2; ++db) {
                    const double w = (dr ? fr : 1.0 - fr) * (dg ? fg : 1.0 - fg) *
                                     (db ? fb : 1.0 - fb);
                    acc += w * double(lut.entry(ir + dr, ig + dg, ib + db)[c]);
                }
        out[c] = float(acc);
    }
    return out;
}

}  // namespace

LutTaps lut_taps(int dim, float r, float g, float b) {
    require(dim >= 2, "lut_taps: dim must be >= 2");
    LutTaps t;
    double fr, fg, fb;
    knot_locate(r, dim, t.i0, fr);
    knot_locate(g, dim, t.j0, fg);
    knot_locate(b, dim, t.k0, fb);
    for (int dr = 0; dr < 2; ++dr)
        for (int dg = 0; dg < 2; ++dg)
            for (int db = 0; db < 2; ++db)
                t.w[dr * 4 + dg * 2 + db] =
                    (dr ? fr : 1.0 - fr) * (dg ? fg : 1.0 - fg) * (db ? fb : 1.0 - fb);
    return t;
}

std::array<float, 3> lut_apply(const Lut3D& lut, const std::array<float, 3>& rgb) {
    require(lut.dim >= 2, "lut_apply: invalid LUT");
    if (lut.is_identity()) {
        return {std::clamp(rgb[0], 0.f, 1.f), std::clamp(rgb[1], 0.f, 1.f),
                std::clamp(rgb[2], 0.f, 1.f)};
    }
    return apply_trilinear(lut, rgb);
}

Image lut_apply_foreground(const Lut3D& lut, const Image& img, const Mask& mask) {
    require(lut.dim >= 2, "lut_apply_foreground: invalid LUT");
    require(img.height == mask.height && img.width == mask.width,
            "lut_apply_foreground: dimension mismatch");
    Image out = img;
    if (lut.is_identity()) return out;
    const std::size_t n = img.pixel_count();
    for (std::size_t p = 0; p < n; ++p) {
        const float m = mask.data[p];
        if (m <= 0.f) continue;
        const std::array<float, 3> rgb{std::clamp(img.data[p * 3 + 0], 0.f, 1.f),
                                       std::clamp(img.data[p * 3 + 1], 0.f, 1.f),
                                       std::clamp(img.data[p * 3 + 2], 0.f, 1.f)};
        const auto mapped = apply_trilinear(lut, rgb);
        for (int c = 0; c < 3; ++c)
            out.data[p * 3 + c] = m * mapped[c] + (1.f - m) * img.data[p * 3 + c];
    }
    return out;
}

double lut_overflow_penalty(const Lut3D& lut) {
    require(lut.dim >= 2, "lut_overflow_penalty: invalid LUT");
    double acc = 0.0;
    for (const float v : lut.lattice) {
        const double over = std::max(0.0, double(v) - 1.0);
        const double under = std::max(0.0, -double(v));
        acc += over * over + under * under;
    }
    return acc / double(lut.lattice.size());
}

Lut3D lut_interp(const Lut3D& lut_m, const Lut3D& lut_n, int frame_k, int frame_m, int frame_n) {
    require(lut_m.dim == lut_n.dim, "lut_interp: dimension mismatch");
    require(frame_m < frame_n, "lut_interp: frame M must precede N");
    require(frame_k >= frame_m && frame_k <= frame_n, "lut_interp: K outside [M, N]");
    // The formula is exact at the endpoints; float lerp is not, so return
    // them directly.
    if (frame_k == frame_m) return lut_m;
    if (frame_k == frame_n) return lut_n;
    const float t = float(frame_k - frame_m) / float(frame_n - frame_m);
    Lut3D out(lut_m.dim);
    for (std::size_t k = 0; k < out.lattice.size(); ++k)
        out.lattice[k] = lut_m.lattice[k] + (lut_n.lattice[k] - lut_m.lattice[k]) * t;
    return out;
}

void export_cube(const Lut3D& lut, const std::string& path) {
    require(lut.dim >= 2, "export_cube: invalid LUT");
    std::ofstream out(path);
    require(out.good(), "export_cube: cannot open '" + path + "' for writing");
    out << "LUT_3D_SIZE " << lut.dim << "\n";
    char line[96];
    for (int r = 0; r < lut.dim; ++r)
        for (int g = 0; g < lut.dim; ++g)
            for (int b = 0; b < lut.dim; ++b) {
                const float* e = lut.entry(r, g, b);
                std::snprintf(line, sizeof(line), "%.8f %.8f %.8f\n", e[0], e[1], e[2]);
                out << line;
            }
    require(out.good(), "export_cube: write failed for '" + path + "'");
}

Lut3D import_cube(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "import_cube: cannot open '" + path + "'");

    std::string line;
    int line_no = 0;
    int dim = 0;
    // Header: comments and TITLE may precede LUT_3D_SIZE.
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::string tok;
        if (!(ss >> tok) || tok[0] == '#') continue;
        if (tok == "TITLE") continue;
        if (tok == "LUT_3D_SIZE") {
            require(bool(ss >> dim) && dim >= 2,
                    "import_cube: invalid LUT_3D_SIZE at line " + std::to_string(line_no));
            break;
        }
        fail("import_cube: expected LUT_3D_SIZE header, got '" + tok + "' at line " +
             std::to_string(line_no));
    }
    require(dim >= 2, "import_cube: missing LUT_3D_SIZE header at line " + std::to_string(line_no));

    Lut3D lut(dim);
    std::size_t entry = 0;
    const std::size_t total = std::size_t(dim) * dim * dim;
    while (entry < total) {
        require(bool(std::getline(in, line)),
                "import_cube: unexpected end of file at line " + std::to_string(line_no + 1));
        ++line_no;
        std::istringstream ss(line);
        std::string first;
        if (!(ss >> first) || first[0] == '#') continue;
        float r, g, b;
        std::istringstream vals(line);
        require(bool(vals >> r >> g >> b),
                "import_cube: malformed data at line " + std::to_string(line_no));
        lut.lattice[entry * 3 + 0] = r;
        lut.lattice[entry * 3 + 1] = g;
        lut.lattice[entry * 3 + 2] = b;
        ++entry;
    }
    return lut;
}

}  // namespace hinet
