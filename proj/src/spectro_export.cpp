#include "archoscope/spectro_export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <png.h>

namespace archoscope {

void write_spectrogram_csv(const Spectrogram &spec, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out)
        throw FormatError("cannot write " + path.string());
    for (std::int64_t f = 0; f < spec.n_frames; ++f) {
        for (int b = 0; b < spec.n_bins; ++b) {
            if (b)
                out << ',';
            out << spec.at(f, b);
        }
        out << '\n';
    }
    if (!out)
        throw FormatError("short write to " + path.string());
}

namespace {

// Viridis anchors, interpolated linearly.
const unsigned char kViridis[][3] = {
    {68, 1, 84},    {71, 44, 122},  {59, 81, 139},  {44, 113, 142}, {33, 144, 141},
    {39, 173, 129}, {92, 200, 99},  {170, 220, 50}, {253, 231, 37},
};

void color_of(double t, unsigned char rgb[3]) {
    t = std::clamp(t, 0.0, 1.0);
    const int n = int(sizeof(kViridis) / sizeof(kViridis[0]));
    const double x = t * (n - 1);
    const int i = std::min(n - 2, int(x));
    const double f = x - i;
    for (int c = 0; c < 3; ++c)
        rgb[c] = (unsigned char)std::lround(kViridis[i][c] * (1 - f) + kViridis[i + 1][c] * f);
}

struct PngCloser {
    FILE *fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngCloser() {
        if (png)
            png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp)
            std::fclose(fp);
    }
};

} // namespace

void write_spectrogram_png(const Spectrogram &spec, const std::filesystem::path &path) {
    if (spec.n_frames < 1 || spec.n_bins < 1)
        throw SchemaError("empty spectrogram");

    // Log-compress and normalize.
    double lo = 1e300, hi = -1e300;
    for (double m : spec.magnitudes) {
        const double v = std::log10(m + 1e-12);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi <= lo)
        hi = lo + 1.0;
    // Clamp the dynamic range so the noise floor does not wash out structure.
    lo = std::max(lo, hi - 5.0);

    PngCloser ctx;
    ctx.fp = std::fopen(path.string().c_str(), "wb");
    if (!ctx.fp)
        throw FormatError("cannot write " + path.string());
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png)
        throw FormatError("libpng init failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info)
        throw FormatError("libpng info init failed");
    if (setjmp(png_jmpbuf(ctx.png)))
        throw FormatError("libpng error while writing " + path.string());

    const std::int64_t width = spec.n_frames;
    const int height = spec.n_bins;
    png_init_io(ctx.png, ctx.fp);
    png_set_IHDR(ctx.png, ctx.info, png_uint_32(width), png_uint_32(height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);

    std::vector<unsigned char> row(std::size_t(width) * 3);
    for (int y = 0; y < height; ++y) {
        const int bin = height - 1 - y; // low frequencies at the bottom
        for (std::int64_t x = 0; x < width; ++x) {
            const double v = std::log10(spec.at(x, bin) + 1e-12);
            const double t = (v - lo) / (hi - lo);
            color_of(t, &row[std::size_t(x) * 3]);
        }
        png_write_row(ctx.png, row.data());
    }
    png_write_end(ctx.png, ctx.info);
}

} // namespace archoscope
