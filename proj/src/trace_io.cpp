#include "archoscope/trace.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace archoscope {

static_assert(std::endian::native == std::endian::little,
              "EMT1 i/o assumes a little-endian host");

namespace {

template <typename T> void put(std::ofstream &out, const T &value) {
    out.write(reinterpret_cast<const char *>(&value), sizeof(T));
}

template <typename T> T get(std::ifstream &in, const char *what) {
    T value;
    in.read(reinterpret_cast<char *>(&value), sizeof(T));
    if (!in)
        throw FormatError(std::string("truncated trace file while reading ") + what);
    return value;
}

} // namespace

void write_trace(const Trace &trace, const std::filesystem::path &path, bool include_annotation) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw FormatError("cannot write " + path.string());
    out.write("EMT1", 4);
    put<std::uint32_t>(out, 1);
    put<double>(out, trace.sample_rate_hz);
    put<std::uint64_t>(out, trace.samples.size());
    out.write(reinterpret_cast<const char *>(trace.samples.data()),
              std::streamsize(trace.samples.size() * sizeof(float)));
    if (include_annotation && trace.annotation_json) {
        out.write("ANNO", 4);
        put<std::uint64_t>(out, trace.annotation_json->size());
        out.write(trace.annotation_json->data(), std::streamsize(trace.annotation_json->size()));
    }
    if (!out)
        throw FormatError("short write to " + path.string());
}

Trace read_trace(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "EMT1", 4) != 0)
        throw FormatError(path.string() + " is not an EMT1 trace file");
    const auto version = get<std::uint32_t>(in, "version");
    if (version != 1)
        throw FormatError("unsupported EMT1 version " + std::to_string(version));
    Trace trace;
    trace.sample_rate_hz = get<double>(in, "sample rate");
    if (!(trace.sample_rate_hz > 0))
        throw FormatError("non-positive sample rate in " + path.string());
    const auto n = get<std::uint64_t>(in, "sample count");
    trace.samples.resize(n);
    in.read(reinterpret_cast<char *>(trace.samples.data()), std::streamsize(n * sizeof(float)));
    if (!in)
        throw FormatError("truncated trace file: expected " + std::to_string(n) + " samples");

    char anno[4];
    in.read(anno, 4);
    if (in) {
        if (std::memcmp(anno, "ANNO", 4) != 0)
            throw FormatError("unexpected trailing chunk in " + path.string());
        const auto len = get<std::uint64_t>(in, "annotation length");
        std::string payload(len, '\0');
        in.read(payload.data(), std::streamsize(len));
        if (!in)
            throw FormatError("truncated annotation chunk in " + path.string());
        trace.annotation_json = std::move(payload);
    }
    return trace;
}

} // namespace archoscope
