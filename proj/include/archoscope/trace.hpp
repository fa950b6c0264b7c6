#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "archoscope/errors.hpp"

namespace archoscope {

// Sampled real-valued signal. The annotation, when present, is the
// serialized event tree the trace was rendered from; it exists for test
// fixtures and --annotate synthesis only and readers never require it.
struct Trace {
    double sample_rate_hz = 0.0;
    std::vector<float> samples;
    std::optional<std::string> annotation_json;

    std::int64_t size() const { return std::int64_t(samples.size()); }
    double duration_us() const { return size() / sample_rate_hz * 1e6; }
    std::int64_t us_to_samples(double us) const { return std::int64_t(us * 1e-6 * sample_rate_hz); }
    double samples_to_us(double n) const { return n / sample_rate_hz * 1e6; }
};

// EMT1 container, little-endian:
//   "EMT1" | u32 version=1 | f64 sample_rate_hz | u64 n | f32 samples[n]
// optionally followed by "ANNO" | u64 byte_len | UTF-8 JSON event tree.
void write_trace(const Trace &trace, const std::filesystem::path &path,
                 bool include_annotation = true);
Trace read_trace(const std::filesystem::path &path);

} // namespace archoscope
