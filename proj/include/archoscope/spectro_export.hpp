#pragma once

#include <filesystem>

#include "archoscope/dsp.hpp"

namespace archoscope {

// Plain numeric grid: one row per time frame, one column per frequency bin.
void write_spectrogram_csv(const Spectrogram &spec, const std::filesystem::path &path);

// Heatmap with a viridis colormap over log magnitudes; time on x,
// frequency on y with bin 0 at the bottom.
void write_spectrogram_png(const Spectrogram &spec, const std::filesystem::path &path);

} // namespace archoscope
