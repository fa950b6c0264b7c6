#pragma once

#include <filesystem>
#include <optional>

#include "archoscope/detect.hpp"
#include "archoscope/events.hpp"
#include "archoscope/render.hpp"

namespace archoscope {

// Effective tool configuration: defaults, overlaid by the config file
// (--config flag or ARCHOSCOPE_CONFIG), overlaid by individual flags.
struct ToolConfig {
    CostModel cost;
    RenderParams render;
    DetectorParams detect;
};

// Config file schema: {"cost_model": {...}, "render": {...}, "detect": {...}}
// with each section optional and unknown keys rejected.
ToolConfig tool_config_from_json(const nlohmann::json &j);
nlohmann::json tool_config_to_json(const ToolConfig &cfg);

// explicit_path > ARCHOSCOPE_CONFIG > defaults.
ToolConfig load_tool_config(const std::optional<std::filesystem::path> &explicit_path);

} // namespace archoscope
