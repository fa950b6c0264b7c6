#include "archoscope/config.hpp"

#include <cstdlib>
#include <fstream>

namespace archoscope {

ToolConfig tool_config_from_json(const nlohmann::json &j) {
    if (!j.is_object())
        throw SchemaError("config must be a JSON object");
    ToolConfig cfg;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "cost_model")
            cfg.cost = cost_model_from_json(it.value());
        else if (it.key() == "render")
            cfg.render = render_params_from_json(it.value());
        else if (it.key() == "detect")
            cfg.detect = detector_params_from_json(it.value());
        else
            throw SchemaError("unknown config section: " + it.key());
    }
    return cfg;
}

nlohmann::json tool_config_to_json(const ToolConfig &cfg) {
    return {{"cost_model", cost_model_to_json(cfg.cost)},
            {"render", render_params_to_json(cfg.render)},
            {"detect", detector_params_to_json(cfg.detect)}};
}

ToolConfig load_tool_config(const std::optional<std::filesystem::path> &explicit_path) {
    std::optional<std::filesystem::path> path = explicit_path;
    if (!path) {
        if (const char *env = std::getenv("ARCHOSCOPE_CONFIG"); env && *env)
            path = std::filesystem::path(env);
    }
    if (!path)
        return ToolConfig{};
    std::ifstream in(*path);
    if (!in)
        throw FormatError("cannot open config file " + path->string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception &e) {
        throw SchemaError("invalid JSON in config " + path->string() + ": " + e.what());
    }
    return tool_config_from_json(j);
}

} // namespace archoscope
