#include "demerge/weight_config.hpp"

#include <cmath>
#include <set>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "demerge/errors.hpp"

namespace demerge {

std::string_view mode_name(WeightMode mode) noexcept {
    return mode == WeightMode::Dem ? "dem" : "interpolation";
}

double WeightConfig::sum() const noexcept {
    double total = 0.0;
    for (const auto& e : entries) total += e.weight;
    return total;
}

const WeightEntry* WeightConfig::find(std::string_view label) const noexcept {
    for (const auto& e : entries) {
        if (e.label == label) return &e;
    }
    return nullptr;
}

void WeightConfig::validate() const {
    std::set<std::string_view> seen;
    for (const auto& e : entries) {
        if (e.label.empty()) throw ConfigError("weight label must not be empty");
        if (!seen.insert(e.label).second) throw ConfigError(fmt::format("duplicate weight label '{}'", e.label));
        if (!std::isfinite(e.weight)) throw ConfigError(fmt::format("weight for '{}' is not finite", e.label));
    }
    if (mode == WeightMode::Interpolation) {
        if (entries.empty()) throw ConfigError("interpolation needs at least one weight");
        const double total = sum();
        if (std::abs(total - 1.0) > kSumTolerance) {
            throw ConfigError(fmt::format("interpolation weights must sum to 1 (got {:.17g})", total));
        }
    }
}

std::vector<std::string> WeightConfig::warnings() const {
    std::vector<std::string> out;
    for (const auto& e : entries) {
        if (e.weight < 0.0) {
            out.push_back(fmt::format("weight for '{}' is negative ({:g})", e.label, e.weight));
        } else if (mode == WeightMode::Dem && e.weight > 1.0) {
            out.push_back(fmt::format("weight for '{}' exceeds 1 ({:g})", e.label, e.weight));
        }
    }
    return out;
}

WeightConfig WeightConfig::uniform(WeightMode mode, const std::vector<std::string>& labels, double weight) {
    WeightConfig config{mode, {}};
    for (const auto& label : labels) config.entries.push_back({label, weight});
    return config;
}

WeightConfig WeightConfig::from_json(std::string_view text) {
    nlohmann::ordered_json doc;
    try {
        doc = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("weights are not valid JSON: {}", e.what()));
    }
    if (!doc.is_object()) throw ConfigError("weights JSON must be an object");

    WeightConfig config;
    auto mode = doc.find("mode");
    if (mode == doc.end() || !mode->is_string()) throw ConfigError("weights JSON needs a string field \"mode\"");
    if (*mode == "dem") {
        config.mode = WeightMode::Dem;
    } else if (*mode == "interpolation") {
        config.mode = WeightMode::Interpolation;
    } else {
        throw ConfigError(fmt::format("unknown weight mode {}", mode->dump()));
    }
    auto weights = doc.find("weights");
    if (weights == doc.end() || !weights->is_object()) throw ConfigError("weights JSON needs an object field \"weights\"");
    for (const auto& [label, value] : weights->items()) {
        if (!value.is_number()) throw ConfigError(fmt::format("weight for '{}' must be a number", label));
        config.entries.push_back({label, value.get<double>()});
    }
    config.validate();
    return config;
}

std::string WeightConfig::to_json() const {
    nlohmann::ordered_json doc;
    doc["mode"] = mode_name(mode);
    doc["weights"] = nlohmann::ordered_json::object();
    for (const auto& e : entries) doc["weights"][e.label] = e.weight;
    return doc.dump();
}

} // namespace demerge
