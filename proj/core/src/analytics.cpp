#include "demerge/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "demerge/errors.hpp"

namespace demerge {
namespace {

using ordered_json = nlohmann::ordered_json;

bool is_numeric(std::string_view key) {
    return !key.empty() && std::all_of(key.begin(), key.end(), [](char c) { return c >= '0' && c <= '9'; });
}

double clamp_cosine(double dot, double norm_a_sq, double norm_b_sq) {
    if (norm_a_sq == 0.0 || norm_b_sq == 0.0) throw DegenerateInput("cosine similarity of a zero-norm vector");
    return std::clamp(dot / (std::sqrt(norm_a_sq) * std::sqrt(norm_b_sq)), -1.0, 1.0);
}

std::string csv_field(std::string_view text) {
    if (text.find_first_of(",\"\n") == std::string_view::npos) return std::string(text);
    std::string quoted = "\"";
    for (char c : text) {
        if (c == '"') quoted += '"';
        quoted += c;
    }
    return quoted + "\"";
}

} // namespace

std::vector<double> FlatView::to_vector() const {
    std::vector<double> flat;
    flat.reserve(length());
    std::vector<double> chunk;
    std::vector<std::byte> scratch;
    for (std::size_t i = 0; i < chunks(); ++i) {
        read_chunk(i, chunk, scratch);
        flat.insert(flat.end(), chunk.begin(), chunk.end());
    }
    return flat;
}

double euclidean_distance(const TensorSource& a, const TensorSource& b) {
    check_compatibility(a, b);
    const FlatView va(a);
    const FlatView vb(b);
    std::vector<double> xa;
    std::vector<double> xb;
    std::vector<std::byte> scratch;
    double sum = 0.0;
    for (std::size_t i = 0; i < va.chunks(); ++i) {
        va.read_chunk(i, xa, scratch);
        vb.read_chunk(i, xb, scratch);
        for (std::size_t j = 0; j < xa.size(); ++j) {
            const double d = xa[j] - xb[j];
            sum += d * d;
        }
    }
    return std::sqrt(sum);
}

double l2_norm(const TensorSource& a) {
    const FlatView va(a);
    std::vector<double> xa;
    std::vector<std::byte> scratch;
    double sum = 0.0;
    for (std::size_t i = 0; i < va.chunks(); ++i) {
        va.read_chunk(i, xa, scratch);
        for (double x : xa) sum += x * x;
    }
    return std::sqrt(sum);
}

double cosine_similarity(const TensorSource& a, const TensorSource& b) {
    check_compatibility(a, b);
    const FlatView va(a);
    const FlatView vb(b);
    std::vector<double> xa;
    std::vector<double> xb;
    std::vector<std::byte> scratch;
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < va.chunks(); ++i) {
        va.read_chunk(i, xa, scratch);
        vb.read_chunk(i, xb, scratch);
        for (std::size_t j = 0; j < xa.size(); ++j) {
            dot += xa[j] * xb[j];
            na += xa[j] * xa[j];
            nb += xb[j] * xb[j];
        }
    }
    return clamp_cosine(dot, na, nb);
}

LayerGrouping::LayerGrouping(std::string pattern) : pattern_(std::move(pattern)) {
    try {
        regex_ = std::regex(pattern_, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
        throw ConfigError(fmt::format("invalid layer pattern '{}': {}", pattern_, e.what()));
    }
    if (regex_.mark_count() < 1) {
        throw ConfigError(fmt::format("layer pattern '{}' needs a capture group", pattern_));
    }
}

std::string LayerGrouping::key_for(std::string_view tensor_name) const {
    std::match_results<std::string_view::const_iterator> match;
    if (std::regex_search(tensor_name.begin(), tensor_name.end(), match, regex_) && match[1].matched) {
        return match[1].str();
    }
    return std::string(kUngroupedLayer);
}

bool layer_key_less(std::string_view a, std::string_view b) {
    const bool na = is_numeric(a);
    const bool nb = is_numeric(b);
    if (na != nb) return na;
    if (na) {
        const auto strip = [](std::string_view s) {
            const auto first = s.find_first_not_of('0');
            return first == std::string_view::npos ? std::string_view("0") : s.substr(first);
        };
        const auto sa = strip(a);
        const auto sb = strip(b);
        if (sa.size() != sb.size()) return sa.size() < sb.size();
        if (sa != sb) return sa < sb;
    }
    return a < b;
}

std::vector<LayerDistanceRow> normalize_layer_rows(std::vector<LayerDistanceRow> rows) {
    std::sort(rows.begin(), rows.end(),
              [](const auto& x, const auto& y) { return layer_key_less(x.layer_key, y.layer_key); });
    double max_distance = 0.0;
    for (const auto& r : rows) max_distance = std::max(max_distance, r.distance);
    for (auto& r : rows) r.normalized = max_distance > 0.0 ? r.distance / max_distance : 0.0;
    return rows;
}

std::vector<LayerDistanceRow> layerwise_distance(const TensorSource& a, const TensorSource& b,
                                                 const LayerGrouping& grouping) {
    check_compatibility(a, b);
    std::map<std::string, double> sums;
    std::vector<double> xa;
    std::vector<double> xb;
    std::vector<std::byte> scratch;
    const auto metas = a.metas();
    for (std::size_t i = 0; i < metas.size(); ++i) {
        a.read_f64_into(i, xa, scratch);
        b.read_f64_into(i, xb, scratch);
        double& sum = sums[grouping.key_for(metas[i].name)];
        for (std::size_t j = 0; j < xa.size(); ++j) {
            const double d = xa[j] - xb[j];
            sum += d * d;
        }
    }
    std::vector<LayerDistanceRow> rows;
    rows.reserve(sums.size());
    for (const auto& [key, sum] : sums) rows.push_back({key, std::sqrt(sum), 0.0});
    return normalize_layer_rows(std::move(rows));
}

AnalyticsReport analytics_report(const TensorSource& base, std::span<const LabeledSource> models,
                                 std::span<const LabeledSource> dvs, const std::optional<WeightConfig>& dem_weights,
                                 const LayerGrouping& grouping) {
    struct Entry {
        std::string label;
        const TensorSource* source;
        bool is_model;
    };
    std::vector<Entry> entries;
    std::set<std::string> seen;
    for (const auto& m : models) entries.push_back({m.label, &m.source, true});
    for (const auto& d : dvs) entries.push_back({d.label, &d.source, false});
    for (const auto& e : entries) {
        if (!seen.insert(e.label).second) throw ConfigError(fmt::format("duplicate label '{}'", e.label));
        check_compatibility(base, *e.source);
    }

    AnalyticsReport report;
    report.base_tensors = base.metas().size();
    report.base_elements = base.total_elements();
    report.layer_pattern = grouping.pattern();
    const std::size_t n = entries.size();
    for (const auto& e : entries) report.labels.push_back(e.label);
    if (n == 0) return report;

    WeightConfig weights = dem_weights ? *dem_weights : WeightConfig::uniform(WeightMode::Dem, report.labels, 0.25);
    weights.validate();
    std::vector<double> dem_coeff(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto* w = weights.find(entries[i].label);
        if (!w) throw ConfigError(fmt::format("no DEM weight for '{}'", entries[i].label));
        dem_coeff[i] = w->weight;
    }
    if (weights.entries.size() != n) throw ConfigError("DEM weights name labels that are not being analyzed");

    std::vector<std::vector<double>> dots(n, std::vector<double>(n, 0.0));
    std::vector<double> dem_dot(n, 0.0);
    double dem_sq = 0.0;
    std::vector<std::map<std::string, double>> group_sums(n);

    const auto metas = base.metas();
    std::vector<double> base_values;
    std::vector<std::vector<double>> deltas(n);
    std::vector<double> dem;
    std::vector<std::byte> scratch;
    for (std::size_t t = 0; t < metas.size(); ++t) {
        base.read_f64_into(t, base_values, scratch);
        const auto key = grouping.key_for(metas[t].name);
        for (std::size_t i = 0; i < n; ++i) {
            entries[i].source->read_f64_into(t, deltas[i], scratch);
            if (entries[i].is_model) {
                for (std::size_t j = 0; j < base_values.size(); ++j) deltas[i][j] -= base_values[j];
            }
        }
        dem.assign(base_values.size(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& di = deltas[i];
            for (std::size_t k = i; k < n; ++k) {
                const auto& dk = deltas[k];
                double s = 0.0;
                for (std::size_t j = 0; j < di.size(); ++j) s += di[j] * dk[j];
                dots[i][k] += s;
            }
            double sq = 0.0;
            for (std::size_t j = 0; j < di.size(); ++j) {
                sq += di[j] * di[j];
                dem[j] += dem_coeff[i] * di[j];
            }
            group_sums[i][key] += sq;
        }
        for (std::size_t j = 0; j < dem.size(); ++j) dem_sq += dem[j] * dem[j];
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < dem.size(); ++j) s += dem[j] * deltas[i][j];
            dem_dot[i] += s;
        }
    }

    for (std::size_t i = 0; i < n; ++i) report.distance_from_base.emplace_back(entries[i].label, std::sqrt(dots[i][i]));
    report.distance_from_base.emplace_back("DEM", std::sqrt(dem_sq));

    report.dv_cosine_matrix.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i; k < n; ++k) {
            double c = clamp_cosine(dots[i][k], dots[i][i], dots[k][k]);
            if (i == k) c = 1.0;
            report.dv_cosine_matrix[i][k] = c;
            report.dv_cosine_matrix[k][i] = c;
        }
    }
    report.dem_weights = weights;
    for (std::size_t i = 0; i < n; ++i) report.dem_vs_dv_cosine.push_back(clamp_cosine(dem_dot[i], dem_sq, dots[i][i]));

    for (std::size_t i = 0; i < n; ++i) {
        std::vector<LayerDistanceRow> rows;
        for (const auto& [key, sum] : group_sums[i]) rows.push_back({key, std::sqrt(sum), 0.0});
        report.layerwise.emplace_back(entries[i].label, normalize_layer_rows(std::move(rows)));
    }
    return report;
}

std::string AnalyticsReport::to_json() const {
    ordered_json doc;
    doc["base"] = {{"tensors", base_tensors}, {"elements", base_elements}};
    doc["labels"] = labels;
    auto distances = ordered_json::array();
    for (const auto& [label, d] : distance_from_base) distances.push_back({{"label", label}, {"euclidean", d}});
    doc["distance_from_base"] = std::move(distances);
    doc["dv_cosine_matrix"] = dv_cosine_matrix;
    doc["dem_weights"] = dem_weights ? ordered_json::parse(dem_weights->to_json()) : ordered_json(nullptr);
    auto dem_rows = ordered_json::array();
    for (std::size_t i = 0; i < dem_vs_dv_cosine.size(); ++i) {
        dem_rows.push_back({{"label", labels[i]}, {"cosine", dem_vs_dv_cosine[i]}});
    }
    doc["dem_vs_dv_cosine"] = std::move(dem_rows);
    ordered_json layers;
    layers["pattern"] = layer_pattern;
    auto per_label = ordered_json::array();
    for (const auto& [label, rows] : layerwise) {
        auto list = ordered_json::array();
        for (const auto& r : rows) {
            list.push_back({{"layer", r.layer_key}, {"distance", r.distance}, {"normalized", r.normalized}});
        }
        per_label.push_back({{"label", label}, {"rows", std::move(list)}});
    }
    layers["models"] = std::move(per_label);
    doc["layerwise"] = std::move(layers);
    return doc.dump(2) + "\n";
}

std::string AnalyticsReport::distance_csv() const {
    std::string out = "label,euclidean\n";
    for (const auto& [label, d] : distance_from_base) out += fmt::format("{},{:.17g}\n", csv_field(label), d);
    return out;
}

std::string AnalyticsReport::cosine_csv() const {
    std::string out = "label";
    for (const auto& l : labels) out += "," + csv_field(l);
    out += "\n";
    for (std::size_t i = 0; i < dv_cosine_matrix.size(); ++i) {
        out += csv_field(labels[i]);
        for (double c : dv_cosine_matrix[i]) out += fmt::format(",{:.17g}", c);
        out += "\n";
    }
    return out;
}

std::string AnalyticsReport::dem_cosine_csv() const {
    std::string out = "label,cosine\n";
    for (std::size_t i = 0; i < dem_vs_dv_cosine.size(); ++i) {
        out += fmt::format("{},{:.17g}\n", csv_field(labels[i]), dem_vs_dv_cosine[i]);
    }
    return out;
}

std::string AnalyticsReport::layerwise_csv() const {
    std::string out = "label,layer,distance,normalized\n";
    for (const auto& [label, rows] : layerwise) {
        for (const auto& r : rows) {
            out += fmt::format("{},{},{:.17g},{:.17g}\n", csv_field(label), csv_field(r.layer_key), r.distance, r.normalized);
        }
    }
    return out;
}

} // namespace demerge
