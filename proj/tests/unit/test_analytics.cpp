#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "demerge/analytics.hpp"
#include "demerge/errors.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace demerge;
using namespace demerge::testing;

namespace {

std::vector<double> flat(const Checkpoint& c) {
    std::vector<double> out;
    for (std::size_t i = 0; i < c.metas().size(); ++i) {
        const auto v = c.read_f64(i);
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

Checkpoint scaled(const Checkpoint& c, double factor, CheckpointKind kind) {
    Checkpoint out(kind);
    for (std::size_t i = 0; i < c.metas().size(); ++i) {
        auto v = c.read_f64(i);
        for (auto& x : v) x *= factor;
        const auto& m = c.metas()[i];
        out.add_values(m.name, m.dtype, m.shape, v);
    }
    return out;
}

GenOptions f64_options() {
    GenOptions opt;
    opt.allow_f32 = false;
    opt.max_elements = 48;
    return opt;
}

} // namespace

TEST(Euclidean, Examples) {
    const auto zeros = single("t", DType::F32, {4}, {0, 0, 0, 0});
    const auto ones = single("t", DType::F32, {4}, {1, 1, 1, 1});
    EXPECT_EQ(euclidean_distance(zeros, ones), 2.0);
    EXPECT_EQ(euclidean_distance(ones, ones), 0.0);
    EXPECT_THROW((void)euclidean_distance(zeros, single("u", DType::F32, {4}, {0, 0, 0, 0})), CompatibilityError);
}

TEST(Euclidean, PlantedNorm) {
    std::mt19937_64 rng(61);
    GenOptions opt = f64_options();
    opt.max_elements = 5000;
    const auto base = random_checkpoint(rng, opt);
    const auto direction = random_like(rng, base);
    const double scale = 35.1 / l2_norm(direction);
    Checkpoint tuned;
    for (std::size_t i = 0; i < base.metas().size(); ++i) {
        auto b = base.read_f64(i);
        const auto d = direction.read_f64(i);
        for (std::size_t j = 0; j < b.size(); ++j) b[j] += scale * d[j];
        tuned.add_values(base.metas()[i].name, DType::F64, base.metas()[i].shape, b);
    }
    EXPECT_NEAR(euclidean_distance(base, tuned), 35.1, 1e-6);
}

TEST(Euclidean, MatchesNaiveOracle) {
    std::mt19937_64 rng(62);
    for (int trial = 0; trial < 50; ++trial) {
        const auto a = random_checkpoint(rng);
        const auto b = random_like(rng, a);
        EXPECT_NEAR(euclidean_distance(a, b), static_cast<double>(naive_distance(flat(a), flat(b))), 1e-12);
    }
}

TEST(Euclidean, MetricAxioms) {
    std::mt19937_64 rng(63);
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = random_checkpoint(rng);
        const auto b = random_like(rng, a);
        const auto c = random_like(rng, a);
        EXPECT_EQ(euclidean_distance(a, a), 0.0);
        EXPECT_EQ(euclidean_distance(a, b), euclidean_distance(b, a));
        EXPECT_LE(euclidean_distance(a, c), euclidean_distance(a, b) + euclidean_distance(b, c) + 1e-9);
    }
}

TEST(Euclidean, DemNoFartherThanWeightedSum) {
    std::mt19937_64 rng(64);
    std::uniform_real_distribution<double> wd(-1.5, 1.5);
    for (int trial = 0; trial < 50; ++trial) {
        const auto base = random_checkpoint(rng);
        std::vector<Checkpoint> deltas;
        std::vector<WeightEntry> entries;
        for (int k = 0; k < 3; ++k) {
            deltas.push_back(random_like(rng, base, -1, 1, CheckpointKind::Delta));
            entries.push_back({fmt::format("d{}", k), wd(rng)});
        }
        std::vector<LabeledSource> dvs;
        double bound = 0.0;
        for (int k = 0; k < 3; ++k) {
            dvs.push_back({entries[k].label, deltas[k]});
            bound += std::abs(entries[k].weight) * l2_norm(deltas[k]);
        }
        const auto merged = compose_dem(base, dvs, WeightConfig{WeightMode::Dem, entries});
        EXPECT_LE(euclidean_distance(merged, base), bound + 1e-6);
    }
}

TEST(Cosine, Examples) {
    const auto a = single("v", DType::F64, {2}, {1, 0}, CheckpointKind::Delta);
    const auto b = single("v", DType::F64, {2}, {0, 1}, CheckpointKind::Delta);
    EXPECT_EQ(cosine_similarity(a, a), 1.0);
    EXPECT_EQ(cosine_similarity(a, b), 0.0);
    EXPECT_EQ(cosine_similarity(single("v", DType::F64, {2}, {1, 1}), single("v", DType::F64, {2}, {1, -1})), 0.0);
    EXPECT_NEAR(cosine_similarity(single("v", DType::F64, {2}, {3, 4}), single("v", DType::F64, {2}, {6, 8})), 1.0,
                1e-15);
}

TEST(Cosine, SpansSeveralTensors) {
    Checkpoint a(CheckpointKind::Delta), b(CheckpointKind::Delta);
    a.add_values("x", DType::F32, {1}, std::vector<double>{1});
    a.add_values("y", DType::F32, {1}, std::vector<double>{1});
    b.add_values("x", DType::F32, {1}, std::vector<double>{1});
    b.add_values("y", DType::F32, {1}, std::vector<double>{-1});
    EXPECT_EQ(cosine_similarity(a, b), 0.0);
}

TEST(Cosine, ZeroNormIsDegenerate) {
    const auto zero = single("v", DType::F64, {2}, {0, 0}, CheckpointKind::Delta);
    const auto one = single("v", DType::F64, {2}, {1, 0}, CheckpointKind::Delta);
    EXPECT_THROW((void)cosine_similarity(zero, one), DegenerateInput);
    EXPECT_THROW((void)cosine_similarity(one, zero), DegenerateInput);
}

TEST(Cosine, BoundsOracleAndScaleInvariance) {
    std::mt19937_64 rng(65);
    std::uniform_real_distribution<double> cd(0.01, 100.0);
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = random_checkpoint(rng, f64_options(), CheckpointKind::Delta);
        const auto b = random_like(rng, a, -1, 1, CheckpointKind::Delta);
        const double cos = cosine_similarity(a, b);
        EXPECT_GE(cos, -1.0);
        EXPECT_LE(cos, 1.0);
        EXPECT_NEAR(cos, static_cast<double>(naive_cosine(flat(a), flat(b))), 1e-12);
        const double c = cd(rng);
        EXPECT_NEAR(cosine_similarity(scaled(a, c, CheckpointKind::Delta), b), cos, 1e-12);
        EXPECT_NEAR(cosine_similarity(scaled(a, -c, CheckpointKind::Delta), b), -cos, 1e-12);
    }
}

TEST(Layers, DefaultPatternGrouping) {
    const LayerGrouping g;
    EXPECT_EQ(g.key_for("layers.0.w"), "0");
    EXPECT_EQ(g.key_for("layers.1.w"), "1");
    EXPECT_EQ(g.key_for("embed.w"), kUngroupedLayer);
    EXPECT_EQ(g.key_for("model.layers.12.attn.q"), "12");
    EXPECT_THROW(LayerGrouping("layers.(\\d+"), ConfigError);
    EXPECT_THROW(LayerGrouping("layers"), ConfigError);
}

TEST(Layers, GroupsFromExample) {
    Checkpoint a, b;
    for (const char* name : {"layers.0.w", "layers.1.w", "embed.w"}) {
        a.add_values(name, DType::F32, {1}, std::vector<double>{0});
        b.add_values(name, DType::F32, {1}, std::vector<double>{1});
    }
    const auto rows = layerwise_distance(a, b);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].layer_key, "0");
    EXPECT_EQ(rows[1].layer_key, "1");
    EXPECT_EQ(rows[2].layer_key, "_ungrouped");
}

TEST(Layers, KeyOrdering) {
    std::vector<std::string> keys{"10", "_ungrouped", "2", "embed", "0", "01"};
    std::sort(keys.begin(), keys.end(), [](const auto& x, const auto& y) { return layer_key_less(x, y); });
    EXPECT_EQ(keys.front(), "0");
    EXPECT_EQ(keys[2], "2");
    EXPECT_EQ(keys[3], "10");
    EXPECT_EQ(keys[4], "_ungrouped");
    EXPECT_EQ(keys[5], "embed");
}

TEST(Layers, NormalizedByMax) {
    Checkpoint base, tuned;
    base.add_values("layers.0.w", DType::F64, {2}, std::vector<double>{0, 0});
    base.add_values("layers.1.w", DType::F64, {2}, std::vector<double>{0, 0});
    tuned.add_values("layers.0.w", DType::F64, {2}, std::vector<double>{3, 0});
    tuned.add_values("layers.1.w", DType::F64, {2}, std::vector<double>{0, 4});
    const auto rows = layerwise_distance(base, tuned);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].distance, 3.0);
    EXPECT_EQ(rows[1].distance, 4.0);
    EXPECT_EQ(rows[0].normalized, 0.75);
    EXPECT_EQ(rows[1].normalized, 1.0);
}

TEST(Layers, IdenticalModelsNormalizeToZero) {
    std::mt19937_64 rng(66);
    const auto a = random_checkpoint(rng);
    for (const auto& r : layerwise_distance(a, a)) {
        EXPECT_EQ(r.distance, 0.0);
        EXPECT_EQ(r.normalized, 0.0);
    }
}

TEST(Layers, MaxIsOneAndScaleInvariant) {
    std::mt19937_64 rng(67);
    std::uniform_real_distribution<double> cd(0.1, 10.0);
    GenOptions opt;
    opt.prefix = "layers";
    opt.allow_f32 = false;
    for (int trial = 0; trial < 100; ++trial) {
        const auto base = random_checkpoint(rng, opt);
        const auto delta = random_like(rng, base);
        const double c = cd(rng);
        Checkpoint tuned, tuned_scaled;
        for (std::size_t i = 0; i < base.metas().size(); ++i) {
            auto b = base.read_f64(i);
            auto b2 = b;
            const auto d = delta.read_f64(i);
            for (std::size_t j = 0; j < b.size(); ++j) {
                b[j] += d[j];
                b2[j] += c * d[j];
            }
            tuned.add_values(base.metas()[i].name, DType::F64, base.metas()[i].shape, b);
            tuned_scaled.add_values(base.metas()[i].name, DType::F64, base.metas()[i].shape, b2);
        }
        const auto rows = layerwise_distance(base, tuned);
        const auto rows_scaled = layerwise_distance(base, tuned_scaled);
        ASSERT_EQ(rows.size(), rows_scaled.size());
        double top = 0.0;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            top = std::max(top, rows[r].normalized);
            EXPECT_GE(rows[r].normalized, 0.0);
            EXPECT_LE(rows[r].normalized, 1.0);
            EXPECT_NEAR(rows[r].normalized, rows_scaled[r].normalized, 1e-9);
        }
        EXPECT_EQ(top, 1.0);
    }
}

TEST(Report, TwoModelsSymmetricUnitDiagonal) {
    std::mt19937_64 rng(68);
    const auto base = random_checkpoint(rng);
    const auto m1 = random_like(rng, base);
    const auto m2 = random_like(rng, base);
    const std::vector<LabeledSource> models{{"m1", m1}, {"m2", m2}};
    const auto report = analytics_report(base, models, {});
    ASSERT_EQ(report.dv_cosine_matrix.size(), 2u);
    EXPECT_EQ(report.dv_cosine_matrix[0][0], 1.0);
    EXPECT_EQ(report.dv_cosine_matrix[1][1], 1.0);
    EXPECT_EQ(report.dv_cosine_matrix[0][1], report.dv_cosine_matrix[1][0]);
    const auto d1 = extract_dv(base, m1);
    const auto d2 = extract_dv(base, m2);
    // The report works in double precision on model - base; F32 deltas carry one rounding.
    EXPECT_NEAR(report.dv_cosine_matrix[0][1], cosine_similarity(d1, d2), 1e-6);
    EXPECT_NEAR(report.distance_from_base[0].second, euclidean_distance(base, m1), 1e-9);
    EXPECT_EQ(report.distance_from_base.back().first, "DEM");
}

TEST(Report, DemRowMatchesDirectComputation) {
    std::mt19937_64 rng(69);
    GenOptions opt = f64_options();
    const auto base = random_checkpoint(rng, opt);
    std::vector<Checkpoint> deltas;
    for (int k = 0; k < 4; ++k) deltas.push_back(random_like(rng, base, -1, 1, CheckpointKind::Delta));
    std::vector<LabeledSource> dvs;
    for (int k = 0; k < 4; ++k) dvs.push_back({fmt::format("d{}", k), deltas[k]});
    const auto report = analytics_report(base, {}, dvs);

    // Oracle: build sum 0.25 * dv_i directly in long double and compare cosines.
    const auto n = base.total_elements();
    std::vector<double> combined(n, 0.0);
    for (const auto& d : deltas) {
        const auto v = flat(d);
        for (std::size_t j = 0; j < n; ++j) combined[j] += 0.25 * v[j];
    }
    long double sq = 0.0L;
    for (double x : combined) sq += static_cast<long double>(x) * x;
    EXPECT_NEAR(report.distance_from_base.back().second, static_cast<double>(std::sqrt(sq)), 1e-12);
    ASSERT_EQ(report.dem_vs_dv_cosine.size(), 4u);
    for (int k = 0; k < 4; ++k) {
        EXPECT_NEAR(report.dem_vs_dv_cosine[k], static_cast<double>(naive_cosine(combined, flat(deltas[k]))), 1e-12);
    }
}

TEST(Report, EmptyInputsGiveBaseOnly) {
    std::mt19937_64 rng(70);
    const auto base = random_checkpoint(rng);
    const auto report = analytics_report(base, {}, {});
    EXPECT_EQ(report.base_tensors, base.metas().size());
    EXPECT_EQ(report.base_elements, base.total_elements());
    EXPECT_TRUE(report.distance_from_base.empty());
    EXPECT_TRUE(report.dv_cosine_matrix.empty());
    EXPECT_TRUE(report.layerwise.empty());
    const auto doc = nlohmann::json::parse(report.to_json());
    EXPECT_TRUE(doc["dv_cosine_matrix"].empty());
}

TEST(Report, JsonAndCsvShapes) {
    std::mt19937_64 rng(71);
    GenOptions opt;
    opt.prefix = "layers";
    const auto base = random_checkpoint(rng, opt);
    const auto m = random_like(rng, base);
    const auto d = random_like(rng, base, -1, 1, CheckpointKind::Delta);
    const std::vector<LabeledSource> models{{"model,a", m}};
    const std::vector<LabeledSource> dvs{{"dv", d}};
    const auto report = analytics_report(base, models, dvs);
    const auto doc = nlohmann::json::parse(report.to_json());
    for (const char* key : {"distance_from_base", "dv_cosine_matrix", "dem_vs_dv_cosine", "layerwise"}) {
        EXPECT_TRUE(doc.contains(key)) << key;
    }
    EXPECT_EQ(report.distance_csv().find("label,euclidean\n"), 0u);
    EXPECT_NE(report.distance_csv().find("\"model,a\","), std::string::npos);
    EXPECT_NE(report.cosine_csv().find("dv"), std::string::npos);
    EXPECT_THROW((void)analytics_report(base, models, models), ConfigError);
}
