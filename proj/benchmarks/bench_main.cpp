#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "demerge/analytics.hpp"
#include "demerge/format.hpp"
#include "demerge/io.hpp"
#include "demerge/vector_arith.hpp"

using namespace demerge;

namespace {

Checkpoint make(std::size_t tensors, std::size_t elements, DType dtype, std::uint64_t seed,
                CheckpointKind kind = CheckpointKind::Model) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> value(-1.0, 1.0);
    Checkpoint ckpt(kind);
    std::vector<double> values(elements);
    for (std::size_t t = 0; t < tensors; ++t) {
        for (auto& v : values) v = value(rng);
        ckpt.add_values("layers." + std::to_string(t) + ".w", dtype, {elements}, values);
    }
    return ckpt;
}

constexpr std::size_t kTensors = 8;

void BM_ComposeDem(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto elements = static_cast<std::size_t>(state.range(1));
    const auto base = make(kTensors, elements, DType::F32, 1);
    std::vector<Checkpoint> dvs;
    std::vector<LabeledSource> labeled;
    WeightConfig weights;
    for (std::size_t i = 0; i < n; ++i) dvs.push_back(make(kTensors, elements, DType::F32, 10 + i, CheckpointKind::Delta));
    for (std::size_t i = 0; i < n; ++i) {
        weights.entries.push_back({"d" + std::to_string(i), 0.25});
        labeled.push_back({weights.entries.back().label, dvs[i]});
    }
    for (auto _ : state) benchmark::DoNotOptimize(compose_dem(base, labeled, weights));
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * (n + 1) * base.data_size()));
}
BENCHMARK(BM_ComposeDem)->Args({1, 1 << 16})->Args({5, 1 << 16})->Args({5, 1 << 18});

void BM_Crc32(benchmark::State& state) {
    std::vector<std::byte> bytes(static_cast<std::size_t>(state.range(0)), std::byte{0x5a});
    for (auto _ : state) benchmark::DoNotOptimize(Crc32::of(bytes));
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * bytes.size()));
}
BENCHMARK(BM_Crc32)->Arg(1 << 20)->Arg(1 << 24);

void BM_Serialize(benchmark::State& state) {
    const auto ckpt = make(kTensors, static_cast<std::size_t>(state.range(0)), DType::F32, 2);
    for (auto _ : state) benchmark::DoNotOptimize(serialize_checkpoint(ckpt));
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * ckpt.data_size()));
}
BENCHMARK(BM_Serialize)->Arg(1 << 16)->Arg(1 << 18);

void BM_ParseAndMaterialize(benchmark::State& state) {
    const auto bytes = serialize_checkpoint(make(kTensors, static_cast<std::size_t>(state.range(0)), DType::F32, 3));
    for (auto _ : state) benchmark::DoNotOptimize(CheckpointReader::from_bytes(bytes).materialize());
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * bytes.size()));
}
BENCHMARK(BM_ParseAndMaterialize)->Arg(1 << 16)->Arg(1 << 18);

void BM_Cosine(benchmark::State& state) {
    const auto elements = static_cast<std::size_t>(state.range(0));
    const auto a = make(kTensors, elements, DType::F32, 4, CheckpointKind::Delta);
    const auto b = make(kTensors, elements, DType::F32, 5, CheckpointKind::Delta);
    for (auto _ : state) benchmark::DoNotOptimize(cosine_similarity(a, b));
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * 2 * a.data_size()));
}
BENCHMARK(BM_Cosine)->Arg(1 << 16)->Arg(1 << 18);

} // namespace

BENCHMARK_MAIN();
