#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "demerge/checkpoint.hpp"
#include "demerge/errors.hpp"
#include "demerge/format.hpp"
#include "demerge/io.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace demerge;
using namespace demerge::testing;

namespace {

std::vector<std::byte> bytes_of(std::initializer_list<unsigned> values) {
    std::vector<std::byte> out;
    for (auto v : values) out.push_back(static_cast<std::byte>(v));
    return out;
}

std::uint64_t read_u64_le(std::span<const std::byte> bytes, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(bytes[at + i]);
    return v;
}

std::string header_of(std::span<const std::byte> file) {
    const auto len = read_u64_le(file, 12);
    return std::string(reinterpret_cast<const char*>(file.data()) + 20, len);
}

std::span<const std::byte> data_of(std::span<const std::byte> file) {
    const auto len = read_u64_le(file, 12);
    return file.subspan(20 + len);
}

// Rebuilds a file image from an edited header, recomputing both CRC fields
// the way an honest but wrong writer would, so only the edited property is invalid.
std::vector<std::byte> with_header(nlohmann::ordered_json header, std::span<const std::byte> data) {
    header.erase("index_crc32");
    const auto unsigned_text = header.dump();
    header["index_crc32"] = crc32_bitwise(unsigned_text);
    const auto text = header.dump();
    std::vector<std::byte> out(20);
    std::memcpy(out.data(), "DEMCKPT\0", 8);
    out[8] = std::byte{1};
    for (int i = 0; i < 8; ++i) out[12 + i] = static_cast<std::byte>((text.size() >> (8 * i)) & 0xFF);
    for (char c : text) out.push_back(static_cast<std::byte>(c));
    out.insert(out.end(), data.begin(), data.end());
    return out;
}

Checkpoint two_tensor_example() {
    Checkpoint ckpt;
    ckpt.add_values("b", DType::F32, {2}, std::vector<double>{1.0, 2.0});
    ckpt.add_values("a", DType::F32, {3}, std::vector<double>{3.0, 4.0, 5.0});
    return ckpt;
}

} // namespace

TEST(Crc32, MatchesBitwiseReference) {
    EXPECT_EQ(Crc32::of(std::string_view("123456789")), 0xCBF43926u);
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::byte> buf(rng() % 4096);
        for (auto& b : buf) b = static_cast<std::byte>(rng());
        EXPECT_EQ(Crc32::of(buf), crc32_bitwise(buf));
        Crc32 incremental;
        const auto cut = buf.empty() ? 0 : rng() % buf.size();
        incremental.update(std::span(buf).first(cut));
        incremental.update(std::span(buf).subspan(cut));
        EXPECT_EQ(incremental.value(), crc32_bitwise(buf));
    }
}

TEST(TensorStore, ScalarF32OneEncodesLittleEndian) {
    Checkpoint ckpt;
    ckpt.add_values("a", DType::F32, {}, std::vector<double>{1.0});
    const auto file = serialize_checkpoint(ckpt);
    EXPECT_EQ(std::vector<std::byte>(data_of(file).begin(), data_of(file).end()), bytes_of({0x00, 0x00, 0x80, 0x3F}));
    EXPECT_EQ(ckpt.metas()[0].elements(), 1u);
}

TEST(TensorStore, EmptyCheckpointIsValid) {
    Checkpoint empty;
    const auto file = serialize_checkpoint(empty);
    EXPECT_TRUE(data_of(file).empty());
    auto header = nlohmann::json::parse(header_of(file));
    EXPECT_TRUE(header["tensors"].empty());
    EXPECT_EQ(header["data_crc32"], 0u);
    auto reader = CheckpointReader::from_bytes(file);
    EXPECT_TRUE(reader.metas().empty());
    EXPECT_EQ(reader.materialize(), empty);
}

TEST(TensorStore, OutOfOrderTensorsAreSortedWithOffsets) {
    const auto file = serialize_checkpoint(two_tensor_example());
    auto header = nlohmann::json::parse(header_of(file));
    ASSERT_EQ(header["tensors"].size(), 2u);
    EXPECT_EQ(header["tensors"][0]["name"], "a");
    EXPECT_EQ(header["tensors"][0]["offset"], 0);
    EXPECT_EQ(header["tensors"][0]["length"], 12);
    EXPECT_EQ(header["tensors"][1]["name"], "b");
    EXPECT_EQ(header["tensors"][1]["offset"], 12);
    EXPECT_EQ(header["tensors"][1]["length"], 8);
    EXPECT_EQ(header["data_crc32"], crc32_bitwise(data_of(file)));
    EXPECT_EQ(header["kind"], "model");
}

TEST(TensorStore, HeaderLayoutIsExact) {
    Checkpoint ckpt;
    ckpt.add_values("w", DType::F64, {1, 2}, std::vector<double>{0.5, -2.0});
    ckpt.set_kind(CheckpointKind::Delta);
    const auto file = serialize_checkpoint(ckpt);
    ASSERT_GE(file.size(), 20u);
    EXPECT_EQ(std::memcmp(file.data(), "DEMCKPT\0", 8), 0);
    EXPECT_EQ(file[8], std::byte{1});
    EXPECT_EQ(file[9], std::byte{0});
    const auto data = data_of(file);
    const auto crc = crc32_bitwise(data);
    const std::string unsigned_header = fmt::format(
        R"({{"tensors":[{{"name":"w","dtype":"f64","shape":[1,2],"offset":0,"length":16}}],"data_crc32":{},"kind":"delta"}})",
        crc);
    const std::string expected = unsigned_header.substr(0, unsigned_header.size() - 1) +
                                 fmt::format(R"(,"index_crc32":{}}})", crc32_bitwise(unsigned_header));
    EXPECT_EQ(header_of(file), expected);
    EXPECT_EQ(read_u64_le(file, 12), expected.size());
}

TEST(TensorStore, InsertionOrderDoesNotMatter) {
    Checkpoint forward;
    Checkpoint backward;
    const std::vector<std::string> names{"layers.0.w", "embed", "layers.10.w", "layers.2.b", "Z"};
    for (std::size_t i = 0; i < names.size(); ++i) {
        forward.add_values(names[i], DType::F32, {2}, std::vector<double>{double(i), -double(i)});
    }
    for (std::size_t i = names.size(); i-- > 0;) {
        backward.add_values(names[i], DType::F32, {2}, std::vector<double>{double(i), -double(i)});
    }
    EXPECT_EQ(serialize_checkpoint(forward), serialize_checkpoint(backward));
    std::vector<std::string> seen;
    for (const auto& m : forward.metas()) seen.push_back(m.name);
    EXPECT_TRUE(std::is_sorted(seen.begin(), seen.end()));
}

TEST(TensorStore, DuplicateNameIsFormatError) {
    Checkpoint ckpt;
    ckpt.add_values("a", DType::F32, {1}, std::vector<double>{1.0});
    EXPECT_THROW(ckpt.add_values("a", DType::F64, {1}, std::vector<double>{1.0}), FormatError);
    std::vector<TensorMeta> metas(2);
    metas[0].name = metas[1].name = "x";
    EXPECT_THROW((void)canonical_layout(metas), FormatError);
}

TEST(TensorStore, RoundTripIsByteIdentical) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        GenOptions opt;
        opt.min_tensors = 0;
        opt.max_tensors = 8;
        opt.max_elements = 200;
        const auto kind = trial % 2 ? CheckpointKind::Delta : CheckpointKind::Model;
        const auto ckpt = random_checkpoint(rng, opt, kind);
        const auto first = serialize_checkpoint(ckpt);
        const auto reader = CheckpointReader::from_bytes(first);
        EXPECT_EQ(reader.materialize(), ckpt);
        EXPECT_EQ(serialize_checkpoint(reader), first);
        EXPECT_EQ(serialize_checkpoint(ckpt), first);
    }
}

TEST(TensorStore, FileRoundTripAndLazyReads) {
    TempDir dir;
    std::mt19937_64 rng(3);
    const auto ckpt = random_checkpoint(rng);
    save_checkpoint(ckpt, dir / "a.demckpt");
    auto reader = CheckpointReader::open(dir / "a.demckpt");
    for (std::size_t i = 0; i < ckpt.metas().size(); ++i) {
        const auto p = ckpt.payload(i);
        EXPECT_EQ(reader.read_bytes(i), std::vector<std::byte>(p.begin(), p.end()));
    }
    EXPECT_EQ(load_checkpoint(dir / "a.demckpt"), ckpt);
    // No stray temp files beside the destination.
    EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir.path()), {}), 1);
}

TEST(TensorStore, StreamingWriterMatchesSerializer) {
    TempDir dir;
    std::mt19937_64 rng(5);
    const auto ckpt = random_checkpoint(rng, {}, CheckpointKind::Delta);
    CheckpointFileWriter writer(dir / "s.demckpt");
    copy_checkpoint(ckpt, writer);
    std::ifstream in(dir / "s.demckpt", std::ios::binary);
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), {});
    const auto expected = serialize_checkpoint(ckpt);
    ASSERT_EQ(raw.size(), expected.size());
    EXPECT_EQ(std::memcmp(raw.data(), expected.data(), raw.size()), 0);
    EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir.path()), {}), 1);
}

TEST(TensorStore, AbandonedWriterLeavesNothing) {
    TempDir dir;
    {
        CheckpointFileWriter writer(dir / "x.demckpt");
        Checkpoint ckpt;
        ckpt.add_values("a", DType::F32, {1}, std::vector<double>{1.0});
        writer.begin(ckpt.kind(), ckpt.metas());
    }
    EXPECT_TRUE(std::filesystem::is_empty(dir.path()));
}

TEST(TensorStore, CopyPeakBoundedByLargestTensor) {
    std::mt19937_64 rng(9);
    GenOptions opt;
    opt.max_elements = 5000;
    for (int trial = 0; trial < 20; ++trial) {
        const auto ckpt = random_checkpoint(rng, opt);
        CheckpointBuilder sink;
        const auto stats = copy_checkpoint(ckpt, sink);
        EXPECT_LE(stats.peak_buffer_bytes, ckpt.largest_tensor_bytes());
        EXPECT_EQ(sink.take(), ckpt);
    }
}

TEST(TensorStore, DeclaredLengthBeyondFileIsFormatError) {
    const auto file = serialize_checkpoint(two_tensor_example());
    auto header = nlohmann::ordered_json::parse(header_of(file));
    header["tensors"][1]["shape"] = {200};
    header["tensors"][1]["length"] = 800;
    EXPECT_THROW((void)CheckpointReader::from_bytes(with_header(header, data_of(file))), FormatError);
}

TEST(TensorStore, TruncatedPayloadIsFormatError) {
    auto file = serialize_checkpoint(two_tensor_example());
    file.pop_back();
    EXPECT_THROW((void)CheckpointReader::from_bytes(file), FormatError);
    file.resize(10);
    EXPECT_THROW((void)CheckpointReader::from_bytes(file), FormatError);
}

TEST(TensorStore, UnsortedIndexIsFormatError) {
    const auto file = serialize_checkpoint(two_tensor_example());
    auto header = nlohmann::ordered_json::parse(header_of(file));
    std::swap(header["tensors"][0]["name"], header["tensors"][1]["name"]);
    EXPECT_THROW((void)CheckpointReader::from_bytes(with_header(header, data_of(file))), FormatError);
}

TEST(TensorStore, BadMagicAndVersionAreFormatErrors) {
    auto file = serialize_checkpoint(two_tensor_example());
    auto bad_magic = file;
    bad_magic[0] = std::byte{'X'};
    EXPECT_THROW((void)CheckpointReader::from_bytes(bad_magic), FormatError);
    auto bad_version = file;
    bad_version[8] = std::byte{2};
    EXPECT_THROW((void)CheckpointReader::from_bytes(bad_version), FormatError);
}

TEST(TensorStore, DataCorruptionIsIntegrityError) {
    auto file = serialize_checkpoint(two_tensor_example());
    file.back() ^= std::byte{0x01};
    EXPECT_THROW((void)CheckpointReader::from_bytes(file), IntegrityError);
}

TEST(TensorStore, HeaderNameCorruptionIsRejected) {
    auto file = serialize_checkpoint(two_tensor_example());
    // Rename "b" to "d": still valid JSON and still sorted, so only the index CRC can catch it.
    const auto header = header_of(file);
    const auto at = 20 + header.find("\"b\"") + 1;
    file[at] = std::byte{'d'};
    EXPECT_THROW((void)CheckpointReader::from_bytes(file), IntegrityError);
}

TEST(TensorStore, SingleByteMutationsNeverAccepted) {
    std::mt19937_64 rng(13);
    const auto file = serialize_checkpoint(two_tensor_example());
    for (std::size_t pos = 0; pos < file.size(); ++pos) {
        for (int flip : {0x01, 0x80, 0x20}) {
            auto mutated = file;
            mutated[pos] ^= static_cast<std::byte>(flip);
            try {
                (void)CheckpointReader::from_bytes(mutated);
                ADD_FAILURE() << "mutation at byte " << pos << " accepted";
            } catch (const FormatError&) {
            } catch (const IntegrityError&) {
            }
        }
    }
}

TEST(TensorStore, TrailingBytesAreFormatError) {
    auto file = serialize_checkpoint(two_tensor_example());
    file.push_back(std::byte{0});
    EXPECT_THROW((void)CheckpointReader::from_bytes(file), FormatError);
}

TEST(TensorStore, NonCanonicalHeaderIsFormatError) {
    const auto file = serialize_checkpoint(two_tensor_example());
    auto header = nlohmann::ordered_json::parse(header_of(file));
    header["tensors"][0]["shape"] = {3};
    const auto unsigned_text = [&] {
        auto h = header;
        h.erase("index_crc32");
        return h.dump();
    }();
    // Same content, pretty-printed: valid JSON, wrong bytes.
    header["index_crc32"] = crc32_bitwise(unsigned_text);
    const auto pretty = header.dump(1);
    std::vector<std::byte> out(file.begin(), file.begin() + 20);
    for (int i = 0; i < 8; ++i) out[12 + i] = static_cast<std::byte>((pretty.size() >> (8 * i)) & 0xFF);
    for (char c : pretty) out.push_back(static_cast<std::byte>(c));
    const auto data = data_of(file);
    out.insert(out.end(), data.begin(), data.end());
    EXPECT_THROW((void)CheckpointReader::from_bytes(out), FormatError);
}

TEST(Compatibility, IdenticalStructureIsOk) {
    std::mt19937_64 rng(1);
    const auto a = random_checkpoint(rng);
    const auto b = random_like(rng, a);
    EXPECT_NO_THROW(check_compatibility(a, b));
}

TEST(Compatibility, MissingTensorIsNamed) {
    Checkpoint a;
    a.add_values("x", DType::F32, {2}, std::vector<double>{1, 2});
    a.add_values("y", DType::F32, {1}, std::vector<double>{1});
    Checkpoint b;
    b.add_values("x", DType::F32, {2}, std::vector<double>{1, 2});
    try {
        check_compatibility(a, b);
        FAIL() << "expected CompatibilityError";
    } catch (const CompatibilityError& e) {
        EXPECT_EQ(e.mismatched(), std::vector<std::string>{"y"});
    }
}

TEST(Compatibility, ShapeMustMatchExactly) {
    Checkpoint a;
    a.add_values("w", DType::F32, {4}, std::vector<double>{1, 2, 3, 4});
    Checkpoint b;
    b.add_values("w", DType::F32, {2, 2}, std::vector<double>{1, 2, 3, 4});
    EXPECT_THROW(check_compatibility(a, b), CompatibilityError);
    Checkpoint c;
    c.add_values("w", DType::F64, {4}, std::vector<double>{1, 2, 3, 4});
    EXPECT_THROW(check_compatibility(a, c), CompatibilityError);
}

TEST(Tensor, ElementCountOfEmptyShapeIsOne) {
    EXPECT_EQ(element_count(Shape{}), 1u);
    EXPECT_EQ(element_count(Shape{0, 5}), 0u);
    EXPECT_EQ(element_count(Shape{2, 3, 4}), 24u);
    EXPECT_THROW((void)element_count(Shape{1ull << 40, 1ull << 40}), FormatError);
}

TEST(Tensor, ZeroElementTensorsRoundTrip) {
    Checkpoint ckpt;
    ckpt.add_values("empty", DType::F64, {0, 3}, std::vector<double>{});
    ckpt.add_values("s", DType::F32, {}, std::vector<double>{2.5});
    const auto file = serialize_checkpoint(ckpt);
    EXPECT_EQ(CheckpointReader::from_bytes(file).materialize(), ckpt);
}
