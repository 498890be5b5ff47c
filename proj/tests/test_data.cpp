#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "scalevar/pyramid.hpp"
#include "scalevar/shard.hpp"

using namespace scalevar;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "scalevar_test_data";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("generate_field is deterministic per (seed, class)") {
    auto a = generate_field(42, 3, 6, 6);
    auto b = generate_field(42, 3, 6, 6);
    REQUIRE(a == b);
    auto c = generate_field(43, 3, 6, 6);
    CHECK(a != c);
}

TEST_CASE("field values stay in [0,1]") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto f = generate_field(seed, static_cast<std::uint32_t>(seed % 8), 6, 6);
        for (double v : f) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("classes separate in coarse pools, seeds only in detail") {
    const std::uint32_t h = 6, w = 6;
    double cross_class = 0.0;
    double within_class = 0.0;
    int n = 0;
    for (std::uint64_t seed = 0; seed < 128; ++seed) {
        auto f0 = generate_field(seed, 0, h, w);
        auto f1 = generate_field(seed, 1, h, w);
        auto f0b = generate_field(seed + 1000, 0, h, w);
        auto p0 = average_pool(f0, h, w, 2, 2);
        auto p1 = average_pool(f1, h, w, 2, 2);
        auto p0b = average_pool(f0b, h, w, 2, 2);
        CHECK(f0 != f0b);  // detail differs between seeds
        for (int i = 0; i < 4; ++i) {
            cross_class += std::abs(p0[i] - p1[i]);
            within_class += std::abs(p0[i] - p0b[i]);
            ++n;
        }
    }
    cross_class /= n;
    within_class /= n;
    CHECK(cross_class > 0.0);
    CHECK(within_class < cross_class);
}

TEST_CASE("build_pyramid constant fields hit the edge bins") {
    ScaleSchedule sched = ScaleSchedule::toy(64);
    std::vector<double> zeros(36, 0.0);
    TokenPyramid p0 = build_pyramid(zeros, 0, sched);
    for (const auto& map : p0.maps) {
        for (auto tok : map) CHECK(tok == 0);
    }
    std::vector<double> ones(36, 1.0);
    TokenPyramid p1 = build_pyramid(ones, 0, sched);
    for (const auto& map : p1.maps) {
        for (auto tok : map) CHECK(tok == 63);
    }
}

TEST_CASE("build_pyramid matches a direct pool-then-bin oracle") {
    ScaleSchedule sched;
    sched.grids = {{1, 1}, {2, 2}, {4, 4}};
    sched.vocab = 8;
    auto field = generate_field(7, 2, 4, 4);
    TokenPyramid py = build_pyramid(field, 2, sched);

    for (std::uint32_t k = 1; k <= 3; ++k) {
        const auto [h, w] = sched.grids[k - 1];
        // Independent oracle: accumulate source pixels into floor-ratio cells.
        std::vector<double> sums(static_cast<std::size_t>(h) * w, 0.0);
        std::vector<int> counts(sums.size(), 0);
        for (std::uint32_t r = 0; r < 4; ++r) {
            for (std::uint32_t c = 0; c < 4; ++c) {
                const std::uint32_t rr = r * h / 4, cc = c * w / 4;
                sums[rr * w + cc] += field[r * 4 + c];
                counts[rr * w + cc] += 1;
            }
        }
        for (std::size_t i = 0; i < sums.size(); ++i) {
            const double mean = sums[i] / counts[i];
            auto bin = static_cast<std::uint16_t>(std::min<int>(7, static_cast<int>(mean * 8)));
            CHECK(py.maps[k - 1][i] == bin);
        }
    }
}

TEST_CASE("pyramid maps are recomputable from the sample index") {
    ScaleSchedule sched = ScaleSchedule::toy(64);
    const std::uint64_t base_seed = 99;
    for (std::uint64_t i = 0; i < 16; ++i) {
        TokenPyramid a = make_sample(sched, 8, base_seed, i);
        TokenPyramid b = make_sample(sched, 8, base_seed, i);
        REQUIRE(a == b);
        a.validate(sched);
        CHECK(a.class_label == i % 8);
    }
}

TEST_CASE("finest-scale tokens cover at least half the bins for small vocabularies") {
    ScaleSchedule sched = ScaleSchedule::toy(16);
    std::set<std::uint16_t> seen;
    for (std::uint64_t i = 0; i < 1000; ++i) {
        TokenPyramid p = make_sample(sched, 8, 1234, i);
        for (auto tok : p.maps.back()) seen.insert(tok);
    }
    CHECK(seen.size() >= 8);
}

TEST_CASE("shard round-trip is the identity") {
    ShardMeta meta;
    meta.schedule = ScaleSchedule::toy(64);
    meta.num_classes = 8;
    meta.base_seed = 77;

    SECTION("empty shard") {
        auto path = temp_file("empty.svpy");
        write_shard(path.string(), meta, {});
        Shard back = read_shard(path.string());
        CHECK(back.meta == meta);
        CHECK(back.samples.empty());
    }

    SECTION("ten random pyramids") {
        std::vector<TokenPyramid> samples;
        for (std::uint64_t i = 0; i < 10; ++i) {
            samples.push_back(make_sample(meta.schedule, meta.num_classes, meta.base_seed, i));
        }
        auto path = temp_file("ten.svpy");
        write_shard(path.string(), meta, samples);
        Shard back = read_shard(path.string());
        CHECK(back.meta == meta);
        REQUIRE(back.samples.size() == 10);
        for (std::size_t i = 0; i < 10; ++i) CHECK(back.samples[i] == samples[i]);
    }
}

TEST_CASE("shard corruption is detected") {
    ShardMeta meta;
    meta.schedule = ScaleSchedule::toy(64);
    meta.num_classes = 8;
    meta.base_seed = 5;
    std::vector<TokenPyramid> samples;
    for (std::uint64_t i = 0; i < 3; ++i) {
        samples.push_back(make_sample(meta.schedule, meta.num_classes, meta.base_seed, i));
    }
    auto path = temp_file("corrupt.svpy");
    write_shard(path.string(), meta, samples);

    auto raw = [&] {
        std::ifstream f(path, std::ios::binary);
        return std::vector<char>((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
    }();

    SECTION("flipped payload byte fails the sample checksum") {
        auto bytes = raw;
        bytes[bytes.size() / 2] ^= 0x40;
        auto bad = temp_file("corrupt_payload.svpy");
        std::ofstream(bad, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        CHECK_THROWS_AS(read_shard(bad.string()), format_error);
    }

    SECTION("bad magic") {
        auto bytes = raw;
        bytes[0] = 'X';
        auto bad = temp_file("corrupt_magic.svpy");
        std::ofstream(bad, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        CHECK_THROWS_AS(read_shard(bad.string()), format_error);
    }

    SECTION("truncated payload") {
        auto bytes = raw;
        bytes.resize(bytes.size() - 7);
        auto bad = temp_file("corrupt_trunc.svpy");
        std::ofstream(bad, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        CHECK_THROWS_AS(read_shard(bad.string()), format_error);
    }

    SECTION("missing file is an I/O error") {
        CHECK_THROWS_AS(read_shard(temp_file("nope.svpy").string()), io_error);
    }
}

TEST_CASE("batch iterator shapes and determinism") {
    BatchIterator it(5, 2, 42);
    auto batches = it.epoch_batches(0);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 2);
    CHECK(batches[1].size() == 2);
    CHECK(batches[2].size() == 1);

    auto again = it.epoch_batches(0);
    CHECK(batches == again);

    auto other_epoch = it.epoch_batches(1);
    CHECK(batches != other_epoch);
}

TEST_CASE("batch iterator epoch covers the sample multiset exactly") {
    BatchIterator it(97, 8, 7);
    for (std::uint64_t epoch : {0ull, 3ull}) {
        std::multiset<std::uint32_t> seen;
        for (const auto& b : it.epoch_batches(epoch)) seen.insert(b.begin(), b.end());
        REQUIRE(seen.size() == 97);
        for (std::uint32_t i = 0; i < 97; ++i) CHECK(seen.count(i) == 1);
    }
}
