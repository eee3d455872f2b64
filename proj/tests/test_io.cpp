#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>

#include "json.hpp"
#include "oracles.hpp"
#include "smind/io.hpp"
#include "test_util.hpp"

using namespace smind;
namespace fs = std::filesystem;

namespace {

// Values representable in float32, so the round trip can be exact.
Volume f32_volume(Index3 dims, uint64_t seed) {
    Volume v = oracle::random_volume(dims, seed, {0.7, 1.3, 2.5});
    for (double &x : v.data()) x = static_cast<double>(static_cast<float>(x * 100.0 - 50.0));
    return v;
}

std::string error_of(const std::function<void()> &f) {
    try {
        f();
    } catch (const FormatError &e) {
        return e.what();
    }
    return {};
}

fs::path nifti_dir() {
    const char *d = std::getenv("SMIND_NIFTI_DIR");
    return d ? fs::path(d) : fs::path();
}

} // namespace

TEST_CASE("volume round trip is bit exact") {
    const auto dir = testutil::scratch_dir("io_volume");
    const Volume v = f32_volume({9, 7, 5}, 1);
    write_volume(v, dir / "v.json");
    CHECK(fs::exists(dir / "v.raw"));
    CHECK(fs::file_size(dir / "v.raw") == 4 * v.size());
    const Volume r = read_volume(dir / "v.json");
    CHECK(r.dims() == v.dims());
    CHECK(r.spacing() == v.spacing());
    for (size_t n = 0; n < v.size(); ++n) CHECK(r[n] == v[n]);

    const auto header = nlohmann::json::parse(std::ifstream(dir / "v.json"));
    CHECK(header["dtype"] == "f32");
    CHECK(header["order"] == "x-fastest");
}

TEST_CASE("field round trip is bit exact") {
    const auto dir = testutil::scratch_dir("io_field");
    DeformationField zero({4, 5, 6}, {1, 1, 2});
    write_field(zero, dir / "z.json");
    const DeformationField rz = read_field(dir / "z.json");
    CHECK(rz.dims() == zero.dims());
    for (double x : rz.data()) CHECK(x == 0.0);

    DeformationField f({4, 5, 6}, {1, 1, 2});
    std::mt19937_64 rng(2);
    std::normal_distribution<float> g;
    for (double &x : f.data()) x = g(rng);
    write_field(f, dir / "f.json");
    const DeformationField rf = read_field(dir / "f.json");
    for (size_t n = 0; n < f.data().size(); ++n) CHECK(rf.data()[n] == f.data()[n]);

    CHECK(error_of([&] { read_field(dir / "../io_field/nonexistent.json"); }).find("cannot open") != std::string::npos);
    write_volume(Volume({2, 2, 2}, {1, 1, 1}), dir / "scalar.json");
    CHECK(error_of([&] { read_field(dir / "scalar.json"); }).find("expected 3 components") != std::string::npos);
    CHECK(error_of([&] { read_volume(dir / "f.json"); }).find("expected 1 component") != std::string::npos);
}

TEST_CASE("truncated payload names expected and actual sizes") {
    const auto dir = testutil::scratch_dir("io_trunc");
    write_volume(f32_volume({4, 4, 4}, 3), dir / "v.json");
    fs::resize_file(dir / "v.raw", 4 * 64 - 4);
    const std::string msg = error_of([&] { read_volume(dir / "v.json"); });
    CHECK(msg.find("256") != std::string::npos);
    CHECK(msg.find("252") != std::string::npos);
}

TEST_CASE("malformed headers are format errors") {
    const auto dir = testutil::scratch_dir("io_bad");
    std::ofstream(dir / "bad.json") << "{\"dims\": [2, 2";
    CHECK(error_of([&] { read_volume(dir / "bad.json"); }).find("at byte") != std::string::npos);
    std::ofstream(dir / "dtype.json")
        << R"({"dims": [1, 1, 1], "spacing": [1, 1, 1], "dtype": "f64", "order": "x-fastest", "components": 1, "payload": "dtype.raw"})";
    CHECK(error_of([&] { read_volume(dir / "dtype.json"); }).find("unknown dtype") != std::string::npos);
}

TEST_CASE("nifti files from the independent writer") {
    const fs::path dir = nifti_dir();
    if (dir.empty()) {
        MESSAGE("SMIND_NIFTI_DIR not set; skipping");
        return;
    }
    for (const char *name : {"plain_i16.nii", "plain_f32.nii.gz", "scaled_u8_be.nii"}) {
        CAPTURE(name);
        const Volume v = read_volume(dir / name);
        CHECK(v.dims() == Index3{16, 16, 8});
        CHECK(v.spacing()[0] == 1.0);
        CHECK(v.spacing()[1] == 1.0);
        CHECK(v.spacing()[2] == 2.5);
        const bool scaled = std::string(name).starts_with("scaled");
        for (int64_t k = 0; k < 8; k += 3)
            for (int64_t j = 0; j < 16; j += 5)
                for (int64_t i = 0; i < 16; i += 4) {
                    const double raw = static_cast<double>(i + 16 * j + 256 * k);
                    const double expect = scaled ? static_cast<double>(static_cast<int>(raw) % 256) * 0.5 + 1.0 : raw;
                    CHECK(v(i, j, k) == expect);
                }
    }
    const auto tmp = testutil::scratch_dir("io_nifti_bad");
    std::ofstream(tmp / "short.nii", std::ios::binary) << "abc";
    CHECK(error_of([&] { read_volume(tmp / "short.nii"); }).find("348") != std::string::npos);
}
