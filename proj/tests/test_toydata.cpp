// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/error.hpp"
#include "stepdistill/toydata.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

using namespace sd;
using Catch::Approx;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "stepdistill_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double ma = a.mean(), mb = b.mean();
    double sab = 0, saa = 0, sbb = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

} // namespace

TEST_CASE("zero-amplitude spec gives a silent condition and mouth") {
    DataSpec spec;
    spec.noise_sigma = 0.0;
    spec.cond_amplitude = 0.0;
    Rng rng(3);
    const Sample s = synthesize_sample(rng, spec);
    CHECK(s.cond.isZero(0.0));
    CHECK(s.frames.col(0).isZero(0.0));
}

TEST_CASE("same seed and index give bitwise-identical samples") {
    DataSpec spec;
    spec.seed = 42;
    const Sample a = synthesize_indexed(spec, 17), b = synthesize_indexed(spec, 17);
    CHECK(a.frames == b.frames);
    CHECK(a.cond == b.cond);
    CHECK(a.seed == b.seed);
    CHECK_FALSE(synthesize_indexed(spec, 18).frames == a.frames);
}

TEST_CASE("head amplitude averages to the middle of its range") {
    DataSpec spec;
    spec.seed = 7;
    double acc = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const Sample s = synthesize_indexed(spec, static_cast<std::uint64_t>(i));
        acc += std::hypot(s.frames(0, 1), s.frames(0, 2));
    }
    CHECK(std::abs(acc / n - 0.15) < 0.005);
}

TEST_CASE("frame_align block means") {
    Eigen::MatrixXd c = Eigen::MatrixXd::Constant(64, 1, 0.7);
    CHECK(frame_align(c, 16).isApproxToConstant(0.7, 1e-15));

    Eigen::MatrixXd seq(8, 1);
    seq << 1, 2, 3, 4, 5, 6, 7, 8;
    const Eigen::VectorXd out = frame_align(seq, 2);
    CHECK(out[0] == 2.5);
    CHECK(out[1] == 6.5);

    Rng rng(11);
    const Eigen::MatrixXd r = rng.normal_matrix(48, 3);
    const Eigen::VectorXd got = frame_align(r, 12);
    for (int f = 0; f < 12; ++f) {
        double sum = 0.0;
        for (int j = 0; j < 4; ++j)
            for (int ch = 0; ch < 3; ++ch) sum += r(f * 4 + j, ch);
        CHECK(std::abs(got[f] - sum / 12.0) < 1e-12);
    }
    CHECK_THROWS_AS(frame_align(Eigen::MatrixXd::Zero(10, 1), 3), ShapeError);
}

TEST_CASE("conditions are nonnegative and drive the mouth channel") {
    DataSpec spec;
    spec.seed = 9;
    spec.count = 1000;
    const Dataset d = synthesize_dataset(spec);
    Eigen::VectorXd env(spec.count * spec.frames), mouth(spec.count * spec.frames);
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        CHECK(d.samples[i].cond.minCoeff() >= 0.0);
        env.segment(static_cast<Eigen::Index>(i) * spec.frames, spec.frames) = frame_align(d.samples[i].cond, spec.frames);
        mouth.segment(static_cast<Eigen::Index>(i) * spec.frames, spec.frames) = d.samples[i].frames.col(0);
    }
    CHECK(pearson(env, mouth) > 0.95);
}

TEST_CASE("head channels are independent of the condition") {
    DataSpec spec;
    spec.seed = 21;
    spec.count = 10000;
    const Dataset d = synthesize_dataset(spec);
    Eigen::VectorXd env(spec.count), h1(spec.count), h2(spec.count);
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        const Eigen::VectorXd a = frame_align(d.samples[i].cond, spec.frames);
        env[static_cast<Eigen::Index>(i)] = a[3];
        h1[static_cast<Eigen::Index>(i)] = d.samples[i].frames(3, 1);
        h2[static_cast<Eigen::Index>(i)] = d.samples[i].frames(3, 2);
    }
    CHECK(std::abs(pearson(env, h1)) < 0.05);
    CHECK(std::abs(pearson(env, h2)) < 0.05);
}

TEST_CASE("dataset file round-trips bitwise") {
    DataSpec spec;
    spec.seed = 5;
    spec.count = 20;
    const Dataset d = synthesize_dataset(spec);
    const auto path = temp_path("roundtrip.bin");
    write_dataset(d, path);
    const Dataset back = read_dataset(path);
    CHECK(back.spec == d.spec);
    REQUIRE(back.samples.size() == d.samples.size());
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        CHECK(back.samples[i].frames == d.samples[i].frames);
        CHECK(back.samples[i].cond == d.samples[i].cond);
        CHECK(back.samples[i].seed == d.samples[i].seed);
    }
    std::ifstream is(path, std::ios::binary);
    char magic[4];
    is.read(magic, 4);
    CHECK(std::string(magic, 4) == "STPD");
}

TEST_CASE("corrupt dataset files are rejected") {
    DataSpec spec;
    spec.count = 4;
    const auto path = temp_path("corrupt.bin");
    write_dataset(synthesize_dataset(spec), path);
    const auto size = std::filesystem::file_size(path);

    SECTION("truncated payload") {
        std::filesystem::resize_file(path, size - 7);
        CHECK_THROWS_AS(read_dataset(path), DataError);
    }
    SECTION("header count disagrees with payload length") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4 + 1 + 16);
        const std::uint64_t wrong = 5;
        f.write(reinterpret_cast<const char*>(&wrong), sizeof wrong);
        f.close();
        CHECK_THROWS_AS(read_dataset(path), DataError);
    }
    SECTION("bad magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
        f.close();
        CHECK_THROWS_AS(read_dataset(path), DataError);
    }
}

TEST_CASE("invalid specs are configuration errors") {
    DataSpec spec;
    spec.cond_len = 65;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = DataSpec{};
    spec.noise_sigma = -1.0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    Rng rng(1);
    CHECK_THROWS_AS(synthesize_sample(rng, spec), ConfigError);
}

TEST_CASE("data spec JSON round-trip") {
    DataSpec spec;
    spec.count = 12;
    spec.seed = 99;
    spec.noise_sigma = 0.1;
    const DataSpec back = nlohmann::json(spec).get<DataSpec>();
    CHECK(back == spec);
}
