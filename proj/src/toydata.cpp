// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/toydata.hpp"

#include "stepdistill/error.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace sd {

static_assert(std::endian::native == std::endian::little, "dataset IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'T', 'P', 'D'};
constexpr std::uint8_t kVersion = 1;

double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("dataset: unexpected end of file");
    return v;
}

void put_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) put<float>(os, static_cast<float>(m(r, c)));
}

Eigen::MatrixXd get_matrix(std::istream& is, int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = static_cast<double>(get<float>(is));
    return m;
}

} // namespace

void DataSpec::validate() const {
    if (frames < 1 || feature_dim < 1 || cond_len < 1 || cond_channels < 1)
        throw ConfigError("data spec: all dimensions must be >= 1");
    if (cond_len % frames != 0) throw ConfigError("data spec: cond_len must be a multiple of frames");
    if (count < 1) throw ConfigError("data spec: count must be >= 1");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("data spec: noise_sigma must be >= 0");
    if (!(cond_amplitude >= 0.0) || !std::isfinite(cond_amplitude))
        throw ConfigError("data spec: cond_amplitude must be >= 0");
}

void to_json(nlohmann::json& j, const DataSpec& s) {
    j = nlohmann::json{{"frames", s.frames},           {"feature_dim", s.feature_dim},
                       {"cond_len", s.cond_len},       {"cond_channels", s.cond_channels},
                       {"count", s.count},             {"seed", s.seed},
                       {"noise_sigma", s.noise_sigma}, {"cond_amplitude", s.cond_amplitude}};
}

void from_json(const nlohmann::json& j, DataSpec& s) {
    DataSpec d;
    s.frames = j.value("frames", d.frames);
    s.feature_dim = j.value("feature_dim", d.feature_dim);
    s.cond_len = j.value("cond_len", d.cond_len);
    s.cond_channels = j.value("cond_channels", d.cond_channels);
    s.count = j.value("count", d.count);
    s.seed = j.value("seed", d.seed);
    s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    s.cond_amplitude = j.value("cond_amplitude", d.cond_amplitude);
}

Eigen::VectorXd frame_align(const Eigen::MatrixXd& cond, int frames) {
    if (frames < 1 || cond.rows() % frames != 0)
        throw ShapeError("frame_align: cond length must be a multiple of the frame count");
    const Eigen::Index block = cond.rows() / frames;
    Eigen::VectorXd out(frames);
    for (int i = 0; i < frames; ++i) out(i) = cond.middleRows(i * block, block).mean();
    return out;
}

Sample synthesize_sample(Rng& rng, const DataSpec& spec) {
    spec.validate();
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const int F = spec.frames, D = spec.feature_dim, L = spec.cond_len, C = spec.cond_channels;

    Sample s;
    s.cond.resize(L, C);
    for (int c = 0; c < C; ++c) {
        double amp[3], freq[3], phase[3];
        for (int m = 0; m < 3; ++m) {
            amp[m] = spec.cond_amplitude * rng.uniform(0.5, 1.0);
            freq[m] = rng.uniform(1.0, 4.0);
            phase[m] = rng.uniform(0.0, two_pi);
        }
        for (int j = 0; j < L; ++j) {
            double acc = 0.0;
            for (int m = 0; m < 3; ++m) acc += amp[m] * std::sin(two_pi * freq[m] * j / L + phase[m]);
            s.cond(j, c) = to_f32(std::abs(acc));
        }
    }

    const Eigen::VectorXd envelope = frame_align(s.cond, F);
    const double head_amp = rng.uniform(0.0, 0.3);
    const double head_phase = rng.uniform(0.0, two_pi);
    s.frames.resize(F, D);
    for (int i = 0; i < F; ++i) {
        const double angle = two_pi * i / F + head_phase;
        const double values[3] = {envelope(i) + spec.noise_sigma * rng.normal(), head_amp * std::sin(angle),
                                  head_amp * std::cos(angle)};
        for (int d = 0; d < D; ++d) s.frames(i, d) = to_f32(d < 3 ? values[d] : 0.1 * rng.normal());
    }
    return s;
}

std::uint64_t sample_seed(const DataSpec& spec, std::uint64_t index) {
    return derive_seed(spec.seed, "toydata.sample", index);
}

Sample synthesize_indexed(const DataSpec& spec, std::uint64_t index) {
    const std::uint64_t seed = sample_seed(spec, index);
    Rng rng(seed);
    Sample s = synthesize_sample(rng, spec);
    s.seed = seed;
    return s;
}

Dataset synthesize_dataset(const DataSpec& spec) {
    spec.validate();
    Dataset data{spec, {}};
    data.samples.reserve(spec.count);
    for (std::uint64_t i = 0; i < spec.count; ++i) data.samples.push_back(synthesize_indexed(spec, i));
    return data;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
    const DataSpec& s = data.spec;
    s.validate();
    if (data.samples.size() != s.count) throw DataError("dataset: sample count disagrees with spec");
    for (const auto& smp : data.samples)
        if (smp.frames.rows() != s.frames || smp.frames.cols() != s.feature_dim || smp.cond.rows() != s.cond_len ||
            smp.cond.cols() != s.cond_channels)
            throw DataError("dataset: sample shape disagrees with spec");

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("dataset: cannot open for writing: " + path.string());
    os.write(kMagic, 4);
    put<std::uint8_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.frames));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.feature_dim));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.cond_len));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.cond_channels));
    put<std::uint64_t>(os, s.count);
    put<std::uint64_t>(os, s.seed);
    put<double>(os, s.noise_sigma);
    put<double>(os, s.cond_amplitude);
    for (const auto& smp : data.samples) put<std::uint64_t>(os, smp.seed);
    for (const auto& smp : data.samples) {
        put_matrix(os, smp.frames);
        put_matrix(os, smp.cond);
    }
    if (!os) throw DataError("dataset: write failed: " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("dataset: cannot open: " + path.string());
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw DataError("dataset: bad magic");
    if (get<std::uint8_t>(is) != kVersion) throw DataError("dataset: unsupported version");

    DataSpec s;
    s.frames = static_cast<int>(get<std::uint32_t>(is));
    s.feature_dim = static_cast<int>(get<std::uint32_t>(is));
    s.cond_len = static_cast<int>(get<std::uint32_t>(is));
    s.cond_channels = static_cast<int>(get<std::uint32_t>(is));
    s.count = get<std::uint64_t>(is);
    s.seed = get<std::uint64_t>(is);
    s.noise_sigma = get<double>(is);
    s.cond_amplitude = get<double>(is);
    try {
        s.validate();
    } catch (const ConfigError& e) {
        throw DataError(std::string("dataset: corrupt header: ") + e.what());
    }

    // Check the payload length before allocating anything proportional to count.
    const auto header_end = is.tellg();
    is.seekg(0, std::ios::end);
    const auto file_end = is.tellg();
    is.seekg(header_end);
    const std::uint64_t per_sample =
        sizeof(std::uint64_t) + sizeof(float) * static_cast<std::uint64_t>(s.frames * s.feature_dim + s.cond_len * s.cond_channels);
    const auto remaining = static_cast<std::uint64_t>(file_end - header_end);
    if (remaining % per_sample != 0 || remaining / per_sample != s.count)
        throw DataError("dataset: payload length disagrees with header");

    Dataset data{s, {}};
    data.samples.resize(s.count);
    for (auto& smp : data.samples) smp.seed = get<std::uint64_t>(is);
    for (auto& smp : data.samples) {
        smp.frames = get_matrix(is, s.frames, s.feature_dim);
        smp.cond = get_matrix(is, s.cond_len, s.cond_channels);
    }
    return data;
}

} // namespace sd
