// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/checkpoint.hpp"

#include "stepdistill/config.hpp"
#include "stepdistill/error.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sd {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'T', 'C', 'K'};
constexpr std::uint8_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& data) : data_(data) {}
    template <typename T>
    T get() {
        if (pos_ + sizeof(T) > data_.size()) throw DataError("checkpoint: truncated payload");
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string bytes(std::size_t n) {
        if (pos_ + n > data_.size()) throw DataError("checkpoint: truncated payload");
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    const std::string& data_;
    std::size_t pos_ = 0;
};

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

} // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    std::filesystem::path p = path;
    p += ".json";
    return p;
}

std::string encode_params(const ParamSet& params) {
    std::string out(kMagic, 4);
    put<std::uint8_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, v] : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(v.rows()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(v.cols()));
        for (ad::Index r = 0; r < v.rows(); ++r)
            for (ad::Index c = 0; c < v.cols(); ++c) put<float>(out, static_cast<float>(v.value()(r, c)));
    }
    return out;
}

ParamSet decode_params(const std::string& payload) {
    Reader in(payload);
    if (in.bytes(4) != std::string(kMagic, 4)) throw DataError("checkpoint: bad magic");
    if (in.get<std::uint8_t>() != kVersion) throw DataError("checkpoint: unsupported version");
    const auto count = in.get<std::uint32_t>();
    ParamSet params;
    std::string prev;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = in.get<std::uint32_t>();
        std::string name = in.bytes(len);
        if (i > 0 && !(prev < name)) throw DataError("checkpoint: parameter names not in sorted order");
        const auto rows = in.get<std::uint32_t>(), cols = in.get<std::uint32_t>();
        if (static_cast<std::uint64_t>(rows) * cols * sizeof(float) > payload.size())
            throw DataError("checkpoint: parameter larger than payload");
        ad::Mat m(rows, cols);
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = static_cast<double>(in.get<float>());
        params.add(name, std::move(m));
        prev = std::move(name);
    }
    if (!in.done()) throw DataError("checkpoint: trailing bytes after payload");
    return params;
}

void round_to_f32(ParamSet& params) {
    for (const auto& [_, v] : params) {
        ad::Var h = v;
        h.mutable_value() = h.value().unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
    }
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, CheckpointMeta meta) {
    if (meta.created_at.empty()) meta.created_at = utc_now();
    const std::string payload = encode_params(params);
    nlohmann::json side{{"stage", meta.stage},
                        {"step", meta.step},
                        {"schedule", meta.schedule.steps()},
                        {"seed", meta.seed},
                        {"config_hash", meta.config_hash},
                        {"created_at", meta.created_at},
                        {"kind", meta.stage == kTeacherStage ? "teacher" : "student"},
                        {"net", meta.net},
                        {"guidance_w", meta.guidance_w ? nlohmann::json(*meta.guidance_w) : nlohmann::json()},
                        {"payload_sha256", sha256_hex(payload.data(), payload.size())}};
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot write checkpoint: " + path.string());
        os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!os) throw DataError("checkpoint write failed: " + path.string());
    }
    std::ofstream js(sidecar_path(path), std::ios::trunc);
    if (!js) throw DataError("cannot write checkpoint sidecar: " + sidecar_path(path).string());
    js << side.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string payload = read_file(path);
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(read_file(sidecar_path(path)));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint sidecar: ") + e.what());
    }
    Checkpoint ckpt;
    try {
        if (side.at("payload_sha256").get<std::string>() != sha256_hex(payload.data(), payload.size()))
            throw DataError("checkpoint: payload digest does not match sidecar");
        CheckpointMeta& m = ckpt.meta;
        m.stage = side.at("stage").get<int>();
        m.step = side.at("step").get<long>();
        m.schedule = Schedule(side.at("schedule").get<std::vector<double>>());
        m.seed = side.at("seed").get<std::uint64_t>();
        m.config_hash = side.at("config_hash").get<std::string>();
        m.created_at = side.at("created_at").get<std::string>();
        m.net = side.at("net").get<NetConfig>();
        if (!side.at("guidance_w").is_null()) m.guidance_w = side.at("guidance_w").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint sidecar: ") + e.what());
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint sidecar: ") + e.what());
    }
    if (ckpt.meta.stage < kTeacherStage || ckpt.meta.stage > 3) throw DataError("checkpoint: stage out of range");
    ckpt.params = decode_params(payload);
    try {
        (void)ckpt.model();
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint: ") + e.what());
    }
    return ckpt;
}

} // namespace sd
