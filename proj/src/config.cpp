// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/config.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <sstream>

namespace sd {

namespace {

nlohmann::json optional_number(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> read_optional(const nlohmann::json& j, const char* key, std::optional<double> fallback) {
    if (!j.contains(key)) return fallback;
    if (j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* where) {
    if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
    }
}

} // namespace

void RunConfig::validate() const {
    NetConfig probe = net;
    probe.cond_len = 4 * probe.frames;
    probe.validate();
    if (teacher.steps < 0 || !(teacher.lr > 0.0) || teacher.batch < 1 || teacher.sample_steps < 1)
        throw ConfigError("teacher: steps >= 0, lr > 0, batch >= 1 and sample_steps >= 1 required");
    if (!(teacher.cond_dropout >= 0.0 && teacher.cond_dropout < 1.0))
        throw ConfigError("teacher: cond_dropout must lie in [0, 1)");
    dmd.validate();
    if (pad.empty()) throw ConfigError("pad: at least one stage required");
    int prev_k = 0;
    for (const auto& s : pad) {
        s.validate();
        if (s.k <= prev_k) throw ConfigError("pad: stages must be ordered by k");
        prev_k = s.k;
    }
    if (eval.n_eval < 64) throw ConfigError("eval: n_eval must be >= 64");
    for (int n : eval.nfe_list)
        if (n < 1) throw ConfigError("eval: nfe values must be >= 1");
}

nlohmann::json stage_to_json(const StageConfig& s) {
    return {{"k", s.k},
            {"prev_final_t", s.prev_final_t},
            {"warmup", s.warmup},
            {"steps", s.steps},
            {"lambda", s.lambda},
            {"gamma", s.gamma},
            {"sigma_r", s.sigma_r},
            {"loss_kind", to_string(s.loss_kind)},
            {"lr_gen", s.lr_gen},
            {"lr_disc", s.lr_disc},
            {"batch", s.batch}};
}

StageConfig stage_from_json(const nlohmann::json& j, const StageConfig& base) {
    reject_unknown(j, {"k", "prev_final_t", "warmup", "steps", "lambda", "gamma", "sigma_r", "loss_kind", "lr_gen",
                       "lr_disc", "batch"},
                   "pad stage");
    StageConfig s = standard_stage(j.value("k", base.k), base);
    s.prev_final_t = j.value("prev_final_t", s.prev_final_t);
    s.warmup = j.value("warmup", s.warmup);
    s.steps = j.value("steps", s.steps);
    s.lambda = j.value("lambda", s.lambda);
    s.gamma = j.value("gamma", s.gamma);
    s.sigma_r = j.value("sigma_r", s.sigma_r);
    if (j.contains("loss_kind")) s.loss_kind = parse_loss_kind(j.at("loss_kind").get<std::string>());
    s.lr_gen = j.value("lr_gen", s.lr_gen);
    s.lr_disc = j.value("lr_disc", s.lr_disc);
    s.batch = j.value("batch", s.batch);
    return s;
}

nlohmann::json to_json(const RunConfig& cfg) {
    nlohmann::json pad = nlohmann::json::array();
    for (const auto& s : cfg.pad) pad.push_back(stage_to_json(s));
    return {{"seed", cfg.seed},
            {"data_path", cfg.data_path},
            {"out_dir", cfg.out_dir},
            {"net", cfg.net},
            {"teacher",
             {{"steps", cfg.teacher.steps},
              {"lr", cfg.teacher.lr},
              {"guidance_w", cfg.teacher.guidance_w},
              {"cond_dropout", cfg.teacher.cond_dropout},
              {"batch", cfg.teacher.batch},
              {"sample_steps", cfg.teacher.sample_steps}}},
            {"dmd",
             {{"steps", cfg.dmd.steps},
              {"student_schedule", cfg.dmd.student_schedule.steps()},
              {"renoise_range", {cfg.dmd.renoise_lo, cfg.dmd.renoise_hi}},
              {"guidance_w", optional_number(cfg.dmd.guidance_w)},
              {"critic_per_gen", cfg.dmd.critic_per_gen},
              {"lr_gen", cfg.dmd.lr_gen},
              {"lr_critic", cfg.dmd.lr_critic},
              {"batch", cfg.dmd.batch}}},
            {"pad", pad},
            {"eval", {{"n_eval", cfg.eval.n_eval}, {"nfe_list", cfg.eval.nfe_list}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    try {
        reject_unknown(j, {"seed", "data_path", "out_dir", "net", "teacher", "dmd", "pad", "eval"}, "config");
        RunConfig cfg;
        cfg.seed = j.value("seed", cfg.seed);
        cfg.data_path = j.value("data_path", cfg.data_path);
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
        if (j.contains("net")) cfg.net = j.at("net").get<NetConfig>();
        if (j.contains("teacher")) {
            const auto& t = j.at("teacher");
            reject_unknown(t, {"steps", "lr", "guidance_w", "cond_dropout", "batch", "sample_steps"}, "teacher");
            cfg.teacher.steps = t.value("steps", cfg.teacher.steps);
            cfg.teacher.lr = t.value("lr", cfg.teacher.lr);
            cfg.teacher.guidance_w = t.value("guidance_w", cfg.teacher.guidance_w);
            cfg.teacher.cond_dropout = t.value("cond_dropout", cfg.teacher.cond_dropout);
            cfg.teacher.batch = t.value("batch", cfg.teacher.batch);
            cfg.teacher.sample_steps = t.value("sample_steps", cfg.teacher.sample_steps);
        }
        if (j.contains("dmd")) {
            const auto& d = j.at("dmd");
            reject_unknown(d, {"steps", "student_schedule", "renoise_range", "guidance_w", "critic_per_gen", "lr_gen",
                               "lr_critic", "batch"},
                           "dmd");
            cfg.dmd.steps = d.value("steps", cfg.dmd.steps);
            if (d.contains("student_schedule"))
                cfg.dmd.student_schedule = Schedule(d.at("student_schedule").get<std::vector<double>>());
            if (d.contains("renoise_range")) {
                const auto r = d.at("renoise_range").get<std::vector<double>>();
                if (r.size() != 2) throw ConfigError("dmd: renoise_range must have two entries");
                cfg.dmd.renoise_lo = r[0];
                cfg.dmd.renoise_hi = r[1];
            }
            cfg.dmd.guidance_w = read_optional(d, "guidance_w", cfg.dmd.guidance_w);
            cfg.dmd.critic_per_gen = d.value("critic_per_gen", cfg.dmd.critic_per_gen);
            cfg.dmd.lr_gen = d.value("lr_gen", cfg.dmd.lr_gen);
            cfg.dmd.lr_critic = d.value("lr_critic", cfg.dmd.lr_critic);
            cfg.dmd.batch = d.value("batch", cfg.dmd.batch);
        }
        if (j.contains("pad")) {
            cfg.pad.clear();
            StageConfig prev;
            double prev_last = stage_schedule(0).last();
            for (const auto& s : j.at("pad")) {
                if (!s.contains("k")) throw ConfigError("pad: every stage needs k");
                StageConfig stage = stage_from_json(s, prev);
                if (!s.contains("prev_final_t")) stage.prev_final_t = prev_last;
                prev_last = stage.target_schedule.last();
                cfg.pad.push_back(stage);
                prev = stage;
            }
        }
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            reject_unknown(e, {"n_eval", "nfe_list"}, "eval");
            cfg.eval.n_eval = e.value("n_eval", cfg.eval.n_eval);
            if (e.contains("nfe_list")) cfg.eval.nfe_list = e.at("nfe_list").get<std::vector<int>>();
        }
        cfg.validate();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return run_config_from_json(j);
}

std::string sha256_hex(const void* data, std::size_t size) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return os.str();
}

std::string config_hash(const RunConfig& cfg) {
    nlohmann::json j = to_json(cfg);
    // Paths locate inputs and outputs; they do not change what is computed.
    j.erase("data_path");
    j.erase("out_dir");
    const std::string canonical = j.dump();
    return sha256_hex(canonical.data(), canonical.size());
}

} // namespace sd
