// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration as read from JSON. Every field is optional in the file;
// missing fields take the desk-scale defaults below.
//
//   {
//     "seed": 1,
//     "net":     {"hidden": 64, "blocks": 2, "heads": 2, "time_embed_dim": 32, "context": 5},
//     "teacher": {"steps": 3000, "lr": 5e-4, "guidance_w": 2.0, "cond_dropout": 0.1, "batch": 32},
//     "dmd":     {"steps": 1000, "critic_per_gen": 5, "guidance_w": 2.0, "renoise_range": [0.02, 0.98], ...},
//     "pad":     [{"k": 1, "steps": 500, "warmup": 500, "lambda": 0.5, "gamma": 100, "sigma_r": 0.1,
//                  "loss_kind": "r3gan"}, {"k": 2, ...}, {"k": 3, ...}],
//     "eval":    {"n_eval": 256, "nfe_list": [1, 2, 4, 100]}
//   }

#pragma once

#include "stepdistill/dmd.hpp"
#include "stepdistill/pad.hpp"

#include <nlohmann/json.hpp>

#include <string>

namespace sd {

struct TeacherConfig {
    long steps = 3000;
    double lr = 5e-4;
    double guidance_w = 2.0;
    double cond_dropout = 0.1;
    int batch = 32;
    int sample_steps = 50;
};

struct EvalConfig {
    std::size_t n_eval = 256;
    std::vector<int> nfe_list{1, 2, 4, 100};
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string data_path;
    std::string out_dir;
    NetConfig net;
    TeacherConfig teacher;
    DmdConfig dmd;
    std::vector<StageConfig> pad{standard_stage(1), standard_stage(2), standard_stage(3)};
    EvalConfig eval;

    void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Hex SHA-256 of the canonical (key-sorted, compact) JSON form.
std::string config_hash(const RunConfig& cfg);
std::string sha256_hex(const void* data, std::size_t size);

nlohmann::json stage_to_json(const StageConfig& s);
StageConfig stage_from_json(const nlohmann::json& j, const StageConfig& base);

} // namespace sd
