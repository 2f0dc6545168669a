// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint = binary payload + JSON sidecar at "<path>.json".
//
// Payload, little-endian:
//   "STCK" | u8 version | u32 param count
//   | per parameter in name order: u32 name length, name bytes, u32 rows,
//     u32 cols, rows * cols f32 row-major
//
// Sidecar: {stage, step, schedule, seed, config_hash, created_at, kind, net,
//           guidance_w, payload_sha256}. Stage -1 marks a teacher.

#pragma once

#include "stepdistill/condnet.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace sd {

constexpr int kTeacherStage = -1;

struct CheckpointMeta {
    int stage = kTeacherStage;
    long step = 0;
    Schedule schedule = uniform_schedule(50);
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string created_at;
    NetConfig net;
    // Guidance used when sampling this model with its own schedule.
    std::optional<double> guidance_w;
};

struct Checkpoint {
    ParamSet params;
    CheckpointMeta meta;

    VelocityNet model() const { return VelocityNet(meta.net, params.clone()); }
};

std::string encode_params(const ParamSet& params);
ParamSet decode_params(const std::string& payload);

// Rounds every value to the nearest f32, matching what a checkpoint stores.
void round_to_f32(ParamSet& params);

// Writes payload and sidecar. created_at is filled with the current UTC time
// when empty.
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, CheckpointMeta meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

} // namespace sd
