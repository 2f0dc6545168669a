// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end orchestration: teacher training, evaluation plans for saved
// models, and the ablation harness that reruns adversarial distillation with
// components switched off.

#pragma once

#include "stepdistill/checkpoint.hpp"
#include "stepdistill/config.hpp"
#include "stepdistill/metrics.hpp"

#include <array>
#include <filesystem>
#include <functional>

namespace sd {

// `base` with the data-dependent shape fields taken from `spec`.
NetConfig net_for_data(const NetConfig& base, const DataSpec& spec);

struct TeacherProgress {
    long step = 0;
    double loss = 0.0;
};

// Flow-matching training with condition dropout. Result values are rounded to
// f32 so the in-memory model equals its checkpoint.
VelocityNet train_teacher(const PreparedData& data, const NetConfig& net, const TeacherConfig& cfg, std::uint64_t seed,
                          const std::function<void(const TeacherProgress&)>& on_step = {});

// Fresh samples from the training distribution under an independent seed.
Dataset heldout_dataset(const DataSpec& train, std::size_t count);

struct EvalPlan {
    Schedule schedule;
    std::optional<double> guidance;
};

// A model with guidance spends two evaluations per step, so an even budget
// runs nfe / 2 guided steps; an odd budget runs unguided. A budget equal to
// the checkpoint's own cost uses its stored schedule, otherwise a uniform one.
EvalPlan eval_plan(const CheckpointMeta& meta, int nfe);

std::string method_name(const CheckpointMeta& meta);

CheckpointMeta teacher_meta(const RunConfig& cfg, const NetConfig& net);
CheckpointMeta student_meta(const RunConfig& cfg, const NetConfig& net, int stage, long step, const Schedule& schedule);

// Metrics CSV for single evaluations.
const std::vector<std::string>& eval_csv_header();
std::vector<std::string> eval_csv_row(const std::string& method, int stage, const MetricsReport& m);

enum Toggle : int { step_reduction = 0, dynamic_ts = 1, self_compare = 2 };

struct AblationCell {
    std::array<bool, 3> on{true, true, true};
    LossKind loss_kind = LossKind::r3gan;
    // Self-compare weight; recorded as 0 when self_compare is off.
    double lambda = 0.5;

    std::string id() const;
    double effective_lambda() const { return on[self_compare] ? lambda : 0.0; }
};

// Grid file:
//   {"init": "stage0.ckpt",
//    "toggles": [[], ["step_reduction", "dynamic_ts", "self_compare"]],
//    "loss_kinds": ["r3gan"], "lambdas": [0.5], "seeds": [1, 2, 3]}
// Each toggles entry lists the components switched on in one cell.
struct AblationGrid {
    std::string init;
    std::vector<std::array<bool, 3>> toggles;
    std::vector<LossKind> loss_kinds{LossKind::r3gan};
    std::vector<double> lambdas{0.5};
    std::vector<std::uint64_t> seeds;

    void validate() const;
    // Cross product in file order; cells differing only in an unused lambda
    // collapse to one.
    std::vector<AblationCell> cells() const;
};

AblationGrid ablation_grid_from_json(const nlohmann::json& j);
AblationGrid load_ablation_grid(const std::filesystem::path& path);

// Stage list for a cell. With step reduction the base stages run in order;
// without it a single stage jumps from the 4-step schedule straight to {1.0}
// for the same total number of steps.
std::vector<StageConfig> cell_stages(const AblationCell& cell, const std::vector<StageConfig>& base);

// Trains the cell from `stage0` and evaluates the result at one step.
MetricsReport run_cell(const VelocityNet& stage0, const PreparedData& train, const PreparedData& heldout,
                       const RunConfig& base, const AblationCell& cell, std::uint64_t seed);

const std::vector<std::string>& ablation_csv_header();

struct AblationRow {
    AblationCell cell;
    std::uint64_t seed = 0;
    MetricsReport metrics;
};

// Appends one row per (cell, seed) to `out_csv`, flushing after each. Pairs
// already in the file are skipped.
void ablate(const AblationGrid& grid, const RunConfig& base, const VelocityNet& stage0, const Dataset& train,
            const std::filesystem::path& out_csv, const std::function<void(const AblationRow&)>& on_row = {});

} // namespace sd
