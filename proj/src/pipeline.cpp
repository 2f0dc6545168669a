// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/pipeline.hpp"

#include "stepdistill/csv.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace sd {

NetConfig net_for_data(const NetConfig& base, const DataSpec& spec) {
    NetConfig net = base;
    net.frames = spec.frames;
    net.feature_dim = spec.feature_dim;
    net.cond_len = spec.cond_len;
    net.cond_channels = spec.cond_channels;
    net.validate();
    return net;
}

VelocityNet train_teacher(const PreparedData& data, const NetConfig& net, const TeacherConfig& cfg, std::uint64_t seed,
                          const std::function<void(const TeacherProgress&)>& on_step) {
    Rng init_rng(derive_seed(seed, "teacher.init"));
    VelocityNet model(net, init_rng);
    Rng rng(derive_seed(seed, "teacher.train"));
    Adam opt({.lr = cfg.lr, .max_grad_norm = 1.0});
    const FmLossOptions fm{.cond_dropout = cfg.cond_dropout};
    for (long step = 0; step < cfg.steps; ++step) {
        const Batch batch = draw_batch(data, static_cast<std::size_t>(cfg.batch), rng);
        model.params().zero_grad();
        ParamSet last_finite = model.params().clone();
        const ad::Var loss = fm_loss(model, batch.frames, batch.cond, rng, fm);
        if (!std::isfinite(loss.scalar()))
            throw TrainingDiverged("teacher: loss diverged", std::move(last_finite), step);
        ad::backward(loss);
        opt.step(model.params());
        if (!model.params().all_finite())
            throw TrainingDiverged("teacher: parameters diverged", std::move(last_finite), step);
        if (on_step) on_step({step, loss.scalar()});
    }
    model.params().zero_grad();
    round_to_f32(model.params());
    return model;
}

Dataset heldout_dataset(const DataSpec& train, std::size_t count) {
    DataSpec spec = train;
    spec.count = count;
    spec.seed = derive_seed(train.seed, "heldout");
    return synthesize_dataset(spec);
}

EvalPlan eval_plan(const CheckpointMeta& meta, int nfe) {
    if (nfe < 1) throw ConfigError("eval: nfe must be >= 1");
    const bool guided = meta.guidance_w.has_value() && nfe % 2 == 0;
    const int steps = guided ? nfe / 2 : nfe;
    EvalPlan plan{uniform_schedule(steps), guided ? meta.guidance_w : std::nullopt};
    if (static_cast<int>(meta.schedule.size()) == steps) plan.schedule = meta.schedule;
    return plan;
}

std::string method_name(const CheckpointMeta& meta) {
    if (meta.stage == kTeacherStage) return "teacher";
    if (meta.stage == 0) return "dmd";
    return "pad-k" + std::to_string(meta.stage);
}

CheckpointMeta teacher_meta(const RunConfig& cfg, const NetConfig& net) {
    CheckpointMeta m;
    m.stage = kTeacherStage;
    m.step = cfg.teacher.steps;
    m.schedule = uniform_schedule(cfg.teacher.sample_steps);
    m.seed = cfg.seed;
    m.config_hash = config_hash(cfg);
    m.net = net;
    m.guidance_w = cfg.teacher.guidance_w;
    return m;
}

CheckpointMeta student_meta(const RunConfig& cfg, const NetConfig& net, int stage, long step, const Schedule& schedule) {
    CheckpointMeta m;
    m.stage = stage;
    m.step = step;
    m.schedule = schedule;
    m.seed = cfg.seed;
    m.config_hash = config_hash(cfg);
    m.net = net;
    return m;
}

const std::vector<std::string>& eval_csv_header() {
    static const std::vector<std::string> h{"method", "stage", "nfe_per_sample", "fd", "energy", "sync", "nfe",
                                            "wall_ms"};
    return h;
}

std::vector<std::string> eval_csv_row(const std::string& method, int stage, const MetricsReport& m) {
    return {method,
            std::to_string(stage),
            std::to_string(m.nfe_per_sample),
            format_number(m.fd),
            format_number(m.energy),
            format_number(m.sync),
            std::to_string(m.nfe),
            format_number(m.wall_ms)};
}

namespace {

constexpr std::array<const char*, 3> kToggleNames{"step_reduction", "dynamic_ts", "self_compare"};

} // namespace

std::string AblationCell::id() const {
    std::string s;
    for (std::size_t i = 0; i < on.size(); ++i) s += std::string(i ? "-" : "") + (on[i] ? "1" : "0");
    return s + "_" + to_string(loss_kind) + "_l" + format_number(effective_lambda());
}

void AblationGrid::validate() const {
    if (toggles.empty() || loss_kinds.empty() || lambdas.empty() || seeds.empty())
        throw ConfigError("ablation grid: toggles, loss_kinds, lambdas and seeds must be nonempty");
    for (double l : lambdas)
        if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("ablation grid: lambda outside [0, 1]");
}

std::vector<AblationCell> AblationGrid::cells() const {
    std::vector<AblationCell> out;
    std::set<std::string> seen;
    for (const auto& t : toggles)
        for (LossKind kind : loss_kinds)
            for (double lambda : lambdas) {
                AblationCell c{t, kind, lambda};
                if (seen.insert(c.id()).second) out.push_back(c);
            }
    return out;
}

AblationGrid ablation_grid_from_json(const nlohmann::json& j) {
    AblationGrid g;
    try {
        if (!j.is_object()) throw ConfigError("ablation grid: expected an object");
        for (const auto& [key, _] : j.items())
            if (key != "init" && key != "toggles" && key != "loss_kinds" && key != "lambdas" && key != "seeds")
                throw ConfigError("ablation grid: unknown key '" + key + "'");
        g.init = j.value("init", std::string());
        for (const auto& subset : j.at("toggles")) {
            std::array<bool, 3> on{false, false, false};
            for (const auto& name : subset) {
                const auto s = name.get<std::string>();
                bool known = false;
                for (std::size_t i = 0; i < kToggleNames.size(); ++i)
                    if (s == kToggleNames[i]) on[i] = known = true;
                if (!known) throw ConfigError("ablation grid: unknown toggle '" + s + "'");
            }
            g.toggles.push_back(on);
        }
        if (j.contains("loss_kinds")) {
            g.loss_kinds.clear();
            for (const auto& k : j.at("loss_kinds")) g.loss_kinds.push_back(parse_loss_kind(k.get<std::string>()));
        }
        if (j.contains("lambdas")) g.lambdas = j.at("lambdas").get<std::vector<double>>();
        g.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("ablation grid: ") + e.what());
    }
    g.validate();
    return g;
}

AblationGrid load_ablation_grid(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open grid: " + path.string());
    try {
        return ablation_grid_from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("ablation grid: ") + e.what());
    }
}

std::vector<StageConfig> cell_stages(const AblationCell& cell, const std::vector<StageConfig>& base) {
    if (base.empty()) throw ConfigError("ablation: base config has no stages");
    std::vector<StageConfig> stages;
    if (cell.on[step_reduction]) {
        stages = select_stages(base, {1, 2, 3});
    } else {
        StageConfig direct = select_stages(base, {3}).front();
        long total = 0;
        for (const auto& s : select_stages(base, {1, 2, 3})) total += s.steps;
        direct.steps = total;
        stages.push_back(direct);
    }
    for (auto& s : stages) {
        if (!cell.on[dynamic_ts]) s.warmup = 0;
        s.lambda = cell.effective_lambda();
        s.loss_kind = cell.loss_kind;
    }
    return stages;
}

MetricsReport run_cell(const VelocityNet& stage0, const PreparedData& train, const PreparedData& heldout,
                       const RunConfig& base, const AblationCell& cell, std::uint64_t seed) {
    const VelocityNet student = run_progressive(stage0, train, cell_stages(cell, base.pad), seed);
    MeasureOptions opts;
    opts.n_eval = base.eval.n_eval;
    return measure(student, stage_schedule(3), heldout, opts, derive_seed(seed, "ablate.eval"));
}

const std::vector<std::string>& ablation_csv_header() {
    static const std::vector<std::string> h{"cell_id", "step_reduction", "dynamic_ts", "self_compare",
                                            "loss_kind", "lambda", "seed", "fd",
                                            "energy", "sync", "nfe", "wall_ms"};
    return h;
}

void ablate(const AblationGrid& grid, const RunConfig& base, const VelocityNet& stage0, const Dataset& train,
            const std::filesystem::path& out_csv, const std::function<void(const AblationRow&)>& on_row) {
    grid.validate();
    std::set<std::pair<std::string, std::string>> done;
    const bool exists = std::filesystem::exists(out_csv) && std::filesystem::file_size(out_csv) > 0;
    if (exists) {
        const CsvTable t = read_csv(out_csv);
        if (t.header != ablation_csv_header()) throw DataError("ablate: existing table has a different header");
        for (std::size_t r = 0; r < t.rows.size(); ++r) done.emplace(t.at(r, "cell_id"), t.at(r, "seed"));
    }

    const ContextConfig ctx{base.net.context};
    const PreparedData train_data = prepare(train, ctx);
    const Dataset held = heldout_dataset(train.spec, base.eval.n_eval);
    const PreparedData held_data = prepare(held, ctx);

    if (out_csv.has_parent_path()) std::filesystem::create_directories(out_csv.parent_path());
    std::ofstream os(out_csv, std::ios::app);
    if (!os) throw DataError("cannot write: " + out_csv.string());
    if (!exists) os << join_csv(ablation_csv_header()) << "\n" << std::flush;

    for (const AblationCell& cell : grid.cells())
        for (std::uint64_t seed : grid.seeds) {
            if (done.count({cell.id(), std::to_string(seed)})) continue;
            const MetricsReport m = run_cell(stage0, train_data, held_data, base, cell, seed);
            os << join_csv({cell.id(), cell.on[step_reduction] ? "1" : "0", cell.on[dynamic_ts] ? "1" : "0",
                            cell.on[self_compare] ? "1" : "0", to_string(cell.loss_kind),
                            format_number(cell.effective_lambda()), std::to_string(seed), format_number(m.fd),
                            format_number(m.energy), format_number(m.sync), std::to_string(m.nfe_per_sample),
                            format_number(m.wall_ms)})
               << "\n"
               << std::flush;
            if (on_row) on_row({cell, seed, m});
        }
}

} // namespace sd
