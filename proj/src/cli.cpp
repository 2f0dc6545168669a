// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/cli.hpp"

#include "stepdistill/csv.hpp"
#include "stepdistill/pipeline.hpp"
#include "stepdistill/report.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>

namespace sd {

namespace {

namespace fs = std::filesystem;

void fail_line(const char* kind, int code, const std::string& reason) {
    std::cerr << nlohmann::json{{"error", kind}, {"exit_code", code}, {"reason", reason}}.dump() << std::endl;
}

void progress(const std::string& what, long step, long total, double loss) {
    if (step == 0 || (step + 1) % 100 == 0 || step + 1 == total)
        std::cerr << what << " step " << step + 1 << "/" << total << " loss " << loss << "\n";
}

RunConfig load_config(const std::string& path) {
    RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
    cfg.validate();
    return cfg;
}

Dataset load_data(const std::string& path) {
    if (!fs::exists(path)) throw DataError("data file not found: " + path);
    return read_dataset(path);
}

std::vector<int> parse_stage_list(const std::string& s) {
    std::vector<int> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t comma = s.find(',', start);
        const std::string item = s.substr(start, comma - start);
        try {
            std::size_t used = 0;
            const int k = std::stoi(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(k);
        } catch (const std::exception&) {
            throw ConfigError("--stages: not an integer list: '" + s + "'");
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

void save_diverged(const fs::path& path, const TrainingDiverged& e, CheckpointMeta meta) {
    meta.step = e.step();
    fs::path out = path;
    out += ".last_finite";
    save_checkpoint(out, e.last_finite(), meta);
    std::cerr << "last finite parameters saved to " << out.string() << "\n";
}

struct Args {
    std::string spec, out, config, data, teacher, init, stages = "1,2,3", ckpt, grid, in, plots;
    std::size_t count = 0;
    std::uint64_t seed = 0;
    int nfe = 1;
    std::size_t n_eval = 256;
    bool have_count = false, have_seed = false;
};

int gen_data(const Args& a) {
    DataSpec spec;
    if (!a.spec.empty()) {
        std::ifstream is(a.spec);
        if (!is) throw ConfigError("cannot open spec: " + a.spec);
        try {
            spec = nlohmann::json::parse(is).get<DataSpec>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("data spec: ") + e.what());
        }
    }
    if (a.have_count) spec.count = a.count;
    if (a.have_seed) spec.seed = a.seed;
    spec.validate();
    write_dataset(synthesize_dataset(spec), a.out);
    return exit_ok;
}

int train_teacher_cmd(const Args& a) {
    RunConfig cfg = load_config(a.config);
    cfg.data_path = a.data;
    const Dataset data = load_data(a.data);
    const NetConfig net = net_for_data(cfg.net, data.spec);
    const PreparedData prepared = prepare(data, ContextConfig{net.context});
    const CheckpointMeta meta = teacher_meta(cfg, net);
    try {
        const VelocityNet teacher = train_teacher(prepared, net, cfg.teacher, cfg.seed, [&](const TeacherProgress& p) {
            progress("teacher", p.step, cfg.teacher.steps, p.loss);
        });
        save_checkpoint(a.out, teacher.params(), meta);
    } catch (const TrainingDiverged& e) {
        save_diverged(a.out, e, meta);
        throw;
    }
    return exit_ok;
}

int distill_dmd_cmd(const Args& a) {
    RunConfig cfg = load_config(a.config);
    cfg.data_path = a.data;
    const Checkpoint teacher_ckpt = load_checkpoint(a.teacher);
    const Dataset data = load_data(a.data);
    const NetConfig net = net_for_data(teacher_ckpt.meta.net, data.spec);
    if (!(net == teacher_ckpt.meta.net)) throw DataError("teacher was trained on data of a different shape");
    const PreparedData prepared = prepare(data, ContextConfig{net.context});
    const CheckpointMeta meta = student_meta(cfg, net, 0, cfg.dmd.steps, cfg.dmd.student_schedule);
    try {
        DmdResult r = run_dmd(teacher_ckpt.model(), prepared, cfg.dmd, cfg.seed, [&](const DmdProgress& p) {
            progress("dmd", p.step, cfg.dmd.steps, p.gen_loss);
        });
        round_to_f32(r.generator.params());
        save_checkpoint(a.out, r.generator.params(), meta);
    } catch (const TrainingDiverged& e) {
        save_diverged(a.out, e, meta);
        throw;
    }
    return exit_ok;
}

int distill_pad_cmd(const Args& a) {
    RunConfig cfg = load_config(a.config);
    cfg.data_path = a.data;
    cfg.out_dir = a.out;
    const std::vector<StageConfig> stages = select_stages(cfg.pad, parse_stage_list(a.stages));
    const Checkpoint init = load_checkpoint(a.init);
    if (init.meta.stage != 0) throw DataError("--init must be a 4-step (stage 0) checkpoint");
    const Dataset data = load_data(a.data);
    const NetConfig net = init.meta.net;
    if (!(net_for_data(net, data.spec) == net)) throw DataError("init checkpoint was trained on data of a different shape");
    const PreparedData prepared = prepare(data, ContextConfig{net.context});

    const fs::path dir(a.out);
    fs::create_directories(dir);
    std::ofstream log(dir / "pad_log.csv", std::ios::trunc);
    log << "k,step,t_last,loss_d,loss_g,self_share,r1,r2,r3\n";
    const StageStepFn on_step = [&](const StageStepLog& s) {
        log << join_csv({std::to_string(s.k), std::to_string(s.step), format_number(s.t_last),
                         format_number(s.loss_d), format_number(s.loss_g), format_number(s.self_share),
                         format_number(s.r1), format_number(s.r2), format_number(s.r3)})
            << "\n";
        long total = 0;
        for (const auto& st : stages)
            if (st.k == s.k) total = st.steps;
        progress("pad k=" + std::to_string(s.k), s.step, total, s.loss_g);
    };
    const StageDoneFn on_done = [&](const StageConfig& s, const VelocityNet& gen) {
        ParamSet params = gen.params().clone();
        round_to_f32(params);
        save_checkpoint(dir / ("stage" + std::to_string(s.k) + ".ckpt"), params,
                        student_meta(cfg, net, s.k, s.steps, s.target_schedule));
        log.flush();
    };
    int current_k = stages.front().k;
    const StageStepFn tracked = [&](const StageStepLog& s) {
        current_k = s.k;
        on_step(s);
    };
    try {
        run_progressive(init.model(), prepared, stages, cfg.seed, on_done, tracked);
    } catch (const TrainingDiverged& e) {
        save_diverged(dir / ("stage" + std::to_string(current_k) + ".ckpt"), e,
                      student_meta(cfg, net, current_k, e.step(), stage_schedule(current_k)));
        throw;
    }
    return exit_ok;
}

int eval_cmd(const Args& a) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const Dataset data = load_data(a.data);
    const NetConfig net = ckpt.meta.net;
    if (!(net_for_data(net, data.spec) == net)) throw DataError("evaluation data shape does not match the checkpoint");
    const PreparedData prepared = prepare(data, ContextConfig{net.context});
    const EvalPlan plan = eval_plan(ckpt.meta, a.nfe);
    MeasureOptions opts;
    opts.n_eval = a.n_eval;
    opts.guidance = plan.guidance;
    const MetricsReport m = measure(ckpt.model(), plan.schedule, prepared, opts, ckpt.meta.seed);

    const fs::path out(a.out);
    const bool append = fs::exists(out) && fs::file_size(out) > 0;
    if (append && read_csv(out).header != eval_csv_header())
        throw DataError("existing metrics file has a different header: " + a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream os(out, std::ios::app);
    if (!os) throw DataError("cannot write: " + a.out);
    if (!append) os << join_csv(eval_csv_header()) << "\n";
    os << join_csv(eval_csv_row(method_name(ckpt.meta), ckpt.meta.stage, m)) << "\n";
    return exit_ok;
}

int ablate_cmd(const Args& a) {
    RunConfig cfg = load_config(a.config);
    cfg.data_path = a.data;
    const AblationGrid grid = load_ablation_grid(a.grid);
    if (grid.init.empty()) throw ConfigError("ablation grid: 'init' checkpoint path required");
    fs::path init_path(grid.init);
    if (init_path.is_relative()) init_path = fs::path(a.grid).parent_path() / init_path;
    const Checkpoint init = load_checkpoint(init_path);
    if (init.meta.stage != 0) throw DataError("ablation init must be a 4-step (stage 0) checkpoint");
    const Dataset data = load_data(a.data);
    cfg.net = init.meta.net;
    if (!(net_for_data(cfg.net, data.spec) == cfg.net)) throw DataError("init checkpoint shape does not match data");
    ablate(grid, cfg, init.model(), data, a.out, [](const AblationRow& r) {
        std::cerr << "cell " << r.cell.id() << " seed " << r.seed << " fd " << r.metrics.fd << "\n";
    });
    return exit_ok;
}

int report_cmd(const Args& a) {
    for (const auto& p : write_report(read_csv(a.in), a.plots)) std::cerr << "wrote " << p.string() << "\n";
    return exit_ok;
}

} // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"Step-reduction distillation on a synthetic conditional sequence task", "stepdistill"};
    app.require_subcommand(1);
    Args a;

    auto* gen = app.add_subcommand("gen-data", "Synthesize a dataset file");
    gen->add_option("--spec", a.spec, "Data spec JSON");
    gen->add_option("--out", a.out, "Output dataset file")->required();
    gen->add_option("--count", a.count, "Number of samples")->each([&](const std::string&) { a.have_count = true; });
    gen->add_option("--seed", a.seed, "Dataset seed")->each([&](const std::string&) { a.have_seed = true; });

    auto* teacher = app.add_subcommand("train-teacher", "Train the flow-matching teacher");
    teacher->add_option("--config", a.config, "Run config JSON");
    teacher->add_option("--data", a.data, "Training dataset")->required();
    teacher->add_option("--out", a.out, "Output checkpoint")->required();

    auto* dmd = app.add_subcommand("distill-dmd", "Distill the teacher into a 4-step student");
    dmd->add_option("--teacher", a.teacher, "Teacher checkpoint")->required();
    dmd->add_option("--config", a.config, "Run config JSON");
    dmd->add_option("--data", a.data, "Training dataset")->required();
    dmd->add_option("--out", a.out, "Output checkpoint")->required();

    auto* pad = app.add_subcommand("distill-pad", "Reduce the 4-step student stage by stage");
    pad->add_option("--init", a.init, "4-step checkpoint")->required();
    pad->add_option("--config", a.config, "Run config JSON");
    pad->add_option("--data", a.data, "Training dataset")->required();
    pad->add_option("--stages", a.stages, "Comma-separated stage indices")->capture_default_str();
    pad->add_option("--out", a.out, "Output directory")->required();

    auto* ev = app.add_subcommand("eval", "Measure one checkpoint");
    ev->add_option("--ckpt", a.ckpt, "Checkpoint")->required();
    ev->add_option("--nfe", a.nfe, "Function evaluations per sample")->required();
    ev->add_option("--data", a.data, "Evaluation dataset")->required();
    ev->add_option("--n-eval", a.n_eval, "Number of evaluated samples")->capture_default_str();
    ev->add_option("--out", a.out, "Metrics CSV (appended)")->required();

    auto* abl = app.add_subcommand("ablate", "Run the ablation grid");
    abl->add_option("--grid", a.grid, "Grid JSON")->required();
    abl->add_option("--config", a.config, "Base run config JSON");
    abl->add_option("--data", a.data, "Training dataset")->required();
    abl->add_option("--out", a.out, "Ablation CSV (resumable)")->required();

    auto* rep = app.add_subcommand("report", "Plot a metrics or ablation table");
    rep->add_option("--in", a.in, "Input CSV")->required();
    rep->add_option("--plots", a.plots, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        fail_line("usage", exit_config, e.what());
        return exit_config;
    }

    try {
        if (*gen) return gen_data(a);
        if (*teacher) return train_teacher_cmd(a);
        if (*dmd) return distill_dmd_cmd(a);
        if (*pad) return distill_pad_cmd(a);
        if (*ev) return eval_cmd(a);
        if (*abl) return ablate_cmd(a);
        if (*rep) return report_cmd(a);
    } catch (const ConfigError& e) {
        fail_line("config", exit_config, e.what());
        return exit_config;
    } catch (const ShapeError& e) {
        fail_line("shape", exit_config, e.what());
        return exit_config;
    } catch (const DataError& e) {
        fail_line("data", exit_data, e.what());
        return exit_data;
    } catch (const DivergenceError& e) {
        fail_line("divergence", exit_divergence, e.what());
        return exit_divergence;
    } catch (const std::filesystem::filesystem_error& e) {
        fail_line("data", exit_data, e.what());
        return exit_data;
    }
    return exit_config;
}

} // namespace sd
