// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/cli.hpp"
#include "stepdistill/config.hpp"
#include "stepdistill/csv.hpp"
#include "stepdistill/pipeline.hpp"
#include "stepdistill/report.hpp"
#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

using namespace sd;
using namespace sd::test;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("stepdistill_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
    std::ofstream os(p, std::ios::binary);
    os << s;
}

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "stepdistill");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

// Small enough that the whole pipeline runs in seconds.
RunConfig tiny_config() {
    RunConfig c;
    c.seed = 3;
    c.net = mini_net();
    c.net.context = 3;
    c.teacher.steps = 20;
    c.teacher.batch = 8;
    c.teacher.sample_steps = 4;
    c.dmd.steps = 3;
    c.dmd.critic_per_gen = 1;
    c.dmd.batch = 4;
    for (auto& s : c.pad) {
        s.steps = 3;
        s.warmup = 2;
        s.batch = 4;
    }
    c.eval.n_eval = 64;
    return c;
}

DataSpec tiny_spec(std::size_t count, std::uint64_t seed) {
    DataSpec s = mini_spec(count, seed);
    s.frames = 4;
    s.cond_len = 16;
    return s;
}

} // namespace

TEST_CASE("checkpoint round trip is byte exact") {
    const fs::path dir = fresh_dir("ckpt");
    VelocityNet net = mini_model(1);
    round_to_f32(net.params());
    CheckpointMeta meta;
    meta.stage = 3;
    meta.step = 17;
    meta.schedule = stage_schedule(3);
    meta.seed = 9;
    meta.config_hash = "abc";
    meta.created_at = "2026-01-01T00:00:00Z";
    meta.net = mini_net();
    save_checkpoint(dir / "a.ckpt", net.params(), meta);
    const Checkpoint c = load_checkpoint(dir / "a.ckpt");
    save_checkpoint(dir / "b.ckpt", c.params, c.meta);
    CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
    CHECK(slurp(sidecar_path(dir / "a.ckpt")) == slurp(sidecar_path(dir / "b.ckpt")));
    CHECK(c.meta.schedule == Schedule({1.0}));
    CHECK(c.meta.stage == 3);
    CHECK(c.meta.step == 17);
    CHECK(c.meta.seed == 9);
    CHECK(!c.meta.guidance_w);
    CHECK(c.params.bitwise_equal(net.params()));

    SECTION("tampered payload") {
        std::string bytes = slurp(dir / "a.ckpt");
        bytes[bytes.size() / 2] ^= 0x20;
        spit(dir / "a.ckpt", bytes);
        CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt"), DataError);
    }
    SECTION("truncated payload") {
        const std::string bytes = slurp(dir / "a.ckpt");
        CHECK_THROWS_AS(decode_params(bytes.substr(0, bytes.size() - 3)), DataError);
        CHECK_THROWS_AS(decode_params(bytes + "x"), DataError);
    }
    SECTION("missing sidecar") {
        fs::remove(sidecar_path(dir / "a.ckpt"));
        CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt"), DataError);
    }
}

TEST_CASE("run config json") {
    const RunConfig c = tiny_config();
    const RunConfig back = run_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(config_hash(back) == config_hash(c));
    CHECK(config_hash(c).size() == 64);
    RunConfig other = c;
    other.teacher.lr *= 2;
    CHECK(config_hash(other) != config_hash(c));

    nlohmann::json j = to_json(c);
    j["bogus"] = 1;
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
    RunConfig bad = c;
    bad.eval.n_eval = 10;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(sha256_hex("abc", 3) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("csv tables and reports") {
    const fs::path dir = fresh_dir("report");
    CHECK(format_number(0.1) == "0.1");
    CHECK(join_csv({"a", "1", "x"}) == "a,1,x");

    spit(dir / "empty.csv", "");
    CHECK_THROWS_AS(read_csv(dir / "empty.csv"), DataError);
    spit(dir / "ragged.csv", "a,b\n1\n");
    CHECK_THROWS_AS(read_csv(dir / "ragged.csv"), DataError);

    spit(dir / "header.csv", join_csv(eval_csv_header()) + "\n");
    CHECK_THROWS_AS(write_report(read_csv(dir / "header.csv"), dir / "p0"), DataError);

    spit(dir / "one.csv", join_csv(eval_csv_header()) + "\n" +
                              join_csv({"pad-k3", "3", "1", "0.5", "0.1", "0.8", "64", "0.2"}) + "\n");
    const CsvTable one = read_csv(dir / "one.csv");
    CHECK(one.number(0, "fd") == 0.5);
    const auto files = write_report(one, dir / "p1");
    CHECK(!files.empty());
    for (const auto& f : files) CHECK(fs::file_size(f) > 0);
    const std::string md = markdown_table(one);
    for (const auto& h : eval_csv_header()) CHECK(md.find(h) != std::string::npos);

    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("ablation grid cells and stages") {
    const nlohmann::json j = {{"init", "x.ckpt"},
                              {"toggles", {nlohmann::json::array(), {"step_reduction", "dynamic_ts", "self_compare"}}},
                              {"lambdas", {0.1, 0.5}},
                              {"seeds", {1, 2}}};
    const AblationGrid g = ablation_grid_from_json(j);
    const auto cells = g.cells();
    // The all-off cell ignores lambda, so its two lambdas collapse.
    REQUIRE(cells.size() == 3);
    CHECK(cells[0].id() == "0-0-0_r3gan_l0");
    CHECK(cells[1].id() == "1-1-1_r3gan_l0.1");
    CHECK(cells[2].id() == "1-1-1_r3gan_l0.5");

    nlohmann::json bad = j;
    bad["toggles"] = {{"nonsense"}};
    CHECK_THROWS_AS(ablation_grid_from_json(bad), ConfigError);
    bad = j;
    bad["extra"] = 1;
    CHECK_THROWS_AS(ablation_grid_from_json(bad), ConfigError);

    const std::vector<StageConfig> base{standard_stage(1), standard_stage(2), standard_stage(3)};
    const auto full = cell_stages(cells[2], base);
    REQUIRE(full.size() == 3);
    CHECK(full[0].warmup == base[0].warmup);
    CHECK(full[2].lambda == 0.5);
    const auto direct = cell_stages(cells[0], base);
    REQUIRE(direct.size() == 1);
    CHECK(direct[0].k == 3);
    CHECK(direct[0].prev_final_t == 0.25);
    CHECK(direct[0].target_schedule == Schedule({1.0}));
    CHECK(direct[0].steps == base[0].steps + base[1].steps + base[2].steps);
    CHECK(direct[0].warmup == 0);
    CHECK(direct[0].lambda == 0.0);
}

TEST_CASE("eval plans follow the checkpoint") {
    const RunConfig cfg;
    const CheckpointMeta teacher = teacher_meta(cfg, mini_net());
    const EvalPlan p100 = eval_plan(teacher, 100);
    CHECK(p100.schedule.size() == 50);
    CHECK(p100.guidance == 2.0);
    const EvalPlan p1 = eval_plan(teacher, 1);
    CHECK(p1.schedule == Schedule({1.0}));
    CHECK(!p1.guidance);

    const CheckpointMeta dmd = student_meta(cfg, mini_net(), 0, 10, cfg.dmd.student_schedule);
    CHECK(dmd.schedule == Schedule({1.0, 0.75, 0.5, 0.25}));
    CHECK(eval_plan(dmd, 4).schedule == dmd.schedule);
    CHECK(!eval_plan(dmd, 4).guidance);
    CHECK(method_name(dmd) == "dmd");
    CHECK(method_name(teacher) == "teacher");
    CHECK_THROWS_AS(eval_plan(dmd, 0), ConfigError);
}

TEST_CASE("ablate resumes without repeating rows") {
    const fs::path dir = fresh_dir("ablate");
    const RunConfig cfg = tiny_config();
    const Dataset train = synthesize_dataset(tiny_spec(32, 4));
    Rng rng(5);
    const VelocityNet stage0(net_for_data(cfg.net, train.spec), rng);
    AblationGrid grid;
    grid.toggles = {{false, false, false}};
    grid.seeds = {1};
    int rows = 0;
    ablate(grid, cfg, stage0, train, dir / "a.csv", [&](const AblationRow&) { ++rows; });
    CHECK(rows == 1);
    ablate(grid, cfg, stage0, train, dir / "a.csv", [&](const AblationRow&) { ++rows; });
    CHECK(rows == 1);
    grid.seeds = {1, 2};
    ablate(grid, cfg, stage0, train, dir / "a.csv", [&](const AblationRow&) { ++rows; });
    CHECK(rows == 2);
    const CsvTable t = read_csv(dir / "a.csv");
    CHECK(t.header == ablation_csv_header());
    REQUIRE(t.rows.size() == 2);
    CHECK(t.at(1, "seed") == "2");
    CHECK(t.at(0, "nfe") == "1");
}

TEST_CASE("command line end to end") {
    const fs::path dir = fresh_dir("cli");
    const std::string d = dir.string() + "/";
    spit(dir / "cfg.json", to_json(tiny_config()).dump());
    spit(dir / "spec.json", nlohmann::json(tiny_spec(64, 7)).dump());

    SECTION("usage errors write nothing") {
        const fs::path empty = fresh_dir("cli_usage");
        CHECK(run_cli({"gen-data", "--out", (empty / "x.bin").string(), "--bogus", "1"}) == exit_config);
        CHECK(run_cli({"eval", "--ckpt", (empty / "none.ckpt").string()}) == exit_config);
        CHECK(run_cli({"frobnicate"}) == exit_config);
        CHECK(fs::is_empty(empty));
    }
    SECTION("missing data") {
        CHECK(run_cli({"train-teacher", "--config", d + "cfg.json", "--data", d + "absent.bin", "--out",
                       d + "t.ckpt"}) == exit_data);
        CHECK(!fs::exists(dir / "t.ckpt"));
    }
    SECTION("report on an empty table") {
        spit(dir / "m.csv", join_csv(eval_csv_header()) + "\n");
        CHECK(run_cli({"report", "--in", d + "m.csv", "--plots", d + "plots"}) == exit_data);
    }
    SECTION("full pipeline") {
        REQUIRE(run_cli({"gen-data", "--spec", d + "spec.json", "--out", d + "train.bin"}) == exit_ok);
        REQUIRE(run_cli({"gen-data", "--spec", d + "spec.json", "--seed", "8", "--out", d + "held.bin"}) == exit_ok);
        REQUIRE(run_cli({"train-teacher", "--config", d + "cfg.json", "--data", d + "train.bin", "--out",
                         d + "teacher.ckpt"}) == exit_ok);
        REQUIRE(run_cli({"distill-dmd", "--teacher", d + "teacher.ckpt", "--config", d + "cfg.json", "--data",
                         d + "train.bin", "--out", d + "dmd.ckpt"}) == exit_ok);
        const Checkpoint dmd = load_checkpoint(dir / "dmd.ckpt");
        CHECK(dmd.meta.stage == 0);
        CHECK(dmd.meta.schedule == Schedule({1.0, 0.75, 0.5, 0.25}));

        REQUIRE(run_cli({"distill-pad", "--init", d + "dmd.ckpt", "--config", d + "cfg.json", "--data",
                         d + "train.bin", "--stages", "1,2,3", "--out", d + "pad"}) == exit_ok);
        for (int k = 1; k <= 3; ++k) {
            const Checkpoint c = load_checkpoint(dir / "pad" / ("stage" + std::to_string(k) + ".ckpt"));
            CHECK(c.meta.stage == k);
            CHECK(c.meta.schedule == stage_schedule(k));
        }
        CHECK(read_csv(dir / "pad" / "pad_log.csv").rows.size() == 9);
        CHECK(run_cli({"distill-pad", "--init", d + "pad/stage1.ckpt", "--config", d + "cfg.json", "--data",
                       d + "train.bin", "--out", d + "pad2"}) == exit_data);
        CHECK(run_cli({"distill-pad", "--init", d + "dmd.ckpt", "--config", d + "cfg.json", "--data",
                       d + "train.bin", "--stages", "3,x", "--out", d + "pad3"}) == exit_config);

        REQUIRE(run_cli({"eval", "--ckpt", d + "pad/stage3.ckpt", "--nfe", "1", "--data", d + "held.bin", "--n-eval",
                         "64", "--out", d + "m.csv"}) == exit_ok);
        REQUIRE(run_cli({"eval", "--ckpt", d + "teacher.ckpt", "--nfe", "100", "--data", d + "held.bin",
                         "--n-eval", "64", "--out", d + "m.csv"}) == exit_ok);
        const CsvTable m = read_csv(dir / "m.csv");
        REQUIRE(m.rows.size() == 2);
        CHECK(m.at(0, "method") == "pad-k3");
        CHECK(m.at(0, "nfe_per_sample") == "1");
        CHECK(m.at(0, "nfe") == "64");
        CHECK(m.at(1, "nfe_per_sample") == "100");
        CHECK(run_cli({"eval", "--ckpt", d + "teacher.ckpt", "--nfe", "1", "--data", d + "held.bin", "--n-eval",
                       "500", "--out", d + "m.csv"}) == exit_data);
        CHECK(run_cli({"report", "--in", d + "m.csv", "--plots", d + "plots"}) == exit_ok);
        CHECK(fs::exists(dir / "plots" / "summary.md"));

        spit(dir / "grid.json", R"({"init": "dmd.ckpt", "toggles": [[]], "seeds": [1]})");
        REQUIRE(run_cli({"ablate", "--grid", d + "grid.json", "--config", d + "cfg.json", "--data", d + "train.bin",
                         "--out", d + "abl.csv"}) == exit_ok);
        CHECK(read_csv(dir / "abl.csv").rows.size() == 1);

        // A corrupted checkpoint is a data error.
        std::string bytes = slurp(dir / "dmd.ckpt");
        bytes[20] ^= 1;
        spit(dir / "dmd.ckpt", bytes);
        CHECK(run_cli({"eval", "--ckpt", d + "dmd.ckpt", "--nfe", "4", "--data", d + "held.bin", "--n-eval",
                       "64", "--out", d + "m.csv"}) == exit_data);
    }
}
