#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cotrainlab/error.hpp"
#include "cotrainlab/harness.hpp"
#include "test_util.hpp"

using namespace cotrainlab;
using namespace cotrainlab::harness;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Small enough to run in well under a second per mode.
json tiny(const std::string& mode) {
    return json::parse(R"({
      "seed": 3,
      "mode": ")" + mode + R"(",
      "dataset": {"kind": "synthst", "n_classes": 2, "n_per_class": 40, "test_per_class": 30,
                  "style": {"img_side": 12}},
      "split": {"labeled_per_class": 10, "val_fraction": 0.2},
      "edges": {"upsample_side": 12},
      "priors": [
        {"prior": "canny", "learner": {"arch": "logistic"}, "train": {"epochs": 3, "lr": 0.05}},
        {"prior": "patch", "learner": {"arch": "patch", "patch_side": 4, "stride": 4}, "train": {"epochs": 3}}
      ],
      "schedule": {"eras": 2, "fraction_per_era": 0.25, "epochs_per_era": 2},
      "distill": {"learner": {"arch": "logistic"}, "train": {"epochs": 2}},
      "bootstrap": {"resamples": 50}
    })");
}

std::string pointer_of(const json& doc) {
    try {
        parse_config(doc);
    } catch (const ConfigError& e) {
        return e.pointer();
    }
    return "<no error>";
}

}  // namespace

TEST_CASE("minimal config gets the documented defaults") {
    const auto cfg = parse_config(json::parse(R"({"mode": "pretrain", "dataset": {"kind": "synthst"}})"));
    CHECK(cfg.schedule.eras == 20);
    CHECK(cfg.schedule.fraction_per_era == 0.05);
    CHECK(cfg.bootstrap_resamples == 5000);
    CHECK(cfg.bootstrap_level == 0.95);
    REQUIRE(cfg.members.size() == 2);
    CHECK(cfg.members[0].prior == priors::Prior::Canny);
    CHECK(cfg.members[1].prior == priors::Prior::Patch);
    CHECK(cfg.seed == 0);
    CHECK_FALSE(cfg.disjoint);
    CHECK(cfg.ensemble_methods.size() == 3);
}

TEST_CASE("config errors name the JSON pointer") {
    auto doc = tiny("pretrain");
    doc["foo"] = 1;
    CHECK(pointer_of(doc) == "/foo");

    doc = tiny("pretrain");
    doc["dataset"]["bogus"] = true;
    CHECK(pointer_of(doc) == "/dataset/bogus");

    doc = tiny("pretrain");
    doc["priors"][1]["train"]["lr"] = "fast";
    CHECK(pointer_of(doc) == "/priors/1/train/lr");

    doc = tiny("pretrain");
    doc["schedule"] = {{"eras", 20}, {"fraction_per_era", 0.1}};
    CHECK(pointer_of(doc) == "/schedule");

    doc = tiny("pretrain");
    doc.erase("mode");
    CHECK(pointer_of(doc) == "/mode");

    doc = tiny("selftrain");
    doc["mode"] = "train";
    CHECK(pointer_of(doc) == "/mode");

    doc = tiny("cotrain");
    doc["priors"].erase(1);
    CHECK(pointer_of(doc) == "/priors");

    doc = tiny("pretrain");
    doc["priors"] = json::array();
    CHECK(pointer_of(doc) == "/priors");

    doc = tiny("pretrain");
    doc["seed"] = -1;
    CHECK(pointer_of(doc) == "/seed");

    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("config round-trips through to_json") {
    const auto cfg = parse_config(tiny("cotrain"));
    const auto again = parse_config(to_json(cfg));
    CHECK(to_json(again) == to_json(cfg));
    CHECK(again.members[1].learner == cfg.members[1].learner);
    CHECK(again.members[0].train.epochs == 3);
}

TEST_CASE("COTRAINLAB_SEED overrides the seed") {
    auto cfg = parse_config(tiny("pretrain"));
    ::setenv("COTRAINLAB_SEED", "12345", 1);
    apply_env_overrides(cfg);
    CHECK(cfg.seed == 12345);
    ::setenv("COTRAINLAB_SEED", "12x", 1);
    CHECK_THROWS_AS(apply_env_overrides(cfg), ConfigError);
    ::unsetenv("COTRAINLAB_SEED");
    apply_env_overrides(cfg);
    CHECK(cfg.seed == 12345);
}

TEST_CASE("checkpoints round-trip and reject bad files") {
    const auto dir = testutil::temp_dir("ckpt");
    const auto kind = learners::LearnerKind::patch(3, 2, learners::Arch::Mlp, 5);
    const auto params = learners::init_learner(kind, {8, 8, 3}, 4, 0xdeadbeefcafeULL);
    const auto path = dir / "m.ctlb";
    save_checkpoint(params, path);
    const auto back = load_checkpoint(path);
    CHECK(back == params);

    const auto bytes = slurp(path);
    CHECK(bytes.size() == 48 + 4 * params.weights.size());
    auto write = [&](const std::string& b) {
        std::ofstream(dir / "bad.ctlb", std::ios::binary) << b;
        return dir / "bad.ctlb";
    };

    try {
        load_checkpoint(write(bytes.substr(0, bytes.size() - 6)));
        FAIL("truncated payload accepted");
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        CHECK(msg.find(std::to_string(4 * params.weights.size())) != std::string::npos);
        CHECK(msg.find(std::to_string(4 * params.weights.size() - 6)) != std::string::npos);
    }

    auto v2 = bytes;
    v2[4] = 2;
    try {
        load_checkpoint(write(v2));
        FAIL("version 2 accepted");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("unsupported checkpoint version 2") != std::string::npos);
        CHECK(e.offset() == 4);
    }

    auto magic = bytes;
    magic[0] = 'X';
    try {
        load_checkpoint(write(magic));
        FAIL("bad magic accepted");
    } catch (const FormatError& e) {
        CHECK(e.offset() == 0);
    }
    CHECK_THROWS_AS(load_checkpoint(write(bytes.substr(0, 20))), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ctlb"), IoError);
}

TEST_CASE("grid parsing and the tie rule") {
    const auto full = parse_grid(json::parse(R"({"lr": [0.1, 0.05, 0.02, 0.01, 0.005], "K": [50, 100, 300], "gamma": [0.5, 1]})"));
    CHECK(full.cells() == 30);
    CHECK_THROWS_AS(parse_grid(json::parse(R"({"lr": [], "K": [50], "gamma": [1]})")), ConfigError);
    CHECK_THROWS_AS(parse_grid(json::parse(R"({"lr": [0.1], "K": [50]})")), ConfigError);
    CHECK_THROWS_AS(parse_grid(json::parse(R"({"lr": [0.1], "K": [50], "gamma": [1], "x": 1})")), ConfigError);

    const GridCell a{0.05, 100, 0.5, 0.8};
    CHECK(better_cell({0.1, 300, 0.5, 0.81}, a));
    CHECK(better_cell({0.01, 300, 0.5, 0.8}, a));  // smaller lr
    CHECK(better_cell({0.05, 50, 0.5, 0.8}, a));   // smaller K
    CHECK(better_cell({0.05, 100, 1.0, 0.8}, a));  // larger gamma
    CHECK_FALSE(better_cell(a, a));
    CHECK_FALSE(better_cell({0.1, 50, 1.0, 0.8}, a));
}

TEST_CASE("grid search over one cell returns it") {
    const auto cfg = parse_config(tiny("pretrain"));
    const auto g = parse_grid(json::parse(R"({"lr": [0.02], "K": [2], "gamma": [0.5]})"));
    const auto result = grid_search(cfg, g, 2);
    REQUIRE(result.best.size() == 2);
    for (const auto& b : result.best) {
        CHECK(b.lr == 0.02);
        CHECK(b.lr_drop_every == 2);
        CHECK(b.lr_drop_factor == 0.5);
        CHECK(b.validation_accuracy >= 0.0);
    }
    const auto two = parse_grid(json::parse(R"({"lr": [0.05, 0.01], "K": [0], "gamma": [1]})"));
    const auto r2 = grid_search(cfg, two, 1);
    CHECK(r2.table[0].size() == 2);
    const auto dir = testutil::temp_dir("grid");
    write_grid_result(r2, cfg, dir);
    CHECK(fs::exists(dir / "grid.csv"));
    CHECK(fs::exists(dir / "best.json"));

    auto no_val = tiny("pretrain");
    no_val["split"]["val_fraction"] = 0;
    CHECK_THROWS_AS(grid_search(parse_config(no_val), g), ConfigError);
}

TEST_CASE("metrics rows format and parse") {
    const std::vector<MetricRow> rows{
        {0, "m0", "canny", "test", 0.5, 0.4, 0.6, "", std::nullopt},
        {0, "m0-m1", "canny+patch", "test", std::nullopt, std::nullopt, std::nullopt, "m0-m1", -0.25},
    };
    const auto csv = format_metrics(rows);
    CHECK(csv ==
          "era,model_id,prior,split,accuracy,ci_lo,ci_hi,phi_pair,phi_value\n"
          "0,m0,canny,test,0.500000,0.400000,0.600000,,\n"
          "0,m0-m1,canny+patch,test,,,,m0-m1,-0.250000\n");
    const auto back = parse_metrics(csv);
    REQUIRE(back.size() == 2);
    CHECK(format_metrics(back) == csv);
    CHECK_THROWS_AS(parse_metrics("bad header\n"), FormatError);
    CHECK_THROWS_AS(parse_metrics(std::string(kMetricsHeader) + "\n0,m0,canny\n"), FormatError);
}

TEST_CASE("pretrain run writes one test row per prior and is reproducible") {
    const auto cfg = parse_config(tiny("pretrain"));
    const auto a = testutil::temp_dir("pre_a");
    const auto b = testutil::temp_dir("pre_b");
    const auto out = run(cfg, a, 1);
    run(cfg, b, 3);

    int test_rows = 0;
    for (const auto& r : out.rows) {
        if (r.split == "test" && r.accuracy) {
            ++test_rows;
            REQUIRE(r.ci_lo);
            CHECK(*r.ci_lo <= *r.accuracy);
            CHECK(*r.accuracy <= *r.ci_hi);
        }
    }
    CHECK(test_rows == 2);
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
    CHECK(fs::exists(a / "manifest.json"));
    const auto manifest = json::parse(slurp(a / "manifest.json"));
    CHECK(manifest["config"] == to_json(cfg));
    CHECK(manifest["seeds"]["master"] == 3);
    CHECK(load_checkpoint(a / "model_m1.ctlb") == out.models[1]);
}

TEST_CASE("cotrain run: era rows, pools, distillation and era-0 consistency") {
    const auto cfg = parse_config(tiny("cotrain"));
    const auto dir = testutil::temp_dir("co");
    const auto out = run(cfg, dir, 2);
    for (int era = 0; era <= cfg.schedule.eras; ++era) {
        int model_rows = 0, pair_rows = 0;
        for (const auto& r : out.rows) {
            if (r.era != era || r.split != "test") continue;
            if (r.accuracy && r.model_id.rfind("m", 0) == 0) ++model_rows;
            if (!r.phi_pair.empty()) ++pair_rows;
        }
        CHECK(model_rows == 2);
        CHECK(pair_rows == 1);
    }
    CHECK(fs::exists(dir / "pool_era_1.csv"));
    CHECK(fs::exists(dir / "pool_era_2.csv"));
    REQUIRE(out.distilled);
    CHECK(load_checkpoint(dir / "distill.ctlb") == *out.distilled);

    // Era-0 rows describe the pre-trained models: same numbers as mode pretrain.
    auto pre_cfg = cfg;
    pre_cfg.mode = Mode::Pretrain;
    const auto pre = run(pre_cfg, testutil::temp_dir("co_pre"), 1);
    auto era0 = [](const std::vector<MetricRow>& rows, const std::string& id) {
        for (const auto& r : rows)
            if (r.era == 0 && r.model_id == id && r.split == "test") return format_row(r);
        return std::string();
    };
    CHECK(era0(out.rows, "m0") == era0(pre.rows, "m0"));
    CHECK(era0(out.rows, "m0-m1") == era0(pre.rows, "m0-m1"));

    // The final pool distils to the same model through mode distill.
    auto d_cfg = cfg;
    d_cfg.mode = Mode::Distill;
    d_cfg.distill_pool = dir / ("pool_era_" + std::to_string(cfg.schedule.eras) + ".csv");
    const auto d = run(d_cfg, testutil::temp_dir("co_distill"), 1);
    REQUIRE(d.distilled);
    CHECK(*d.distilled == *out.distilled);

    const auto rep = report(dir, "csv");
    CHECK(rep.find("\n2,m0,") != std::string::npos);
    CHECK(rep.find("\n0,m0,") == std::string::npos);
    const auto rep_json = json::parse(report(dir, "json"));
    CHECK(rep_json.is_array());
    CHECK_THROWS_AS(report(dir, "xml"), ConfigError);
}

TEST_CASE("selftrain and ensemble runs") {
    const auto st = run(parse_config(tiny("selftrain")), testutil::temp_dir("self"), 2);
    int distill_rows = 0;
    for (const auto& r : st.rows) distill_rows += r.model_id.rfind("distill-", 0) == 0 && r.split == "test";
    CHECK(distill_rows == 2);
    CHECK(st.distilled);

    auto doc = tiny("ensemble");
    doc["ensemble"] = {{"methods", {"takemax", "average", "rank", "stacked"}}};
    const auto ens = run(parse_config(doc), testutil::temp_dir("ens"), 1);
    std::map<std::string, double> acc;
    for (const auto& r : ens.rows)
        if (r.accuracy && r.split == "test") acc[r.model_id] = *r.accuracy;
    REQUIRE(acc.count("ens-best"));
    CHECK(acc["ens-best"] == std::max({acc["ens-takemax"], acc["ens-average"], acc["ens-rank"]}));
    CHECK(acc.count("ens-stacked"));
}

TEST_CASE("pool files round-trip") {
    data::PseudoLabelPool pool;
    pool.entries = {{5, 1, 0, 0.912345678901234}, {5, 0, 1, 1.0 / 3.0}, {17, 2, 1, 0.5}};
    const auto path = testutil::temp_dir("pool") / "p.csv";
    save_pool(pool, path);
    CHECK(load_pool(path).entries == pool.entries);
    std::ofstream(path) << "example_id,label,source,confidence\n1,2\n";
    CHECK_THROWS_AS(load_pool(path), FormatError);
}

TEST_CASE("exit codes") {
    CHECK(exit_code_for(ConfigError("/x", "bad")) == 2);
    CHECK(exit_code_for(InvalidConfigError("bad")) == 2);
    CHECK(exit_code_for(FormatError("f", 0, "bad")) == 3);
    CHECK(exit_code_for(NumericError("nan")) == 4);
    CHECK(exit_code_for(IoError("io")) == 1);
    CHECK(exit_code_for(std::runtime_error("other")) == 1);
}
