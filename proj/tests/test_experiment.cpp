#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doei/errors.hpp"
#include "doei/experiment.hpp"

using namespace doei;

namespace {

// Small enough to train in milliseconds, big enough to exercise every stage.
RunConfig tiny_run() {
    RunConfig run = RunConfig::defaults();
    run.model.image_size = 16;
    run.model.patch_size = 8;
    run.model.num_classes = 3;
    run.model.embed_dim = 8;
    run.model.layers = 2;
    run.model.heads = 2;
    run.model.mlp_ratio = 1;
    run.model.seed = 7;
    run.doei = DoeiConfig::full_on(run.model.layers);
    run.train_count = 5;
    run.eval_count = 3;
    run.train.epochs = 1;
    run.train.lr = 0.05;
    run.data_seed = 11;
    return run;
}

bool same_stats(const EvalStats& a, const EvalStats& b) {
    return a.miou == b.miou && a.fp == b.fp && a.fn == b.fn && a.fp_texture == b.fp_texture;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name) {
        path = std::filesystem::temp_directory_path() / name;
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("run config defaults and scene derivation") {
    RunConfig run = RunConfig::defaults();
    CHECK_NOTHROW(run.validate());

    SceneSpec train_spec = run.train_scene();
    CHECK(train_spec.canvas == run.model.image_size);
    CHECK(train_spec.classes.size() == run.model.num_classes);
    CHECK(train_spec.seed == run.data_seed);
    CHECK(train_spec.rules.size() == 1);

    SceneSpec eval_spec = run.eval_scene();
    CHECK(eval_spec.seed != train_spec.seed);
    CHECK(eval_spec.canvas == train_spec.canvas);

    RunConfig tiny = tiny_run();
    CHECK_NOTHROW(tiny.validate());
    SceneSpec tiny_spec = tiny.train_scene();
    CHECK(tiny_spec.classes.size() == 3);
    CHECK(tiny_spec.objects_max <= 3);
    CHECK(tiny_spec.objects_min <= tiny_spec.objects_max);

    RunConfig too_many = RunConfig::defaults();
    too_many.model.num_classes = 6;
    CHECK_THROWS_AS(too_many.validate(), ConfigError);
}

TEST_CASE("config file parsing") {
    SUBCASE("full round trip") {
        std::istringstream in(
            "# comment line\n"
            "image_size = 16\n"
            "patch_size = 8\n"
            "num_classes = 3\n"
            "embed_dim = 8\n"
            "layers = 2\n"
            "heads = 2\n"
            "mlp_ratio = 1\n"
            "model_seed = 9\n"
            "block_style = standard\n"
            "\n"
            "ppdo_enabled = true\n"
            "cpdo_enabled = false\n"
            "hfa_enabled = 1\n"
            "st_p2c = 0.25\n"
            "af_p2c = 0.5\n"
            "sf_p2c = -0.5\n"
            "alpha = 0.2\n"
            "active_layers = 1,2\n"
            "coupling_source = logits\n"
            "hfa_scope = selection_only\n"
            "beta = 0.3   # trailing comment\n"
            "data_seed = 77\n"
            "cooccur_probability = 0.5\n"
            "noise_std = 0\n"
            "train_count = 4\n"
            "eval_count = 2\n"
            "epochs = 3\n"
            "lr = 0.01\n"
            "momentum = 0.8\n"
            "out_dir = results\n");
        RunConfig run = parse_run_config(in);
        CHECK(run.model.image_size == 16);
        CHECK(run.model.num_classes == 3);
        CHECK(run.model.seed == 9);
        CHECK(run.model.block_style == ModelConfig::BlockStyle::standard);
        CHECK(run.doei.ppdo_enabled);
        CHECK_FALSE(run.doei.cpdo_enabled);
        CHECK(run.doei.hfa_enabled);
        CHECK(run.doei.st_p2c == 0.25);
        CHECK(run.doei.alpha == 0.2);
        CHECK(run.doei.active_layers == std::vector<std::size_t>{1, 2});
        CHECK(run.doei.coupling_source == DoeiConfig::CouplingSource::logits);
        CHECK(run.doei.hfa_scope == DoeiConfig::HfaScope::selection_only);
        CHECK(run.beta == 0.3);
        CHECK(run.data_seed == 77);
        CHECK(run.cooccur_probability == 0.5);
        CHECK(run.noise_std == 0.0);
        CHECK(run.train_count == 4);
        CHECK(run.eval_count == 2);
        CHECK(run.train.epochs == 3);
        CHECK(run.train.lr == 0.01);
        CHECK(run.train.momentum == 0.8);
        CHECK(run.out_dir == "results");
    }
    SUBCASE("unknown key rejected") {
        std::istringstream in("learning_rate = 0.1\n");
        CHECK_THROWS_WITH_AS(parse_run_config(in), doctest::Contains("unknown config key"),
                             ConfigError);
    }
    SUBCASE("malformed values rejected") {
        RunConfig run = RunConfig::defaults();
        CHECK_THROWS_AS(set_run_config_key(run, "epochs", "three"), ConfigError);
        CHECK_THROWS_AS(set_run_config_key(run, "epochs", "-2"), ConfigError);
        CHECK_THROWS_AS(set_run_config_key(run, "lr", "0.1x"), ConfigError);
        CHECK_THROWS_AS(set_run_config_key(run, "ppdo_enabled", "yes"), ConfigError);
        CHECK_THROWS_AS(set_run_config_key(run, "block_style", "huge"), ConfigError);
        CHECK_THROWS_AS(set_run_config_key(run, "coupling_source", "mean"), ConfigError);
        CHECK_THROWS_AS(set_run_config_key(run, "hfa_scope", "partial"), ConfigError);
    }
    SUBCASE("missing equals sign rejected") {
        std::istringstream in("beta 0.4\n");
        CHECK_THROWS_WITH_AS(parse_run_config(in), doctest::Contains("line 1"), ConfigError);
    }
    SUBCASE("module invariants re-validated at load") {
        std::istringstream bad_patch("image_size = 30\n");
        CHECK_THROWS_AS(parse_run_config(bad_patch), ConfigError);
        std::istringstream bad_layer("active_layers = 9\n");
        CHECK_THROWS_AS(parse_run_config(bad_layer), ConfigError);
        std::istringstream bad_beta("beta = 1.5\n");
        CHECK_THROWS_AS(parse_run_config(bad_beta), ConfigError);
        std::istringstream bad_sf("sf_p2c = 0.3\n");
        CHECK_THROWS_AS(parse_run_config(bad_sf), ConfigError);
        std::istringstream ok_sf("sf_p2c = 0.3\nallow_positive_sf = true\n");
        CHECK_NOTHROW(parse_run_config(ok_sf));
    }
    SUBCASE("empty stream gives defaults") {
        std::istringstream in("");
        RunConfig run = parse_run_config(in);
        CHECK(run.model.image_size == RunConfig::defaults().model.image_size);
        CHECK(run.doei.ppdo_enabled);
    }
    SUBCASE("missing file is an I/O error") {
        CHECK_THROWS_AS(load_run_config("/nonexistent/run.cfg"), IoError);
    }
}

TEST_CASE("zero classifier head yields all-background pseudo-masks") {
    RunConfig run = tiny_run();
    std::vector<SceneSample> eval_set = generate(run.eval_scene(), run.eval_count);
    Parameters params = Parameters::init(run.model);
    std::fill(params.patch_head_w.mutable_data().begin(), params.patch_head_w.mutable_data().end(),
              0.0);

    CamArtifacts art =
        compute_cam_artifacts(params, run.model, run.doei, run.beta, eval_set[0].image);
    CHECK(art.maps.shape() ==
          Shape{run.model.num_classes, run.model.grid(), run.model.grid()});
    for (int label : art.pseudo_mask) CHECK(label == 0);

    EvalStats stats = evaluate(params, run.model, run.doei, run.beta, eval_set);
    CHECK(stats.fp == 0.0);
    CHECK(stats.fn == 1.0);
    CHECK(stats.fp_texture == 0.0);

    // All-background predictions: background IoU = bg/total, every present
    // foreground class scores 0, absent classes are excluded.
    std::size_t total = 0, background = 0;
    std::set<int> present;
    for (const SceneSample& sample : eval_set)
        for (int label : sample.gt_mask) {
            ++total;
            if (label == 0) ++background;
            else present.insert(label);
        }
    double expected =
        (static_cast<double>(background) / static_cast<double>(total)) /
        static_cast<double>(1 + present.size());
    CHECK(stats.miou == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("ablation variant table") {
    DoeiConfig base = DoeiConfig::full_on(3);
    base.st_p2c = 0.11;
    base.alpha = 0.27;
    std::vector<AblationVariant> variants = ablation_variants(base);
    REQUIRE(variants.size() == 7);

    const char* names[] = {"baseline", "+CPDO",     "+PPDO", "+CPDO+PPDO",
                           "+CPDO+HFA", "+PPDO+HFA", "full"};
    const double refs[] = {61.7, 63.3, 63.2, 64.3, 64.6, 64.9, 65.5};
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(variants[i].name == names[i]);
        CHECK(variants[i].reference_miou == refs[i]);
        CHECK(variants[i].config.st_p2c == 0.11);
        CHECK(variants[i].config.alpha == 0.27);
        CHECK(variants[i].config.active_layers == base.active_layers);
    }
    CHECK_FALSE(variants[0].config.ppdo_enabled);
    CHECK_FALSE(variants[0].config.cpdo_enabled);
    CHECK_FALSE(variants[0].config.hfa_enabled);
    CHECK(variants[1].config.cpdo_enabled);
    CHECK_FALSE(variants[1].config.ppdo_enabled);
    CHECK(variants[2].config.ppdo_enabled);
    CHECK_FALSE(variants[2].config.cpdo_enabled);
    CHECK(variants[3].config.ppdo_enabled);
    CHECK(variants[3].config.cpdo_enabled);
    CHECK_FALSE(variants[3].config.hfa_enabled);
    CHECK(variants[4].config.hfa_enabled);
    CHECK(variants[5].config.hfa_enabled);
    CHECK(variants[6].config.ppdo_enabled);
    CHECK(variants[6].config.cpdo_enabled);
    CHECK(variants[6].config.hfa_enabled);
}

TEST_CASE("tiny ablation: determinism and baseline equivalence") {
    RunConfig run = tiny_run();
    std::vector<AblationRow> rows = run_ablation(run);
    REQUIRE(rows.size() == 7);
    for (const AblationRow& row : rows) {
        CHECK(std::isfinite(row.stats.miou));
        CHECK(std::isfinite(row.stats.fp));
        CHECK(std::isfinite(row.stats.fn));
        CHECK(row.stats.miou >= 0.0);
        CHECK(row.stats.miou <= 1.0);
    }

    // Baseline row must equal an explicit mechanism-off training run.
    std::vector<SceneSample> train_set = generate(run.train_scene(), run.train_count);
    std::vector<SceneSample> eval_set = generate(run.eval_scene(), run.eval_count);
    Parameters params = Parameters::init(run.model);
    DoeiConfig off = DoeiConfig::off();
    train(params, run.model, off, train_set, run.train);
    EvalStats manual = evaluate(params, run.model, off, run.beta, eval_set);
    CHECK(same_stats(rows[0].stats, manual));

    // Whole table is bit-reproducible.
    std::vector<AblationRow> again = run_ablation(run);
    CHECK(ablation_csv(rows) == ablation_csv(again));
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(same_stats(rows[i].stats, again[i].stats));
}

TEST_CASE("tiny sweeps: K prefix and alpha identity reductions") {
    RunConfig run = tiny_run();
    std::vector<AblationRow> table = run_ablation(run);

    SUBCASE("K sweep") {
        std::vector<SweepRow> rows = run_sweep(run, "K", {0.0, 1.0, 2.0});
        REQUIRE(rows.size() == 3);
        CHECK(same_stats(rows[0].stats, table[0].stats));  // K=0 == baseline
        CHECK(same_stats(rows[2].stats, table[6].stats));  // K=L == full
        std::string csv = sweep_csv("K", rows);
        CHECK(csv.substr(0, 16) == "value,miou,fp,fn");
        CHECK(csv.find("# default") == std::string::npos);
        CHECK(csv.find("\n0,") != std::string::npos);
        CHECK(csv.find("\n2,") != std::string::npos);
    }
    SUBCASE("alpha sweep") {
        std::vector<SweepRow> rows = run_sweep(run, "alpha", {0.0, 0.35});
        REQUIRE(rows.size() == 2);
        // alpha = 0 turns the alignment off: equals the +CPDO+PPDO row.
        CHECK(same_stats(rows[0].stats, table[3].stats));
        std::string csv = sweep_csv("alpha", rows);
        CHECK(csv.substr(0, 22) == "# default alpha = 0.35");
        CHECK(csv.find("\n0.35,") != std::string::npos);
    }
    SUBCASE("invalid sweeps rejected") {
        CHECK_THROWS_AS(run_sweep(run, "gamma", {0.1}), ConfigError);
        CHECK_THROWS_AS(run_sweep(run, "K", {1.5}), ConfigError);
        CHECK_THROWS_AS(run_sweep(run, "K", {3.0}), ConfigError);  // layers = 2
        CHECK_THROWS_AS(run_sweep(run, "K", {}), ConfigError);
        CHECK_THROWS_AS(run_sweep(run, "alpha", {1.5}), ConfigError);
    }
}

TEST_CASE("report formatting") {
    EvalStats stats;
    stats.per_class = {1.0, 0.5, std::numeric_limits<double>::quiet_NaN()};
    stats.miou = 0.75;
    stats.fp = 0.125;
    stats.fn = 0.25;
    CHECK(metrics_csv(stats) ==
          "class,iou\n"
          "0,1.000000\n"
          "1,0.500000\n"
          "2,nan\n"
          "miou,0.750000\n"
          "fp,0.125000\n"
          "fn,0.250000\n");

    AblationRow row;
    row.name = "baseline";
    row.reference_miou = 61.7;
    row.stats.miou = 0.43215;
    row.stats.fp = 0.1;
    row.stats.fn = 0.225;
    row.stats.fp_texture = 0.0625;
    CHECK(ablation_csv({row}) ==
          "variant,reference_miou,miou,fp,fn,texture_fp\n"
          "baseline,61.7,43.2150,10.0000,22.5000,6.2500\n");

    SweepRow srow;
    srow.value = 0.35;
    srow.stats.miou = 0.5;
    srow.stats.fp = 1.25;  // rates may exceed 1
    srow.stats.fn = 0.0;
    CHECK(sweep_csv("ST_p2c", {srow}) ==
          "value,miou,fp,fn\n"
          "0.35,50.0000,125.0000,0.0000\n");
}

TEST_CASE("prediction directory evaluation") {
    RunConfig run = tiny_run();
    std::vector<SceneSample> samples = generate(run.eval_scene(), 3);
    TempDir data_dir("doei_test_eval_data");
    TempDir pred_dir("doei_test_eval_pred");
    write_dataset(data_dir.path.string(), samples);
    std::string manifest = (data_dir.path / "manifest.csv").string();

    SUBCASE("perfect predictions") {
        for (std::size_t i = 0; i < samples.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "pseudo_%04zu.pgm", i);
            write_pgm((pred_dir.path / name).string(),
                      mask_to_pgm(samples[i].gt_mask, run.model.image_size));
        }
        EvalStats stats = evaluate_prediction_dir(pred_dir.path.string(), manifest);
        CHECK(stats.miou == 1.0);
        CHECK(stats.fp == 0.0);
        CHECK(stats.fn == 0.0);
        // Explicit class count keeps absent classes in the report length.
        EvalStats wide = evaluate_prediction_dir(pred_dir.path.string(), manifest, 5);
        CHECK(wide.per_class.size() == 6);
        CHECK(wide.miou == 1.0);
    }
    SUBCASE("all-background predictions") {
        std::vector<int> blank(run.model.image_size * run.model.image_size, 0);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "pseudo_%04zu.pgm", i);
            write_pgm((pred_dir.path / name).string(),
                      mask_to_pgm(blank, run.model.image_size));
        }
        EvalStats stats = evaluate_prediction_dir(pred_dir.path.string(), manifest);
        CHECK(stats.fn == 1.0);
        CHECK(stats.fp == 0.0);
        CHECK(stats.miou < 1.0);
    }
    SUBCASE("missing prediction file") {
        CHECK_THROWS_AS(evaluate_prediction_dir(pred_dir.path.string(), manifest), IoError);
    }
}
