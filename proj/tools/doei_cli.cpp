#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "doei/errors.hpp"
#include "doei/experiment.hpp"

namespace fs = std::filesystem;
using namespace doei;

namespace {

RunConfig config_from(const std::string& path) {
    return path.empty() ? RunConfig::defaults() : load_run_config(path);
}

std::vector<SceneSample> load_dataset(const std::string& manifest_path, std::size_t num_classes) {
    std::vector<ManifestEntry> entries = read_manifest(manifest_path);
    if (entries.empty()) throw ConfigError("manifest lists no samples: " + manifest_path);
    std::string dir = fs::path(manifest_path).parent_path().string();
    std::vector<SceneSample> samples;
    samples.reserve(entries.size());
    for (const ManifestEntry& entry : entries)
        samples.push_back(load_sample(dir, entry, num_classes));
    return samples;
}

std::vector<double> parse_value_list(const std::string& text) {
    std::vector<double> values;
    std::size_t begin = 0;
    while (begin <= text.size()) {
        std::size_t comma = text.find(',', begin);
        std::string item = text.substr(begin, comma == std::string::npos ? comma : comma - begin);
        std::size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &pos);
        } catch (const std::exception&) {
            throw ConfigError("--values: expected a number, got '" + item + "'");
        }
        if (pos != item.size())
            throw ConfigError("--values: trailing characters in '" + item + "'");
        values.push_back(v);
        if (comma == std::string::npos) break;
        begin = comma + 1;
    }
    return values;
}

Tensor class_map(const Tensor& maps, std::size_t c, std::size_t grid) {
    Tensor flat = reshape(maps, {maps.shape()[0], grid * grid});
    return reshape(slice_rows(flat, c, c + 1), {grid, grid});
}

void progress_line(const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); }

void epoch_line(std::size_t epoch, double mean_loss) {
    std::fprintf(stderr, "  epoch %zu: mean loss %.6f\n", epoch, mean_loss);
}

void cmd_gen_data(const std::string& cfg_path, std::size_t count, bool count_given,
                  const std::string& out_arg, bool eval_stream) {
    RunConfig run = config_from(cfg_path);
    if (!count_given) count = eval_stream ? run.eval_count : run.train_count;
    if (count == 0) throw ConfigError("gen-data: count must be positive");
    SceneSpec spec = eval_stream ? run.eval_scene() : run.train_scene();
    std::string out_dir = out_arg.empty() ? run.out_dir : out_arg;
    std::vector<SceneSample> samples = generate(spec, count);
    write_dataset(out_dir, samples);
    std::printf("wrote %zu samples to %s\n", samples.size(), out_dir.c_str());
}

void cmd_train(const std::string& cfg_path, const std::string& manifest,
               const std::string& out_arg) {
    RunConfig run = config_from(cfg_path);
    std::vector<SceneSample> samples = load_dataset(manifest, run.model.num_classes);
    std::string out_dir = out_arg.empty() ? run.out_dir : out_arg;
    fs::create_directories(out_dir);

    Parameters params = Parameters::init(run.model);
    run.train.on_epoch = epoch_line;
    TrainResult result = train(params, run.model, run.doei, samples, run.train);

    save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), params);
    write_loss_csv((fs::path(out_dir) / "loss.csv").string(), result);
    std::printf("final loss: %.10g\n", result.epoch_loss.back());
}

void cmd_cam(const std::string& cfg_path, const std::string& checkpoint,
             const std::string& manifest, const std::string& out_arg) {
    RunConfig run = config_from(cfg_path);
    Parameters params = Parameters::init(run.model);
    load_checkpoint(checkpoint, params);

    std::vector<ManifestEntry> entries = read_manifest(manifest);
    if (entries.empty()) throw ConfigError("manifest lists no samples: " + manifest);
    std::string data_dir = fs::path(manifest).parent_path().string();
    std::string out_dir = out_arg.empty() ? run.out_dir : out_arg;
    fs::create_directories(out_dir);

    std::size_t files = 0;
    for (const ManifestEntry& entry : entries) {
        Tensor image = ppm_to_image(read_ppm((fs::path(data_dir) / entry.image_path).string()));
        CamArtifacts art = compute_cam_artifacts(params, run.model, run.doei, run.beta, image);
        char name[48];
        for (std::size_t c = 1; c <= run.model.num_classes; ++c) {
            std::snprintf(name, sizeof(name), "heat_%04zu_%zu.ppm", entry.index, c);
            write_ppm((fs::path(out_dir) / name).string(),
                      heatmap_to_ppm(class_map(art.maps, c - 1, run.model.grid())));
            ++files;
        }
        std::snprintf(name, sizeof(name), "labels_%04zu.pgm", entry.index);
        write_pgm((fs::path(out_dir) / name).string(),
                  mask_to_pgm(art.label_grid, run.model.grid()));
        std::snprintf(name, sizeof(name), "pseudo_%04zu.pgm", entry.index);
        write_pgm((fs::path(out_dir) / name).string(),
                  mask_to_pgm(art.pseudo_mask, run.model.image_size));
        files += 2;
    }
    std::printf("wrote %zu files for %zu images to %s\n", files, entries.size(),
                out_dir.c_str());
}

void cmd_eval(const std::string& pred_dir, const std::string& manifest, std::size_t classes,
              const std::string& out_path) {
    EvalStats stats = evaluate_prediction_dir(pred_dir, manifest, classes);
    std::string csv = metrics_csv(stats);
    if (!out_path.empty()) write_text_file(out_path, csv);
    std::fputs(csv.c_str(), stdout);
}

void cmd_ablate(const std::string& cfg_path, const std::string& out_arg) {
    RunConfig run = config_from(cfg_path);
    run.train.on_epoch = epoch_line;
    std::vector<AblationRow> rows = run_ablation(run, progress_line);
    std::string csv = ablation_csv(rows);
    std::string out_path =
        out_arg.empty() ? (fs::path(run.out_dir) / "ablation.csv").string() : out_arg;
    fs::create_directories(fs::path(out_path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(out_path).parent_path());
    write_text_file(out_path, csv);
    std::fputs(csv.c_str(), stdout);
}

void cmd_sweep(const std::string& cfg_path, const std::string& param, const std::string& values,
               const std::string& out_arg) {
    RunConfig run = config_from(cfg_path);
    run.train.on_epoch = epoch_line;
    std::vector<SweepRow> rows = run_sweep(run, param, parse_value_list(values), progress_line);
    std::string csv = sweep_csv(param, rows);
    std::string out_path = out_arg.empty()
                               ? (fs::path(run.out_dir) / ("sweep_" + param + ".csv")).string()
                               : out_arg;
    fs::create_directories(fs::path(out_path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(out_path).parent_path());
    write_text_file(out_path, csv);
    std::fputs(csv.c_str(), stdout);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Attention-coupling optimization testbed: trains a miniature multi-class-token "
        "transformer on synthetic scenes and scores its class activation maps"};
    app.require_subcommand(1);

    std::string cfg_path, manifest, checkpoint, pred_dir, out_arg, param, values;
    std::size_t count = 0, classes = 0;
    bool eval_stream = false;

    CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen->add_option("--config", cfg_path, "Run config file (flat key = value)");
    gen->add_option("--count", count, "Number of samples (default: train_count)");
    gen->add_option("--out", out_arg, "Output directory (default: out_dir)");
    gen->add_flag("--eval-stream", eval_stream,
                  "Draw from the held-out evaluation stream instead of the training stream");
    gen->callback([&] {
        cmd_gen_data(cfg_path, count, gen->count("--count") > 0, out_arg, eval_stream);
    });

    CLI::App* tr = app.add_subcommand("train", "Train a model on a generated dataset");
    tr->add_option("--config", cfg_path, "Run config file");
    tr->add_option("--manifest", manifest, "Dataset manifest.csv")->required();
    tr->add_option("--out", out_arg, "Output directory (default: out_dir)");
    tr->callback([&] { cmd_train(cfg_path, manifest, out_arg); });

    CLI::App* cam = app.add_subcommand("cam", "Export activation heatmaps and pseudo-masks");
    cam->add_option("--config", cfg_path, "Run config file");
    cam->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
    cam->add_option("--manifest", manifest, "Dataset manifest.csv")->required();
    cam->add_option("--out", out_arg, "Output directory (default: out_dir)");
    cam->callback([&] { cmd_cam(cfg_path, checkpoint, manifest, out_arg); });

    CLI::App* ev = app.add_subcommand("eval", "Score pseudo-masks against ground truth");
    ev->add_option("--pred-dir", pred_dir, "Directory with pseudo_NNNN.pgm predictions")
        ->required();
    ev->add_option("--manifest", manifest, "Dataset manifest.csv")->required();
    ev->add_option("--classes", classes, "Class count (default: inferred from masks)");
    ev->add_option("--out", out_arg, "Also write the metrics CSV to this file");
    ev->callback([&] { cmd_eval(pred_dir, manifest, classes, out_arg); });

    CLI::App* ab = app.add_subcommand("ablate", "Train and score every mechanism combination");
    ab->add_option("--config", cfg_path, "Run config file");
    ab->add_option("--out", out_arg, "Output CSV (default: out_dir/ablation.csv)");
    ab->callback([&] { cmd_ablate(cfg_path, out_arg); });

    CLI::App* sw = app.add_subcommand("sweep", "Retrain across one hyper-parameter's values");
    sw->add_option("--config", cfg_path, "Run config file");
    sw->add_option("--param", param,
                   "One of ST_p2c, AF_p2c, SF_p2c, ST_c2c, AF_c2c, SF_c2c, alpha, K")
        ->required();
    sw->add_option("--values", values, "Comma-separated values")->required();
    sw->add_option("--out", out_arg, "Output CSV (default: out_dir/sweep_<param>.csv)");
    sw->callback([&] { cmd_sweep(cfg_path, param, values, out_arg); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "I/O error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
