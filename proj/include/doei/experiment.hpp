#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "doei/cam.hpp"
#include "doei/data.hpp"
#include "doei/doei.hpp"
#include "doei/metrics.hpp"
#include "doei/model.hpp"

namespace doei {

// One experiment: synthetic benchmark data + model + coupling config +
// training budget + CAM threshold. Configured by flat `key = value` files;
// unknown keys are rejected and every module invariant is re-checked on load.
struct RunConfig {
    ModelConfig model;
    DoeiConfig doei;
    double beta = 0.4;  // CAM contrast threshold

    std::uint64_t data_seed = 1;
    double cooccur_probability = 0.8;
    double noise_std = 0.02;
    std::size_t train_count = 500;
    std::size_t eval_count = 100;

    TrainConfig train;
    std::string out_dir = "out";

    // Benchmark scene resized to the model's canvas and class count (at most
    // the five benchmark classes). The evaluation scene draws from a disjoint
    // sample stream via a shifted seed.
    SceneSpec train_scene() const;
    SceneSpec eval_scene() const;

    void validate() const;

    static RunConfig defaults();
};

// Applies one `key = value` entry; throws ConfigError on unknown keys or
// malformed values.
void set_run_config_key(RunConfig& run, const std::string& key, const std::string& value);

RunConfig parse_run_config(std::istream& in);
RunConfig load_run_config(const std::string& path);

// ---- pseudo-mask evaluation ----

struct CamArtifacts {
    Tensor maps;                   // [C, N, N]
    std::vector<int> label_grid;   // N*N, 0 = background
    std::vector<int> pseudo_mask;  // S*S, nearest-neighbor upsampled
};

CamArtifacts compute_cam_artifacts(Parameters& params, const ModelConfig& cfg,
                                   const DoeiConfig& doei_cfg, double beta,
                                   const Tensor& image);

struct EvalStats {
    double miou = 0.0;
    double fp = 0.0;
    double fn = 0.0;
    // Fraction of co-occurring-texture pixels labeled foreground; 0 when the
    // evaluation set carries no texture masks.
    double fp_texture = 0.0;
    std::vector<double> per_class;  // IoU per label 0..C, NaN when excluded
};

// Dataset-level confusion over the whole set: forward -> CAM -> threshold ->
// upsample -> accumulate.
EvalStats evaluate(Parameters& params, const ModelConfig& cfg, const DoeiConfig& doei_cfg,
                   double beta, const std::vector<SceneSample>& eval_set);

// Scores externally produced pseudo-masks (pred_dir/pseudo_NNNN.pgm) against
// the manifest's ground-truth masks. num_classes 0 infers the label range
// from the masks themselves.
EvalStats evaluate_prediction_dir(const std::string& pred_dir, const std::string& manifest_path,
                                  std::size_t num_classes = 0);

// ---- ablation table ----

struct AblationVariant {
    std::string name;
    double reference_miou;  // published full-scale results, for side-by-side reading
    DoeiConfig config;
};

// The seven mechanism combinations, derived from `base` by toggling the
// enable flags; factors, thresholds, alpha and active layers are inherited.
std::vector<AblationVariant> ablation_variants(const DoeiConfig& base);

struct AblationRow {
    std::string name;
    double reference_miou = 0.0;
    EvalStats stats;
};

// Trains every variant from an identical initialization on one shared dataset
// and evaluates pseudo-mask quality. Fully deterministic; `progress` (when
// set) receives one line per variant.
std::vector<AblationRow> run_ablation(const RunConfig& run,
                                      const std::function<void(const std::string&)>& progress = {});

// ---- hyper-parameter sweep ----

// Valid params: ST_p2c, AF_p2c, SF_p2c, ST_c2c, AF_c2c, SF_c2c, alpha, K.
// K = n re-activates the layer prefix {1..n}; K = 0 disables every layer.
void apply_sweep_value(RunConfig& run, const std::string& param, double value);

struct SweepRow {
    double value = 0.0;
    EvalStats stats;
};

// One full train + eval per value; dataset and initialization shared.
std::vector<SweepRow> run_sweep(const RunConfig& run, const std::string& param,
                                const std::vector<double>& values,
                                const std::function<void(const std::string&)>& progress = {});

// ---- reports ----

// `class,iou` rows (nan = excluded) plus miou/fp/fn summary rows, fractions.
std::string metrics_csv(const EvalStats& stats);

// variant,reference_miou,miou,fp,fn,texture_fp; computed columns in percent
// to read alongside the reference column.
std::string ablation_csv(const std::vector<AblationRow>& rows);

// value,miou,fp,fn (percent); the alpha sweep carries a default marker line.
std::string sweep_csv(const std::string& param, const std::vector<SweepRow>& rows);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace doei
