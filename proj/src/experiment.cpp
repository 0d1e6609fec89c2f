#include "doei/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <utility>

#include "doei/errors.hpp"

namespace doei {

namespace {

// Keeps evaluation samples out of every training stream: per-sample RNG
// streams mix those seeds with the sample index.
constexpr std::uint64_t kEvalSeedOffset = 7919;

std::string formatted(const char* fmt, ...) __attribute__((format(printf, 1, 2)));

std::string formatted(const char* fmt, ...) {
    char buf[192];
    std::va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    return buf;
}

std::string trim(const std::string& s) {
    std::size_t begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    std::size_t end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    if (value.empty() || value[0] == '-')
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" +
                          value + "'");
    std::size_t pos = 0;
    std::uint64_t out = 0;
    try {
        out = std::stoull(value, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + value + "'");
    }
    if (pos != value.size())
        throw ConfigError("config key '" + key + "': trailing characters in '" + value + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    double out = 0.0;
    try {
        out = std::stod(value, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
    }
    if (pos != value.size())
        throw ConfigError("config key '" + key + "': trailing characters in '" + value + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::vector<std::size_t> parse_layer_list(const std::string& key, const std::string& value) {
    std::vector<std::size_t> out;
    if (value.empty() || value == "none") return out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(static_cast<std::size_t>(parse_u64(key, trim(item))));
    return out;
}

}  // namespace

SceneSpec RunConfig::train_scene() const {
    SceneSpec spec = SceneSpec::benchmark(data_seed, cooccur_probability);
    if (model.num_classes > spec.classes.size())
        throw ConfigError("benchmark scene defines " + std::to_string(spec.classes.size()) +
                          " classes; num_classes=" + std::to_string(model.num_classes) +
                          " is not supported");
    spec.classes.resize(model.num_classes);
    spec.canvas = model.image_size;
    spec.noise_std = noise_std;
    spec.objects_max = std::min(spec.objects_max, model.num_classes);
    spec.objects_min = std::min(spec.objects_min, spec.objects_max);
    return spec;
}

SceneSpec RunConfig::eval_scene() const {
    SceneSpec spec = train_scene();
    spec.seed = data_seed + kEvalSeedOffset;
    return spec;
}

void RunConfig::validate() const {
    model.validate();
    doei.validate(model.layers);
    if (!(beta > 0.0 && beta < 1.0))
        throw ConfigError("beta must lie strictly inside (0,1)");
    if (!(cooccur_probability >= 0.0 && cooccur_probability <= 1.0))
        throw ConfigError("cooccur_probability must lie in [0,1]");
    if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
    if (train_count == 0) throw ConfigError("train_count must be positive");
    if (eval_count == 0) throw ConfigError("eval_count must be positive");
    if (train.epochs == 0) throw ConfigError("epochs must be at least 1");
    if (!(train.lr >= 0.0)) throw ConfigError("lr must be non-negative");
    if (!(train.momentum >= 0.0 && train.momentum < 1.0))
        throw ConfigError("momentum must lie in [0,1)");
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
    train_scene().validate();
}

RunConfig RunConfig::defaults() {
    RunConfig run;
    run.model.image_size = 64;
    run.model.patch_size = 8;
    run.model.num_classes = 5;
    run.model.embed_dim = 32;
    run.model.layers = 3;
    run.model.heads = 4;
    run.model.mlp_ratio = 2;
    run.model.seed = 42;
    run.doei = DoeiConfig::full_on(run.model.layers);
    run.train.epochs = 10;
    run.train.lr = 0.05;
    run.train.momentum = 0.9;
    return run;
}

void set_run_config_key(RunConfig& run, const std::string& key, const std::string& value) {
    // model
    if (key == "image_size") run.model.image_size = parse_u64(key, value);
    else if (key == "patch_size") run.model.patch_size = parse_u64(key, value);
    else if (key == "num_classes") run.model.num_classes = parse_u64(key, value);
    else if (key == "embed_dim") run.model.embed_dim = parse_u64(key, value);
    else if (key == "layers") run.model.layers = parse_u64(key, value);
    else if (key == "heads") run.model.heads = parse_u64(key, value);
    else if (key == "mlp_ratio") run.model.mlp_ratio = parse_u64(key, value);
    else if (key == "model_seed") run.model.seed = parse_u64(key, value);
    else if (key == "block_style") {
        if (value == "paper") run.model.block_style = ModelConfig::BlockStyle::paper;
        else if (value == "standard") run.model.block_style = ModelConfig::BlockStyle::standard;
        else throw ConfigError("config key 'block_style': expected paper|standard, got '" +
                               value + "'");
    }
    // coupling optimization
    else if (key == "ppdo_enabled") run.doei.ppdo_enabled = parse_bool(key, value);
    else if (key == "cpdo_enabled") run.doei.cpdo_enabled = parse_bool(key, value);
    else if (key == "hfa_enabled") run.doei.hfa_enabled = parse_bool(key, value);
    else if (key == "st_p2c") run.doei.st_p2c = parse_double(key, value);
    else if (key == "af_p2c") run.doei.af_p2c = parse_double(key, value);
    else if (key == "sf_p2c") run.doei.sf_p2c = parse_double(key, value);
    else if (key == "st_c2c") run.doei.st_c2c = parse_double(key, value);
    else if (key == "af_c2c") run.doei.af_c2c = parse_double(key, value);
    else if (key == "sf_c2c") run.doei.sf_c2c = parse_double(key, value);
    else if (key == "alpha") run.doei.alpha = parse_double(key, value);
    else if (key == "active_layers") run.doei.active_layers = parse_layer_list(key, value);
    else if (key == "coupling_source") {
        if (value == "weights") run.doei.coupling_source = DoeiConfig::CouplingSource::weights;
        else if (value == "logits") run.doei.coupling_source = DoeiConfig::CouplingSource::logits;
        else throw ConfigError("config key 'coupling_source': expected weights|logits, got '" +
                               value + "'");
    } else if (key == "hfa_scope") {
        if (value == "selection_only") run.doei.hfa_scope = DoeiConfig::HfaScope::selection_only;
        else if (value == "full") run.doei.hfa_scope = DoeiConfig::HfaScope::full;
        else throw ConfigError("config key 'hfa_scope': expected selection_only|full, got '" +
                               value + "'");
    } else if (key == "allow_positive_sf") run.doei.allow_positive_sf = parse_bool(key, value);
    // CAM threshold
    else if (key == "beta") run.beta = parse_double(key, value);
    // data
    else if (key == "data_seed") run.data_seed = parse_u64(key, value);
    else if (key == "cooccur_probability") run.cooccur_probability = parse_double(key, value);
    else if (key == "noise_std") run.noise_std = parse_double(key, value);
    else if (key == "train_count") run.train_count = parse_u64(key, value);
    else if (key == "eval_count") run.eval_count = parse_u64(key, value);
    // training
    else if (key == "epochs") run.train.epochs = parse_u64(key, value);
    else if (key == "lr") run.train.lr = parse_double(key, value);
    else if (key == "momentum") run.train.momentum = parse_double(key, value);
    // output
    else if (key == "out_dir") {
        if (value.empty()) throw ConfigError("config key 'out_dir': empty value");
        run.out_dir = value;
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

RunConfig parse_run_config(std::istream& in) {
    RunConfig run = RunConfig::defaults();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (std::size_t hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        set_run_config_key(run, key, value);
    }
    run.validate();
    return run;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    return parse_run_config(in);
}

// ---- pseudo-mask evaluation ----

CamArtifacts compute_cam_artifacts(Parameters& params, const ModelConfig& cfg,
                                   const DoeiConfig& doei_cfg, double beta,
                                   const Tensor& image) {
    std::vector<int> no_labels(cfg.num_classes, 0);
    ForwardResult fwd = model_forward(image, no_labels, params, cfg, doei_cfg);
    CamArtifacts out;
    out.maps = generate_cam(fwd.patch_tokens, params.patch_head_w, cfg.grid());
    out.label_grid = threshold_labels(out.maps, beta);
    out.pseudo_mask = upsample_labels(out.label_grid, cfg.grid(), cfg.image_size);
    return out;
}

EvalStats evaluate(Parameters& params, const ModelConfig& cfg, const DoeiConfig& doei_cfg,
                   double beta, const std::vector<SceneSample>& eval_set) {
    if (eval_set.empty()) throw ConfigError("evaluate: empty evaluation set");
    Confusion conf(cfg.num_classes);
    std::int64_t texture_hits = 0, texture_total = 0;
    for (const SceneSample& sample : eval_set) {
        CamArtifacts art = compute_cam_artifacts(params, cfg, doei_cfg, beta, sample.image);
        conf.accumulate(art.pseudo_mask, sample.gt_mask);
        if (sample.texture_mask.size() == art.pseudo_mask.size()) {
            auto [hits, total] = foreground_hits(art.pseudo_mask, sample.texture_mask);
            texture_hits += hits;
            texture_total += total;
        }
    }
    IouReport iou = compute_iou(conf);
    ErrorRates rates = fp_fn_rates(conf);
    EvalStats stats;
    stats.miou = iou.miou;
    stats.fp = rates.fp;
    stats.fn = rates.fn;
    stats.fp_texture =
        texture_total > 0 ? static_cast<double>(texture_hits) / static_cast<double>(texture_total)
                          : 0.0;
    stats.per_class = iou.per_class;
    return stats;
}

EvalStats evaluate_prediction_dir(const std::string& pred_dir, const std::string& manifest_path,
                                  std::size_t num_classes) {
    std::vector<ManifestEntry> entries = read_manifest(manifest_path);
    if (entries.empty()) throw ConfigError("eval: manifest lists no samples");
    std::filesystem::path manifest_dir = std::filesystem::path(manifest_path).parent_path();

    std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;  // (pred, gt)
    std::size_t max_label = 0;
    for (const ManifestEntry& entry : entries) {
        PgmImage gt = read_pgm((manifest_dir / entry.mask_path).string());
        std::string pred_name = formatted("pseudo_%04zu.pgm", entry.index);
        PgmImage pred = read_pgm((std::filesystem::path(pred_dir) / pred_name).string());
        if (pred.width != gt.width || pred.height != gt.height)
            throw ConfigError("eval: prediction/mask size mismatch for sample " +
                              std::to_string(entry.index));
        std::vector<int> pred_labels(pred.gray.begin(), pred.gray.end());
        std::vector<int> gt_labels(gt.gray.begin(), gt.gray.end());
        for (int v : pred_labels) max_label = std::max(max_label, static_cast<std::size_t>(v));
        for (int v : gt_labels) max_label = std::max(max_label, static_cast<std::size_t>(v));
        pairs.emplace_back(std::move(pred_labels), std::move(gt_labels));
    }
    if (num_classes == 0) num_classes = std::max<std::size_t>(max_label, 1);
    if (max_label > num_classes)
        throw ConfigError("eval: mask label " + std::to_string(max_label) +
                          " exceeds num_classes=" + std::to_string(num_classes));

    Confusion conf(num_classes);
    for (const auto& [pred, gt] : pairs) conf.accumulate(pred, gt);
    IouReport iou = compute_iou(conf);
    ErrorRates rates = fp_fn_rates(conf);
    EvalStats stats;
    stats.miou = iou.miou;
    stats.fp = rates.fp;
    stats.fn = rates.fn;
    stats.per_class = iou.per_class;
    return stats;
}

// ---- ablation table ----

std::vector<AblationVariant> ablation_variants(const DoeiConfig& base) {
    auto make = [&base](const char* name, double ref, bool ppdo, bool cpdo, bool hfa) {
        AblationVariant v;
        v.name = name;
        v.reference_miou = ref;
        v.config = base;
        v.config.ppdo_enabled = ppdo;
        v.config.cpdo_enabled = cpdo;
        v.config.hfa_enabled = hfa;
        return v;
    };
    return {
        make("baseline", 61.7, false, false, false),
        make("+CPDO", 63.3, false, true, false),
        make("+PPDO", 63.2, true, false, false),
        make("+CPDO+PPDO", 64.3, true, true, false),
        make("+CPDO+HFA", 64.6, false, true, true),
        make("+PPDO+HFA", 64.9, true, false, true),
        make("full", 65.5, true, true, true),
    };
}

std::vector<AblationRow> run_ablation(const RunConfig& run,
                                      const std::function<void(const std::string&)>& progress) {
    run.validate();
    std::vector<SceneSample> train_set = generate(run.train_scene(), run.train_count);
    std::vector<SceneSample> eval_set = generate(run.eval_scene(), run.eval_count);
    std::vector<AblationVariant> variants = ablation_variants(run.doei);
    std::vector<AblationRow> rows;
    for (std::size_t i = 0; i < variants.size(); ++i) {
        const AblationVariant& variant = variants[i];
        if (progress)
            progress(formatted("variant %zu/%zu: %s", i + 1, variants.size(),
                               variant.name.c_str()));
        Parameters params = Parameters::init(run.model);
        train(params, run.model, variant.config, train_set, run.train);
        AblationRow row;
        row.name = variant.name;
        row.reference_miou = variant.reference_miou;
        row.stats = evaluate(params, run.model, variant.config, run.beta, eval_set);
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---- hyper-parameter sweep ----

void apply_sweep_value(RunConfig& run, const std::string& param, double value) {
    DoeiConfig& d = run.doei;
    if (param == "ST_p2c") d.st_p2c = value;
    else if (param == "AF_p2c") d.af_p2c = value;
    else if (param == "SF_p2c") d.sf_p2c = value;
    else if (param == "ST_c2c") d.st_c2c = value;
    else if (param == "AF_c2c") d.af_c2c = value;
    else if (param == "SF_c2c") d.sf_c2c = value;
    else if (param == "alpha") d.alpha = value;
    else if (param == "K") {
        if (std::floor(value) != value || value < 0.0 ||
            value > static_cast<double>(run.model.layers))
            throw ConfigError("sweep K: value must be an integer in [0, layers]");
        d.active_layers.clear();
        for (std::size_t i = 1; i <= static_cast<std::size_t>(value); ++i)
            d.active_layers.push_back(i);
    } else {
        throw ConfigError("sweep: unknown parameter '" + param +
                          "' (valid: ST_p2c, AF_p2c, SF_p2c, ST_c2c, AF_c2c, SF_c2c, alpha, K)");
    }
}

std::vector<SweepRow> run_sweep(const RunConfig& run, const std::string& param,
                                const std::vector<double>& values,
                                const std::function<void(const std::string&)>& progress) {
    run.validate();
    if (values.empty()) throw ConfigError("sweep: need at least one value");
    std::vector<SceneSample> train_set = generate(run.train_scene(), run.train_count);
    std::vector<SceneSample> eval_set = generate(run.eval_scene(), run.eval_count);
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < values.size(); ++i) {
        double value = values[i];
        if (progress)
            progress(formatted("%s = %.10g (%zu/%zu)", param.c_str(), value, i + 1,
                               values.size()));
        RunConfig variant = run;
        apply_sweep_value(variant, param, value);
        variant.validate();
        Parameters params = Parameters::init(variant.model);
        train(params, variant.model, variant.doei, train_set, variant.train);
        SweepRow row;
        row.value = value;
        row.stats = evaluate(params, variant.model, variant.doei, variant.beta, eval_set);
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---- reports ----

std::string metrics_csv(const EvalStats& stats) {
    std::string out = "class,iou\n";
    for (std::size_t c = 0; c < stats.per_class.size(); ++c)
        out += formatted("%zu,%.6f\n", c, stats.per_class[c]);
    out += formatted("miou,%.6f\n", stats.miou);
    out += formatted("fp,%.6f\n", stats.fp);
    out += formatted("fn,%.6f\n", stats.fn);
    return out;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "variant,reference_miou,miou,fp,fn,texture_fp\n";
    for (const AblationRow& row : rows)
        out += formatted("%s,%.1f,%.4f,%.4f,%.4f,%.4f\n", row.name.c_str(), row.reference_miou,
                         100.0 * row.stats.miou, 100.0 * row.stats.fp, 100.0 * row.stats.fn,
                         100.0 * row.stats.fp_texture);
    return out;
}

std::string sweep_csv(const std::string& param, const std::vector<SweepRow>& rows) {
    std::string out;
    if (param == "alpha") out += formatted("# default alpha = %.10g\n", DoeiConfig{}.alpha);
    out += "value,miou,fp,fn\n";
    for (const SweepRow& row : rows)
        out += formatted("%.10g,%.4f,%.4f,%.4f\n", row.value, 100.0 * row.stats.miou,
                         100.0 * row.stats.fp, 100.0 * row.stats.fn);
    return out;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace doei
