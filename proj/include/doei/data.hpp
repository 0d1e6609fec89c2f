#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "doei/tensor.hpp"

namespace doei {

enum class ShapeKind { circle, square, triangle, ring, cross };

struct ClassSpec {
    int id = 0;  // 1-based label value in masks
    ShapeKind kind = ShapeKind::circle;
    double hue = 0.0;  // [0,1)
};

// When an image contains the trigger class, the companion texture is painted
// into the background with the given probability.
struct CooccurrenceRule {
    int trigger_class = 0;
    double texture_hue = 0.0;
    double probability = 0.0;
};

struct SceneSpec {
    std::size_t canvas = 64;
    std::vector<ClassSpec> classes;
    std::size_t objects_min = 1;
    std::size_t objects_max = 3;
    std::vector<CooccurrenceRule> rules;
    double noise_std = 0.02;
    std::uint64_t seed = 0;

    void validate() const;
    // Canvas 64, five shape classes with distinct hues, one stripes texture
    // co-occurring with class 1.
    static SceneSpec benchmark(std::uint64_t seed, double cooccur_probability = 0.8);
};

struct SceneSample {
    Tensor image;                             // [S,S,3], values in [0,1]
    std::vector<int> labels;                  // multi-hot, size = class count
    std::vector<int> gt_mask;                 // S*S, 0 = background
    std::vector<std::uint8_t> texture_mask;   // S*S, 1 where companion texture was painted
};

// Deterministic in (spec, index): per-sample streams are derived by counter.
SceneSample generate_one(const SceneSpec& spec, std::size_t index);
std::vector<SceneSample> generate(const SceneSpec& spec, std::size_t count);

void hsv_to_rgb(double h, double s, double v, double rgb[3]);

// ---- PPM (P6) / PGM (P5), binary, 8-bit ----

struct PpmImage {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> rgb;  // interleaved, 3*w*h
};

struct PgmImage {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> gray;  // w*h
};

void write_ppm(const std::string& path, const PpmImage& img);
PpmImage read_ppm(const std::string& path);
void write_pgm(const std::string& path, const PgmImage& img);
PgmImage read_pgm(const std::string& path);

PpmImage image_to_ppm(const Tensor& image);           // [S,S,3] floats -> bytes
Tensor ppm_to_image(const PpmImage& img);             // bytes -> [S,S,3] floats
PgmImage mask_to_pgm(const std::vector<int>& mask, std::size_t side);

// ---- dataset directory ----
// Layout: images/NNNN.ppm, masks/NNNN.pgm, manifest.csv with rows
// index,image_path,mask_path,labels (labels = semicolon-joined class ids).

struct ManifestEntry {
    std::size_t index = 0;
    std::string image_path, mask_path;  // relative to the manifest directory
    std::vector<int> classes;           // present class ids, ascending
};

void write_dataset(const std::string& dir, const std::vector<SceneSample>& samples);
std::vector<ManifestEntry> read_manifest(const std::string& manifest_path);

// Loads one manifest entry back into a sample (texture mask is not stored on
// disk and comes back empty).
SceneSample load_sample(const std::string& dir, const ManifestEntry& entry,
                        std::size_t class_count);

}  // namespace doei
