#include "doei/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doei/errors.hpp"
#include "doei/rng.hpp"

namespace doei {

namespace {

constexpr double kBackgroundGray = 0.22;

struct Geometry {
    double cx = 0, cy = 0, r = 0;
};

bool inside_shape(ShapeKind kind, const Geometry& g, std::size_t x, std::size_t y) {
    const double dx = (static_cast<double>(x) + 0.5) - g.cx;
    const double dy = (static_cast<double>(y) + 0.5) - g.cy;
    switch (kind) {
        case ShapeKind::circle:
            return dx * dx + dy * dy <= g.r * g.r;
        case ShapeKind::square:
            return std::abs(dx) <= 0.9 * g.r && std::abs(dy) <= 0.9 * g.r;
        case ShapeKind::triangle:
            // Apex at the top, base at the bottom; half-width grows linearly.
            return dy >= -g.r && dy <= g.r && std::abs(dx) <= (dy + g.r) * 0.5;
        case ShapeKind::ring: {
            const double d2 = dx * dx + dy * dy;
            const double inner = 0.55 * g.r;
            return d2 <= g.r * g.r && d2 >= inner * inner;
        }
        case ShapeKind::cross: {
            const double arm = 0.33 * g.r;
            return (std::abs(dx) <= arm && std::abs(dy) <= g.r) ||
                   (std::abs(dy) <= arm && std::abs(dx) <= g.r);
        }
    }
    return false;
}

}  // namespace

void SceneSpec::validate() const {
    if (canvas < 8) throw ConfigError("scene: canvas must be at least 8");
    if (classes.empty()) throw ConfigError("scene: class list is empty");
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (classes[i].id != static_cast<int>(i) + 1)
            throw ConfigError("scene: class ids must be 1..C in order");
        if (classes[i].hue < 0.0 || classes[i].hue >= 1.0)
            throw ConfigError("scene: hue out of [0,1)");
        for (std::size_t j = 0; j < i; ++j)
            if (classes[j].hue == classes[i].hue)
                throw ConfigError("scene: class hues must be pairwise distinct");
    }
    if (objects_min < 1 || objects_min > objects_max)
        throw ConfigError("scene: need 1 <= objects_min <= objects_max");
    if (objects_max > classes.size())
        throw ConfigError("scene: objects_max exceeds class count");
    if (noise_std < 0.0) throw ConfigError("scene: negative noise_std");
    for (const auto& rule : rules) {
        if (rule.trigger_class < 1 || rule.trigger_class > static_cast<int>(classes.size()))
            throw ConfigError("scene: rule trigger is not a known class");
        if (rule.probability < 0.0 || rule.probability > 1.0)
            throw ConfigError("scene: rule probability out of [0,1]");
        if (rule.texture_hue < 0.0 || rule.texture_hue >= 1.0)
            throw ConfigError("scene: texture hue out of [0,1)");
    }
}

SceneSpec SceneSpec::benchmark(std::uint64_t seed, double cooccur_probability) {
    SceneSpec spec;
    spec.canvas = 64;
    spec.classes = {
        {1, ShapeKind::circle, 0.0},
        {2, ShapeKind::square, 0.2},
        {3, ShapeKind::triangle, 0.45},
        {4, ShapeKind::ring, 0.6},
        {5, ShapeKind::cross, 0.8},
    };
    spec.objects_min = 1;
    spec.objects_max = 3;
    // Texture hue matches class 1, making stripes a color confounder for it.
    spec.rules = {{1, 0.0, cooccur_probability}};
    spec.noise_std = 0.02;
    spec.seed = seed;
    return spec;
}

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
    const double hh = (h - std::floor(h)) * 6.0;
    const int sector = static_cast<int>(hh) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (sector) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
    }
}

SceneSample generate_one(const SceneSpec& spec, std::size_t index) {
    spec.validate();
    const std::size_t s = spec.canvas;
    Rng rng(Rng::mix(spec.seed, index));

    SceneSample sample;
    sample.gt_mask.assign(s * s, 0);
    sample.texture_mask.assign(s * s, 0);
    sample.labels.assign(spec.classes.size(), 0);

    std::vector<std::size_t> chosen;
    std::vector<Geometry> geometry;
    bool placed = false;
    for (int attempt = 0; attempt < 32 && !placed; ++attempt) {
        std::fill(sample.gt_mask.begin(), sample.gt_mask.end(), 0);
        const std::size_t count =
            spec.objects_min + rng.below(spec.objects_max - spec.objects_min + 1);

        // Distinct classes per image: partial Fisher-Yates over class indices.
        std::vector<std::size_t> order(spec.classes.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t j = i + rng.below(order.size() - i);
            std::swap(order[i], order[j]);
        }
        chosen.assign(order.begin(), order.begin() + count);
        geometry.clear();

        const double r_lo = static_cast<double>(s) / 8.0;
        const double r_hi = static_cast<double>(s) / 5.0;
        for (std::size_t k = 0; k < count; ++k) {
            Geometry g;
            g.r = rng.uniform(r_lo, r_hi);
            g.cx = rng.uniform(g.r + 1.0, static_cast<double>(s) - g.r - 1.0);
            g.cy = rng.uniform(g.r + 1.0, static_cast<double>(s) - g.r - 1.0);
            geometry.push_back(g);
        }

        // Later objects overdraw earlier ones.
        std::vector<std::size_t> area(count, 0);
        for (std::size_t k = 0; k < count; ++k) {
            const ClassSpec& cls = spec.classes[chosen[k]];
            for (std::size_t y = 0; y < s; ++y)
                for (std::size_t x = 0; x < s; ++x)
                    if (inside_shape(cls.kind, geometry[k], x, y)) {
                        sample.gt_mask[y * s + x] = cls.id;
                        ++area[k];
                    }
        }

        placed = true;
        for (std::size_t k = 0; k < count && placed; ++k) {
            const int id = spec.classes[chosen[k]].id;
            std::size_t visible = 0;
            for (std::size_t y = 0; y < s; ++y)
                for (std::size_t x = 0; x < s; ++x)
                    if (inside_shape(spec.classes[chosen[k]].kind, geometry[k], x, y) &&
                        sample.gt_mask[y * s + x] == id)
                        ++visible;
            if (area[k] == 0 || visible * 4 < area[k]) placed = false;
        }
    }
    if (!placed)
        throw ConfigError("scene: sample " + std::to_string(index) +
                          ": could not place shapes with 25% visibility");

    // Paint: background first, then shapes by mask value.
    sample.image = Tensor::full({s, s, 3}, kBackgroundGray);
    auto& pix = sample.image.mutable_data();
    for (std::size_t k = 0; k < chosen.size(); ++k) {
        const ClassSpec& cls = spec.classes[chosen[k]];
        double rgb[3];
        hsv_to_rgb(cls.hue, 0.75, 0.9, rgb);
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x)
                if (sample.gt_mask[y * s + x] == cls.id)
                    for (std::size_t c = 0; c < 3; ++c)
                        pix[(y * s + x) * 3 + c] = rgb[c];
    }

    for (const auto& rule : spec.rules) {
        bool triggered = false;
        for (std::size_t k = 0; k < chosen.size(); ++k)
            if (spec.classes[chosen[k]].id == rule.trigger_class) triggered = true;
        if (!triggered) continue;
        if (rng.uniform() >= rule.probability) continue;

        const std::size_t w_lo = s / 3, w_hi = (2 * s) / 3;
        const std::size_t rw = w_lo + rng.below(w_hi - w_lo + 1);
        const std::size_t rh = w_lo + rng.below(w_hi - w_lo + 1);
        const std::size_t rx = rng.below(s - rw + 1);
        const std::size_t ry = rng.below(s - rh + 1);
        double rgb[3];
        hsv_to_rgb(rule.texture_hue, 0.55, 0.75, rgb);
        for (std::size_t y = ry; y < ry + rh; ++y)
            for (std::size_t x = rx; x < rx + rw; ++x) {
                if (sample.gt_mask[y * s + x] != 0) continue;  // background only
                if ((x + y) % 6 >= 3) continue;                // diagonal stripes
                for (std::size_t c = 0; c < 3; ++c) pix[(y * s + x) * 3 + c] = rgb[c];
                sample.texture_mask[y * s + x] = 1;
            }
    }

    if (spec.noise_std > 0.0) {
        for (double& v : pix) {
            v += spec.noise_std * rng.normal();
            v = std::clamp(v, 0.0, 1.0);
        }
    }

    // Labels are derived from the final mask, not from the placement intent.
    for (int id : sample.gt_mask)
        if (id > 0) sample.labels[static_cast<std::size_t>(id) - 1] = 1;
    return sample;
}

std::vector<SceneSample> generate(const SceneSpec& spec, std::size_t count) {
    std::vector<SceneSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(generate_one(spec, i));
    return out;
}

// ---- PPM / PGM ----

namespace {

void write_binary_image(const std::string& path, const char* magic, std::size_t w,
                        std::size_t h, const std::uint8_t* bytes, std::size_t count) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << magic << "\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes), static_cast<std::streamsize>(count));
    if (!out) throw IoError("write failed: " + path);
}

struct NetpbmHeader {
    std::size_t width = 0, height = 0, payload_offset = 0;
};

NetpbmHeader parse_netpbm(const std::string& blob, const char* magic, const std::string& path) {
    if (blob.size() < 2) throw IoError("truncated header: " + path);
    const std::string found = blob.substr(0, 2);
    if (found == "P3" || found == "P2")
        throw IoError("unsupported ASCII netpbm format " + found + ": " + path);
    if (found != magic)
        throw IoError("bad magic '" + found + "' (want " + magic + "): " + path);

    std::size_t pos = 2;
    auto next_int = [&](const char* what) -> std::size_t {
        while (pos < blob.size()) {
            if (blob[pos] == '#') {  // comment to end of line
                while (pos < blob.size() && blob[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(blob[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        if (pos >= blob.size() || !std::isdigit(static_cast<unsigned char>(blob[pos])))
            throw IoError(std::string("malformed header (") + what + "): " + path);
        std::size_t value = 0;
        while (pos < blob.size() && std::isdigit(static_cast<unsigned char>(blob[pos]))) {
            value = value * 10 + static_cast<std::size_t>(blob[pos] - '0');
            if (value > (1u << 20)) throw IoError("implausible dimension: " + path);
            ++pos;
        }
        return value;
    };

    NetpbmHeader header;
    header.width = next_int("width");
    header.height = next_int("height");
    const std::size_t maxval = next_int("maxval");
    if (header.width == 0 || header.height == 0)
        throw IoError("zero dimension: " + path);
    if (maxval != 255) throw IoError("unsupported maxval (want 255): " + path);
    if (pos >= blob.size() || !std::isspace(static_cast<unsigned char>(blob[pos])))
        throw IoError("missing whitespace before payload: " + path);
    header.payload_offset = pos + 1;
    return header;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return std::move(buf).str();
}

}  // namespace

void write_ppm(const std::string& path, const PpmImage& img) {
    if (img.rgb.size() != 3 * img.width * img.height)
        throw ShapeError("ppm payload size mismatch");
    write_binary_image(path, "P6", img.width, img.height, img.rgb.data(), img.rgb.size());
}

PpmImage read_ppm(const std::string& path) {
    const std::string blob = slurp(path);
    const NetpbmHeader h = parse_netpbm(blob, "P6", path);
    PpmImage img;
    img.width = h.width;
    img.height = h.height;
    const std::size_t need = 3 * h.width * h.height;
    if (blob.size() - h.payload_offset < need) throw IoError("truncated payload: " + path);
    const auto* base = reinterpret_cast<const std::uint8_t*>(blob.data()) + h.payload_offset;
    img.rgb.assign(base, base + need);
    return img;
}

void write_pgm(const std::string& path, const PgmImage& img) {
    if (img.gray.size() != img.width * img.height)
        throw ShapeError("pgm payload size mismatch");
    write_binary_image(path, "P5", img.width, img.height, img.gray.data(), img.gray.size());
}

PgmImage read_pgm(const std::string& path) {
    const std::string blob = slurp(path);
    const NetpbmHeader h = parse_netpbm(blob, "P5", path);
    PgmImage img;
    img.width = h.width;
    img.height = h.height;
    const std::size_t need = h.width * h.height;
    if (blob.size() - h.payload_offset < need) throw IoError("truncated payload: " + path);
    const auto* base = reinterpret_cast<const std::uint8_t*>(blob.data()) + h.payload_offset;
    img.gray.assign(base, base + need);
    return img;
}

PpmImage image_to_ppm(const Tensor& image) {
    if (image.rank() != 3 || image.shape()[2] != 3)
        throw ShapeError("image_to_ppm wants [h,w,3], got rank " + std::to_string(image.rank()));
    PpmImage out;
    out.height = image.shape()[0];
    out.width = image.shape()[1];
    out.rgb.resize(3 * out.width * out.height);
    const auto& data = image.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double v = std::clamp(data[i], 0.0, 1.0);
        out.rgb[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

Tensor ppm_to_image(const PpmImage& img) {
    Tensor out = Tensor::zeros({img.height, img.width, 3});
    auto& data = out.mutable_data();
    for (std::size_t i = 0; i < img.rgb.size(); ++i)
        data[i] = static_cast<double>(img.rgb[i]) / 255.0;
    return out;
}

PgmImage mask_to_pgm(const std::vector<int>& mask, std::size_t side) {
    if (mask.size() != side * side) throw ShapeError("mask size is not side*side");
    PgmImage out;
    out.width = side;
    out.height = side;
    out.gray.resize(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] < 0 || mask[i] > 255) throw ShapeError("mask label out of byte range");
        out.gray[i] = static_cast<std::uint8_t>(mask[i]);
    }
    return out;
}

// ---- dataset directory ----

namespace fs = std::filesystem;

namespace {

std::string padded(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04zu", index);
    return buf;
}

}  // namespace

void write_dataset(const std::string& dir, const std::vector<SceneSample>& samples) {
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    if (ec) throw IoError("cannot create " + dir + "/images: " + ec.message());
    fs::create_directories(fs::path(dir) / "masks", ec);
    if (ec) throw IoError("cannot create " + dir + "/masks: " + ec.message());

    std::ofstream manifest(fs::path(dir) / "manifest.csv");
    if (!manifest) throw IoError("cannot open manifest for writing in " + dir);
    manifest << "index,image_path,mask_path,labels\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const SceneSample& sample = samples[i];
        const std::size_t side = sample.image.shape()[0];
        const std::string image_rel = "images/" + padded(i) + ".ppm";
        const std::string mask_rel = "masks/" + padded(i) + ".pgm";
        write_ppm((fs::path(dir) / image_rel).string(), image_to_ppm(sample.image));
        write_pgm((fs::path(dir) / mask_rel).string(), mask_to_pgm(sample.gt_mask, side));

        std::string labels;
        for (std::size_t c = 0; c < sample.labels.size(); ++c) {
            if (!sample.labels[c]) continue;
            if (!labels.empty()) labels += ';';
            labels += std::to_string(c + 1);
        }
        manifest << i << ',' << image_rel << ',' << mask_rel << ',' << labels << '\n';
    }
    if (!manifest) throw IoError("manifest write failed in " + dir);
}

std::vector<ManifestEntry> read_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest: " + manifest_path);
    std::string line;
    if (!std::getline(in, line) || line != "index,image_path,mask_path,labels")
        throw IoError("bad manifest header: " + manifest_path);

    std::vector<ManifestEntry> entries;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::array<std::string, 4> field;
        std::size_t start = 0;
        for (std::size_t f = 0; f < 4; ++f) {
            const std::size_t comma = line.find(',', start);
            if (f < 3 && comma == std::string::npos)
                throw IoError("manifest row with missing fields: " + line);
            field[f] = line.substr(start, comma == std::string::npos ? comma : comma - start);
            start = comma + 1;
        }
        ManifestEntry entry;
        entry.index = static_cast<std::size_t>(std::stoull(field[0]));
        entry.image_path = field[1];
        entry.mask_path = field[2];
        std::stringstream labels(field[3]);
        std::string token;
        while (std::getline(labels, token, ';'))
            if (!token.empty()) entry.classes.push_back(std::stoi(token));
        std::sort(entry.classes.begin(), entry.classes.end());
        entries.push_back(std::move(entry));
    }
    return entries;
}

SceneSample load_sample(const std::string& dir, const ManifestEntry& entry,
                        std::size_t class_count) {
    SceneSample sample;
    sample.image = ppm_to_image(read_ppm((fs::path(dir) / entry.image_path).string()));
    const PgmImage mask = read_pgm((fs::path(dir) / entry.mask_path).string());
    sample.gt_mask.assign(mask.gray.begin(), mask.gray.end());
    sample.labels.assign(class_count, 0);
    for (int id : entry.classes) {
        if (id < 1 || id > static_cast<int>(class_count))
            throw IoError("manifest label out of range: " + std::to_string(id));
        sample.labels[static_cast<std::size_t>(id) - 1] = 1;
    }
    return sample;
}

}  // namespace doei
