#include "doei/cam.hpp"

#include <cmath>
#include <string>

#include "doei/errors.hpp"

namespace doei {

Tensor generate_cam(const Tensor& patch_tokens, const Tensor& head_w, std::size_t grid) {
    check_rank2(patch_tokens, "generate_cam.tokens");
    check_rank2(head_w, "generate_cam.head");
    const std::size_t cells = grid * grid;
    if (patch_tokens.rows() != cells)
        throw ShapeError("generate_cam: " + std::to_string(patch_tokens.rows()) +
                         " tokens do not fill a " + std::to_string(grid) + "x" +
                         std::to_string(grid) + " grid");
    if (patch_tokens.cols() != head_w.rows())
        throw ShapeError("generate_cam: token dim " + std::to_string(patch_tokens.cols()) +
                         " vs head dim " + std::to_string(head_w.rows()));

    const Tensor scores = matmul(patch_tokens, head_w);  // [cells, C]
    const std::size_t classes = head_w.cols();
    Tensor maps = Tensor::zeros({classes, grid, grid});
    auto& out = maps.mutable_data();
    for (std::size_t c = 0; c < classes; ++c) {
        Tensor channel = Tensor::zeros({cells});
        auto& ch = channel.mutable_data();
        for (std::size_t p = 0; p < cells; ++p) ch[p] = std::max(0.0, scores(p, c));
        const Tensor norm = minmax_normalize(channel);
        for (std::size_t p = 0; p < cells; ++p) out[c * cells + p] = norm.data()[p];
    }
    return maps;
}

std::vector<int> threshold_labels(const Tensor& maps, double beta) {
    if (!(beta > 0.0 && beta < 1.0))
        throw ConfigError("threshold: beta must lie strictly inside (0,1)");
    if (maps.rank() != 3) throw ShapeError("threshold: maps must be [C,N,N]");
    const std::size_t classes = maps.shape()[0];
    const std::size_t cells = maps.shape()[1] * maps.shape()[2];
    const auto& data = maps.data();

    std::vector<int> labels(cells, 0);
    for (std::size_t p = 0; p < cells; ++p) {
        double best = -1.0;
        std::size_t arg = 0;
        for (std::size_t c = 0; c < classes; ++c) {
            const double v = data[c * cells + p];
            if (v > best) {  // strict: ties keep the lowest class index
                best = v;
                arg = c;
            }
        }
        if (best >= beta) labels[p] = static_cast<int>(arg) + 1;
    }
    return labels;
}

std::vector<int> upsample_labels(const std::vector<int>& labels, std::size_t grid,
                                 std::size_t image_size) {
    if (labels.size() != grid * grid) throw ShapeError("upsample: labels are not grid*grid");
    if (grid == 0 || image_size % grid != 0)
        throw ShapeError("upsample: image size " + std::to_string(image_size) +
                         " not divisible by grid " + std::to_string(grid));
    const std::size_t factor = image_size / grid;
    std::vector<int> out(image_size * image_size);
    for (std::size_t y = 0; y < image_size; ++y)
        for (std::size_t x = 0; x < image_size; ++x)
            out[y * image_size + x] = labels[(y / factor) * grid + (x / factor)];
    return out;
}

PpmImage heatmap_to_ppm(const Tensor& map) {
    check_rank2(map, "heatmap");
    PpmImage img;
    img.height = map.rows();
    img.width = map.cols();
    img.rgb.resize(3 * img.width * img.height);
    const auto& data = map.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double v = std::clamp(data[i], 0.0, 1.0);
        const int idx = static_cast<int>(std::lround(v * 255.0));
        img.rgb[3 * i + 0] = static_cast<std::uint8_t>(idx);
        img.rgb[3 * i + 1] = static_cast<std::uint8_t>(idx < 128 ? idx : 255 - idx);
        img.rgb[3 * i + 2] = static_cast<std::uint8_t>(255 - idx);
    }
    return img;
}

}  // namespace doei
