#pragma once

#include <string>
#include <vector>

#include "doei/data.hpp"
#include "doei/tensor.hpp"

namespace doei {

// Class activation maps from final patch tokens [N*N, D] and the patch head
// weight [D, C]: per class, relu of the token score, then min-max normalized
// into [0,1] independently per class. Result is [C, N, N].
Tensor generate_cam(const Tensor& patch_tokens, const Tensor& head_w, std::size_t grid);

// Per cell: the best class wins if its activation reaches beta, else
// background. Ties go to the lowest class index. Labels are 1-based,
// 0 = background. beta must lie strictly inside (0,1).
std::vector<int> threshold_labels(const Tensor& maps, double beta);

// Nearest-neighbor upsample of a grid label map to image resolution.
// image_size must be a multiple of grid.
std::vector<int> upsample_labels(const std::vector<int>& labels, std::size_t grid,
                                 std::size_t image_size);

// Fixed 256-entry blue-to-red colormap applied to one [N,N] map.
PpmImage heatmap_to_ppm(const Tensor& map);

}  // namespace doei
