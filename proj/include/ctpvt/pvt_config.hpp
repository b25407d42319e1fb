#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "ctpvt/error.hpp"

namespace ctpvt {

inline constexpr std::size_t kStages = 4;
using StageArray = std::array<std::size_t, kStages>;

/// Hyperparameters of the four-stage pyramid backbone and its scalar head.
struct PvtConfig {
  StageArray embed_dims{32, 64, 160, 256};
  StageArray depths{2, 2, 2, 2};
  StageArray num_heads{1, 2, 5, 8};
  StageArray sr_ratios{8, 4, 2, 1};
  StageArray mlp_ratios{8, 8, 4, 4};
  StageArray patch_kernels{7, 3, 3, 3};
  StageArray patch_strides{4, 2, 2, 2};
  StageArray patch_paddings{3, 1, 1, 1};
  std::size_t input_channels = 3;
  std::size_t input_resolution = 224;
  double norm_eps = 1e-6;

  /// Small variant used by gradient checks and desk-scale training.
  static PvtConfig reduced(std::size_t resolution = 32) {
    PvtConfig c;
    c.embed_dims = {8, 16, 32, 64};
    c.depths = {1, 1, 1, 1};
    c.num_heads = {1, 2, 4, 8};
    c.input_resolution = resolution;
    return c;
  }

  /// Side length of the stage-`stage` token grid.
  std::size_t grid_side(std::size_t stage) const {
    std::size_t side = input_resolution;
    for (std::size_t i = 0; i <= stage; ++i) side /= patch_strides[i];
    return side;
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw config_error("model config: " + msg); };
    if (input_channels == 0) fail("input_channels must be positive");
    if (input_resolution == 0) fail("input_resolution must be positive");
    std::size_t side = input_resolution;
    for (std::size_t i = 0; i < kStages; ++i) {
      const std::string at = " (stage " + std::to_string(i) + ")";
      if (embed_dims[i] == 0 || depths[i] == 0 || num_heads[i] == 0 || sr_ratios[i] == 0 ||
          mlp_ratios[i] == 0 || patch_strides[i] == 0) {
        fail("all per-stage values must be positive" + at);
      }
      if (embed_dims[i] % num_heads[i] != 0) fail("embed_dims not divisible by num_heads" + at);
      if (patch_kernels[i] <= patch_strides[i]) fail("patch kernel must exceed stride" + at);
      if (patch_paddings[i] != patch_kernels[i] / 2) fail("patch padding must equal kernel/2" + at);
      if (side % patch_strides[i] != 0) {
        fail("resolution " + std::to_string(input_resolution) +
             " not divisible by cumulative stride" + at);
      }
      const std::size_t next = side / patch_strides[i];
      // the strided convolution must land exactly on side/stride
      if ((side + 2 * patch_paddings[i] - patch_kernels[i]) / patch_strides[i] + 1 != next) {
        fail("patch geometry does not produce side/stride" + at);
      }
      side = next;
      if (side % sr_ratios[i] != 0) {
        fail("sr_ratio " + std::to_string(sr_ratios[i]) + " does not divide grid side " +
             std::to_string(side) + at);
      }
    }
    if (!(norm_eps > 0.0)) fail("norm_eps must be positive");
  }
};

}  // namespace ctpvt
