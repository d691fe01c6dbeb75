#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "s2p/autodiff.hpp"
#include "s2p/image.hpp"
#include "s2p/tensor.hpp"

namespace s2p::gen {

enum class Kind { pretrained, toy };

std::string kind_name(Kind k);
Kind kind_from_name(const std::string& name);

// Standard-normal 512-vector, reproducible per seed.
Tensor sample_noise(std::uint64_t seed);

struct ConvW {
  Tensor k, b;
};

// Per style slot, two affine maps from the latent row to channel-wise
// scale and shift.
struct StyleAffine {
  Tensor scale_a, scale_b, shift_a, shift_b;
};

// Style-based decoder: a mapping network sends 512-d noise to a single
// latent row that is broadcast to 18 rows, and a synthesis network grows a
// learned 4x4 constant to the output resolution, modulated per stage by the
// latent rows. Immutable after construction; synthesis is pure.
class Generator {
 public:
  Kind kind = Kind::toy;
  int resolution = 0;
  std::string checkpoint_id;
  int latent_rows = 18;
  int latent_width = 0;
  int map_hidden = 0;
  std::vector<int> channels;  // base channels, then output channels per stage

  Tensor map_w0, map_b0, map_w1, map_b1;
  Tensor const0;  // [channels[0], 4, 4]
  ConvW init_conv;
  std::vector<std::array<ConvW, 2>> stages;
  std::vector<StyleAffine> styles;
  ConvW rgb;

  int style_slots() const { return 2 + 2 * static_cast<int>(stages.size()); }

  // Contiguous partition of latent rows over style slots; every row lands in
  // exactly one group, so every row receives gradient.
  static std::vector<std::pair<int, int>> row_groups(int rows, int slots);

  // [512] -> [18, latent_width], all rows equal.
  Tensor map_noise(const Tensor& z) const;

  // Differentiable synthesis; w node is [18, latent_width], result is
  // [1, 3, resolution, resolution] in [-1, 1].
  ad::NodePtr synthesize_node(const ad::NodePtr& w) const;

  img::ImageTensor synthesize(const Tensor& w) const;

  void validate_latent(const Tensor& w) const;
};

// Fresh decoder with seed-determined weights. `resolution` must be
// 4 * 2^stages and `channels` must list stages+1 entries.
Generator make_generator(Kind kind, int resolution, int latent_width,
                         int map_hidden, std::vector<int> channels,
                         std::uint64_t seed, std::string checkpoint_id);

// The 32x32 desk-scale fixture (seed 1234).
Generator make_toy_generator();

void save_generator(const Generator& g, const std::filesystem::path& path);
Generator load_generator(const std::filesystem::path& path, Kind kind);

}  // namespace s2p::gen
