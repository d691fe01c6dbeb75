#pragma once

#include <filesystem>
#include <string>

#include "s2p/tensor.hpp"

namespace s2p::img {

// Pixel value convention an image declares. `normalized` marks network inputs
// that had mean/scale applied and no longer promise any fixed bounds.
enum class RangeTag { signed_unit, unit, normalized };

std::string range_tag_name(RangeTag tag);
RangeTag range_tag_from_name(const std::string& name);

// H x W x C image, C is 1 (grayscale) or 3 (RGB), row-major HWC storage.
struct ImageTensor {
  Tensor pixels;  // [H, W, C]
  RangeTag tag = RangeTag::unit;

  int height() const { return pixels.dim(0); }
  int width() const { return pixels.dim(1); }
  int channels() const { return pixels.dim(2); }
};

// Throws PreconditionError on bad rank/channels, NumericError on non-finite
// pixels or values outside the declared range (normalized images only need
// finiteness).
void validate(const ImageTensor& img);

ImageTensor make_image(Tensor pixels, RangeTag tag);

// Range conversion between signed_unit and unit (affine, exact endpoints).
// Converting to/from `normalized` is not meaningful and throws.
ImageTensor convert_range(const ImageTensor& img, RangeTag target);

// Layout bridges to the [C,H,W] convention the network ops use.
Tensor to_chw(const ImageTensor& img);
ImageTensor from_chw(const Tensor& chw, RangeTag tag);

// Luma (0.299, 0.587, 0.114) on a unit-range image; grayscale passes through.
// Returns [H, W].
Tensor to_gray(const ImageTensor& img);

// PNG io. Files decode to unit range; 8-bit quantization on write rounds to
// nearest. Alpha channels are dropped.
ImageTensor read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageTensor& img);

}  // namespace s2p::img
