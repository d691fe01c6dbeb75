#include "s2p/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "s2p/error.hpp"

namespace s2p::img {

std::string range_tag_name(RangeTag tag) {
  switch (tag) {
    case RangeTag::signed_unit: return "signed_unit";
    case RangeTag::unit: return "unit";
    case RangeTag::normalized: return "normalized";
  }
  throw PreconditionError("bad range tag");
}

RangeTag range_tag_from_name(const std::string& name) {
  if (name == "signed_unit") return RangeTag::signed_unit;
  if (name == "unit") return RangeTag::unit;
  if (name == "normalized") return RangeTag::normalized;
  throw CorruptDataError("unknown range tag: " + name);
}

void validate(const ImageTensor& img) {
  if (img.pixels.ndim() != 3)
    throw PreconditionError("image must be rank 3 (HWC)");
  int c = img.pixels.dim(2);
  if (c != 1 && c != 3)
    throw PreconditionError("image must have 1 or 3 channels");
  if (img.pixels.dim(0) < 1 || img.pixels.dim(1) < 1)
    throw PreconditionError("image has zero area");
  if (!img.pixels.all_finite())
    throw NumericError("image contains non-finite pixels");
  double lo, hi;
  switch (img.tag) {
    case RangeTag::signed_unit: lo = -1.0; hi = 1.0; break;
    case RangeTag::unit: lo = 0.0; hi = 1.0; break;
    case RangeTag::normalized: return;
  }
  const double* d = img.pixels.data();
  for (std::size_t i = 0; i < img.pixels.numel(); ++i)
    if (d[i] < lo || d[i] > hi)
      throw NumericError("pixel " + std::to_string(d[i]) +
                         " outside declared range " + range_tag_name(img.tag));
}

ImageTensor make_image(Tensor pixels, RangeTag tag) {
  ImageTensor img{std::move(pixels), tag};
  validate(img);
  return img;
}

ImageTensor convert_range(const ImageTensor& img, RangeTag target) {
  if (img.tag == RangeTag::normalized || target == RangeTag::normalized)
    throw PreconditionError("cannot range-convert normalized images");
  if (img.tag == target) return img;
  ImageTensor out{img.pixels, target};
  double* d = out.pixels.mutable_data();
  if (target == RangeTag::unit) {
    for (std::size_t i = 0; i < out.pixels.numel(); ++i)
      d[i] = (d[i] + 1.0) * 0.5;
  } else {
    for (std::size_t i = 0; i < out.pixels.numel(); ++i)
      d[i] = d[i] * 2.0 - 1.0;
  }
  return out;
}

Tensor to_chw(const ImageTensor& img) {
  int h = img.height(), w = img.width(), c = img.channels();
  Tensor out({c, h, w});
  double* o = out.mutable_data();
  const double* p = img.pixels.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        o[(static_cast<std::size_t>(ch) * h + y) * w + x] =
            p[(static_cast<std::size_t>(y) * w + x) * c + ch];
  return out;
}

ImageTensor from_chw(const Tensor& chw, RangeTag tag) {
  if (chw.ndim() != 3) throw PreconditionError("from_chw: rank");
  int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Tensor out({h, w, c});
  double* o = out.mutable_data();
  const double* p = chw.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        o[(static_cast<std::size_t>(y) * w + x) * c + ch] =
            p[(static_cast<std::size_t>(ch) * h + y) * w + x];
  return make_image(std::move(out), tag);
}

Tensor to_gray(const ImageTensor& img) {
  if (img.tag != RangeTag::unit)
    throw PreconditionError("to_gray expects a unit-range image");
  int h = img.height(), w = img.width(), c = img.channels();
  Tensor out({h, w});
  double* o = out.mutable_data();
  const double* p = img.pixels.data();
  if (c == 1) {
    for (std::size_t i = 0; i < out.numel(); ++i) o[i] = p[i];
  } else {
    for (std::size_t i = 0; i < out.numel(); ++i)
      o[i] = 0.299 * p[3 * i] + 0.587 * p[3 * i + 1] + 0.114 * p[3 * i + 2];
  }
  return out;
}

ImageTensor read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw MissingFileError("no such file: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw CorruptDataError("cannot decode image: " + path.string());
  if (m.depth() != CV_8U) {
    cv::Mat u8;
    m.convertTo(u8, CV_8U, 255.0 / 65535.0);
    m = u8;
  }
  int h = m.rows, w = m.cols, mc = m.channels();
  if (mc != 1 && mc != 3 && mc != 4)
    throw CorruptDataError("unsupported channel count in " + path.string());
  int c = mc == 1 ? 1 : 3;
  Tensor out({h, w, c});
  double* o = out.mutable_data();
  for (int y = 0; y < h; ++y) {
    const unsigned char* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < w; ++x) {
      if (c == 1) {
        o[(static_cast<std::size_t>(y) * w + x)] = row[x] / 255.0;
      } else {
        // OpenCV loads BGR(A); alpha is dropped
        std::size_t base = (static_cast<std::size_t>(y) * w + x) * 3;
        o[base + 0] = row[mc * x + 2] / 255.0;
        o[base + 1] = row[mc * x + 1] / 255.0;
        o[base + 2] = row[mc * x + 0] / 255.0;
      }
    }
  }
  return make_image(std::move(out), RangeTag::unit);
}

void write_png(const std::filesystem::path& path, const ImageTensor& img) {
  validate(img);
  ImageTensor unit =
      img.tag == RangeTag::unit ? img : convert_range(img, RangeTag::unit);
  int h = unit.height(), w = unit.width(), c = unit.channels();
  cv::Mat m(h, w, c == 1 ? CV_8UC1 : CV_8UC3);
  const double* p = unit.pixels.data();
  for (int y = 0; y < h; ++y) {
    unsigned char* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < w; ++x) {
      if (c == 1) {
        double v = std::round(p[static_cast<std::size_t>(y) * w + x] * 255.0);
        row[x] = static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
      } else {
        std::size_t base = (static_cast<std::size_t>(y) * w + x) * 3;
        for (int ch = 0; ch < 3; ++ch) {
          double v = std::round(p[base + ch] * 255.0);
          // write BGR
          row[3 * x + (2 - ch)] =
              static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
        }
      }
    }
  }
  if (!cv::imwrite(path.string(), m))
    throw IoError("cannot write image: " + path.string());
}

}  // namespace s2p::img
