#pragma once

#include <string>
#include <vector>

#include "s2p/extractor.hpp"
#include "s2p/image.hpp"
#include "s2p/tensor.hpp"

namespace s2p::met {

// Full-reference metrics on unit-range images. Color inputs are reduced to
// luminance (0.299/0.587/0.114) first. All parameterizations follow the
// metric publications' reference implementations and are pinned here:
//   ssim: 11x11 Gaussian window sigma 1.5, K1 0.01, K2 0.03, L 1, valid
//         windows only, mean over the local map
//   fsim: phase congruency from a log-Gabor bank (4 scales x 4 orientations,
//         min wavelength 6, mult 2, sigmaOnf 0.55, dThetaOnSigma 1.2, noise
//         gain k 2.0 with the 1/1.7 empirical rescale, 15th-order lowpass at
//         0.45), Scharr gradients /16, T1 0.85, T2 160 on the 0..255 scale,
//         downsample factor max(1, round(min(H,W)/256))
//   vif:  pixel domain, 4 scales with 17/9/5/3 Gaussian windows (sd N/5),
//         noise variance 2.0 on the 0..255 scale; reference image first;
//         a zero-information denominator (constant reference) yields 1
double ssim(const img::ImageTensor& a, const img::ImageTensor& b);
double fsim(const img::ImageTensor& a, const img::ImageTensor& b);
double vif(const img::ImageTensor& reference, const img::ImageTensor& distorted);

// Phase congruency map of a 0..255 grayscale [H, W] tensor; the building
// block of fsim, exposed so its parameterization can be cross-checked.
Tensor phase_congruency(const Tensor& gray255);

struct IqaPair {
  double ssim = 0.0;
  double fsim = 0.0;
  double vif = 0.0;
};

struct IqaReport {
  std::vector<IqaPair> pairs;
  double mean_ssim = 0.0;
  double mean_fsim = 0.0;
  double mean_vif = 0.0;
};

IqaReport evaluate_iqa(
    const std::vector<std::pair<img::ImageTensor, img::ImageTensor>>& pairs);

enum class Distance { euclidean, cosine };
std::string distance_name(Distance d);
Distance distance_from_name(const std::string& s);

struct ProbeResult {
  std::string probe_identity;
  std::string nearest_identity;
  double distance = 0.0;
  bool correct = false;
};

struct RecognitionReport {
  double accuracy = 0.0;
  std::vector<ProbeResult> probes;
  std::string extractor_id;
  Distance distance = Distance::euclidean;
};

// Nearest-gallery assignment on raw feature vectors; ties resolve to the
// lowest gallery index. Gallery identities must be unique and every probe
// identity must appear in the gallery.
RecognitionReport rank1_features(
    const std::vector<std::pair<std::string, ext::FeatureVector>>& gallery,
    const std::vector<std::pair<std::string, ext::FeatureVector>>& probes,
    Distance distance);

RecognitionReport rank1_accuracy(
    const std::vector<std::pair<std::string, img::ImageTensor>>& gallery,
    const std::vector<std::pair<std::string, img::ImageTensor>>& probes,
    const ext::Registry& reg, const std::string& extractor_id,
    Distance distance);

}  // namespace s2p::met
