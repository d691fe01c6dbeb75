#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "s2p/autodiff.hpp"
#include "s2p/generator.hpp"
#include "s2p/image.hpp"
#include "s2p/nn.hpp"
#include "s2p/tensor.hpp"

namespace s2p::mani {

// Ground-truth faceness scoring. Implementations must be deterministic
// functions of the 8-bit quantized image bytes so scores survive a PNG
// round trip.
class FacenessOracle {
 public:
  virtual ~FacenessOracle() = default;
  virtual double score(const img::ImageTensor& image) const = 0;
  virtual std::string name() const = 0;
};

// Desk-scale stand-in: 2 * exp(-tv / tau) where tv is the mean absolute
// neighbor difference of the 8-bit grayscale image, normalized to [0, 1].
// Smooth renders score near the top of the detector band, noisy ones drop
// off. Real face detection on 32px thumbnails is meaningless, so the toy
// pipeline trains against this instead.
class SmoothnessOracle : public FacenessOracle {
 public:
  explicit SmoothnessOracle(double tau = kDefaultTau) : tau_(tau) {}
  double score(const img::ImageTensor& image) const override;
  std::string name() const override { return "smoothness"; }
  double tau() const { return tau_; }

  static constexpr double kDefaultTau = 0.3;  // clean renders land near 1.8

 private:
  double tau_;
};

// Full-scale path: shells out to a detector binary. The command is invoked
// with a PNG path appended; stdout carries one confidence per line; the
// score is the maximum confidence, or 0 when nothing is detected.
class ExternalCommandOracle : public FacenessOracle {
 public:
  explicit ExternalCommandOracle(std::string command);
  double score(const img::ImageTensor& image) const override;
  std::string name() const override { return "external"; }

 private:
  std::string command_;
};

double hog_faceness(const img::ImageTensor& image, const FacenessOracle& oracle);

struct ScoredRecord {
  img::ImageTensor image;
  std::uint64_t noise_seed = 0;
  double score = 0.0;
};

struct ScoredImageDataset {
  std::vector<ScoredRecord> records;
  std::string generator_checkpoint_id;
  std::uint64_t seed = 0;
};

ScoredImageDataset build_faceness_dataset(const gen::Generator& g,
                                          const FacenessOracle& oracle, int n,
                                          std::uint64_t seed);

// Directory layout: img_XXXXX.png per record, scores.csv (index,seed,score),
// dataset.manifest for provenance.
void save_faceness_dataset(const ScoredImageDataset& ds,
                           const std::filesystem::path& dir);
ScoredImageDataset load_faceness_dataset(const std::filesystem::path& dir);

struct HogfdConfig {
  int input_resolution = 128;  // 32 on the toy stack
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

// Faceness regressor: four 3x3 conv blocks (16/32/64/128 filters, each
// conv -> batchnorm -> relu -> 2x2 maxpool), then fully connected 16
// (batchnorm, relu, dropout 0.5) -> 4 (relu) -> 1 (linear).
struct HogfdModel {
  nn::Sequential net;
  int input_resolution = 0;
  bool max_score_set = false;
  double max_score = 0.0;   // highest model output over the training images
  double max_target = 0.0;  // highest ground-truth score, logged alongside
  std::string generator_checkpoint_id;
  std::uint64_t train_seed = 0;
  std::vector<double> loss_curve;   // per-step mse in standardized target units
  double final_train_mse = 0.0;     // original score units, whole training set
};

nn::Sequential make_hogfd_net(int input_resolution, Rng& rng);

HogfdModel train_hogfd(const ScoredImageDataset& ds, const HogfdConfig& hyper);

// Differentiable score of a [1, C, H, W] node under the given pixel
// convention; resizes to the model resolution internally.
ad::NodePtr hogfd_score_node(const HogfdModel& m, const ad::NodePtr& chw,
                             img::RangeTag tag);
double hogfd_score(const HogfdModel& m, const img::ImageTensor& image);

// max_score - hogfd_score, unclamped; negative values are legal and simply
// mean the image outscores everything seen in training.
ad::NodePtr manifold_loss_node(const HogfdModel& m, const ad::NodePtr& chw,
                               img::RangeTag tag);
double manifold_loss(const HogfdModel& m, const img::ImageTensor& image);

void save_hogfd(const HogfdModel& m, const std::filesystem::path& path);
HogfdModel load_hogfd(const std::filesystem::path& path);

}  // namespace s2p::mani
