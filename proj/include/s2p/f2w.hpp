#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "s2p/extractor.hpp"
#include "s2p/generator.hpp"
#include "s2p/nn.hpp"
#include "s2p/tensor.hpp"

namespace s2p::f2w {

// (feature, latent) pairs harvested from the generator. Latents are stored
// flattened row-major; record i is reproducible from (seed, i).
struct PairDataset {
  Tensor features;  // [n, d]
  Tensor latents;   // [n, latent_rows * latent_width]
  std::string extractor_id;
  std::string generator_checkpoint_id;
  std::uint64_t seed = 0;
  int latent_rows = 18;
  int latent_width = 0;

  int size() const { return features.empty() ? 0 : features.dim(0); }
  int feature_dim() const { return features.dim(1); }
};

PairDataset build_pair_dataset(const gen::Generator& g,
                               const ext::Registry& reg,
                               const std::string& extractor_id, int n,
                               std::uint64_t seed);

void save_pair_dataset(const PairDataset& ds,
                       const std::filesystem::path& path);
PairDataset load_pair_dataset(const std::filesystem::path& path);

struct TrainConfig {
  int epochs = 40;
  int batch_size = 32;
  double learning_rate = 1e-3;
  int hidden = 128;
  std::uint64_t seed = 0;
  double holdout_fraction = 0.05;     // split by index, tail is holdout
  std::vector<long> eval_steps;       // optimizer steps to probe holdout MSE
};

// Two affine layers with one ReLU between; maps a feature vector to a
// flattened latent code.
struct MapperModel {
  nn::Sequential net;
  std::string extractor_id;
  std::string generator_checkpoint_id;
  int input_dim = 0;
  int latent_rows = 18;
  int latent_width = 0;
  int hidden = 0;
  std::uint64_t train_seed = 0;
  std::vector<double> loss_curve;                   // one entry per step
  std::vector<std::pair<long, double>> eval_curve;  // (step, holdout MSE)
  double final_train_mse = 0.0;                     // over the whole dataset
};

MapperModel train_mapper(const PairDataset& ds, const TrainConfig& hyper);

// MSE of predicting all-zero latents; the floor any trained mapper must beat.
double zero_mapper_mse(const PairDataset& ds);

Tensor map_features(const MapperModel& m, const ext::FeatureVector& f);

struct EvalReport {
  double mean_latent_mse = 0.0;
  double median_latent_mse = 0.0;
  std::optional<double> mean_image_rms;  // set when a generator is supplied
  int count = 0;
};

EvalReport evaluate_mapper(const MapperModel& m, const PairDataset& holdout,
                           const gen::Generator* g = nullptr);

// Index-split helpers shared by training and the pipeline.
std::pair<PairDataset, PairDataset> split_pair_dataset(const PairDataset& ds,
                                                       double holdout_fraction);

void save_mapper(const MapperModel& m, const std::filesystem::path& path);
MapperModel load_mapper(const std::filesystem::path& path);

}  // namespace s2p::f2w
