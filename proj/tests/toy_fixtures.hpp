#pragma once

#include <cstdint>

#include "s2p/extractor.hpp"
#include "s2p/f2w.hpp"
#include "s2p/generator.hpp"
#include "s2p/image.hpp"
#include "s2p/manifold.hpp"

// Trained fixtures shared across test files. The faceness regressor costs
// ~13s and the feature mapper ~3s to build, so each is constructed once per
// process on first use.
namespace fixtures {

inline const s2p::gen::Generator& toy_generator() {
  static s2p::gen::Generator g = s2p::gen::make_toy_generator();
  return g;
}

inline const s2p::ext::Registry& toy_registry() {
  static s2p::ext::Registry reg = s2p::ext::default_registry();
  return reg;
}

inline s2p::img::ImageTensor render(std::uint64_t seed) {
  const s2p::gen::Generator& g = toy_generator();
  return g.synthesize(g.map_noise(s2p::gen::sample_noise(seed)));
}

struct FacenessFixture {
  s2p::mani::ScoredImageDataset dataset;
  s2p::mani::HogfdModel model;
};

// The desk-scale training recipe: 24 scored renders, full-batch updates so
// the batch statistics seen in training match the calibrated inference
// statistics.
inline const FacenessFixture& trained_faceness() {
  static FacenessFixture fx = [] {
    FacenessFixture f;
    s2p::mani::SmoothnessOracle oracle;
    f.dataset =
        s2p::mani::build_faceness_dataset(toy_generator(), oracle, 24, 500);
    s2p::mani::HogfdConfig hc;
    hc.input_resolution = 16;
    hc.epochs = 250;
    hc.batch_size = 24;
    hc.learning_rate = 2e-2;
    hc.seed = 77;
    f.model = s2p::mani::train_hogfd(f.dataset, hc);
    return f;
  }();
  return fx;
}

// Two-epoch throwaway trained on constant targets: structurally complete
// (max_score set, right geometry) and nearly free, for tests that need some
// faceness model but not an accurate one. Constant targets have zero
// variance, which sidesteps the beats-a-constant-predictor gate.
inline const s2p::mani::HogfdModel& cheap_faceness() {
  static s2p::mani::HogfdModel m = [] {
    s2p::mani::SmoothnessOracle oracle;
    s2p::mani::ScoredImageDataset ds =
        s2p::mani::build_faceness_dataset(toy_generator(), oracle, 6, 300);
    for (auto& r : ds.records) r.score = 1.5;
    s2p::mani::HogfdConfig hc;
    hc.input_resolution = 16;
    hc.epochs = 2;
    hc.batch_size = 6;
    hc.learning_rate = 1e-3;
    hc.seed = 21;
    return s2p::mani::train_hogfd(ds, hc);
  }();
  return m;
}

struct MapperFixture {
  s2p::f2w::PairDataset dataset;
  s2p::f2w::MapperModel model;
};

inline const MapperFixture& trained_mapper() {
  static MapperFixture fx = [] {
    MapperFixture f;
    f.dataset = s2p::f2w::build_pair_dataset(toy_generator(), toy_registry(),
                                             "toy", 1000, 31);
    s2p::f2w::TrainConfig tc;
    tc.seed = 9;
    tc.eval_steps = {20, 1000};
    f.model = s2p::f2w::train_mapper(f.dataset, tc);
    return f;
  }();
  return fx;
}

}  // namespace fixtures
