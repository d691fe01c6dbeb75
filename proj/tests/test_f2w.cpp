#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "s2p/error.hpp"
#include "s2p/f2w.hpp"
#include "s2p/generator.hpp"
#include "s2p/store.hpp"
#include "toy_fixtures.hpp"

using namespace s2p;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void tamper(const fs::path& manifest, const std::string& key,
            const std::string& value) {
  store::Manifest m = store::read_manifest(manifest);
  m[key] = value;
  store::write_manifest(manifest, m);
}

ext::FeatureVector feature_row(const f2w::PairDataset& ds, int i) {
  Tensor v({ds.feature_dim()});
  std::copy(ds.features.data() + static_cast<std::size_t>(i) * ds.feature_dim(),
            ds.features.data() + static_cast<std::size_t>(i + 1) * ds.feature_dim(),
            v.mutable_data());
  return {std::move(v), ds.extractor_id};
}

f2w::MapperModel tiny_mapper(const f2w::PairDataset& ds) {
  f2w::TrainConfig tc;
  tc.epochs = 2;
  tc.hidden = 8;
  tc.seed = 5;
  tc.holdout_fraction = 0.0;
  return f2w::train_mapper(ds, tc);
}

}  // namespace

TEST_CASE("pair dataset records compose extractor over generator") {
  const auto& g = fixtures::toy_generator();
  const auto& reg = fixtures::toy_registry();
  f2w::PairDataset ds = f2w::build_pair_dataset(g, reg, "toy", 3, 7);

  CHECK(ds.size() == 3);
  CHECK(ds.feature_dim() == 64);
  CHECK(ds.extractor_id == "toy");
  CHECK(ds.generator_checkpoint_id == g.checkpoint_id);
  CHECK(ds.latent_rows == 18);
  CHECK(ds.latent_width == g.latent_width);

  // record i is the extractor applied to the render of noise seed+i, and the
  // latent is that render's code flattened row-major
  for (int i = 0; i < 3; ++i) {
    Tensor w = g.map_noise(gen::sample_noise(7 + static_cast<std::uint64_t>(i)));
    ext::FeatureVector f = reg.extract(g.synthesize(w), "toy");
    for (int j = 0; j < 64; ++j)
      CHECK(ds.features.at(i, j) == f.values[static_cast<std::size_t>(j)]);
    for (std::size_t j = 0; j < w.numel(); ++j)
      CHECK(ds.latents.at(i, static_cast<int>(j)) == w[j]);
  }

  CHECK_THROWS_AS(f2w::build_pair_dataset(g, reg, "toy", 0, 7),
                  PreconditionError);
  CHECK_THROWS_AS(f2w::build_pair_dataset(g, reg, "nope", 2, 7),
                  PreconditionError);
}

TEST_CASE("pair dataset rebuild and extension are deterministic") {
  const auto& g = fixtures::toy_generator();
  const auto& reg = fixtures::toy_registry();
  f2w::PairDataset d6 = f2w::build_pair_dataset(g, reg, "toy", 6, 7);
  f2w::PairDataset d6b = f2w::build_pair_dataset(g, reg, "toy", 6, 7);
  f2w::PairDataset d8 = f2w::build_pair_dataset(g, reg, "toy", 8, 7);

  CHECK(d6.features.max_abs_diff(d6b.features) == 0.0);
  CHECK(d6.latents.max_abs_diff(d6b.latents) == 0.0);

  // growing n keeps earlier records byte-for-byte
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < d6.feature_dim(); ++j)
      CHECK(d6.features.at(i, j) == d8.features.at(i, j));
    for (int j = 0; j < d6.latent_rows * d6.latent_width; ++j)
      CHECK(d6.latents.at(i, j) == d8.latents.at(i, j));
  }
}

TEST_CASE("pair dataset round trip and error taxonomy") {
  const auto& g = fixtures::toy_generator();
  const auto& reg = fixtures::toy_registry();
  f2w::PairDataset ds = f2w::build_pair_dataset(g, reg, "toy", 6, 11);

  fs::path dir = fs::temp_directory_path() / "s2p_f2w_ds";
  fs::create_directories(dir);
  fs::path path = dir / "pairs.bin";
  f2w::save_pair_dataset(ds, path);

  SUBCASE("round trip preserves content and re-saves byte identical") {
    f2w::PairDataset back = f2w::load_pair_dataset(path);
    CHECK(back.features.max_abs_diff(ds.features) == 0.0);
    CHECK(back.latents.max_abs_diff(ds.latents) == 0.0);
    CHECK(back.extractor_id == ds.extractor_id);
    CHECK(back.generator_checkpoint_id == ds.generator_checkpoint_id);
    CHECK(back.seed == ds.seed);
    CHECK(back.latent_rows == ds.latent_rows);
    CHECK(back.latent_width == ds.latent_width);

    fs::path again = dir / "pairs2.bin";
    f2w::save_pair_dataset(back, again);
    CHECK(slurp(again) == slurp(path));
    CHECK(slurp(fs::path(again.string() + ".manifest")) ==
          slurp(fs::path(path.string() + ".manifest")));
  }

  SUBCASE("missing files") {
    CHECK_THROWS_AS(f2w::load_pair_dataset(dir / "absent.bin"),
                    MissingFileError);
    fs::path lone = dir / "lone.bin";
    f2w::save_pair_dataset(ds, lone);
    fs::remove(lone.string() + ".manifest");
    CHECK_THROWS_AS(f2w::load_pair_dataset(lone), CorruptDataError);
  }

  fs::path mpath = path.string() + ".manifest";
  SUBCASE("format and version mismatches") {
    tamper(mpath, "format", "something-else");
    CHECK_THROWS_AS(f2w::load_pair_dataset(path), VersionMismatchError);
    tamper(mpath, "format", "s2p-pair-dataset");
    tamper(mpath, "version", "99");
    CHECK_THROWS_AS(f2w::load_pair_dataset(path), VersionMismatchError);
  }

  SUBCASE("corrupt manifest fields") {
    tamper(mpath, "count", "abc");
    CHECK_THROWS_AS(f2w::load_pair_dataset(path), CorruptDataError);
    tamper(mpath, "count", "7");  // contradicts the stored tensors
    CHECK_THROWS_AS(f2w::load_pair_dataset(path), CorruptDataError);
    tamper(mpath, "count", "6");
    tamper(mpath, "dtype", "f32");
    CHECK_THROWS_AS(f2w::load_pair_dataset(path), CorruptDataError);
  }

  SUBCASE("non-finite payload is rejected") {
    f2w::PairDataset bad = ds;
    bad.features.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
    fs::path bpath = dir / "bad.bin";
    f2w::save_pair_dataset(bad, bpath);
    CHECK_THROWS_AS(f2w::load_pair_dataset(bpath), CorruptDataError);
  }

  fs::remove_all(dir);
}

TEST_CASE("split partitions rows without reordering") {
  const auto& g = fixtures::toy_generator();
  const auto& reg = fixtures::toy_registry();
  f2w::PairDataset ds = f2w::build_pair_dataset(g, reg, "toy", 10, 3);

  auto [train, hold] = f2w::split_pair_dataset(ds, 0.3);
  CHECK(train.size() == 7);
  CHECK(hold.size() == 3);
  for (int j = 0; j < ds.feature_dim(); ++j) {
    CHECK(train.features.at(0, j) == ds.features.at(0, j));
    CHECK(train.features.at(6, j) == ds.features.at(6, j));
    CHECK(hold.features.at(0, j) == ds.features.at(7, j));
    CHECK(hold.features.at(2, j) == ds.features.at(9, j));
  }
  CHECK(hold.extractor_id == ds.extractor_id);
  CHECK(hold.latent_width == ds.latent_width);

  auto [all, none] = f2w::split_pair_dataset(ds, 0.0);
  CHECK(all.size() == 10);
  CHECK(none.size() == 0);

  CHECK_THROWS_AS(f2w::split_pair_dataset(ds, 1.0), PreconditionError);
  CHECK_THROWS_AS(f2w::split_pair_dataset(ds, -0.1), PreconditionError);
}

TEST_CASE("mapper training reduces holdout error over steps") {
  const auto& fx = fixtures::trained_mapper();

  // 1000 records, default epochs/batch: 40 epochs x 30 batches
  CHECK(fx.model.loss_curve.size() == 1200);
  REQUIRE(fx.model.eval_curve.size() == 2);
  CHECK(fx.model.eval_curve[0].first == 20);
  CHECK(fx.model.eval_curve[1].first == 1000);
  CHECK(fx.model.eval_curve[1].second < fx.model.eval_curve[0].second);

  CHECK(fx.model.final_train_mse < f2w::zero_mapper_mse(fx.dataset));
  CHECK(fx.model.extractor_id == "toy");
  CHECK(fx.model.generator_checkpoint_id ==
        fixtures::toy_generator().checkpoint_id);
  CHECK(fx.model.input_dim == 64);
  CHECK(fx.model.latent_rows == 18);
  CHECK(fx.model.train_seed == 9);
}

TEST_CASE("zero mapper mse is the mean squared latent") {
  const auto& g = fixtures::toy_generator();
  const auto& reg = fixtures::toy_registry();
  f2w::PairDataset ds = f2w::build_pair_dataset(g, reg, "toy", 4, 13);
  double acc = 0.0;
  for (std::size_t i = 0; i < ds.latents.numel(); ++i)
    acc += ds.latents[i] * ds.latents[i];
  CHECK(f2w::zero_mapper_mse(ds) ==
        acc / static_cast<double>(ds.latents.numel()));
  CHECK_THROWS_AS(f2w::zero_mapper_mse(f2w::PairDataset{}), PreconditionError);
}

TEST_CASE("mapper training is deterministic") {
  const auto& g = fixtures::toy_generator();
  const auto& reg = fixtures::toy_registry();
  f2w::PairDataset ds = f2w::build_pair_dataset(g, reg, "toy", 120, 5);
  f2w::TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 16;
  tc.hidden = 32;
  tc.seed = 2;
  tc.eval_steps = {5};

  f2w::MapperModel a = f2w::train_mapper(ds, tc);
  f2w::MapperModel b = f2w::train_mapper(ds, tc);
  CHECK(a.loss_curve == b.loss_curve);
  CHECK(a.eval_curve == b.eval_curve);
  CHECK(a.final_train_mse == b.final_train_mse);

  ext::FeatureVector f = feature_row(ds, 0);
  CHECK(f2w::map_features(a, f).max_abs_diff(f2w::map_features(b, f)) == 0.0);
}

TEST_CASE("map_features geometry and the constant-bias degenerate net") {
  const auto& g = fixtures::toy_generator();
  const auto& reg = fixtures::toy_registry();
  f2w::PairDataset ds = f2w::build_pair_dataset(g, reg, "toy", 6, 17);
  f2w::MapperModel m = tiny_mapper(ds);

  ext::FeatureVector f = feature_row(ds, 0);
  Tensor w = f2w::map_features(m, f);
  CHECK(w.ndim() == 2);
  CHECK(w.dim(0) == 18);
  CHECK(w.dim(1) == g.latent_width);

  SUBCASE("wrong extractor or width is rejected") {
    ext::FeatureVector alien = f;
    alien.extractor_id = "toy2";
    CHECK_THROWS_AS(f2w::map_features(m, alien), PreconditionError);
    ext::FeatureVector narrow{Tensor::zeros({32}), "toy"};
    CHECK_THROWS_AS(f2w::map_features(m, narrow), PreconditionError);
  }

  SUBCASE("zeroed affine weights leave only the output bias") {
    std::vector<nn::ParamRef> refs = m.net.params();
    REQUIRE(refs.size() == 4);  // dense w/b, dense w/b
    refs[0].node->value.fill(0.0);
    refs[2].node->value.fill(0.0);
    Tensor out1 = f2w::map_features(m, feature_row(ds, 1));
    Tensor out2 = f2w::map_features(m, feature_row(ds, 2));
    CHECK(out1.max_abs_diff(out2) == 0.0);
    Tensor bias = refs[3].node->value.reshaped({18, g.latent_width});
    CHECK(out1.max_abs_diff(bias) == 0.0);
  }
}

TEST_CASE("evaluate_mapper matches a manual recomputation") {
  const auto& g = fixtures::toy_generator();
  const auto& reg = fixtures::toy_registry();
  f2w::PairDataset ds = f2w::build_pair_dataset(g, reg, "toy", 30, 77);
  f2w::MapperModel m = tiny_mapper(ds);

  auto [train, hold] = f2w::split_pair_dataset(ds, 1.0 / 3.0);
  REQUIRE(hold.size() == 10);
  f2w::EvalReport rep = f2w::evaluate_mapper(m, hold, &g);
  CHECK(rep.count == 10);
  REQUIRE(rep.mean_image_rms.has_value());
  CHECK(*rep.mean_image_rms > 0.0);

  int od = hold.latent_rows * hold.latent_width;
  std::vector<double> per;
  for (int i = 0; i < hold.size(); ++i) {
    Tensor w = f2w::map_features(m, feature_row(hold, i));
    double acc = 0.0;
    for (int j = 0; j < od; ++j) {
      double d = w[static_cast<std::size_t>(j)] - hold.latents.at(i, j);
      acc += d * d;
    }
    per.push_back(acc / od);
  }
  double mean = 0.0;
  for (double v : per) mean += v;
  mean /= static_cast<double>(per.size());
  std::vector<double> sorted = per;
  std::sort(sorted.begin(), sorted.end());
  double median = 0.5 * (sorted[4] + sorted[5]);
  CHECK(rep.mean_latent_mse == doctest::Approx(mean).epsilon(1e-12));
  CHECK(rep.median_latent_mse == doctest::Approx(median).epsilon(1e-12));

  SUBCASE("no generator means no image column") {
    f2w::EvalReport plain = f2w::evaluate_mapper(m, hold);
    CHECK(!plain.mean_image_rms.has_value());
    CHECK(plain.mean_latent_mse == rep.mean_latent_mse);
  }

  SUBCASE("mismatches are rejected") {
    CHECK_THROWS_AS(f2w::evaluate_mapper(m, f2w::PairDataset{}),
                    PreconditionError);
    f2w::PairDataset alien = hold;
    alien.extractor_id = "toy2";
    CHECK_THROWS_AS(f2w::evaluate_mapper(m, alien), PreconditionError);
    gen::Generator narrow = gen::make_generator(gen::Kind::toy, 32, 8, 16,
                                                {8, 8, 8, 8}, 99, "narrow");
    CHECK_THROWS_AS(f2w::evaluate_mapper(m, hold, &narrow), PreconditionError);
  }
}

TEST_CASE("mapper round trip and error taxonomy") {
  const auto& fx = fixtures::trained_mapper();
  fs::path dir = fs::temp_directory_path() / "s2p_f2w_mapper";
  fs::create_directories(dir);
  fs::path path = dir / "mapper.bin";
  f2w::save_mapper(fx.model, path);
  fs::path mpath = path.string() + ".manifest";

  SUBCASE("round trip preserves behavior and curves") {
    f2w::MapperModel back = f2w::load_mapper(path);
    ext::FeatureVector f = feature_row(fx.dataset, 0);
    CHECK(f2w::map_features(back, f).max_abs_diff(
              f2w::map_features(fx.model, f)) == 0.0);
    CHECK(back.loss_curve == fx.model.loss_curve);
    CHECK(back.eval_curve == fx.model.eval_curve);
    CHECK(back.final_train_mse == fx.model.final_train_mse);
    CHECK(back.extractor_id == fx.model.extractor_id);
    CHECK(back.hidden == fx.model.hidden);
    CHECK(back.train_seed == fx.model.train_seed);
  }

  SUBCASE("missing files") {
    CHECK_THROWS_AS(f2w::load_mapper(dir / "absent.bin"), MissingFileError);
    fs::path lone = dir / "lone.bin";
    f2w::save_mapper(fx.model, lone);
    fs::remove(lone.string() + ".manifest");
    CHECK_THROWS_AS(f2w::load_mapper(lone), CorruptDataError);
  }

  SUBCASE("format and version mismatches") {
    tamper(mpath, "format", "not-a-mapper");
    CHECK_THROWS_AS(f2w::load_mapper(path), VersionMismatchError);
    tamper(mpath, "format", "s2p-f2w-mapper");
    tamper(mpath, "version", "2");
    CHECK_THROWS_AS(f2w::load_mapper(path), VersionMismatchError);
  }

  SUBCASE("manifest corruption") {
    tamper(mpath, "hidden", "x");
    CHECK_THROWS_AS(f2w::load_mapper(path), CorruptDataError);
    tamper(mpath, "hidden", "128");
    tamper(mpath, "latent_rows", "0");
    CHECK_THROWS_AS(f2w::load_mapper(path), CorruptDataError);
    tamper(mpath, "latent_rows", "18");
    tamper(mpath, "latent_width", "7");  // net output width says otherwise
    CHECK_THROWS_AS(f2w::load_mapper(path), CorruptDataError);
    tamper(mpath, "latent_width", "16");
    tamper(mpath, "input_dim", "32");  // net input width says otherwise
    CHECK_THROWS_AS(f2w::load_mapper(path), CorruptDataError);
  }

  fs::remove_all(dir);
}

TEST_CASE("mapper training validations") {
  const auto& g = fixtures::toy_generator();
  const auto& reg = fixtures::toy_registry();
  f2w::PairDataset ds = f2w::build_pair_dataset(g, reg, "toy", 6, 19);
  f2w::TrainConfig tc;
  tc.epochs = 1;
  tc.hidden = 4;
  tc.holdout_fraction = 0.0;

  f2w::TrainConfig bad = tc;
  bad.epochs = 0;
  CHECK_THROWS_AS(f2w::train_mapper(ds, bad), PreconditionError);
  bad = tc;
  bad.batch_size = 0;
  CHECK_THROWS_AS(f2w::train_mapper(ds, bad), PreconditionError);
  bad = tc;
  bad.hidden = 0;
  CHECK_THROWS_AS(f2w::train_mapper(ds, bad), PreconditionError);
  bad = tc;
  bad.holdout_fraction = 1.0;
  CHECK_THROWS_AS(f2w::train_mapper(ds, bad), PreconditionError);
  bad = tc;
  bad.eval_steps = {1};  // no holdout to probe
  CHECK_THROWS_AS(f2w::train_mapper(ds, bad), PreconditionError);
  CHECK_THROWS_AS(f2w::train_mapper(f2w::PairDataset{}, tc), PreconditionError);
}
