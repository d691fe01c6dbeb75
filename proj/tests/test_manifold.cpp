#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "s2p/autodiff.hpp"
#include "s2p/error.hpp"
#include "s2p/generator.hpp"
#include "s2p/image.hpp"
#include "s2p/manifold.hpp"
#include "s2p/nn.hpp"
#include "s2p/rng.hpp"
#include "s2p/store.hpp"
#include "s2p/tensor.hpp"
#include "toy_fixtures.hpp"

using namespace s2p;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Shell stub standing in for a detector binary; receives the PNG path as $1.
std::string shell_stub(const fs::path& dir, const std::string& name,
                       const std::string& body) {
  fs::path script = dir / name;
  std::ofstream out(script);
  out << "#!/bin/sh\n" << body << "\n";
  out.close();
  return "/bin/sh " + script.string();
}

img::ImageTensor noisy(const img::ImageTensor& base, double amp,
                       std::uint64_t seed) {
  Rng rng(seed);
  Tensor px = base.pixels;
  double* d = px.mutable_data();
  for (std::size_t i = 0; i < px.numel(); ++i)
    d[i] = std::clamp(d[i] + rng.uniform(-amp, amp), -1.0, 1.0);
  return img::make_image(std::move(px), base.tag);
}

void tamper(const fs::path& manifest, const std::string& key,
            const std::string& value) {
  store::Manifest m = store::read_manifest(manifest);
  m[key] = value;
  store::write_manifest(manifest, m);
}

void append_csv_row(const fs::path& csv, const std::string& row) {
  std::ofstream out(csv, std::ios::app | std::ios::binary);
  out << row << '\n';
}

struct FixedOracle : mani::FacenessOracle {
  double v;
  explicit FixedOracle(double value) : v(value) {}
  double score(const img::ImageTensor&) const override { return v; }
  std::string name() const override { return "fixed"; }
};

double dataset_variance(const mani::ScoredImageDataset& ds) {
  double mean = 0.0;
  for (const auto& r : ds.records) mean += r.score;
  mean /= static_cast<double>(ds.records.size());
  double var = 0.0;
  for (const auto& r : ds.records) var += (r.score - mean) * (r.score - mean);
  return var / static_cast<double>(ds.records.size());
}

}  // namespace

TEST_CASE("smoothness oracle matches the closed form") {
  mani::SmoothnessOracle oracle;
  CHECK(oracle.tau() == 0.3);
  CHECK(mani::SmoothnessOracle::kDefaultTau == 0.3);

  // 2x2 column pattern 0|1: both horizontal neighbor pairs differ by a full
  // byte range, both vertical pairs are flat, so tv = 2*255 / (255*4) = 0.5.
  Tensor hand({2, 2, 1}, {0.0, 1.0, 0.0, 1.0});
  double hs = oracle.score(img::make_image(hand, img::RangeTag::unit));
  CHECK(hs == 2.0 * std::exp(-0.5 / 0.3));

  // a constant image has zero variation and lands on the ceiling
  img::ImageTensor flat =
      img::make_image(Tensor::full({8, 8, 3}, 0.5), img::RangeTag::unit);
  CHECK(oracle.score(flat) == 2.0);
}

TEST_CASE("smoothness oracle frozen render score") {
  mani::SmoothnessOracle oracle;
  img::ImageTensor im = fixtures::render(42);
  double s = oracle.score(im);
  CHECK(s == doctest::Approx(1.8083308372283378).epsilon(1e-12));
  CHECK(oracle.score(im) == s);  // pure function of the bytes
}

TEST_CASE("tau only rescales the shared total variation") {
  img::ImageTensor im = fixtures::render(17);
  double s1 = mani::SmoothnessOracle(1.0).score(im);
  double tv = -std::log(s1 / 2.0);
  double s3 = mani::SmoothnessOracle(0.3).score(im);
  CHECK(s3 == doctest::Approx(2.0 * std::exp(-tv / 0.3)).epsilon(1e-9));
}

TEST_CASE("clean renders sit in the detector band, noise falls out") {
  mani::SmoothnessOracle oracle;
  for (int i = 0; i < 10; ++i) {
    double s = oracle.score(fixtures::render(5000 + static_cast<std::uint64_t>(i)));
    CHECK(s >= 1.75);
    CHECK(s <= 1.85);
  }
  double noisy_score = oracle.score(noisy(fixtures::render(5000), 0.6, 71));
  CHECK(noisy_score < 1.5);
}

TEST_CASE("oracle scores survive a png round trip") {
  fs::path dir = scratch_dir("s2p_test_oracle_png");
  mani::SmoothnessOracle oracle;
  img::ImageTensor im = fixtures::render(7);
  img::write_png(dir / "x.png", im);
  img::ImageTensor back = img::read_png(dir / "x.png");
  CHECK(oracle.score(back) == oracle.score(im));
  fs::remove_all(dir);
}

TEST_CASE("smoothness oracle preconditions") {
  mani::SmoothnessOracle oracle;
  img::ImageTensor tiny =
      img::make_image(Tensor::full({1, 1, 1}, 0.5), img::RangeTag::unit);
  CHECK_THROWS_AS(oracle.score(tiny), PreconditionError);
  img::ImageTensor norm =
      img::make_image(Tensor::full({4, 4, 3}, 3.7), img::RangeTag::normalized);
  CHECK_THROWS_AS(oracle.score(norm), PreconditionError);
}

TEST_CASE("external command oracle parses detector output") {
  fs::path dir = scratch_dir("s2p_test_oracle_stubs");
  img::ImageTensor im = fixtures::render(42);

  SUBCASE("max confidence wins") {
    mani::ExternalCommandOracle o(
        shell_stub(dir, "multi.sh", "printf '0.25\\n1.5\\n0.75\\n'"));
    CHECK(o.score(im) == 1.5);
  }
  SUBCASE("command receives a readable png path") {
    mani::ExternalCommandOracle o(
        shell_stub(dir, "reads.sh", "test -s \"$1\" && echo 1.25"));
    CHECK(o.score(im) == 1.25);
  }
  SUBCASE("no detections means zero") {
    mani::ExternalCommandOracle o(shell_stub(dir, "empty.sh", "true"));
    CHECK(o.score(im) == 0.0);
  }
  SUBCASE("garbage output is corrupt data") {
    mani::ExternalCommandOracle o(
        shell_stub(dir, "bad.sh", "echo not-a-number"));
    CHECK_THROWS_AS(o.score(im), CorruptDataError);
  }
  SUBCASE("nonzero exit is an io failure") {
    mani::ExternalCommandOracle o(shell_stub(dir, "fail.sh", "exit 3"));
    CHECK_THROWS_AS(o.score(im), IoError);
  }
  SUBCASE("empty command is rejected up front") {
    CHECK_THROWS_AS(mani::ExternalCommandOracle(""), PreconditionError);
  }
  fs::remove_all(dir);
}

TEST_CASE("hog_faceness rejects invalid oracle scores") {
  img::ImageTensor im = fixtures::render(3);
  CHECK(mani::hog_faceness(im, FixedOracle(0.25)) == 0.25);
  CHECK_THROWS_AS(mani::hog_faceness(im, FixedOracle(-1.0)), NumericError);
  CHECK_THROWS_AS(
      mani::hog_faceness(im, FixedOracle(std::numeric_limits<double>::quiet_NaN())),
      NumericError);
}

TEST_CASE("faceness dataset build is reproducible") {
  const gen::Generator& g = fixtures::toy_generator();
  mani::SmoothnessOracle oracle;
  mani::ScoredImageDataset ds = mani::build_faceness_dataset(g, oracle, 6, 900);
  REQUIRE(ds.records.size() == 6);
  CHECK(ds.generator_checkpoint_id == g.checkpoint_id);
  CHECK(ds.seed == 900);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const mani::ScoredRecord& r = ds.records[i];
    CHECK(r.noise_seed == 900 + i);
    img::ImageTensor ref = fixtures::render(900 + i);
    CHECK(r.image.tag == ref.tag);
    CHECK(r.image.pixels.max_abs_diff(ref.pixels) == 0.0);
    CHECK(r.score == oracle.score(r.image));
  }
  mani::ScoredImageDataset again = mani::build_faceness_dataset(g, oracle, 6, 900);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    CHECK(again.records[i].score == ds.records[i].score);
    CHECK(again.records[i].image.pixels.max_abs_diff(ds.records[i].image.pixels) ==
          0.0);
  }
  CHECK_THROWS_AS(mani::build_faceness_dataset(g, oracle, 0, 1), PreconditionError);
}

TEST_CASE("faceness dataset round trip and error taxonomy") {
  const gen::Generator& g = fixtures::toy_generator();
  mani::SmoothnessOracle oracle;
  mani::ScoredImageDataset ds = mani::build_faceness_dataset(g, oracle, 5, 910);
  fs::path dir = scratch_dir("s2p_test_faceness_ds");
  auto save_fresh = [&] {
    fs::remove_all(dir);
    mani::save_faceness_dataset(ds, dir);
  };

  SUBCASE("scores and quantized pixels survive") {
    save_fresh();
    mani::ScoredImageDataset back = mani::load_faceness_dataset(dir);
    REQUIRE(back.records.size() == 5);
    CHECK(back.generator_checkpoint_id == g.checkpoint_id);
    CHECK(back.seed == 910);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(back.records[i].noise_seed == ds.records[i].noise_seed);
      CHECK(back.records[i].score == ds.records[i].score);
      // the oracle reads quantized bytes, so reloading cannot move the score
      CHECK(oracle.score(back.records[i].image) == back.records[i].score);
      img::ImageTensor unit =
          img::convert_range(ds.records[i].image, img::RangeTag::unit);
      CHECK(back.records[i].image.pixels.max_abs_diff(unit.pixels) <=
            0.5 / 255.0 + 1e-12);
    }
  }
  SUBCASE("missing directory") {
    CHECK_THROWS_AS(mani::load_faceness_dataset(dir / "nope"), MissingFileError);
  }
  SUBCASE("format and version gates") {
    save_fresh();
    tamper(dir / "dataset.manifest", "format", "other");
    CHECK_THROWS_AS(mani::load_faceness_dataset(dir), VersionMismatchError);
    save_fresh();
    tamper(dir / "dataset.manifest", "version", "99");
    CHECK_THROWS_AS(mani::load_faceness_dataset(dir), VersionMismatchError);
  }
  SUBCASE("count field") {
    save_fresh();
    tamper(dir / "dataset.manifest", "count", "abc");
    CHECK_THROWS_AS(mani::load_faceness_dataset(dir), CorruptDataError);
    save_fresh();
    tamper(dir / "dataset.manifest", "count", "7");
    CHECK_THROWS_AS(mani::load_faceness_dataset(dir), CorruptDataError);
  }
  SUBCASE("score table rows") {
    save_fresh();
    append_csv_row(dir / "scores.csv", "5,905,abc");
    CHECK_THROWS_AS(mani::load_faceness_dataset(dir), CorruptDataError);
    save_fresh();
    append_csv_row(dir / "scores.csv", "5,905,-0.5");
    CHECK_THROWS_AS(mani::load_faceness_dataset(dir), CorruptDataError);
    save_fresh();
    append_csv_row(dir / "scores.csv", "9,905,1.0");  // out of order
    CHECK_THROWS_AS(mani::load_faceness_dataset(dir), CorruptDataError);
  }
  SUBCASE("score table header") {
    save_fresh();
    std::string body;
    {
      std::ifstream in(dir / "scores.csv", std::ios::binary);
      std::string line;
      std::getline(in, line);  // drop the header
      while (std::getline(in, line)) body += line + '\n';
    }
    std::ofstream out(dir / "scores.csv", std::ios::binary | std::ios::trunc);
    out << "a,b,c\n" << body;
    out.close();
    CHECK_THROWS_AS(mani::load_faceness_dataset(dir), CorruptDataError);
  }
  SUBCASE("missing pieces") {
    save_fresh();
    fs::remove(dir / "scores.csv");
    CHECK_THROWS_AS(mani::load_faceness_dataset(dir), MissingFileError);
    save_fresh();
    fs::remove(dir / "img_00000.png");
    CHECK_THROWS_AS(mani::load_faceness_dataset(dir), MissingFileError);
  }
  SUBCASE("empty dataset is unsaveable") {
    mani::ScoredImageDataset empty;
    CHECK_THROWS_AS(mani::save_faceness_dataset(empty, dir), PreconditionError);
  }
  fs::remove_all(dir);
}

TEST_CASE("hogfd net geometry") {
  Rng rng(1);
  CHECK_THROWS_AS(mani::make_hogfd_net(15, rng), PreconditionError);
  CHECK_THROWS_AS(mani::make_hogfd_net(8, rng), PreconditionError);
  nn::Sequential net = mani::make_hogfd_net(16, rng);
  CHECK(net.params().size() == 24);
  Tensor out = net.run(Tensor::zeros({2, 3, 16, 16}));
  REQUIRE(out.ndim() == 2);
  CHECK(out.dim(0) == 2);
  CHECK(out.dim(1) == 1);
}

TEST_CASE("trained faceness model fits the oracle band") {
  const fixtures::FacenessFixture& fx = fixtures::trained_faceness();
  const mani::HogfdModel& m = fx.model;

  CHECK(m.input_resolution == 16);
  CHECK(m.train_seed == 77);
  CHECK(m.generator_checkpoint_id == fixtures::toy_generator().checkpoint_id);
  CHECK(m.max_score_set);
  CHECK(m.loss_curve.size() == 250);

  double var = dataset_variance(fx.dataset);
  CHECK(m.final_train_mse < 1e-3);
  CHECK(m.final_train_mse < var / 2.0);  // beats predicting the mean, with room

  CHECK(std::abs(m.max_score - m.max_target) < 0.05);
  double best_target = 0.0, best_out = -1e300;
  for (const auto& r : fx.dataset.records) {
    best_target = std::max(best_target, r.score);
    best_out = std::max(best_out, mani::hogfd_score(m, r.image));
  }
  CHECK(m.max_target == best_target);
  CHECK(m.max_score == best_out);

  // max_score is the observed output maximum, so over the training images the
  // loss is nonnegative, hits zero at the argmax, and score + loss
  // reassembles max_score without rounding (all values sit within a factor
  // of two of each other).
  int zeros = 0;
  for (const auto& r : fx.dataset.records) {
    double sc = mani::hogfd_score(m, r.image);
    double lossv = mani::manifold_loss(m, r.image);
    CHECK(lossv >= 0.0);
    CHECK(lossv + sc == m.max_score);
    if (lossv == 0.0) ++zeros;
    CHECK(sc >= m.max_score / 2.0);
    CHECK(sc <= 2.0 * m.max_score);
  }
  CHECK(zeros >= 1);

  img::ImageTensor probe = fixtures::render(42);
  double s = mani::hogfd_score(m, probe);
  CHECK(mani::hogfd_score(m, probe) == s);  // inference is deterministic

  // the node path feeds the same resized batch, so it agrees bitwise
  Tensor chw = img::to_chw(probe).reshaped({1, 3, 32, 32});
  ad::NodePtr loss_node =
      mani::manifold_loss_node(m, ad::constant(chw), img::RangeTag::signed_unit);
  CHECK(loss_node->value[0] == mani::manifold_loss(m, probe));
}

TEST_CASE("constant targets degrade gracefully and train deterministically") {
  const gen::Generator& g = fixtures::toy_generator();
  mani::SmoothnessOracle oracle;
  mani::ScoredImageDataset ds = mani::build_faceness_dataset(g, oracle, 4, 500);
  for (auto& r : ds.records) r.score = 1.3;
  mani::HogfdConfig hc;
  hc.input_resolution = 16;
  hc.epochs = 150;
  hc.batch_size = 4;
  hc.learning_rate = 2e-2;
  hc.seed = 3;
  mani::HogfdModel m = mani::train_hogfd(ds, hc);
  CHECK(m.loss_curve.size() == 150);
  CHECK(m.final_train_mse < 2.5e-3);
  CHECK(m.max_target == 1.3);
  CHECK(std::abs(m.max_score - 1.3) < 0.05);
  for (const auto& r : ds.records)
    CHECK(std::abs(mani::hogfd_score(m, r.image) - 1.3) < 0.05);

  mani::HogfdModel again = mani::train_hogfd(ds, hc);
  CHECK(again.max_score == m.max_score);
  CHECK(again.final_train_mse == m.final_train_mse);
  CHECK(again.loss_curve == m.loss_curve);
}

TEST_CASE("gradient ascent drives the manifold loss negative") {
  const fixtures::FacenessFixture& fx = fixtures::trained_faceness();
  const mani::HogfdModel& m = fx.model;

  // start from the training argmax and push its score past max_score; the
  // loss is unclamped, so outscoring the training set reads as negative
  std::size_t best = 0;
  double best_sc = -1e300;
  for (std::size_t i = 0; i < fx.dataset.records.size(); ++i) {
    double sc = mani::hogfd_score(m, fx.dataset.records[i].image);
    if (sc > best_sc) {
      best_sc = sc;
      best = i;
    }
  }
  Tensor chw0 =
      img::to_chw(fx.dataset.records[best].image).reshaped({1, 3, 32, 32});
  ad::NodePtr pixel_leaf = ad::leaf(chw0);
  nn::Adam opt({pixel_leaf}, 0.01);
  double reached = best_sc;
  for (int it = 0; it < 60; ++it) {
    opt.zero_grad();
    ad::NodePtr sc =
        mani::hogfd_score_node(m, pixel_leaf, img::RangeTag::signed_unit);
    reached = sc->value[0];
    if (reached > m.max_score) break;
    ad::backward(ad::mul_scalar(sc, -1.0));
    opt.step();
    double* pd = pixel_leaf->value.mutable_data();
    for (std::size_t i = 0; i < pixel_leaf->value.numel(); ++i)
      pd[i] = std::clamp(pd[i], -1.0, 1.0);
  }
  CHECK(reached > m.max_score);
  Tensor ascended = pixel_leaf->value;
  CHECK(mani::manifold_loss_node(m, ad::constant(ascended),
                                 img::RangeTag::signed_unit)
            ->value[0] < 0.0);
}

TEST_CASE("hogfd gradients match finite differences") {
  const mani::HogfdModel& m = fixtures::trained_faceness().model;
  Tensor chw0 = img::to_chw(fixtures::render(42)).reshaped({1, 3, 32, 32});
  ad::NodePtr pixel_leaf = ad::leaf(chw0);
  ad::NodePtr sc = mani::hogfd_score_node(m, pixel_leaf, img::RangeTag::signed_unit);
  ad::backward(sc);
  Rng pick(17);
  for (int t = 0; t < 10; ++t) {
    std::size_t i = pick.below(chw0.numel());
    double h = 1e-5;
    Tensor p = chw0, q = chw0;
    p.mutable_data()[i] += h;
    q.mutable_data()[i] -= h;
    double fd =
        (mani::hogfd_score_node(m, ad::constant(p), img::RangeTag::signed_unit)
             ->value[0] -
         mani::hogfd_score_node(m, ad::constant(q), img::RangeTag::signed_unit)
             ->value[0]) /
        (2 * h);
    double an = pixel_leaf->grad[i];
    double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("hogfd round trip and error taxonomy") {
  const mani::HogfdModel& m = fixtures::trained_faceness().model;
  fs::path dir = scratch_dir("s2p_test_hogfd_ckpt");
  fs::path path = dir / "hogfd.bin";
  img::ImageTensor probe = fixtures::render(42);

  SUBCASE("reload preserves behavior and metadata") {
    mani::save_hogfd(m, path);
    mani::HogfdModel back = mani::load_hogfd(path);
    CHECK(mani::hogfd_score(back, probe) == mani::hogfd_score(m, probe));
    CHECK(mani::manifold_loss(back, probe) == mani::manifold_loss(m, probe));
    CHECK(back.input_resolution == m.input_resolution);
    CHECK(back.max_score_set == m.max_score_set);
    CHECK(back.max_score == m.max_score);
    CHECK(back.max_target == m.max_target);
    CHECK(back.train_seed == m.train_seed);
    CHECK(back.final_train_mse == m.final_train_mse);
    CHECK(back.generator_checkpoint_id == m.generator_checkpoint_id);
    CHECK(back.loss_curve == m.loss_curve);

    // resaving what was loaded reproduces the archive byte for byte
    fs::path path2 = dir / "hogfd2.bin";
    mani::save_hogfd(back, path2);
    auto slurp = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in),
                         std::istreambuf_iterator<char>());
    };
    CHECK(slurp(path) == slurp(path2));
    CHECK(slurp(path.string() + ".manifest") == slurp(path2.string() + ".manifest"));
  }
  SUBCASE("missing checkpoint") {
    CHECK_THROWS_AS(mani::load_hogfd(dir / "nope.bin"), MissingFileError);
  }
  SUBCASE("missing manifest sidecar") {
    mani::save_hogfd(m, path);
    fs::remove(path.string() + ".manifest");
    CHECK_THROWS_AS(mani::load_hogfd(path), CorruptDataError);
  }
  SUBCASE("format and version gates") {
    mani::save_hogfd(m, path);
    tamper(path.string() + ".manifest", "format", "other");
    CHECK_THROWS_AS(mani::load_hogfd(path), VersionMismatchError);
    mani::save_hogfd(m, path);
    tamper(path.string() + ".manifest", "version", "99");
    CHECK_THROWS_AS(mani::load_hogfd(path), VersionMismatchError);
  }
  SUBCASE("numeric field corruption") {
    mani::save_hogfd(m, path);
    tamper(path.string() + ".manifest", "input_resolution", "x");
    CHECK_THROWS_AS(mani::load_hogfd(path), CorruptDataError);
    mani::save_hogfd(m, path);
    tamper(path.string() + ".manifest", "max_score", "nan");
    CHECK_THROWS_AS(mani::load_hogfd(path), CorruptDataError);
  }
  SUBCASE("resolution disagreeing with the weights") {
    mani::save_hogfd(m, path);
    tamper(path.string() + ".manifest", "input_resolution", "32");
    CHECK_THROWS_AS(mani::load_hogfd(path), CorruptDataError);
  }
  SUBCASE("manifold loss requires a calibrated max score") {
    mani::save_hogfd(m, path);
    tamper(path.string() + ".manifest", "max_score_set", "0");
    mani::HogfdModel uncal = mani::load_hogfd(path);
    CHECK_THROWS_AS(mani::manifold_loss(uncal, probe), PreconditionError);
    Tensor chw = img::to_chw(probe).reshaped({1, 3, 32, 32});
    CHECK_THROWS_AS(mani::manifold_loss_node(uncal, ad::constant(chw),
                                             img::RangeTag::signed_unit),
                    PreconditionError);
  }
  fs::remove_all(dir);
}

TEST_CASE("train_hogfd validations") {
  const gen::Generator& g = fixtures::toy_generator();
  mani::SmoothnessOracle oracle;
  mani::ScoredImageDataset ds = mani::build_faceness_dataset(g, oracle, 2, 920);
  mani::HogfdConfig hc;
  hc.input_resolution = 16;
  hc.epochs = 1;
  hc.batch_size = 2;
  hc.learning_rate = 1e-3;
  hc.seed = 1;

  mani::ScoredImageDataset single;
  single.records.push_back(ds.records[0]);
  CHECK_THROWS_AS(mani::train_hogfd(single, hc), PreconditionError);

  mani::HogfdConfig bad = hc;
  bad.epochs = 0;
  CHECK_THROWS_AS(mani::train_hogfd(ds, bad), PreconditionError);
  bad = hc;
  bad.batch_size = 1;
  CHECK_THROWS_AS(mani::train_hogfd(ds, bad), PreconditionError);

  mani::ScoredImageDataset nan_ds = ds;
  nan_ds.records[1].score = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(mani::train_hogfd(nan_ds, hc), PreconditionError);
}
