#include "s2p/manifold.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "s2p/error.hpp"
#include "s2p/store.hpp"

namespace s2p::mani {

namespace {

constexpr const char* kModelFormat = "s2p-hogfd";
constexpr const char* kDatasetFormat = "s2p-faceness-dataset";
constexpr const char* kVersion = "1";

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const std::string& field(const store::Manifest& m, const std::string& key,
                         const std::filesystem::path& path) {
  auto it = m.find(key);
  if (it == m.end())
    throw CorruptDataError("manifest missing " + key + ": " + path.string());
  return it->second;
}

// 8-bit per-channel quantization identical to the PNG writer, then luma.
// Working on bytes keeps every oracle a pure function of the stored image.
std::vector<double> quantized_gray(const img::ImageTensor& image) {
  if (image.tag == img::RangeTag::normalized)
    throw PreconditionError("normalized images have no 8-bit representation");
  img::ImageTensor unit = image.tag == img::RangeTag::unit
                              ? image
                              : img::convert_range(image, img::RangeTag::unit);
  int h = unit.height(), w = unit.width(), c = unit.channels();
  const double* p = unit.pixels.data();
  std::vector<double> gray(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    double q[3];
    for (int ch = 0; ch < c; ++ch) {
      double v = std::round(p[i * static_cast<std::size_t>(c) + ch] * 255.0);
      q[ch] = std::clamp(v, 0.0, 255.0);
    }
    gray[i] = c == 1 ? q[0] : 0.299 * q[0] + 0.587 * q[1] + 0.114 * q[2];
  }
  return gray;
}

ad::NodePtr to_signed_batch3(const ad::NodePtr& chw, img::RangeTag tag) {
  if (chw->value.ndim() != 4 || chw->value.dim(0) != 1)
    throw PreconditionError("expected a [1, C, H, W] image node");
  int c = chw->value.dim(1), h = chw->value.dim(2), w = chw->value.dim(3);
  if (c != 1 && c != 3)
    throw PreconditionError("image node must have 1 or 3 channels");
  ad::NodePtr x = chw;
  if (tag == img::RangeTag::normalized)
    throw PreconditionError("faceness scoring needs bounded pixel ranges");
  if (tag == img::RangeTag::unit)
    x = ad::add_scalar(ad::mul_scalar(x, 2.0), -1.0);
  if (c == 1) {
    x = ad::reshape(x, {1, h, w});
    x = ad::replicate_channels(x, 3);
    x = ad::reshape(x, {1, 3, h, w});
  }
  return x;
}

}  // namespace

double SmoothnessOracle::score(const img::ImageTensor& image) const {
  img::validate(image);
  int h = image.height(), w = image.width();
  if (h < 2 || w < 2)
    throw PreconditionError("image too small for a smoothness score");
  std::vector<double> gray = quantized_gray(image);
  double acc = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + 1 < w; ++x)
      acc += std::abs(gray[static_cast<std::size_t>(y) * w + x + 1] -
                      gray[static_cast<std::size_t>(y) * w + x]);
  for (int y = 0; y + 1 < h; ++y)
    for (int x = 0; x < w; ++x)
      acc += std::abs(gray[static_cast<std::size_t>(y + 1) * w + x] -
                      gray[static_cast<std::size_t>(y) * w + x]);
  std::size_t pairs = static_cast<std::size_t>(h) * (w - 1) +
                      static_cast<std::size_t>(h - 1) * w;
  double tv = acc / (255.0 * static_cast<double>(pairs));
  return 2.0 * std::exp(-tv / tau_);
}

ExternalCommandOracle::ExternalCommandOracle(std::string command)
    : command_(std::move(command)) {
  if (command_.empty()) throw PreconditionError("oracle command is empty");
}

double ExternalCommandOracle::score(const img::ImageTensor& image) const {
  img::validate(image);
  static std::atomic<unsigned> counter{0};
  std::filesystem::path tmp =
      std::filesystem::temp_directory_path() /
      ("s2p_oracle_" + std::to_string(::getpid()) + "_" +
       std::to_string(counter.fetch_add(1)) + ".png");
  img::write_png(tmp, image);
  std::string cmd = command_ + " " + tmp.string();
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) {
    std::filesystem::remove(tmp);
    throw IoError("cannot launch faceness oracle: " + command_);
  }
  std::string out;
  char buf[256];
  while (std::fgets(buf, sizeof(buf), pipe)) out += buf;
  int rc = ::pclose(pipe);
  std::filesystem::remove(tmp);
  if (rc != 0)
    throw IoError("faceness oracle exited with status " + std::to_string(rc));

  double best = 0.0;  // no detections means zero faceness
  std::istringstream is(out);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t pos = 0;
    double v;
    try {
      v = std::stod(line, &pos);
    } catch (const std::exception&) {
      throw CorruptDataError("oracle emitted a non-numeric line: " + line);
    }
    if (!std::isfinite(v))
      throw CorruptDataError("oracle emitted a non-finite confidence");
    best = std::max(best, v);
  }
  return best;
}

double hog_faceness(const img::ImageTensor& image,
                    const FacenessOracle& oracle) {
  double s = oracle.score(image);
  if (!std::isfinite(s) || s < 0.0)
    throw NumericError("faceness oracle produced an invalid score");
  return s;
}

ScoredImageDataset build_faceness_dataset(const gen::Generator& g,
                                          const FacenessOracle& oracle, int n,
                                          std::uint64_t seed) {
  if (n < 1) throw PreconditionError("faceness dataset needs n >= 1");
  ScoredImageDataset ds;
  ds.generator_checkpoint_id = g.checkpoint_id;
  ds.seed = seed;
  ds.records.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::uint64_t record_seed = seed + static_cast<std::uint64_t>(i);
    Tensor z = gen::sample_noise(record_seed);
    img::ImageTensor synth = g.synthesize(g.map_noise(z));
    double score = hog_faceness(synth, oracle);
    ds.records.push_back({std::move(synth), record_seed, score});
  }
  return ds;
}

void save_faceness_dataset(const ScoredImageDataset& ds,
                           const std::filesystem::path& dir) {
  if (ds.records.empty()) throw PreconditionError("refusing to save an empty dataset");
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  csv << "index,seed,score\n";
  char name[32];
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    std::snprintf(name, sizeof(name), "img_%05zu.png", i);
    img::write_png(dir / name, ds.records[i].image);
    csv << i << ',' << ds.records[i].noise_seed << ','
        << fmt_double(ds.records[i].score) << '\n';
  }
  std::ofstream out(dir / "scores.csv", std::ios::binary);
  out << csv.str();
  if (!out) throw IoError("cannot write score table: " + dir.string());
  out.close();

  store::Manifest m;
  m["format"] = kDatasetFormat;
  m["version"] = kVersion;
  m["count"] = std::to_string(ds.records.size());
  m["generator_checkpoint_id"] = ds.generator_checkpoint_id;
  m["seed"] = std::to_string(ds.seed);
  store::write_manifest(dir / "dataset.manifest", m);
}

ScoredImageDataset load_faceness_dataset(const std::filesystem::path& dir) {
  std::filesystem::path mpath = dir / "dataset.manifest";
  if (!std::filesystem::exists(mpath))
    throw MissingFileError("no dataset manifest in " + dir.string());
  store::Manifest m = store::read_manifest(mpath);
  if (field(m, "format", mpath) != kDatasetFormat)
    throw VersionMismatchError("manifest format " + m.at("format") +
                               ", expected " + kDatasetFormat);
  if (field(m, "version", mpath) != kVersion)
    throw VersionMismatchError("dataset version " + m.at("version") +
                               " unsupported");

  ScoredImageDataset ds;
  ds.generator_checkpoint_id = field(m, "generator_checkpoint_id", mpath);
  std::size_t count = 0;
  try {
    ds.seed = std::stoull(field(m, "seed", mpath));
    count = std::stoull(field(m, "count", mpath));
  } catch (const std::logic_error&) {
    throw CorruptDataError("bad numeric field in " + mpath.string());
  }

  std::filesystem::path cpath = dir / "scores.csv";
  if (!std::filesystem::exists(cpath))
    throw MissingFileError("no score table in " + dir.string());
  std::ifstream in(cpath, std::ios::binary);
  std::string line;
  if (!std::getline(in, line) || line.rfind("index,seed,score", 0) != 0)
    throw CorruptDataError("score table header malformed: " + cpath.string());
  char name[32];
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string idx_s, seed_s, score_s;
    if (!std::getline(row, idx_s, ',') || !std::getline(row, seed_s, ',') ||
        !std::getline(row, score_s))
      throw CorruptDataError("score table row malformed: " + line);
    ScoredRecord rec;
    std::size_t idx;
    try {
      idx = std::stoull(idx_s);
      rec.noise_seed = std::stoull(seed_s);
      rec.score = std::stod(score_s);
    } catch (const std::exception&) {
      throw CorruptDataError("score table row malformed: " + line);
    }
    if (idx != ds.records.size())
      throw CorruptDataError("score table indices out of order: " + line);
    if (!std::isfinite(rec.score) || rec.score < 0.0)
      throw CorruptDataError("score table holds an invalid score: " + line);
    std::snprintf(name, sizeof(name), "img_%05zu.png", idx);
    rec.image = img::read_png(dir / name);
    ds.records.push_back(std::move(rec));
  }
  if (ds.records.size() != count)
    throw CorruptDataError("score table row count disagrees with manifest: " +
                           dir.string());
  return ds;
}

nn::Sequential make_hogfd_net(int input_resolution, Rng& rng) {
  if (input_resolution < 16 || input_resolution % 16 != 0)
    throw PreconditionError(
        "four pooling stages need a resolution divisible by 16");
  nn::Sequential net;
  int chans[5] = {3, 16, 32, 64, 128};
  for (int i = 0; i < 4; ++i) {
    net.add(std::make_unique<nn::Conv2d>(chans[i], chans[i + 1], 3, 1, rng));
    net.add(std::make_unique<nn::BatchNorm2d>(chans[i + 1]));
    net.add(std::make_unique<nn::Activation>("relu"));
    net.add(std::make_unique<nn::MaxPool2>());
  }
  net.add(std::make_unique<nn::Flatten>());
  int spatial = input_resolution / 16;
  net.add(std::make_unique<nn::Dense>(128 * spatial * spatial, 16, rng));
  net.add(std::make_unique<nn::BatchNorm1d>(16));
  net.add(std::make_unique<nn::Activation>("relu"));
  net.add(std::make_unique<nn::Dropout>(0.5));
  net.add(std::make_unique<nn::Dense>(16, 4, rng));
  net.add(std::make_unique<nn::Activation>("relu"));
  net.add(std::make_unique<nn::Dense>(4, 1, rng));
  return net;
}

namespace {

// Records resized to the model resolution, stacked NCHW.
Tensor stack_inputs(const ScoredImageDataset& ds, int res) {
  int n = static_cast<int>(ds.records.size());
  Tensor all({n, 3, res, res});
  double* out = all.mutable_data();
  std::size_t stride = static_cast<std::size_t>(3) * res * res;
  for (int i = 0; i < n; ++i) {
    const img::ImageTensor& im = ds.records[static_cast<std::size_t>(i)].image;
    img::ImageTensor su = im.tag == img::RangeTag::signed_unit
                              ? im
                              : img::convert_range(im, img::RangeTag::signed_unit);
    Tensor chw = img::to_chw(su);
    int c = su.channels(), h = su.height(), w = su.width();
    ad::NodePtr x = ad::constant(chw.reshaped({1, c, h, w}));
    x = to_signed_batch3(x, img::RangeTag::signed_unit);
    x = ad::resize_bilinear(x, res, res);
    const double* src = x->value.data();
    std::copy(src, src + stride, out + static_cast<std::size_t>(i) * stride);
  }
  return all;
}

}  // namespace

HogfdModel train_hogfd(const ScoredImageDataset& ds, const HogfdConfig& hyper) {
  if (ds.records.size() < 2)
    throw PreconditionError("batch statistics need at least 2 records");
  if (hyper.epochs < 1) throw PreconditionError("training needs epochs >= 1");
  if (hyper.batch_size < 2)
    throw PreconditionError("batch statistics need batch_size >= 2");
  for (const ScoredRecord& r : ds.records)
    if (!std::isfinite(r.score))
      throw PreconditionError("dataset holds a non-finite score");

  HogfdModel m;
  m.input_resolution = hyper.input_resolution;
  m.generator_checkpoint_id = ds.generator_checkpoint_id;
  m.train_seed = hyper.seed;
  Rng init_rng(hyper.seed);
  m.net = make_hogfd_net(hyper.input_resolution, init_rng);

  int n = static_cast<int>(ds.records.size());

  // optimize in standardized target units: the raw scores sit on a large
  // common offset with little spread, which leaves the interesting residual
  // buried under the head-bias learning problem. The affine is folded back
  // into the output layer after training.
  double tgt_mean = 0.0;
  for (const ScoredRecord& r : ds.records) tgt_mean += r.score;
  tgt_mean /= n;
  double tgt_var = 0.0;
  for (const ScoredRecord& r : ds.records) {
    double d = r.score - tgt_mean;
    tgt_var += d * d;
  }
  tgt_var /= n;
  double tgt_sd = tgt_var > 0.0 ? std::sqrt(tgt_var) : 1.0;
  Tensor inputs = stack_inputs(ds, hyper.input_resolution);
  std::size_t stride =
      static_cast<std::size_t>(3) * hyper.input_resolution * hyper.input_resolution;

  nn::Adam opt(nn::param_nodes(m.net.params()), hyper.learning_rate);
  Rng dropout_rng(Rng::derive(hyper.seed, 777));
  long step = 0;
  long planned = static_cast<long>(hyper.epochs) *
                 ((n + hyper.batch_size - 1) / hyper.batch_size);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(Rng::derive(hyper.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    // batch boundaries; a trailing singleton is folded into its predecessor
    // because 1d batch statistics are undefined on one sample
    std::vector<std::pair<int, int>> batches;
    for (int start = 0; start < n; start += hyper.batch_size)
      batches.emplace_back(start, std::min(start + hyper.batch_size, n));
    if (batches.size() > 1 && batches.back().second - batches.back().first < 2) {
      batches[batches.size() - 2].second = n;
      batches.pop_back();
    }

    for (auto [b0, b1] : batches) {
      int bsz = b1 - b0;
      if (bsz < 2 && n >= 2)
        throw PreconditionError("internal: degenerate batch");
      Tensor bx({bsz, 3, hyper.input_resolution, hyper.input_resolution});
      Tensor by({bsz, 1});
      for (int r = 0; r < bsz; ++r) {
        int src = order[static_cast<std::size_t>(b0 + r)];
        std::copy(inputs.data() + static_cast<std::size_t>(src) * stride,
                  inputs.data() + static_cast<std::size_t>(src + 1) * stride,
                  bx.mutable_data() + static_cast<std::size_t>(r) * stride);
        by.mutable_data()[r] =
            (ds.records[static_cast<std::size_t>(src)].score - tgt_mean) /
            tgt_sd;
      }
      // step decay: full rate for 60% of the run, then x0.2, then x0.04;
      // the coarse phase finds the structure, the fine phases settle the
      // per-image residuals below the dropout noise floor
      double frac = static_cast<double>(step) / static_cast<double>(planned);
      opt.lr = frac < 0.6 ? hyper.learning_rate
               : frac < 0.85 ? hyper.learning_rate * 0.2
                             : hyper.learning_rate * 0.04;
      opt.zero_grad();
      ad::NodePtr pred = m.net.forward(ad::constant(bx), true, &dropout_rng);
      ad::NodePtr loss = ad::mse(pred, ad::constant(by));
      double lv = loss->value[0];
      if (!std::isfinite(lv))
        throw DivergenceError("faceness regression diverged at step " +
                              std::to_string(step));
      m.loss_curve.push_back(lv);
      ad::backward(loss);
      opt.step();
      ++step;
    }
  }

  // fold the target standardization into the output layer so the net emits
  // original-scale scores; the head is linear, so this is exact
  {
    std::vector<nn::ParamRef> refs = m.net.params();
    ad::NodePtr out_w = refs[refs.size() - 2].node;
    ad::NodePtr out_b = refs[refs.size() - 1].node;
    if (out_w->value.ndim() != 2 || out_w->value.dim(1) != 1 ||
        out_b->value.numel() != 1)
      throw NumericError("unexpected head geometry in the faceness net");
    double* wd = out_w->value.mutable_data();
    for (std::size_t i = 0; i < out_w->value.numel(); ++i) wd[i] *= tgt_sd;
    out_b->value.mutable_data()[0] =
        out_b->value[0] * tgt_sd + tgt_mean;
  }

  // small-batch training adapts to per-batch statistics, so pin the batchnorm
  // running stats to whole-set statistics before inference is measured. The
  // 1/(k+1) momentum sequence leaves the arithmetic mean of per-chunk stats.
  {
    constexpr int kChunk = 256;
    std::vector<std::pair<int, int>> chunks;
    for (int start = 0; start < n; start += kChunk)
      chunks.emplace_back(start, std::min(start + kChunk, n));
    if (chunks.size() > 1 && chunks.back().second - chunks.back().first < 2) {
      chunks[chunks.size() - 2].second = n;
      chunks.pop_back();
    }
    Rng calib_rng(Rng::derive(hyper.seed, 778));
    for (std::size_t k = 0; k < chunks.size(); ++k) {
      auto [c0, c1] = chunks[k];
      int csz = c1 - c0;
      Tensor cx({csz, 3, hyper.input_resolution, hyper.input_resolution});
      std::copy(inputs.data() + static_cast<std::size_t>(c0) * stride,
                inputs.data() + static_cast<std::size_t>(c1) * stride,
                cx.mutable_data());
      m.net.set_bn_momentum(1.0 / static_cast<double>(k + 1));
      m.net.forward(ad::constant(cx), true, &calib_rng);
    }
    m.net.set_bn_momentum(0.1);
  }

  // inference pass over the whole training set: max_score, final MSE
  double mse_acc = 0.0;
  double max_out = -std::numeric_limits<double>::infinity();
  double max_tgt = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    Tensor x({1, 3, hyper.input_resolution, hyper.input_resolution});
    std::copy(inputs.data() + static_cast<std::size_t>(i) * stride,
              inputs.data() + static_cast<std::size_t>(i + 1) * stride,
              x.mutable_data());
    double out = m.net.run(x)[0];
    if (!std::isfinite(out))
      throw DivergenceError("trained model emits non-finite scores");
    double tgt = ds.records[static_cast<std::size_t>(i)].score;
    double d = out - tgt;
    mse_acc += d * d;
    max_out = std::max(max_out, out);
    max_tgt = std::max(max_tgt, tgt);
  }
  m.final_train_mse = mse_acc / n;
  m.max_score = max_out;
  m.max_target = max_tgt;
  m.max_score_set = true;

  double mean_tgt = 0.0;
  for (const ScoredRecord& r : ds.records) mean_tgt += r.score;
  mean_tgt /= n;
  double var_tgt = 0.0;
  for (const ScoredRecord& r : ds.records) {
    double d = r.score - mean_tgt;
    var_tgt += d * d;
  }
  var_tgt /= n;
  if (var_tgt > 0.0 && m.final_train_mse >= var_tgt)
    throw DivergenceError(
        "trained regressor does not beat a constant predictor (mse " +
        fmt_double(m.final_train_mse) + " vs target variance " +
        fmt_double(var_tgt) + ")");
  return m;
}

ad::NodePtr hogfd_score_node(const HogfdModel& m, const ad::NodePtr& chw,
                             img::RangeTag tag) {
  ad::NodePtr x = to_signed_batch3(chw, tag);
  if (x->value.dim(2) != m.input_resolution ||
      x->value.dim(3) != m.input_resolution)
    x = ad::resize_bilinear(x, m.input_resolution, m.input_resolution);
  ad::NodePtr out = m.net.forward(x, false, nullptr);
  if (out->value.ndim() != 2 || out->value.dim(0) != 1 || out->value.dim(1) != 1)
    throw CorruptDataError("faceness net output is not a single scalar");
  return ad::reshape(out, {1});
}

double hogfd_score(const HogfdModel& m, const img::ImageTensor& image) {
  img::validate(image);
  Tensor chw = img::to_chw(image);
  ad::NodePtr x = ad::constant(
      chw.reshaped({1, image.channels(), image.height(), image.width()}));
  return hogfd_score_node(m, x, image.tag)->value[0];
}

ad::NodePtr manifold_loss_node(const HogfdModel& m, const ad::NodePtr& chw,
                               img::RangeTag tag) {
  if (!m.max_score_set)
    throw PreconditionError("manifold loss needs max_score; train or load a model");
  return ad::add_scalar(ad::mul_scalar(hogfd_score_node(m, chw, tag), -1.0),
                        m.max_score);
}

double manifold_loss(const HogfdModel& m, const img::ImageTensor& image) {
  if (!m.max_score_set)
    throw PreconditionError("manifold loss needs max_score; train or load a model");
  return m.max_score - hogfd_score(m, image);
}

void save_hogfd(const HogfdModel& m, const std::filesystem::path& path) {
  store::Archive a;
  m.net.save_into(a, "net.");
  if (!m.loss_curve.empty())
    a.put_tensor("loss_curve", Tensor({static_cast<int>(m.loss_curve.size())},
                                      m.loss_curve));
  a.save(path);

  store::Manifest man;
  man["format"] = kModelFormat;
  man["version"] = kVersion;
  man["input_resolution"] = std::to_string(m.input_resolution);
  man["max_score_set"] = m.max_score_set ? "1" : "0";
  man["max_score"] = fmt_double(m.max_score);
  man["max_target"] = fmt_double(m.max_target);
  man["generator_checkpoint_id"] = m.generator_checkpoint_id;
  man["train_seed"] = std::to_string(m.train_seed);
  man["final_train_mse"] = fmt_double(m.final_train_mse);
  store::write_manifest(path.string() + ".manifest", man);
}

HogfdModel load_hogfd(const std::filesystem::path& path) {
  store::Archive a = store::Archive::load(path);
  std::filesystem::path mpath = path.string() + ".manifest";
  if (!std::filesystem::exists(mpath))
    throw CorruptDataError("checkpoint missing manifest sidecar: " +
                           mpath.string());
  store::Manifest man = store::read_manifest(mpath);
  if (field(man, "format", mpath) != kModelFormat)
    throw VersionMismatchError("checkpoint format " + man.at("format") +
                               ", expected " + kModelFormat);
  if (field(man, "version", mpath) != kVersion)
    throw VersionMismatchError("checkpoint version " + man.at("version") +
                               " unsupported");

  HogfdModel m;
  m.net = nn::Sequential::load_from(a, "net.");
  m.max_score_set = field(man, "max_score_set", mpath) == "1";
  m.generator_checkpoint_id = field(man, "generator_checkpoint_id", mpath);
  try {
    m.input_resolution = std::stoi(field(man, "input_resolution", mpath));
    m.max_score = std::stod(field(man, "max_score", mpath));
    m.max_target = std::stod(field(man, "max_target", mpath));
    m.train_seed = std::stoull(field(man, "train_seed", mpath));
    m.final_train_mse = std::stod(field(man, "final_train_mse", mpath));
  } catch (const std::logic_error&) {
    throw CorruptDataError("bad numeric field in " + mpath.string());
  }
  if (m.max_score_set && !std::isfinite(m.max_score))
    throw CorruptDataError("checkpoint max_score is non-finite: " +
                           mpath.string());
  if (a.has_tensor("loss_curve")) {
    const Tensor& lc = a.tensor("loss_curve");
    m.loss_curve.assign(lc.data(), lc.data() + lc.numel());
  }
  try {
    Tensor probe = m.net.run(
        Tensor::zeros({1, 3, m.input_resolution, m.input_resolution}));
    if (probe.ndim() != 2 || probe.dim(0) != 1 || probe.dim(1) != 1)
      throw CorruptDataError("");
  } catch (const Error&) {
    throw CorruptDataError("checkpoint net incompatible with its manifest: " +
                           path.string());
  }
  return m;
}

}  // namespace s2p::mani
