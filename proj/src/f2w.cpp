#include "s2p/f2w.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "s2p/error.hpp"
#include "s2p/store.hpp"

namespace s2p::f2w {

namespace {

constexpr const char* kDatasetFormat = "s2p-pair-dataset";
constexpr const char* kMapperFormat = "s2p-f2w-mapper";
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

void check_format(const store::Manifest& m, const char* want,
                  const std::filesystem::path& path) {
  if (field(m, "format", path) != want)
    throw VersionMismatchError("manifest format " + m.at("format") +
                               ", expected " + want + ": " + path.string());
  if (field(m, "version", path) != kVersion)
    throw VersionMismatchError("manifest version " + m.at("version") +
                               " unsupported: " + path.string());
}

PairDataset rows_subset(const PairDataset& ds, int begin, int end) {
  PairDataset out;
  out.extractor_id = ds.extractor_id;
  out.generator_checkpoint_id = ds.generator_checkpoint_id;
  out.seed = ds.seed;
  out.latent_rows = ds.latent_rows;
  out.latent_width = ds.latent_width;
  int n = end - begin;
  if (n <= 0) return out;
  int d = ds.features.dim(1);
  int lw = ds.latents.dim(1);
  out.features = Tensor({n, d});
  out.latents = Tensor({n, lw});
  const double* fs = ds.features.data();
  const double* ls = ds.latents.data();
  std::copy(fs + static_cast<std::size_t>(begin) * d,
            fs + static_cast<std::size_t>(end) * d, out.features.mutable_data());
  std::copy(ls + static_cast<std::size_t>(begin) * lw,
            ls + static_cast<std::size_t>(end) * lw, out.latents.mutable_data());
  return out;
}

Tensor forward_all(const nn::Sequential& net, const Tensor& x) {
  return net.run(x);
}

double matrix_mse(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double d = pa[i] - pb[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

}  // namespace

PairDataset build_pair_dataset(const gen::Generator& g,
                               const ext::Registry& reg,
                               const std::string& extractor_id, int n,
                               std::uint64_t seed) {
  if (n < 1) throw PreconditionError("pair dataset needs n >= 1");
  if (!reg.has(extractor_id))
    throw PreconditionError("unknown extractor: " + extractor_id);
  const ext::ExtractorSpec& spec = reg.spec(extractor_id);

  PairDataset ds;
  ds.extractor_id = extractor_id;
  ds.generator_checkpoint_id = g.checkpoint_id;
  ds.seed = seed;
  ds.latent_rows = g.latent_rows;
  ds.latent_width = g.latent_width;
  ds.features = Tensor({n, spec.feature_dim});
  ds.latents = Tensor({n, g.latent_rows * g.latent_width});

  double* frow = ds.features.mutable_data();
  double* lrow = ds.latents.mutable_data();
  for (int i = 0; i < n; ++i) {
    // record i depends only on seed + i, so datasets extend without reshuffle
    Tensor z = gen::sample_noise(seed + static_cast<std::uint64_t>(i));
    Tensor w = g.map_noise(z);
    img::ImageTensor synth = g.synthesize(w);
    ext::FeatureVector f = reg.extract(synth, extractor_id);
    std::copy(f.values.data(), f.values.data() + f.values.numel(),
              frow + static_cast<std::size_t>(i) * spec.feature_dim);
    std::copy(w.data(), w.data() + w.numel(),
              lrow + static_cast<std::size_t>(i) * w.numel());
  }
  return ds;
}

void save_pair_dataset(const PairDataset& ds,
                       const std::filesystem::path& path) {
  store::Archive a;
  a.put_tensor("features", ds.features);
  a.put_tensor("latents", ds.latents);
  a.save(path);

  store::Manifest m;
  m["format"] = kDatasetFormat;
  m["version"] = kVersion;
  m["count"] = std::to_string(ds.size());
  m["feature_dim"] = std::to_string(ds.feature_dim());
  m["latent_rows"] = std::to_string(ds.latent_rows);
  m["latent_width"] = std::to_string(ds.latent_width);
  m["extractor_id"] = ds.extractor_id;
  m["generator_checkpoint_id"] = ds.generator_checkpoint_id;
  m["seed"] = std::to_string(ds.seed);
  m["dtype"] = "f64";
  store::write_manifest(path.string() + ".manifest", m);
}

PairDataset load_pair_dataset(const std::filesystem::path& path) {
  store::Archive a = store::Archive::load(path);
  std::filesystem::path mpath = path.string() + ".manifest";
  if (!std::filesystem::exists(mpath))
    throw CorruptDataError("dataset missing manifest sidecar: " +
                           mpath.string());
  store::Manifest m = store::read_manifest(mpath);
  check_format(m, kDatasetFormat, mpath);
  if (field(m, "dtype", mpath) != "f64")
    throw CorruptDataError("unsupported dtype " + m.at("dtype") + ": " +
                           mpath.string());

  PairDataset ds;
  ds.extractor_id = field(m, "extractor_id", mpath);
  ds.generator_checkpoint_id = field(m, "generator_checkpoint_id", mpath);
  int count = 0, fdim = 0;
  try {
    ds.seed = std::stoull(field(m, "seed", mpath));
    ds.latent_rows = std::stoi(field(m, "latent_rows", mpath));
    ds.latent_width = std::stoi(field(m, "latent_width", mpath));
    count = std::stoi(field(m, "count", mpath));
    fdim = std::stoi(field(m, "feature_dim", mpath));
  } catch (const std::logic_error&) {
    throw CorruptDataError("bad numeric field in " + mpath.string());
  }
  ds.features = a.tensor("features");
  ds.latents = a.tensor("latents");
  if (ds.features.ndim() != 2 || ds.latents.ndim() != 2 ||
      ds.features.dim(0) != count || ds.latents.dim(0) != count ||
      ds.features.dim(1) != fdim ||
      ds.latents.dim(1) != ds.latent_rows * ds.latent_width)
    throw CorruptDataError("dataset geometry contradicts manifest: " +
                           path.string());
  if (!ds.features.all_finite() || !ds.latents.all_finite())
    throw CorruptDataError("dataset holds non-finite values: " + path.string());
  return ds;
}

std::pair<PairDataset, PairDataset> split_pair_dataset(const PairDataset& ds,
                                                       double holdout_fraction) {
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
    throw PreconditionError("holdout fraction must be in [0, 1)");
  int n = ds.size();
  int n_hold = static_cast<int>(std::floor(holdout_fraction * n));
  int n_train = n - n_hold;
  return {rows_subset(ds, 0, n_train), rows_subset(ds, n_train, n)};
}

MapperModel train_mapper(const PairDataset& ds, const TrainConfig& hyper) {
  if (hyper.epochs < 1) throw PreconditionError("mapper needs epochs >= 1");
  if (hyper.batch_size < 1) throw PreconditionError("batch size must be >= 1");
  if (hyper.hidden < 1) throw PreconditionError("hidden width must be >= 1");
  if (ds.size() < 1) throw PreconditionError("mapper needs a non-empty dataset");

  auto [train, holdout] = split_pair_dataset(ds, hyper.holdout_fraction);
  if (train.size() < 1)
    throw PreconditionError("holdout fraction leaves no training records");
  if (!hyper.eval_steps.empty() && holdout.size() < 1)
    throw PreconditionError("eval steps requested but holdout split is empty");

  int d = ds.feature_dim();
  int out_dim = ds.latent_rows * ds.latent_width;

  MapperModel m;
  m.extractor_id = ds.extractor_id;
  m.generator_checkpoint_id = ds.generator_checkpoint_id;
  m.input_dim = d;
  m.latent_rows = ds.latent_rows;
  m.latent_width = ds.latent_width;
  m.hidden = hyper.hidden;
  m.train_seed = hyper.seed;

  Rng init_rng(hyper.seed);
  m.net.add(std::make_unique<nn::Dense>(d, hyper.hidden, init_rng));
  m.net.add(std::make_unique<nn::Activation>("relu"));
  m.net.add(std::make_unique<nn::Dense>(hyper.hidden, out_dim, init_rng));

  nn::Adam opt(nn::param_nodes(m.net.params()), hyper.learning_rate);
  std::set<long> probe(hyper.eval_steps.begin(), hyper.eval_steps.end());

  const double* fdata = train.features.data();
  const double* ldata = train.latents.data();
  int n_train = train.size();
  long step = 0;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(Rng::derive(hyper.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    for (int start = 0; start < n_train; start += hyper.batch_size) {
      int bsz = std::min(hyper.batch_size, n_train - start);
      Tensor bx({bsz, d});
      Tensor by({bsz, out_dim});
      for (int r = 0; r < bsz; ++r) {
        int src = order[static_cast<std::size_t>(start + r)];
        std::copy(fdata + static_cast<std::size_t>(src) * d,
                  fdata + static_cast<std::size_t>(src + 1) * d,
                  bx.mutable_data() + static_cast<std::size_t>(r) * d);
        std::copy(ldata + static_cast<std::size_t>(src) * out_dim,
                  ldata + static_cast<std::size_t>(src + 1) * out_dim,
                  by.mutable_data() + static_cast<std::size_t>(r) * out_dim);
      }
      opt.zero_grad();
      ad::NodePtr pred = m.net.forward(ad::constant(bx));
      ad::NodePtr loss = ad::mse(pred, ad::constant(by));
      double lv = loss->value[0];
      if (!std::isfinite(lv))
        throw DivergenceError("mapper loss became non-finite at step " +
                              std::to_string(step));
      m.loss_curve.push_back(lv);
      ad::backward(loss);
      opt.step();
      ++step;
      if (probe.count(step)) {
        Tensor hp = forward_all(m.net, holdout.features);
        m.eval_curve.emplace_back(step, matrix_mse(hp, holdout.latents));
      }
    }
  }

  Tensor full_pred = forward_all(m.net, ds.features);
  m.final_train_mse = matrix_mse(full_pred, ds.latents);
  return m;
}

double zero_mapper_mse(const PairDataset& ds) {
  if (ds.size() < 1) throw PreconditionError("empty dataset");
  double acc = 0.0;
  const double* p = ds.latents.data();
  for (std::size_t i = 0; i < ds.latents.numel(); ++i) acc += p[i] * p[i];
  return acc / static_cast<double>(ds.latents.numel());
}

Tensor map_features(const MapperModel& m, const ext::FeatureVector& f) {
  if (f.extractor_id != m.extractor_id)
    throw PreconditionError("mapper trained on " + m.extractor_id +
                            " cannot map " + f.extractor_id + " features");
  if (f.values.ndim() != 1 || f.values.dim(0) != m.input_dim)
    throw PreconditionError("feature width does not match mapper input");
  Tensor row = m.net.run(f.values.reshaped({1, m.input_dim}));
  return row.reshaped({m.latent_rows, m.latent_width});
}

EvalReport evaluate_mapper(const MapperModel& m, const PairDataset& holdout,
                           const gen::Generator* g) {
  if (holdout.size() < 1)
    throw PreconditionError("evaluation needs a non-empty holdout");
  if (holdout.extractor_id != m.extractor_id)
    throw PreconditionError("holdout extractor does not match mapper");
  if (g != nullptr && (g->latent_rows != m.latent_rows ||
                       g->latent_width != m.latent_width))
    throw PreconditionError("generator latent geometry does not match mapper");

  int n = holdout.size();
  int out_dim = m.latent_rows * m.latent_width;
  Tensor pred = m.net.run(holdout.features);

  EvalReport rep;
  rep.count = n;
  std::vector<double> per_record(static_cast<std::size_t>(n));
  const double* pp = pred.data();
  const double* tp = holdout.latents.data();
  double image_acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < out_dim; ++j) {
      double dv = pp[static_cast<std::size_t>(i) * out_dim + j] -
                  tp[static_cast<std::size_t>(i) * out_dim + j];
      acc += dv * dv;
    }
    per_record[static_cast<std::size_t>(i)] = acc / out_dim;
    if (g != nullptr) {
      Tensor wp({m.latent_rows, m.latent_width});
      Tensor wt({m.latent_rows, m.latent_width});
      std::copy(pp + static_cast<std::size_t>(i) * out_dim,
                pp + static_cast<std::size_t>(i + 1) * out_dim,
                wp.mutable_data());
      std::copy(tp + static_cast<std::size_t>(i) * out_dim,
                tp + static_cast<std::size_t>(i + 1) * out_dim,
                wt.mutable_data());
      img::ImageTensor a = g->synthesize(wp);
      img::ImageTensor b = g->synthesize(wt);
      image_acc += std::sqrt(matrix_mse(a.pixels, b.pixels));
    }
  }
  rep.mean_latent_mse =
      std::accumulate(per_record.begin(), per_record.end(), 0.0) / n;
  std::vector<double> sorted = per_record;
  std::sort(sorted.begin(), sorted.end());
  rep.median_latent_mse =
      (n % 2 == 1) ? sorted[static_cast<std::size_t>(n / 2)]
                   : 0.5 * (sorted[static_cast<std::size_t>(n / 2 - 1)] +
                            sorted[static_cast<std::size_t>(n / 2)]);
  if (g != nullptr) rep.mean_image_rms = image_acc / n;
  return rep;
}

void save_mapper(const MapperModel& m, const std::filesystem::path& path) {
  store::Archive a;
  m.net.save_into(a, "net.");
  if (!m.loss_curve.empty()) {
    a.put_tensor("loss_curve", Tensor({static_cast<int>(m.loss_curve.size())},
                                      m.loss_curve));
  }
  if (!m.eval_curve.empty()) {
    std::vector<double> steps, vals;
    for (const auto& [s, v] : m.eval_curve) {
      steps.push_back(static_cast<double>(s));
      vals.push_back(v);
    }
    a.put_tensor("eval_steps", Tensor({static_cast<int>(steps.size())}, steps));
    a.put_tensor("eval_mse", Tensor({static_cast<int>(vals.size())}, vals));
  }
  a.save(path);

  store::Manifest man;
  man["format"] = kMapperFormat;
  man["version"] = kVersion;
  man["extractor_id"] = m.extractor_id;
  man["generator_checkpoint_id"] = m.generator_checkpoint_id;
  man["input_dim"] = std::to_string(m.input_dim);
  man["latent_rows"] = std::to_string(m.latent_rows);
  man["latent_width"] = std::to_string(m.latent_width);
  man["hidden"] = std::to_string(m.hidden);
  man["train_seed"] = std::to_string(m.train_seed);
  man["final_train_mse"] = fmt_double(m.final_train_mse);
  store::write_manifest(path.string() + ".manifest", man);
}

MapperModel load_mapper(const std::filesystem::path& path) {
  store::Archive a = store::Archive::load(path);
  std::filesystem::path mpath = path.string() + ".manifest";
  if (!std::filesystem::exists(mpath))
    throw CorruptDataError("mapper missing manifest sidecar: " +
                           mpath.string());
  store::Manifest man = store::read_manifest(mpath);
  check_format(man, kMapperFormat, mpath);

  MapperModel m;
  m.net = nn::Sequential::load_from(a, "net.");
  m.extractor_id = field(man, "extractor_id", mpath);
  m.generator_checkpoint_id = field(man, "generator_checkpoint_id", mpath);
  try {
    m.input_dim = std::stoi(field(man, "input_dim", mpath));
    m.latent_rows = std::stoi(field(man, "latent_rows", mpath));
    m.latent_width = std::stoi(field(man, "latent_width", mpath));
    m.hidden = std::stoi(field(man, "hidden", mpath));
    m.train_seed = std::stoull(field(man, "train_seed", mpath));
    m.final_train_mse = std::stod(field(man, "final_train_mse", mpath));
  } catch (const std::logic_error&) {
    throw CorruptDataError("bad numeric field in " + mpath.string());
  }
  if (m.input_dim < 1 || m.latent_rows < 1 || m.latent_width < 1)
    throw CorruptDataError("mapper manifest geometry invalid: " +
                           mpath.string());
  if (a.has_tensor("loss_curve")) {
    const Tensor& lc = a.tensor("loss_curve");
    m.loss_curve.assign(lc.data(), lc.data() + lc.numel());
  }
  if (a.has_tensor("eval_steps")) {
    const Tensor& es = a.tensor("eval_steps");
    const Tensor& ev = a.tensor("eval_mse");
    if (es.numel() != ev.numel())
      throw CorruptDataError("eval curve tensors disagree: " + path.string());
    for (std::size_t i = 0; i < es.numel(); ++i)
      m.eval_curve.emplace_back(static_cast<long>(es[i]), ev[i]);
  }
  // exercise the net once so shape mismatches surface at load time
  Tensor probe;
  try {
    probe = m.net.run(Tensor::zeros({1, m.input_dim}));
  } catch (const Error&) {
    throw CorruptDataError("mapper net incompatible with manifest geometry: " +
                           path.string());
  }
  if (probe.ndim() != 2 || probe.dim(1) != m.latent_rows * m.latent_width)
    throw CorruptDataError("mapper output width contradicts manifest: " +
                           path.string());
  return m;
}

}  // namespace s2p::f2w
