#include "s2p/generator.hpp"

#include <cmath>
#include <sstream>

#include "s2p/error.hpp"
#include "s2p/nn.hpp"
#include "s2p/rng.hpp"
#include "s2p/store.hpp"

namespace s2p::gen {

namespace {

constexpr const char* kFormat = "s2p-style-decoder";
constexpr const char* kVersion = "1";

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    os << v[static_cast<std::size_t>(i)];
  }
  return os.str();
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

const std::string& field(const store::Manifest& m, const std::string& key,
                         const std::filesystem::path& path) {
  auto it = m.find(key);
  if (it == m.end())
    throw CorruptDataError("manifest missing " + key + ": " + path.string());
  return it->second;
}

}  // namespace

std::string kind_name(Kind k) {
  return k == Kind::pretrained ? "pretrained" : "toy";
}

Kind kind_from_name(const std::string& name) {
  if (name == "pretrained") return Kind::pretrained;
  if (name == "toy") return Kind::toy;
  throw CorruptDataError("unknown generator kind: " + name);
}

Tensor sample_noise(std::uint64_t seed) {
  Rng rng(seed);
  return nn::randn({512}, rng);
}

std::vector<std::pair<int, int>> Generator::row_groups(int rows, int slots) {
  std::vector<std::pair<int, int>> groups;
  groups.reserve(static_cast<std::size_t>(slots));
  for (int s = 0; s < slots; ++s) {
    int b = s * rows / slots;
    int e = (s + 1) * rows / slots;
    groups.emplace_back(b, e);
  }
  return groups;
}

void Generator::validate_latent(const Tensor& w) const {
  if (w.ndim() != 2 || w.dim(0) != latent_rows || w.dim(1) != latent_width)
    throw PreconditionError("latent code must be " + std::to_string(latent_rows) +
                            "x" + std::to_string(latent_width));
  if (!w.all_finite()) throw NumericError("latent code has non-finite entries");
}

Tensor Generator::map_noise(const Tensor& z) const {
  if (z.ndim() != 1 || z.dim(0) != 512)
    throw PreconditionError("noise vector must have length 512");
  if (!z.all_finite()) throw NumericError("noise vector has non-finite entries");
  auto zn = ad::reshape(ad::constant(z), {1, 512});
  auto h = ad::tanh_op(ad::add_rowvec(ad::matmul(zn, ad::constant(map_w0)),
                                      ad::constant(map_b0)));
  auto row = ad::add_rowvec(ad::matmul(h, ad::constant(map_w1)),
                            ad::constant(map_b1));
  auto w = ad::broadcast_rows(ad::reshape(row, {latent_width}), latent_rows);
  return w->value;
}

ad::NodePtr Generator::synthesize_node(const ad::NodePtr& w) const {
  validate_latent(w->value);
  auto groups = row_groups(latent_rows, style_slots());
  auto styles_mat = ad::group_mean_rows(w, groups);  // [slots, width]

  auto apply_style = [&](const ad::NodePtr& x, int slot) {
    const StyleAffine& sa = styles[static_cast<std::size_t>(slot)];
    int c = sa.scale_b.dim(0);
    auto row = ad::reshape(ad::select_row(styles_mat, slot), {1, latent_width});
    auto scale = ad::reshape(
        ad::add_rowvec(ad::matmul(row, ad::constant(sa.scale_a)),
                       ad::constant(sa.scale_b)),
        {c});
    auto shift = ad::reshape(
        ad::add_rowvec(ad::matmul(row, ad::constant(sa.shift_a)),
                       ad::constant(sa.shift_b)),
        {c});
    return ad::scale_shift_channels(x, scale, shift);
  };

  int c0 = channels[0];
  auto x = ad::reshape(ad::constant(const0), {1, c0, 4, 4});
  x = apply_style(x, 0);
  x = ad::tanh_op(ad::conv2d(x, ad::constant(init_conv.k),
                             ad::constant(init_conv.b), 1));
  x = apply_style(x, 1);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    x = ad::upsample2_nearest(x);
    x = ad::tanh_op(ad::conv2d(x, ad::constant(stages[i][0].k),
                               ad::constant(stages[i][0].b), 1));
    x = apply_style(x, 2 + 2 * static_cast<int>(i));
    x = ad::tanh_op(ad::conv2d(x, ad::constant(stages[i][1].k),
                               ad::constant(stages[i][1].b), 1));
    x = apply_style(x, 3 + 2 * static_cast<int>(i));
  }
  return ad::tanh_op(
      ad::conv2d(x, ad::constant(rgb.k), ad::constant(rgb.b), 0));
}

img::ImageTensor Generator::synthesize(const Tensor& w) const {
  auto node = synthesize_node(ad::constant(w));
  Tensor chw = node->value.reshaped({3, resolution, resolution});
  return img::from_chw(chw, img::RangeTag::signed_unit);
}

Generator make_generator(Kind kind, int resolution, int latent_width,
                         int map_hidden, std::vector<int> channels,
                         std::uint64_t seed, std::string checkpoint_id) {
  int stages = 0;
  for (int r = 4; r < resolution; r *= 2) ++stages;
  if (resolution != 4 * (1 << stages) || resolution < 8)
    throw PreconditionError("resolution must be 4*2^k, k >= 1");
  if (channels.size() != static_cast<std::size_t>(stages) + 1)
    throw PreconditionError("channels must list one base + one per stage");

  Rng rng(seed);
  Generator g;
  g.kind = kind;
  g.resolution = resolution;
  g.checkpoint_id = std::move(checkpoint_id);
  g.latent_width = latent_width;
  g.map_hidden = map_hidden;
  g.channels = std::move(channels);

  // mapping biases are randomized so the zero vector maps to a code that
  // fingerprints the weights
  g.map_w0 = nn::randn({512, map_hidden}, rng, 1.0 / std::sqrt(512.0));
  g.map_b0 = nn::randn({map_hidden}, rng, 0.1);
  g.map_w1 = nn::randn({map_hidden, latent_width}, rng,
                       1.0 / std::sqrt(static_cast<double>(map_hidden)));
  g.map_b1 = nn::randn({latent_width}, rng, 0.1);

  int c0 = g.channels[0];
  g.const0 = nn::randn({c0, 4, 4}, rng);
  auto conv = [&rng](int in, int out, int k) {
    double fan = static_cast<double>(in) * k * k;
    return ConvW{nn::randn({out, in, k, k}, rng, 1.0 / std::sqrt(fan)),
                 Tensor::zeros({out})};
  };
  g.init_conv = conv(c0, c0, 3);
  for (int i = 0; i < stages; ++i) {
    int cin = g.channels[static_cast<std::size_t>(i)];
    int cout = g.channels[static_cast<std::size_t>(i) + 1];
    g.stages.push_back({conv(cin, cout, 3), conv(cout, cout, 3)});
  }

  auto slot_channels = [&](int slot) {
    // slots 0,1 act on the base block; slots 2i+2, 2i+3 on stage i's output
    if (slot < 2) return c0;
    return g.channels[static_cast<std::size_t>((slot - 2) / 2) + 1];
  };
  double a_sd = 0.1 / std::sqrt(static_cast<double>(latent_width));
  for (int s = 0; s < g.style_slots(); ++s) {
    int c = slot_channels(s);
    g.styles.push_back(StyleAffine{nn::randn({latent_width, c}, rng, a_sd),
                                   Tensor::zeros({c}),
                                   nn::randn({latent_width, c}, rng, a_sd),
                                   Tensor::zeros({c})});
  }
  g.rgb = conv(g.channels.back(), 3, 1);
  return g;
}

Generator make_toy_generator() {
  return make_generator(Kind::toy, 32, 16, 64, {16, 12, 10, 8}, 1234,
                        "toy-32");
}

void save_generator(const Generator& g, const std::filesystem::path& path) {
  store::Archive a;
  a.put_tensor("map.w0", g.map_w0);
  a.put_tensor("map.b0", g.map_b0);
  a.put_tensor("map.w1", g.map_w1);
  a.put_tensor("map.b1", g.map_b1);
  a.put_tensor("const0", g.const0);
  a.put_tensor("init.k", g.init_conv.k);
  a.put_tensor("init.b", g.init_conv.b);
  for (std::size_t i = 0; i < g.stages.size(); ++i) {
    std::string p = "up" + std::to_string(i);
    a.put_tensor(p + ".conv1.k", g.stages[i][0].k);
    a.put_tensor(p + ".conv1.b", g.stages[i][0].b);
    a.put_tensor(p + ".conv2.k", g.stages[i][1].k);
    a.put_tensor(p + ".conv2.b", g.stages[i][1].b);
  }
  for (std::size_t s = 0; s < g.styles.size(); ++s) {
    std::string p = "style" + std::to_string(s);
    a.put_tensor(p + ".scale.a", g.styles[s].scale_a);
    a.put_tensor(p + ".scale.b", g.styles[s].scale_b);
    a.put_tensor(p + ".shift.a", g.styles[s].shift_a);
    a.put_tensor(p + ".shift.b", g.styles[s].shift_b);
  }
  a.put_tensor("rgb.k", g.rgb.k);
  a.put_tensor("rgb.b", g.rgb.b);
  a.save(path);

  store::Manifest m;
  m["format"] = kFormat;
  m["version"] = kVersion;
  m["kind"] = kind_name(g.kind);
  m["checkpoint_id"] = g.checkpoint_id;
  m["resolution"] = std::to_string(g.resolution);
  m["latent_rows"] = std::to_string(g.latent_rows);
  m["latent_width"] = std::to_string(g.latent_width);
  m["map_hidden"] = std::to_string(g.map_hidden);
  m["channels"] = join_ints(g.channels);
  store::write_manifest(path.string() + ".manifest", m);
}

Generator load_generator(const std::filesystem::path& path, Kind kind) {
  if (!std::filesystem::exists(path))
    throw MissingFileError("no such checkpoint: " + path.string());
  std::filesystem::path mpath = path.string() + ".manifest";
  if (!std::filesystem::exists(mpath))
    throw CorruptDataError("checkpoint missing manifest sidecar: " +
                           mpath.string());
  store::Manifest m = store::read_manifest(mpath);

  if (field(m, "format", mpath) != kFormat)
    throw VersionMismatchError("checkpoint format " + m.at("format") +
                               " not supported");
  if (field(m, "version", mpath) != kVersion)
    throw VersionMismatchError("checkpoint version " + m.at("version") +
                               " not supported");
  Kind stored = kind_from_name(field(m, "kind", mpath));
  if (stored != kind)
    throw VersionMismatchError("checkpoint is " + kind_name(stored) +
                               ", expected " + kind_name(kind));

  Generator g;
  g.kind = stored;
  g.checkpoint_id = field(m, "checkpoint_id", mpath);
  try {
    g.resolution = std::stoi(field(m, "resolution", mpath));
    g.latent_rows = std::stoi(field(m, "latent_rows", mpath));
    g.latent_width = std::stoi(field(m, "latent_width", mpath));
    g.map_hidden = std::stoi(field(m, "map_hidden", mpath));
    g.channels = split_ints(field(m, "channels", mpath));
  } catch (const std::logic_error&) {
    throw CorruptDataError("bad numeric field in " + mpath.string());
  }
  if (g.latent_rows != 18)
    throw CorruptDataError("latent_rows must be 18 in " + mpath.string());

  int stages = 0;
  for (int r = 4; r < g.resolution; r *= 2) ++stages;
  if (g.resolution != 4 * (1 << stages) ||
      g.channels.size() != static_cast<std::size_t>(stages) + 1)
    throw CorruptDataError("inconsistent geometry in " + mpath.string());

  store::Archive a = store::Archive::load(path);
  auto take = [&](const std::string& name, std::vector<int> shape) {
    const Tensor& t = a.tensor(name);
    if (t.shape() != shape)
      throw CorruptDataError("tensor " + name + " has wrong shape in " +
                             path.string());
    return t;
  };

  g.map_w0 = take("map.w0", {512, g.map_hidden});
  g.map_b0 = take("map.b0", {g.map_hidden});
  g.map_w1 = take("map.w1", {g.map_hidden, g.latent_width});
  g.map_b1 = take("map.b1", {g.latent_width});
  int c0 = g.channels[0];
  g.const0 = take("const0", {c0, 4, 4});
  g.init_conv = {take("init.k", {c0, c0, 3, 3}), take("init.b", {c0})};
  for (int i = 0; i < stages; ++i) {
    std::string p = "up" + std::to_string(i);
    int cin = g.channels[static_cast<std::size_t>(i)];
    int cout = g.channels[static_cast<std::size_t>(i) + 1];
    g.stages.push_back({ConvW{take(p + ".conv1.k", {cout, cin, 3, 3}),
                              take(p + ".conv1.b", {cout})},
                        ConvW{take(p + ".conv2.k", {cout, cout, 3, 3}),
                              take(p + ".conv2.b", {cout})}});
  }
  for (int s = 0; s < g.style_slots(); ++s) {
    std::string p = "style" + std::to_string(s);
    int c = s < 2 ? c0 : g.channels[static_cast<std::size_t>((s - 2) / 2) + 1];
    g.styles.push_back(StyleAffine{take(p + ".scale.a", {g.latent_width, c}),
                                   take(p + ".scale.b", {c}),
                                   take(p + ".shift.a", {g.latent_width, c}),
                                   take(p + ".shift.b", {c})});
  }
  g.rgb = {take("rgb.k", {3, g.channels.back(), 1, 1}), take("rgb.b", {3})};

  // weights must be finite
  for (const auto& name : a.tensor_names())
    if (!a.tensor(name).all_finite())
      throw CorruptDataError("non-finite weights in " + path.string());
  return g;
}

}  // namespace s2p::gen
