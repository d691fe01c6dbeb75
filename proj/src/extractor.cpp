#include "s2p/extractor.hpp"

#include <cmath>
#include <sstream>

#include "s2p/error.hpp"
#include "s2p/store.hpp"

namespace s2p::ext {

double feature_distance(const FeatureVector& a, const FeatureVector& b) {
  if (a.extractor_id != b.extractor_id)
    throw PreconditionError("feature vectors from different extractors: " +
                            a.extractor_id + " vs " + b.extractor_id);
  if (!a.values.same_shape(b.values))
    throw PreconditionError("feature dimension mismatch");
  double acc = 0.0;
  const double* x = a.values.data();
  const double* y = b.values.data();
  for (std::size_t i = 0; i < a.values.numel(); ++i) {
    double d = x[i] - y[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

void Registry::register_extractor(ExtractorSpec spec) {
  if (spec.feature_dim <= 0 || spec.input_resolution <= 0)
    throw PreconditionError("extractor spec needs positive dim and resolution");
  if (entries_.count(spec.extractor_id))
    throw PreconditionError("duplicate extractor id: " + spec.extractor_id);
  std::string id = spec.extractor_id;
  entries_[id] = Entry{std::move(spec), nullptr};
}

void Registry::register_extractor(ExtractorSpec spec, nn::Sequential net) {
  register_extractor(spec);
  entries_[spec.extractor_id].net =
      std::make_shared<nn::Sequential>(std::move(net));
}

void Registry::update_spec(ExtractorSpec spec) {
  auto it = entries_.find(spec.extractor_id);
  if (it == entries_.end())
    throw PreconditionError("unknown extractor id: " + spec.extractor_id);
  it->second.spec = std::move(spec);
}

void Registry::load_weights(const std::string& id,
                            const std::filesystem::path& path) {
  auto it = entries_.find(id);
  if (it == entries_.end())
    throw PreconditionError("unknown extractor id: " + id);
  store::Archive a = store::Archive::load(path);
  it->second.net = std::make_shared<nn::Sequential>(
      nn::Sequential::load_from(a, "net."));
  it->second.spec.weights_path = path;
}

bool Registry::has(const std::string& id) const {
  return entries_.count(id) != 0;
}

const Registry::Entry& Registry::entry(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end())
    throw PreconditionError("unknown extractor id: " + id);
  return it->second;
}

const ExtractorSpec& Registry::spec(const std::string& id) const {
  return entry(id).spec;
}

std::vector<ExtractorSpec> Registry::list() const {
  std::vector<ExtractorSpec> out;
  out.reserve(entries_.size());
  for (const auto& [id, e] : entries_) out.push_back(e.spec);
  return out;
}

bool Registry::weights_loaded(const std::string& id) const {
  return entry(id).net != nullptr;
}

ad::NodePtr Registry::preprocess_node(const ad::NodePtr& chw, img::RangeTag tag,
                                      const ExtractorSpec& spec) const {
  if (chw->value.ndim() != 4 || chw->value.dim(0) != 1)
    throw PreconditionError("preprocess expects a [1,C,H,W] node");
  int c = chw->value.dim(1);
  int h = chw->value.dim(2), w = chw->value.dim(3);
  if (c != 1 && c != 3)
    throw PreconditionError("preprocess expects 1 or 3 channels");
  if (h < 1 || w < 1) throw PreconditionError("degenerate image");

  if (tag == img::RangeTag::normalized) {
    if (c == 3 && h == spec.input_resolution && w == spec.input_resolution)
      return chw;  // already conforming
    throw PreconditionError(
        "normalized image does not match extractor geometry");
  }

  ad::NodePtr x = chw;
  if (tag == img::RangeTag::signed_unit)
    x = ad::add_scalar(ad::mul_scalar(x, 0.5), 0.5);
  if (c == 1) {
    x = ad::reshape(x, {h, w});
    x = ad::reshape(x, {1, h, w});
    x = ad::replicate_channels(x, 3);
    x = ad::reshape(x, {1, 3, h, w});
  }
  x = ad::resize_bilinear(x, spec.input_resolution, spec.input_resolution);
  Tensor s({3}), t({3});
  for (int ch = 0; ch < 3; ++ch) {
    double sc = spec.scale[static_cast<std::size_t>(ch)];
    if (sc == 0.0) throw PreconditionError("zero normalization scale");
    s.mutable_data()[ch] = 1.0 / sc - 1.0;
    t.mutable_data()[ch] = -spec.mean[static_cast<std::size_t>(ch)] / sc;
  }
  return ad::scale_shift_channels(x, ad::constant(s), ad::constant(t));
}

img::ImageTensor Registry::preprocess(const img::ImageTensor& img,
                                      const ExtractorSpec& spec) const {
  img::validate(img);
  Tensor chw = img::to_chw(img);
  auto node = preprocess_node(
      ad::constant(chw.reshaped({1, img.channels(), img.height(), img.width()})),
      img.tag, spec);
  Tensor out = node->value.reshaped(
      {3, spec.input_resolution, spec.input_resolution});
  return img::ImageTensor{img::from_chw(out, img::RangeTag::normalized).pixels,
                          img::RangeTag::normalized};
}

ad::NodePtr Registry::extract_node(const ad::NodePtr& preprocessed,
                                   const std::string& id) const {
  const Entry& e = entry(id);
  if (!e.net)
    throw WeightsMissingError("extractor " + id +
                              " has no weights loaded; point the registry "
                              "manifest at a weight file");
  auto out = e.net->forward(preprocessed);
  if (out->value.ndim() != 2 || out->value.dim(0) != 1 ||
      out->value.dim(1) != e.spec.feature_dim)
    throw CorruptDataError("extractor " + id + " produced dimension " +
                           std::to_string(out->value.dim(1)) + ", spec says " +
                           std::to_string(e.spec.feature_dim));
  auto flat = ad::reshape(out, {e.spec.feature_dim});
  if (e.spec.l2_normalize) flat = ad::div_by_scalar(flat, ad::l2_norm(flat));
  return flat;
}

FeatureVector Registry::extract(const img::ImageTensor& img,
                                const std::string& id) const {
  const ExtractorSpec& sp = spec(id);
  Tensor chw = img::to_chw(img);
  auto pre = preprocess_node(
      ad::constant(chw.reshaped({1, img.channels(), img.height(), img.width()})),
      img.tag, sp);
  auto node = extract_node(pre, id);
  if (!node->value.all_finite())
    throw NumericError("extractor " + id + " produced non-finite features");
  return FeatureVector{node->value, id};
}

nn::Sequential make_toy_extractor_net(std::uint64_t seed) {
  Rng rng(seed);
  nn::Sequential net;
  net.add(std::make_unique<nn::Conv2d>(3, 8, 3, 1, rng));
  net.add(std::make_unique<nn::Activation>("tanh"));
  net.add(std::make_unique<nn::MaxPool2>());
  net.add(std::make_unique<nn::Conv2d>(8, 16, 3, 1, rng));
  net.add(std::make_unique<nn::Activation>("tanh"));
  net.add(std::make_unique<nn::MaxPool2>());
  net.add(std::make_unique<nn::Flatten>());
  net.add(std::make_unique<nn::Dense>(16 * 8 * 8, 64, rng));
  return net;
}

ExtractorSpec toy_extractor_spec(const std::string& id) {
  ExtractorSpec s;
  s.extractor_id = id;
  s.input_resolution = 32;
  s.mean = {0.5, 0.5, 0.5};
  s.scale = {0.5, 0.5, 0.5};
  s.feature_dim = 64;
  s.differentiable = true;
  return s;
}

Registry default_registry() {
  Registry reg;

  ExtractorSpec vggface;
  vggface.extractor_id = "vggface";
  vggface.input_resolution = 224;
  vggface.mean = {0.5066, 0.4063, 0.3325};
  vggface.feature_dim = 4096;
  reg.register_extractor(vggface);

  ExtractorSpec vggface2;
  vggface2.extractor_id = "vggface2";
  vggface2.input_resolution = 224;
  vggface2.mean = {0.5066, 0.4063, 0.3325};
  vggface2.feature_dim = 2048;
  reg.register_extractor(vggface2);

  ExtractorSpec vgg16;
  vgg16.extractor_id = "vgg16";
  vgg16.input_resolution = 224;
  vgg16.mean = {0.485, 0.456, 0.406};
  vgg16.scale = {0.229, 0.224, 0.225};
  vgg16.feature_dim = 4096;
  reg.register_extractor(vgg16);

  reg.register_extractor(toy_extractor_spec("toy"), make_toy_extractor_net(4321));
  reg.register_extractor(toy_extractor_spec("toy2"), make_toy_extractor_net(4322));
  reg.register_extractor(toy_extractor_spec("toy3"), make_toy_extractor_net(4323));
  return reg;
}

namespace {

std::array<double, 3> parse_triple(const std::string& s) {
  std::array<double, 3> out{};
  std::istringstream is(s);
  std::string tok;
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(is, tok, ','))
      throw CorruptDataError("expected three comma-separated values: " + s);
    out[static_cast<std::size_t>(i)] = std::stod(tok);
  }
  return out;
}

}  // namespace

void apply_registry_manifest(Registry& reg, const std::filesystem::path& path) {
  store::Manifest m = store::read_manifest(path);

  // first pass: create unknown ids so later keys can refer to them
  for (const auto& [key, value] : m) {
    auto dot = key.find('.');
    if (dot == std::string::npos)
      throw CorruptDataError("registry manifest key needs <id>.<field>: " + key);
    std::string id = key.substr(0, dot);
    if (!reg.has(id)) {
      ExtractorSpec spec;
      spec.extractor_id = id;
      spec.input_resolution = 224;
      spec.feature_dim = 1;
      reg.register_extractor(spec);
    }
  }

  std::map<std::string, ExtractorSpec> updated;
  for (const auto& [key, value] : m) {
    auto dot = key.find('.');
    std::string id = key.substr(0, dot);
    std::string fieldname = key.substr(dot + 1);
    if (!updated.count(id)) updated[id] = reg.spec(id);
    ExtractorSpec& spec = updated[id];
    try {
      if (fieldname == "weights") {
        spec.weights_path = value;
      } else if (fieldname == "resolution") {
        spec.input_resolution = std::stoi(value);
      } else if (fieldname == "dim") {
        spec.feature_dim = std::stoi(value);
      } else if (fieldname == "mean") {
        spec.mean = parse_triple(value);
      } else if (fieldname == "scale") {
        spec.scale = parse_triple(value);
      } else if (fieldname == "normalize") {
        spec.l2_normalize = value == "1" || value == "true";
      } else {
        throw CorruptDataError("unknown registry manifest field: " + key);
      }
    } catch (const std::invalid_argument&) {
      throw CorruptDataError("bad value for " + key + ": " + value);
    }
  }

  for (auto& [id, spec] : updated) {
    std::filesystem::path wpath = spec.weights_path;
    reg.update_spec(spec);
    if (!wpath.empty()) reg.load_weights(id, wpath);
  }
}

void save_extractor_net(const nn::Sequential& net,
                        const std::filesystem::path& path) {
  store::Archive a;
  net.save_into(a, "net.");
  a.save(path);
}

}  // namespace s2p::ext
