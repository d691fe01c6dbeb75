#include "s2p/nn.hpp"

#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "s2p/error.hpp"

namespace s2p::nn {

using nlohmann::json;

Tensor randn(std::vector<int> shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  double* d = t.mutable_data();
  for (std::size_t i = 0; i < t.numel(); ++i) d[i] = rng.normal() * stddev;
  return t;
}

// --- Dense ---

Dense::Dense(int in, int out, Rng& rng) : in_(in), out_(out) {
  w = ad::leaf(randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in))));
  b = ad::leaf(Tensor::zeros({out}));
}

ad::NodePtr Dense::forward(const ad::NodePtr& x, bool, Rng*) {
  return ad::add_rowvec(ad::matmul(x, w), b);
}

json Dense::arch() const {
  return json{{"kind", "dense"}, {"in", in_}, {"out", out_}};
}

void Dense::params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".w", w});
  out.push_back({prefix + ".b", b});
}

// --- Conv2d ---

Conv2d::Conv2d(int in_ch, int out_ch, int ksize, int pad, Rng& rng)
    : in_ch_(in_ch), out_ch_(out_ch), ksize_(ksize), pad_(pad) {
  double fan_in = static_cast<double>(in_ch) * ksize * ksize;
  kernel = ad::leaf(
      randn({out_ch, in_ch, ksize, ksize}, rng, 1.0 / std::sqrt(fan_in)));
  bias = ad::leaf(Tensor::zeros({out_ch}));
}

ad::NodePtr Conv2d::forward(const ad::NodePtr& x, bool, Rng*) {
  return ad::conv2d(x, kernel, bias, pad_);
}

json Conv2d::arch() const {
  return json{{"kind", "conv2d"},
              {"in", in_ch_},
              {"out", out_ch_},
              {"ksize", ksize_},
              {"pad", pad_}};
}

void Conv2d::params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".kernel", kernel});
  out.push_back({prefix + ".bias", bias});
}

// --- BatchNorm ---

BatchNorm2d::BatchNorm2d(int channels) : channels_(channels) {
  gamma = ad::leaf(Tensor::full({channels}, 1.0));
  beta = ad::leaf(Tensor::zeros({channels}));
  running_mean = Tensor::zeros({channels});
  running_var = Tensor::full({channels}, 1.0);
}

ad::NodePtr BatchNorm2d::forward(const ad::NodePtr& x, bool training, Rng*) {
  if (training)
    return ad::batchnorm2d_train(x, gamma, beta, running_mean, running_var,
                                 momentum, 1e-5);
  return ad::batchnorm2d_infer(x, gamma, beta, running_mean, running_var, 1e-5);
}

json BatchNorm2d::arch() const {
  return json{{"kind", "bn2d"}, {"channels", channels_}};
}

void BatchNorm2d::params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BatchNorm2d::state(const std::string& prefix, std::vector<StateRef>& out) {
  out.push_back({prefix + ".rmean", &running_mean});
  out.push_back({prefix + ".rvar", &running_var});
}

BatchNorm1d::BatchNorm1d(int features) : features_(features) {
  gamma = ad::leaf(Tensor::full({features}, 1.0));
  beta = ad::leaf(Tensor::zeros({features}));
  running_mean = Tensor::zeros({features});
  running_var = Tensor::full({features}, 1.0);
}

ad::NodePtr BatchNorm1d::forward(const ad::NodePtr& x, bool training, Rng*) {
  if (training)
    return ad::batchnorm1d_train(x, gamma, beta, running_mean, running_var,
                                 momentum, 1e-5);
  return ad::batchnorm1d_infer(x, gamma, beta, running_mean, running_var, 1e-5);
}

json BatchNorm1d::arch() const {
  return json{{"kind", "bn1d"}, {"features", features_}};
}

void BatchNorm1d::params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BatchNorm1d::state(const std::string& prefix, std::vector<StateRef>& out) {
  out.push_back({prefix + ".rmean", &running_mean});
  out.push_back({prefix + ".rvar", &running_var});
}

// --- stateless layers ---

Activation::Activation(std::string fn, double slope)
    : fn_(std::move(fn)), slope_(slope) {
  if (fn_ != "tanh" && fn_ != "relu" && fn_ != "lrelu")
    throw PreconditionError("unknown activation: " + fn_);
}

ad::NodePtr Activation::forward(const ad::NodePtr& x, bool, Rng*) {
  if (fn_ == "tanh") return ad::tanh_op(x);
  if (fn_ == "relu") return ad::relu(x);
  return ad::leaky_relu(x, slope_);
}

json Activation::arch() const {
  json j{{"kind", "act"}, {"fn", fn_}};
  if (fn_ == "lrelu") j["slope"] = slope_;
  return j;
}

ad::NodePtr MaxPool2::forward(const ad::NodePtr& x, bool, Rng*) {
  return ad::maxpool2(x);
}

json MaxPool2::arch() const { return json{{"kind", "maxpool2"}}; }

ad::NodePtr Flatten::forward(const ad::NodePtr& x, bool, Rng*) {
  int n = x->value.dim(0);
  int rest = static_cast<int>(x->value.numel()) / n;
  return ad::reshape(x, {n, rest});
}

json Flatten::arch() const { return json{{"kind", "flatten"}}; }

Dropout::Dropout(double p) : p_(p) {
  if (p < 0.0 || p >= 1.0) throw PreconditionError("dropout p must be in [0,1)");
}

ad::NodePtr Dropout::forward(const ad::NodePtr& x, bool training, Rng* rng) {
  if (!training || p_ == 0.0) return x;
  if (!rng) throw PreconditionError("dropout in training mode needs an rng");
  return ad::dropout(x, p_, *rng);
}

json Dropout::arch() const { return json{{"kind", "dropout"}, {"p", p_}}; }

// --- factory ---

std::unique_ptr<Layer> make_layer(const json& arch, Rng& rng) {
  const std::string kind = arch.at("kind").get<std::string>();
  if (kind == "dense")
    return std::make_unique<Dense>(arch.at("in").get<int>(),
                                   arch.at("out").get<int>(), rng);
  if (kind == "conv2d")
    return std::make_unique<Conv2d>(arch.at("in").get<int>(),
                                    arch.at("out").get<int>(),
                                    arch.at("ksize").get<int>(),
                                    arch.at("pad").get<int>(), rng);
  if (kind == "bn2d")
    return std::make_unique<BatchNorm2d>(arch.at("channels").get<int>());
  if (kind == "bn1d")
    return std::make_unique<BatchNorm1d>(arch.at("features").get<int>());
  if (kind == "act")
    return std::make_unique<Activation>(arch.at("fn").get<std::string>(),
                                        arch.value("slope", 0.2));
  if (kind == "maxpool2") return std::make_unique<MaxPool2>();
  if (kind == "flatten") return std::make_unique<Flatten>();
  if (kind == "dropout")
    return std::make_unique<Dropout>(arch.at("p").get<double>());
  throw CorruptDataError("unknown layer kind: " + kind);
}

// --- Sequential ---

void Sequential::add(std::unique_ptr<Layer> layer) {
  layers_.push_back(std::move(layer));
}

ad::NodePtr Sequential::forward(const ad::NodePtr& x, bool training,
                                Rng* rng) const {
  ad::NodePtr h = x;
  for (const auto& layer : layers_) h = layer->forward(h, training, rng);
  return h;
}

Tensor Sequential::run(const Tensor& x) const {
  return forward(ad::constant(x))->value;
}

std::vector<ParamRef> Sequential::params() const {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->params(std::to_string(i), out);
  return out;
}

std::vector<StateRef> Sequential::state() const {
  std::vector<StateRef> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->state(std::to_string(i), out);
  return out;
}

json Sequential::arch() const {
  json j = json::array();
  for (const auto& layer : layers_) j.push_back(layer->arch());
  return j;
}

void Sequential::save_into(store::Archive& a, const std::string& prefix) const {
  a.put_text(prefix + "arch", arch().dump());
  for (const auto& p : params()) a.put_tensor(prefix + "p." + p.name, p.node->value);
  for (const auto& s : state()) a.put_tensor(prefix + "s." + s.name, *s.value);
}

Sequential Sequential::from_arch(const json& arch, Rng& rng) {
  if (!arch.is_array()) throw CorruptDataError("model arch must be an array");
  Sequential seq;
  for (const auto& layer : arch) seq.add(make_layer(layer, rng));
  return seq;
}

void Sequential::set_bn_momentum(double m) {
  for (auto& layer : layers_) layer->set_bn_momentum(m);
}

Sequential Sequential::load_from(const store::Archive& a,
                                 const std::string& prefix) {
  json arch;
  try {
    arch = json::parse(a.text(prefix + "arch"));
  } catch (const json::parse_error& e) {
    throw CorruptDataError(std::string("bad model arch: ") + e.what());
  }
  Rng scratch(0);
  Sequential seq = from_arch(arch, scratch);
  for (const auto& p : seq.params()) {
    const Tensor& t = a.tensor(prefix + "p." + p.name);
    if (!t.same_shape(p.node->value))
      throw CorruptDataError("tensor shape mismatch for " + p.name);
    p.node->value = t;
  }
  for (const auto& s : seq.state()) {
    const Tensor& t = a.tensor(prefix + "s." + s.name);
    if (!t.same_shape(*s.value))
      throw CorruptDataError("tensor shape mismatch for " + s.name);
    *s.value = t;
  }
  return seq;
}

// --- optimizers ---

std::vector<ad::NodePtr> param_nodes(const std::vector<ParamRef>& refs) {
  std::vector<ad::NodePtr> out;
  out.reserve(refs.size());
  for (const auto& r : refs) out.push_back(r.node);
  return out;
}

Adam::Adam(std::vector<ad::NodePtr> params, double lr_, double beta1,
           double beta2, double eps)
    : lr(lr_), beta1_(beta1), beta2_(beta2), eps_(eps) {
  slots_.reserve(params.size());
  for (auto& p : params)
    slots_.push_back({p, Tensor::zeros(p->value.shape()),
                      Tensor::zeros(p->value.shape())});
}

void Adam::zero_grad() {
  for (auto& s : slots_) s.p->grad = Tensor();
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& s : slots_) {
    if (s.p->grad.empty()) continue;
    const double* g = s.p->grad.data();
    double* m = s.m.mutable_data();
    double* v = s.v.mutable_data();
    double* w = s.p->value.mutable_data();
    for (std::size_t i = 0; i < s.p->value.numel(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

Sgd::Sgd(std::vector<ad::NodePtr> params, double lr_)
    : lr(lr_), params_(std::move(params)) {}

void Sgd::zero_grad() {
  for (auto& p : params_) p->grad = Tensor();
}

void Sgd::step() {
  for (auto& p : params_) {
    if (p->grad.empty()) continue;
    const double* g = p->grad.data();
    double* w = p->value.mutable_data();
    for (std::size_t i = 0; i < p->value.numel(); ++i) w[i] -= lr * g[i];
  }
}

}  // namespace s2p::nn
