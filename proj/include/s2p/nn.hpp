#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "s2p/autodiff.hpp"
#include "s2p/rng.hpp"
#include "s2p/store.hpp"
#include "s2p/tensor.hpp"

namespace s2p::nn {

Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0);

struct ParamRef {
  std::string name;
  ad::NodePtr node;
};

struct StateRef {
  std::string name;
  Tensor* value;
};

// One stage of a feed-forward stack. Parameters live on leaf nodes owned by
// the layer, so graphs from successive forward passes share them.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual ad::NodePtr forward(const ad::NodePtr& x, bool training, Rng* rng) = 0;
  virtual nlohmann::json arch() const = 0;
  virtual void params(const std::string& prefix, std::vector<ParamRef>& out) {}
  virtual void state(const std::string& prefix, std::vector<StateRef>& out) {}
  virtual void set_bn_momentum(double) {}  // batchnorm layers only
};

// Builds a layer from its arch description; fresh weights come from `rng`.
std::unique_ptr<Layer> make_layer(const nlohmann::json& arch, Rng& rng);

class Dense : public Layer {
 public:
  Dense(int in, int out, Rng& rng);
  ad::NodePtr forward(const ad::NodePtr& x, bool training, Rng* rng) override;
  nlohmann::json arch() const override;
  void params(const std::string& prefix, std::vector<ParamRef>& out) override;

  ad::NodePtr w, b;

 private:
  int in_, out_;
};

class Conv2d : public Layer {
 public:
  Conv2d(int in_ch, int out_ch, int ksize, int pad, Rng& rng);
  ad::NodePtr forward(const ad::NodePtr& x, bool training, Rng* rng) override;
  nlohmann::json arch() const override;
  void params(const std::string& prefix, std::vector<ParamRef>& out) override;

  ad::NodePtr kernel, bias;

 private:
  int in_ch_, out_ch_, ksize_, pad_;
};

class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(int channels);
  ad::NodePtr forward(const ad::NodePtr& x, bool training, Rng* rng) override;
  nlohmann::json arch() const override;
  void params(const std::string& prefix, std::vector<ParamRef>& out) override;
  void state(const std::string& prefix, std::vector<StateRef>& out) override;
  void set_bn_momentum(double m) override { momentum = m; }

  ad::NodePtr gamma, beta;
  Tensor running_mean, running_var;
  double momentum = 0.1;

 private:
  int channels_;
};

class BatchNorm1d : public Layer {
 public:
  explicit BatchNorm1d(int features);
  ad::NodePtr forward(const ad::NodePtr& x, bool training, Rng* rng) override;
  nlohmann::json arch() const override;
  void params(const std::string& prefix, std::vector<ParamRef>& out) override;
  void state(const std::string& prefix, std::vector<StateRef>& out) override;
  void set_bn_momentum(double m) override { momentum = m; }

  ad::NodePtr gamma, beta;
  Tensor running_mean, running_var;
  double momentum = 0.1;

 private:
  int features_;
};

class Activation : public Layer {
 public:
  // fn: "tanh", "relu", or "lrelu"
  explicit Activation(std::string fn, double slope = 0.2);
  ad::NodePtr forward(const ad::NodePtr& x, bool training, Rng* rng) override;
  nlohmann::json arch() const override;

 private:
  std::string fn_;
  double slope_;
};

class MaxPool2 : public Layer {
 public:
  ad::NodePtr forward(const ad::NodePtr& x, bool training, Rng* rng) override;
  nlohmann::json arch() const override;
};

class Flatten : public Layer {
 public:
  ad::NodePtr forward(const ad::NodePtr& x, bool training, Rng* rng) override;
  nlohmann::json arch() const override;
};

class Dropout : public Layer {
 public:
  explicit Dropout(double p);
  ad::NodePtr forward(const ad::NodePtr& x, bool training, Rng* rng) override;
  nlohmann::json arch() const override;

 private:
  double p_;
};

class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  void add(std::unique_ptr<Layer> layer);
  std::size_t size() const { return layers_.size(); }

  ad::NodePtr forward(const ad::NodePtr& x, bool training = false,
                      Rng* rng = nullptr) const;
  Tensor run(const Tensor& x) const;  // inference, no gradient graph kept

  std::vector<ParamRef> params() const;
  std::vector<StateRef> state() const;
  nlohmann::json arch() const;

  void save_into(store::Archive& a, const std::string& prefix) const;
  static Sequential load_from(const store::Archive& a, const std::string& prefix);
  static Sequential from_arch(const nlohmann::json& arch, Rng& rng);

  void set_bn_momentum(double m);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

class Adam {
 public:
  explicit Adam(std::vector<ad::NodePtr> params, double lr,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void zero_grad();
  void step();
  double lr;

 private:
  struct Slot {
    ad::NodePtr p;
    Tensor m, v;
  };
  std::vector<Slot> slots_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

class Sgd {
 public:
  explicit Sgd(std::vector<ad::NodePtr> params, double lr);
  void zero_grad();
  void step();
  double lr;

 private:
  std::vector<ad::NodePtr> params_;
};

std::vector<ad::NodePtr> param_nodes(const std::vector<ParamRef>& refs);

}  // namespace s2p::nn
