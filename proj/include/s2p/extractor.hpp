#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "s2p/autodiff.hpp"
#include "s2p/image.hpp"
#include "s2p/nn.hpp"
#include "s2p/tensor.hpp"

namespace s2p::ext {

struct ExtractorSpec {
  std::string extractor_id;
  int input_resolution = 0;
  std::array<double, 3> mean{0.0, 0.0, 0.0};    // on unit-range pixels
  std::array<double, 3> scale{1.0, 1.0, 1.0};   // x_norm = (x - mean) / scale
  int feature_dim = 0;
  bool differentiable = true;
  bool l2_normalize = false;
  std::filesystem::path weights_path;  // empty for in-memory nets
};

struct FeatureVector {
  Tensor values;  // [d]
  std::string extractor_id;
};

// Euclidean distance; ids must match.
double feature_distance(const FeatureVector& a, const FeatureVector& b);

// Immutable set of extractors once setup finishes. Weight loading happens
// during setup; extraction never mutates, so concurrent extract calls are
// safe.
class Registry {
 public:
  void register_extractor(ExtractorSpec spec);
  void register_extractor(ExtractorSpec spec, nn::Sequential net);
  void update_spec(ExtractorSpec spec);  // id must exist; keeps loaded weights
  void load_weights(const std::string& id, const std::filesystem::path& path);

  bool has(const std::string& id) const;
  const ExtractorSpec& spec(const std::string& id) const;
  std::vector<ExtractorSpec> list() const;
  bool weights_loaded(const std::string& id) const;

  // Conforms `img` to the spec: unit range, replicated to 3 channels,
  // bilinear-resized to the spec resolution, normalization applied. Inputs
  // already carrying the normalized tag at the target geometry pass through
  // unchanged.
  img::ImageTensor preprocess(const img::ImageTensor& img,
                              const ExtractorSpec& spec) const;

  FeatureVector extract(const img::ImageTensor& img,
                        const std::string& id) const;

  // Graph-level counterparts used by the inversion objective. `chw` is
  // [1, C, H, W]; `tag` declares its pixel convention.
  ad::NodePtr preprocess_node(const ad::NodePtr& chw, img::RangeTag tag,
                              const ExtractorSpec& spec) const;
  ad::NodePtr extract_node(const ad::NodePtr& preprocessed,
                           const std::string& id) const;

 private:
  struct Entry {
    ExtractorSpec spec;
    std::shared_ptr<nn::Sequential> net;  // absent until weights load
  };
  const Entry& entry(const std::string& id) const;
  std::map<std::string, Entry> entries_;
};

// toy / toy2 / toy3 nets (seeds 4321, 4322, 4323): 32px input, d = 64.
nn::Sequential make_toy_extractor_net(std::uint64_t seed);
ExtractorSpec toy_extractor_spec(const std::string& id);

// vggface, vggface2, vgg16 (weights supplied by the user) plus the toy
// extractors with their fixed-seed weights.
Registry default_registry();

// Applies a registry manifest: lines `<id>.weights=<path>` attach weight
// files; `<id>.resolution/mean/scale/dim/normalize` declare or adjust specs.
void apply_registry_manifest(Registry& reg, const std::filesystem::path& path);

// Extractor weight files are archives holding a Sequential under "net.".
void save_extractor_net(const nn::Sequential& net,
                        const std::filesystem::path& path);

}  // namespace s2p::ext
