#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "s2p/extractor.hpp"
#include "s2p/f2w.hpp"
#include "s2p/generator.hpp"
#include "s2p/image.hpp"
#include "s2p/manifold.hpp"
#include "s2p/tensor.hpp"

namespace s2p::inv {

struct LossTermSpec {
  enum class Kind { appearance, manifold };
  Kind kind = Kind::appearance;
  std::string extractor_id;  // appearance terms only
  double weight = 1.0;

  std::string label() const;
};

// "kind:extractor:weight" / "manifold[:weight]" used by config files.
LossTermSpec parse_term(const std::string& text);
std::string format_term(const LossTermSpec& t);

enum class RowMode { joint_18, shared_1 };
enum class OptimRule { adam, gd };
enum class StopReason { max_iter, plateau, divergence };

std::string row_mode_name(RowMode m);
RowMode row_mode_from_name(const std::string& s);
std::string optim_rule_name(OptimRule r);
OptimRule optim_rule_from_name(const std::string& s);
std::string stop_reason_name(StopReason r);

struct InversionConfig {
  std::vector<LossTermSpec> terms;
  double step_size = 0.01;
  int max_iterations = 1000;
  int plateau_patience = 50;
  double plateau_tolerance = 1e-4;
  RowMode optimize_rows = RowMode::joint_18;
  OptimRule rule = OptimRule::adam;
  std::uint64_t seed = 0;
  int snapshot_every = 50;  // 0 disables snapshots
};

// The paper-default objective: three appearance terms plus the manifold term,
// all weight 1.
std::vector<LossTermSpec> default_terms();
std::vector<LossTermSpec> toy_terms();

struct InversionRun {
  Tensor initial_w;
  Tensor final_w;
  std::vector<std::string> term_labels;
  std::vector<double> total_losses;               // one entry per iteration
  std::vector<std::vector<double>> term_losses;   // weighted contributions
  std::vector<std::pair<int, img::ImageTensor>> snapshots;
  StopReason stop = StopReason::max_iter;
  InversionConfig config;
  double wall_seconds = 0.0;

  int iterations() const { return static_cast<int>(total_losses.size()); }
};

// Read-only models an optimization run closes over.
struct LossContext {
  const gen::Generator* generator = nullptr;
  const ext::Registry* registry = nullptr;
  const mani::HogfdModel* hogfd = nullptr;  // needed iff a manifold term exists
};

double appearance_loss(const img::ImageTensor& syn,
                       const img::ImageTensor& sketch,
                       const ext::ExtractorSpec& spec,
                       const ext::Registry& reg);

struct LossBreakdown {
  double total = 0.0;
  std::vector<double> terms;  // weighted, ordered like the spec list
};

LossBreakdown total_loss(const Tensor& w, const LossContext& ctx,
                         const std::vector<LossTermSpec>& terms,
                         const img::ImageTensor& sketch);

InversionRun optimize(const Tensor& w0, const LossContext& ctx,
                      const img::ImageTensor& sketch,
                      const InversionConfig& cfg);

struct Bundle {
  const gen::Generator* generator = nullptr;
  const ext::Registry* registry = nullptr;
  const f2w::MapperModel* mapper = nullptr;
  const mani::HogfdModel* hogfd = nullptr;
};

std::pair<img::ImageTensor, InversionRun> invert_sketch(
    const img::ImageTensor& sketch, const Bundle& bundle,
    const InversionConfig& cfg);

// Run directory: config.manifest, losses.csv, snapshot PNGs, final.png,
// summary.json.
void export_run(const InversionRun& run, const img::ImageTensor& final_image,
                const std::filesystem::path& dir);

}  // namespace s2p::inv
