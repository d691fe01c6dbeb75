#include "s2p/inversion.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "s2p/error.hpp"
#include "s2p/nn.hpp"
#include "s2p/store.hpp"

namespace s2p::inv {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void check_terms(const std::vector<LossTermSpec>& terms,
                 const LossContext& ctx) {
  if (terms.empty()) throw PreconditionError("objective needs at least one term");
  if (ctx.generator == nullptr || ctx.registry == nullptr)
    throw PreconditionError("loss context is missing generator or registry");
  for (const LossTermSpec& t : terms) {
    if (!std::isfinite(t.weight) || t.weight < 0.0)
      throw PreconditionError("term weight must be finite and >= 0: " +
                              t.label());
    if (t.kind == LossTermSpec::Kind::appearance) {
      if (!ctx.registry->has(t.extractor_id))
        throw PreconditionError("appearance term references unknown extractor " +
                                t.extractor_id);
      if (!ctx.registry->spec(t.extractor_id).differentiable)
        throw PreconditionError("extractor " + t.extractor_id +
                                " is not differentiable");
    } else if (ctx.hogfd == nullptr) {
      throw PreconditionError("manifold term needs a faceness model");
    } else if (!ctx.hogfd->max_score_set) {
      throw PreconditionError("faceness model has no max_score");
    }
  }
}

// Per-term graph builders with the sketch features frozen once per run.
struct ObjectiveBuilder {
  const LossContext* ctx;
  const std::vector<LossTermSpec>* terms;
  std::vector<ad::NodePtr> sketch_feats;  // appearance terms; null for manifold

  ObjectiveBuilder(const LossContext& c, const std::vector<LossTermSpec>& ts,
                   const img::ImageTensor& sketch)
      : ctx(&c), terms(&ts) {
    check_terms(ts, c);
    for (const LossTermSpec& t : ts) {
      if (t.kind == LossTermSpec::Kind::appearance) {
        ext::FeatureVector f = c.registry->extract(sketch, t.extractor_id);
        sketch_feats.push_back(ad::constant(f.values));
      } else {
        sketch_feats.push_back(nullptr);
      }
    }
  }

  struct Graph {
    ad::NodePtr total;
    std::vector<ad::NodePtr> parts;  // weighted per-term scalars
    ad::NodePtr syn;
  };

  // w_node is [18, width].
  Graph build(const ad::NodePtr& w_node) const {
    ad::NodePtr syn = ctx->generator->synthesize_node(w_node);
    std::vector<ad::NodePtr> parts;
    parts.reserve(terms->size());
    for (std::size_t i = 0; i < terms->size(); ++i) {
      const LossTermSpec& t = (*terms)[i];
      ad::NodePtr term;
      if (t.kind == LossTermSpec::Kind::appearance) {
        const ext::ExtractorSpec& spec = ctx->registry->spec(t.extractor_id);
        ad::NodePtr pre =
            ctx->registry->preprocess_node(syn, img::RangeTag::signed_unit, spec);
        ad::NodePtr feat = ctx->registry->extract_node(pre, t.extractor_id);
        term = ad::l2_norm(ad::sub(feat, sketch_feats[i]));
      } else {
        term = mani::manifold_loss_node(*ctx->hogfd, syn,
                                        img::RangeTag::signed_unit);
      }
      if (t.weight != 1.0) term = ad::mul_scalar(term, t.weight);
      parts.push_back(term);
    }
    ad::NodePtr total = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i)
      total = ad::add(total, parts[i]);
    return {total, parts, syn};
  }
};

img::ImageTensor node_image(const ad::NodePtr& syn, int resolution) {
  Tensor chw = syn->value.reshaped({3, resolution, resolution});
  return img::from_chw(chw, img::RangeTag::signed_unit);
}

}  // namespace

std::string LossTermSpec::label() const {
  if (kind == Kind::manifold) return "manifold";
  return "app:" + extractor_id;
}

LossTermSpec parse_term(const std::string& text) {
  std::vector<std::string> parts;
  std::istringstream is(text);
  std::string tok;
  while (std::getline(is, tok, ':')) parts.push_back(tok);
  if (parts.empty()) throw PreconditionError("empty loss term");
  auto parse_weight = [&text](const std::string& s) {
    try {
      return std::stod(s);
    } catch (const std::logic_error&) {
      throw PreconditionError("malformed loss term weight: " + text);
    }
  };
  LossTermSpec t;
  if (parts[0] == "appearance" || parts[0] == "app") {
    if (parts.size() < 2 || parts[1].empty())
      throw PreconditionError("appearance term needs an extractor id: " + text);
    t.kind = LossTermSpec::Kind::appearance;
    t.extractor_id = parts[1];
    if (parts.size() > 2) t.weight = parse_weight(parts[2]);
    if (parts.size() > 3) throw PreconditionError("malformed loss term: " + text);
  } else if (parts[0] == "manifold") {
    t.kind = LossTermSpec::Kind::manifold;
    if (parts.size() == 3 && parts[1].empty()) {
      t.weight = parse_weight(parts[2]);
    } else if (parts.size() == 2) {
      t.weight = parse_weight(parts[1]);
    } else if (parts.size() > 2) {
      throw PreconditionError("malformed loss term: " + text);
    }
  } else {
    throw PreconditionError("unknown loss term kind: " + parts[0]);
  }
  if (!std::isfinite(t.weight) || t.weight < 0.0)
    throw PreconditionError("term weight must be finite and >= 0: " + text);
  return t;
}

std::string format_term(const LossTermSpec& t) {
  std::string s = t.kind == LossTermSpec::Kind::appearance
                      ? "appearance:" + t.extractor_id
                      : "manifold:";
  return s + ":" + fmt_double(t.weight);
}

std::string row_mode_name(RowMode m) {
  return m == RowMode::joint_18 ? "joint_18" : "shared_1";
}

RowMode row_mode_from_name(const std::string& s) {
  if (s == "joint_18") return RowMode::joint_18;
  if (s == "shared_1") return RowMode::shared_1;
  throw PreconditionError("unknown row mode: " + s);
}

std::string optim_rule_name(OptimRule r) {
  return r == OptimRule::adam ? "adam" : "gd";
}

OptimRule optim_rule_from_name(const std::string& s) {
  if (s == "adam") return OptimRule::adam;
  if (s == "gd") return OptimRule::gd;
  throw PreconditionError("unknown optimizer rule: " + s);
}

std::string stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::max_iter: return "max_iter";
    case StopReason::plateau: return "plateau";
    default: return "divergence";
  }
}

std::vector<LossTermSpec> default_terms() {
  return {{LossTermSpec::Kind::appearance, "vggface", 1.0},
          {LossTermSpec::Kind::appearance, "vggface2", 1.0},
          {LossTermSpec::Kind::appearance, "vgg16", 1.0},
          {LossTermSpec::Kind::manifold, "", 1.0}};
}

std::vector<LossTermSpec> toy_terms() {
  return {{LossTermSpec::Kind::appearance, "toy", 1.0},
          {LossTermSpec::Kind::appearance, "toy2", 1.0},
          {LossTermSpec::Kind::appearance, "toy3", 1.0},
          {LossTermSpec::Kind::manifold, "", 1.0}};
}

double appearance_loss(const img::ImageTensor& syn,
                       const img::ImageTensor& sketch,
                       const ext::ExtractorSpec& spec,
                       const ext::Registry& reg) {
  ext::FeatureVector a = reg.extract(syn, spec.extractor_id);
  ext::FeatureVector b = reg.extract(sketch, spec.extractor_id);
  return ext::feature_distance(a, b);
}

LossBreakdown total_loss(const Tensor& w, const LossContext& ctx,
                         const std::vector<LossTermSpec>& terms,
                         const img::ImageTensor& sketch) {
  check_terms(terms, ctx);
  ctx.generator->validate_latent(w);
  ObjectiveBuilder builder(ctx, terms, sketch);
  ObjectiveBuilder::Graph g = builder.build(ad::constant(w));
  LossBreakdown out;
  out.total = g.total->value[0];
  out.terms.reserve(g.parts.size());
  for (const ad::NodePtr& p : g.parts) out.terms.push_back(p->value[0]);
  return out;
}

InversionRun optimize(const Tensor& w0, const LossContext& ctx,
                      const img::ImageTensor& sketch,
                      const InversionConfig& cfg) {
  auto t_begin = std::chrono::steady_clock::now();
  if (cfg.max_iterations < 1)
    throw PreconditionError("max_iterations must be >= 1");
  if (!(cfg.step_size > 0.0) || !std::isfinite(cfg.step_size))
    throw PreconditionError("step_size must be positive");
  if (cfg.plateau_patience < 1)
    throw PreconditionError("plateau_patience must be >= 1");
  check_terms(cfg.terms, ctx);
  ctx.generator->validate_latent(w0);
  if (!w0.all_finite()) throw PreconditionError("initial latent is non-finite");

  ObjectiveBuilder builder(ctx, cfg.terms, sketch);
  int rows = ctx.generator->latent_rows;
  int width = ctx.generator->latent_width;

  // joint mode frees every row; shared mode optimizes one row (seeded with
  // the row mean) that is broadcast back to the full code
  Tensor opt0;
  if (cfg.optimize_rows == RowMode::joint_18) {
    opt0 = w0;
  } else {
    opt0 = Tensor::zeros({width});
    double* d = opt0.mutable_data();
    const double* s = w0.data();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < width; ++c) d[c] += s[static_cast<std::size_t>(r) * width + c];
    for (int c = 0; c < width; ++c) d[c] /= rows;
  }
  ad::NodePtr leaf = ad::leaf(opt0);

  nn::Adam adam({leaf}, cfg.step_size);
  nn::Sgd sgd({leaf}, cfg.step_size);

  InversionRun run;
  run.initial_w = w0;
  run.config = cfg;
  for (const LossTermSpec& t : cfg.terms) run.term_labels.push_back(t.label());

  auto full_code = [&](const ad::NodePtr& l) {
    return cfg.optimize_rows == RowMode::joint_18 ? l
                                                  : ad::broadcast_rows(l, rows);
  };
  auto expand = [&](const Tensor& v) {
    if (cfg.optimize_rows == RowMode::joint_18) return v;
    Tensor full({rows, width});
    double* d = full.mutable_data();
    for (int r = 0; r < rows; ++r)
      std::copy(v.data(), v.data() + width, d + static_cast<std::size_t>(r) * width);
    return full;
  };

  Tensor last_good = leaf->value;
  run.stop = StopReason::max_iter;
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    if (cfg.rule == OptimRule::adam) adam.zero_grad();
    else sgd.zero_grad();

    ad::NodePtr w_node = full_code(leaf);
    ObjectiveBuilder::Graph graph = builder.build(w_node);

    double lv = graph.total->value[0];
    run.total_losses.push_back(lv);
    std::vector<double> row;
    row.reserve(graph.parts.size());
    for (const ad::NodePtr& p : graph.parts) row.push_back(p->value[0]);
    run.term_losses.push_back(std::move(row));

    if (cfg.snapshot_every > 0 && iter % cfg.snapshot_every == 0 &&
        graph.syn->value.all_finite()) {
      run.snapshots.emplace_back(
          iter, node_image(graph.syn, ctx.generator->resolution));
    }

    if (!std::isfinite(lv)) {
      run.stop = StopReason::divergence;
      break;
    }
    last_good = leaf->value;

    // plateau: relative improvement over the last `patience` iterations
    if (iter >= cfg.plateau_patience) {
      double ref = run.total_losses[static_cast<std::size_t>(
          iter - cfg.plateau_patience)];
      double rel = (ref - lv) / std::max(std::abs(ref), 1e-300);
      if (rel < cfg.plateau_tolerance) {
        run.stop = StopReason::plateau;
        break;
      }
    }

    ad::backward(graph.total);
    if (!leaf->grad.empty() && !leaf->grad.all_finite()) {
      run.stop = StopReason::divergence;
      break;
    }
    if (cfg.rule == OptimRule::adam) adam.step();
    else sgd.step();

    if (!leaf->value.all_finite()) {
      run.stop = StopReason::divergence;
      break;
    }
  }

  run.final_w = expand(leaf->value.all_finite() ? leaf->value : last_good);
  auto t_end = std::chrono::steady_clock::now();
  run.wall_seconds =
      std::chrono::duration<double>(t_end - t_begin).count();
  return run;
}

std::pair<img::ImageTensor, InversionRun> invert_sketch(
    const img::ImageTensor& sketch, const Bundle& bundle,
    const InversionConfig& cfg) {
  if (bundle.generator == nullptr || bundle.registry == nullptr ||
      bundle.mapper == nullptr)
    throw PreconditionError("bundle is missing generator, registry, or mapper");
  const gen::Generator& g = *bundle.generator;
  const f2w::MapperModel& mapper = *bundle.mapper;
  if (mapper.latent_rows != g.latent_rows ||
      mapper.latent_width != g.latent_width)
    throw PreconditionError("mapper latent geometry does not match generator");
  if (!mapper.generator_checkpoint_id.empty() &&
      mapper.generator_checkpoint_id != g.checkpoint_id)
    throw PreconditionError("mapper was trained against checkpoint " +
                            mapper.generator_checkpoint_id + ", generator is " +
                            g.checkpoint_id);
  if (!bundle.registry->has(mapper.extractor_id))
    throw PreconditionError("mapper extractor " + mapper.extractor_id +
                            " is not registered");

  ext::FeatureVector f = bundle.registry->extract(sketch, mapper.extractor_id);
  Tensor w0 = f2w::map_features(mapper, f);

  LossContext ctx{bundle.generator, bundle.registry, bundle.hogfd};
  InversionRun run = optimize(w0, ctx, sketch, cfg);
  img::ImageTensor final_image = g.synthesize(run.final_w);
  return {std::move(final_image), std::move(run)};
}

void export_run(const InversionRun& run, const img::ImageTensor& final_image,
                const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  store::Manifest cfg;
  cfg["step_size"] = fmt_double(run.config.step_size);
  cfg["max_iterations"] = std::to_string(run.config.max_iterations);
  cfg["plateau_patience"] = std::to_string(run.config.plateau_patience);
  cfg["plateau_tolerance"] = fmt_double(run.config.plateau_tolerance);
  cfg["optimize_rows"] = row_mode_name(run.config.optimize_rows);
  cfg["rule"] = optim_rule_name(run.config.rule);
  cfg["seed"] = std::to_string(run.config.seed);
  cfg["snapshot_every"] = std::to_string(run.config.snapshot_every);
  for (std::size_t i = 0; i < run.config.terms.size(); ++i)
    cfg["term." + std::to_string(i)] = format_term(run.config.terms[i]);
  cfg["stop_reason"] = stop_reason_name(run.stop);
  cfg["iterations"] = std::to_string(run.iterations());
  store::write_manifest(dir / "config.manifest", cfg);

  std::ostringstream csv;
  csv << "iteration,total";
  for (const std::string& label : run.term_labels) csv << ',' << label;
  csv << '\n';
  for (int i = 0; i < run.iterations(); ++i) {
    csv << i << ',' << fmt_double(run.total_losses[static_cast<std::size_t>(i)]);
    for (double v : run.term_losses[static_cast<std::size_t>(i)])
      csv << ',' << fmt_double(v);
    csv << '\n';
  }
  std::ofstream out(dir / "losses.csv", std::ios::binary);
  out << csv.str();
  if (!out) throw IoError("cannot write loss table: " + dir.string());
  out.close();

  char name[40];
  for (const auto& [iter, image] : run.snapshots) {
    std::snprintf(name, sizeof(name), "snap_%06d.png", iter);
    img::write_png(dir / name, image);
  }
  img::write_png(dir / "final.png", final_image);

  nlohmann::json summary;
  summary["stop_reason"] = stop_reason_name(run.stop);
  summary["iterations"] = run.iterations();
  summary["wall_seconds"] = run.wall_seconds;
  if (run.iterations() > 0) {
    summary["final_total"] = run.total_losses.back();
    nlohmann::json terms_obj;
    for (std::size_t i = 0; i < run.term_labels.size(); ++i)
      terms_obj[run.term_labels[i]] = run.term_losses.back()[i];
    summary["final_terms"] = terms_obj;
  }
  std::ofstream js(dir / "summary.json", std::ios::binary);
  js << summary.dump(2) << '\n';
  if (!js) throw IoError("cannot write run summary: " + dir.string());
}

}  // namespace s2p::inv
