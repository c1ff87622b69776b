// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

// End-to-end workflows behind the command-line tool: data preparation,
// training runs, sampling, evaluation, likelihood reports and conditional
// interpolation.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "edm/checkpoint.hpp"
#include "edm/chem.hpp"
#include "edm/config.hpp"
#include "edm/dataio.hpp"
#include "edm/diffusion.hpp"
#include "edm/distributions.hpp"
#include "edm/train.hpp"

namespace edm {

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedData {
  Dataset train, val, test;  // centered, sharing one vocabulary
  SizeDistribution sizes;
  std::optional<ConditionDistribution> condition;
  ConditionNormalizer normalizer;
  std::string condition_name;

  TrainingData training_view(const Dataset& d) const {
    TrainingData td;
    td.molecules = d.molecules;
    if (!condition_name.empty()) {
      for (double v : d.property_values(condition_name)) td.conditions.push_back(normalizer.normalize(v));
    }
    return td;
  }
};

inline Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.toy_size > 0) {
    Rng rng(cfg.seed ^ 0x70790000ull);
    const auto n = static_cast<std::size_t>(cfg.toy_size);
    return cfg.toy_kind == "conditional" ? make_toy_conditional_dataset(n, rng) : make_toy_rigid_dataset(n, rng);
  }
  return parse_extended_xyz(read_file(cfg.data_path), cfg.vocabulary_list());
}

inline PreparedData prepare_data(const RunConfig& cfg) {
  Dataset all = load_dataset(cfg);
  if (!cfg.vocabulary.empty()) all = all.with_vocabulary(cfg.vocabulary_list());
  if (all.size() == 0) throw ConfigError("data.path: no molecules in the dataset");
  if (cfg.include_charges && !all.has_charges) {
    throw ConfigError("data.include_charges = true but the dataset lacks a charge column");
  }
  all = center_dataset(std::move(all));

  SplitIndices split;
  if (!cfg.split_file.empty()) {
    split = parse_split_file(read_file(cfg.split_file), all.size());
  } else {
    auto f = cfg.split_fractions();
    if (f.size() != 3) throw ConfigError("data.split must hold three comma-separated fractions");
    split = split_by_fractions(all.size(), f[0], f[1], f[2], cfg.seed);
  }
  PreparedData out;
  out.train = all.subset(split.train);
  out.val = all.subset(split.val);
  out.test = all.subset(split.test);
  if (out.train.size() == 0) throw ConfigError("data.split: the training split is empty");
  out.sizes = SizeDistribution::fit(out.train.sizes());

  if (!cfg.condition.empty()) {
    if (!all.has_property(cfg.condition)) {
      throw ConfigError("model.condition: property '" + cfg.condition + "' is missing from the dataset");
    }
    auto values = out.train.property_values(cfg.condition);
    auto sizes = out.train.sizes();
    out.condition_name = cfg.condition;
    out.condition = ConditionDistribution::fit(values, sizes, cfg.condition_bins);
    out.normalizer = ConditionNormalizer::fit(values);
  }
  return out;
}

/// Warns when sigma_0 is not small against the gap between scaled discrete values.
inline std::optional<std::string> decoder_resolution_warning(const NoiseSchedule& schedule, const FeatureLayout& layout) {
  double gap = layout.scaling.onehot_scale;
  if (layout.include_charges) gap = std::min(gap, layout.scaling.charge_scale);
  const double s0 = schedule.sigma(0);
  if (s0 < 0.1 * gap) return std::nullopt;
  std::ostringstream os;
  os << "sigma_0 = " << s0 << " is not below 0.1 x the smallest scaled discrete gap (" << gap
     << "); categorical and charge likelihoods will be blurred";
  return os.str();
}

// ---------------------------------------------------------------------------
// Training

struct TrainRun {
  TrainResult result;
  std::string best_path, last_path, log_path;
  std::vector<std::string> warnings;
};

inline Checkpoint make_checkpoint(const RunConfig& cfg, const PreparedData& data, const Dynamics& dyn,
                                  const Adam& opt, long step, int epoch) {
  Checkpoint c;
  c.config = cfg;
  c.vocabulary = data.train.vocabulary;
  c.params = dyn.params().clone();
  c.moments = io::moment_records(dyn.params(), opt);
  c.adam_steps = opt.step_count();
  c.size_distribution = data.sizes;
  c.condition_distribution = data.condition;
  c.normalizer = data.normalizer;
  c.step = step;
  c.epoch = epoch;
  return c;
}

/// Trains per the config; writes <out_dir>/best.ckpt whenever validation
/// improves, <out_dir>/last.ckpt at the end and <out_dir>/loss.csv.
inline TrainRun run_training(const RunConfig& cfg, std::ostream* progress = nullptr) {
  cfg.validate();
  PreparedData data = prepare_data(cfg);
  Rng rng(cfg.seed);

  Checkpoint shape_only;
  shape_only.config = cfg;
  shape_only.vocabulary = data.train.vocabulary;
  auto dyn = Dynamics::create(shape_only.dynamics_config(), rng);
  const auto schedule = shape_only.schedule();
  const auto layout = shape_only.layout();
  Adam opt({cfg.lr});

  TrainRun run;
  if (auto w = decoder_resolution_warning(schedule, layout)) run.warnings.push_back(*w);
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  run.best_path = (fs::path(cfg.out_dir) / "best.ckpt").string();
  run.last_path = (fs::path(cfg.out_dir) / "last.ckpt").string();
  run.log_path = (fs::path(cfg.out_dir) / "loss.csv").string();

  TrainOptions to;
  to.batch_size = cfg.batch;
  to.epochs = cfg.epochs;
  to.max_steps = cfg.max_steps;
  to.augment_rotations = cfg.augment_rotations;
  to.augment_reflections = cfg.augment_reflections;
  to.weighting = cfg.variational_loss ? LossWeighting::kVariational : LossWeighting::kSimplified;
  to.log_every = cfg.log_every;
  to.val_every = cfg.val_every;
  to.val_molecules = static_cast<std::size_t>(cfg.val_molecules);
  to.val_seed = cfg.seed ^ 0x76616cull;

  Trainer trainer(dyn, opt, schedule, layout, to);
  auto train_view = data.training_view(data.train);
  auto val_view = data.training_view(data.val);
  std::string log_text = loss_log_header() + "\n";
  auto on_log = [&](const LogRow& row) {
    log_text += format_log_row(row) + "\n";
    write_file_atomic(run.log_path, log_text);
    if (progress) *progress << format_log_row(row) << '\n' << std::flush;
  };
  auto on_improve = [&](const TrainResult& r) {
    save_checkpoint(run.best_path, make_checkpoint(cfg, data, dyn, opt, r.steps, r.epochs));
  };
  run.result = trainer.run(train_view, cfg.val_molecules > 0 ? &val_view : nullptr, rng, on_log, on_improve);
  save_checkpoint(run.last_path, make_checkpoint(cfg, data, dyn, opt, run.result.steps, run.result.epochs));
  if (!run.result.best_val) save_checkpoint(run.best_path, make_checkpoint(cfg, data, dyn, opt, run.result.steps, run.result.epochs));
  return run;
}

// ---------------------------------------------------------------------------
// Sampling

struct SampleRequest {
  std::size_t n = 0;
  std::optional<std::string> condition;  // "auto" or a property value
  std::uint64_t seed = 0;
  std::size_t batch = 64;
};

namespace detail {

inline void require_finite(const Molecule& m) {
  for (double v : m.positions.data())
    if (!std::isfinite(v)) throw NumericalError("sampling produced non-finite coordinates");
}

inline double parse_condition_value(const std::string& s) {
  auto v = to_double(s);
  if (!v) throw ConfigError("condition: '" + s + "' is neither 'auto' nor a number");
  return *v;
}

}  // namespace detail

/// Draws n molecules; sizes from p(M), or (c, M) from p(c, M) for
/// conditional checkpoints.
inline Dataset sample_molecules(const Checkpoint& ckpt, const SampleRequest& req) {
  if (req.condition && !ckpt.conditional()) {
    throw ContractError("conditional sampling requested from an unconditional checkpoint");
  }
  if (ckpt.conditional() && !ckpt.condition_distribution) {
    throw ContractError("checkpoint is conditional but carries no p(c, M)");
  }
  if (ckpt.size_distribution.empty()) throw ContractError("checkpoint carries no p(M)");
  Rng rng(req.seed);
  const auto dyn = ckpt.dynamics();
  const auto schedule = ckpt.schedule();
  const auto layout = ckpt.layout();

  std::vector<std::size_t> sizes;
  std::vector<double> cond_raw;
  for (std::size_t k = 0; k < req.n; ++k) {
    if (!ckpt.conditional()) {
      sizes.push_back(ckpt.size_distribution.sample(rng));
      continue;
    }
    const std::string mode = req.condition.value_or("auto");
    if (mode == "auto") {
      auto [c, m] = ckpt.condition_distribution->sample(rng);
      cond_raw.push_back(c);
      sizes.push_back(m);
    } else {
      const double c = detail::parse_condition_value(mode);
      cond_raw.push_back(c);
      sizes.push_back(ckpt.condition_distribution->sample_size_given(c, rng));
    }
  }

  Dataset out;
  out.vocabulary = ckpt.vocabulary;
  out.has_charges = ckpt.config.include_charges;
  RngNoise noise(rng);
  const std::size_t batch = std::max<std::size_t>(1, req.batch);
  for (std::size_t start = 0; start < req.n; start += batch) {
    const std::size_t stop = std::min(req.n, start + batch);
    std::vector<std::size_t> part(sizes.begin() + static_cast<std::ptrdiff_t>(start),
                                  sizes.begin() + static_cast<std::ptrdiff_t>(stop));
    std::vector<double> cond;
    for (std::size_t k = start; k < stop && ckpt.conditional(); ++k) cond.push_back(ckpt.normalizer.normalize(cond_raw[k]));
    auto mols = sample_batch(part, schedule, dyn, layout, noise, cond);
    for (std::size_t k = 0; k < mols.size(); ++k) {
      detail::require_finite(mols[k]);
      out.molecules.push_back(std::move(mols[k]));
      std::map<std::string, double> props;
      if (ckpt.conditional()) props[ckpt.config.condition] = cond_raw[start + k];
      out.properties.push_back(std::move(props));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  std::size_t molecules = 0;
  double atom_stable = 0.0;  // fractions in [0, 1]
  double mol_stable = 0.0;
  double uniqueness = 0.0;
  std::optional<double> js_distances;
  std::map<std::string, double> w1;

  std::string format() const {
    std::ostringstream os;
    os << std::fixed;
    os << "molecules = " << molecules << '\n';
    os << std::setprecision(4);
    os << "atom_stable_pct = " << 100.0 * atom_stable << '\n';
    os << "mol_stable_pct = " << 100.0 * mol_stable << '\n';
    os << "uniqueness_pct = " << 100.0 * uniqueness << '\n';
    os << std::setprecision(10);
    if (js_distances) os << "js_distances = " << *js_distances << '\n';
    for (const auto& [k, v] : w1) os << "w1." << k << " = " << v << '\n';
    return os.str();
  }
};

inline EvalReport evaluate_molecules(const Dataset& mols, const Dataset* reference,
                                     const chem::BondTables& tables = chem::BondTables::standard()) {
  EvalReport r;
  r.molecules = mols.size();
  chem::StabilitySummary summary;
  std::vector<chem::BondGraph> graphs;
  for (std::size_t m = 0; m < mols.size(); ++m) {
    auto g = chem::infer_bonds(mols.elements_of(m), mols.molecules[m].positions, tables);
    summary.add(chem::stability(g, tables));
    graphs.push_back(std::move(g));
  }
  r.atom_stable = summary.atom_fraction();
  r.mol_stable = summary.molecule_fraction();
  r.uniqueness = chem::uniqueness_fraction(graphs);
  if (reference) {
    r.js_distances = chem::js_divergence(chem::distance_histogram(mols.molecules),
                                         chem::distance_histogram(reference->molecules));
    std::set<std::string> names;
    for (const auto& p : mols.properties)
      for (const auto& [k, v] : p) names.insert(k);
    for (const auto& name : names) {
      if (mols.has_property(name) && reference->has_property(name)) {
        auto a = mols.property_values(name);
        auto b = reference->property_values(name);
        r.w1[name] = chem::wasserstein1(a, b);
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Likelihood reports

struct NllRecord {
  std::size_t id = 0;
  NllTerms mean;       // per-term averages over the estimates
  double nll_se = 0.0;  // standard error of nll_total's average
};

struct NllReport {
  std::vector<NllRecord> records;
  double mean = 0.0;
  double se = 0.0;
  std::vector<std::string> warnings;

  static std::string header() { return "id,M,nll_total,L_base,L0_x,L0_h,T*Lt"; }

  std::string csv() const {
    std::ostringstream os;
    os << header() << '\n';
    for (const auto& r : records) {
      os << r.id << ',' << r.mean.atoms << ',' << detail::format_double(r.mean.nll_total) << ','
         << detail::format_double(r.mean.base) << ',' << detail::format_double(r.mean.zeroth_x) << ','
         << detail::format_double(r.mean.zeroth_h) << ',' << detail::format_double(r.mean.diffusion) << '\n';
    }
    return os.str();
  }
};

inline NllReport evaluate_nll(const Checkpoint& ckpt, const Dataset& input, int n_estimates, std::uint64_t seed) {
  if (n_estimates < 1) throw ConfigError("estimates must be >= 1");
  const Dataset data = center_dataset(input.with_vocabulary(ckpt.vocabulary));
  const auto dyn = ckpt.dynamics();
  const auto schedule = ckpt.schedule();
  const auto layout = ckpt.layout();
  Rng rng(seed);

  NllReport rep;
  std::vector<double> per_mol;
  for (std::size_t m = 0; m < data.size(); ++m) {
    std::vector<double> cond;
    if (ckpt.conditional()) {
      auto it = data.properties[m].find(ckpt.config.condition);
      if (it == data.properties[m].end()) {
        throw ContractError("molecule " + std::to_string(m) + " lacks the conditioning property '" +
                            ckpt.config.condition + "'");
      }
      cond.push_back(ckpt.normalizer.normalize(it->second));
    }
    const auto scaled = scale(data.molecules[m], layout);
    const double log_pm = ckpt.size_distribution.log_prob(data.molecules[m].size());
    if (!std::isfinite(log_pm)) {
      rep.warnings.push_back("molecule " + std::to_string(m) + ": size " + std::to_string(data.molecules[m].size()) +
                             " has zero probability under p(M); NLL is +inf");
    }
    NllRecord rec;
    rec.id = m;
    rec.mean.atoms = scaled.size();
    double sum = 0.0, sum_sq = 0.0;
    for (int k = 0; k < n_estimates; ++k) {
      auto t = nll_estimate(scaled, schedule, dyn, layout, log_pm, rng, cond);
      rec.mean.base += t.base / n_estimates;
      rec.mean.zeroth_x += t.zeroth_x / n_estimates;
      rec.mean.zeroth_h += t.zeroth_h / n_estimates;
      rec.mean.diffusion += t.diffusion / n_estimates;
      rec.mean.log_p_size = t.log_p_size;
      sum += t.nll_total;
      sum_sq += t.nll_total * t.nll_total;
    }
    rec.mean.nll_total = sum / n_estimates;
    if (n_estimates > 1 && std::isfinite(rec.mean.nll_total)) {
      const double var = (sum_sq - sum * sum / n_estimates) / (n_estimates - 1);
      rec.nll_se = std::sqrt(std::max(0.0, var) / n_estimates);
    }
    per_mol.push_back(rec.mean.nll_total);
    rep.records.push_back(rec);
  }
  if (!per_mol.empty()) {
    double s = 0.0;
    for (double v : per_mol) s += v;
    rep.mean = s / static_cast<double>(per_mol.size());
    if (per_mol.size() > 1 && std::isfinite(rep.mean)) {
      double ss = 0.0;
      for (double v : per_mol) ss += (v - rep.mean) * (v - rep.mean);
      rep.se = std::sqrt(ss / static_cast<double>(per_mol.size() - 1) / static_cast<double>(per_mol.size()));
    } else if (!std::isfinite(rep.mean)) {
      rep.se = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Conditional interpolation

struct InterpolationRequest {
  double from = 0.0, to = 1.0;
  int steps = 9;
  std::uint64_t seed = 0;
  std::size_t atoms = 0;  // 0: draw M once from p(M)
};

struct InterpolationFrame {
  double value = 0.0;
  Dataset sample;
  std::string noise_log;
};

/// Text dump of every random quantity a chain consumed, as hex floats.
inline std::string format_noise_log(const RecordingNoise& rec) {
  std::ostringstream os;
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%a", v);
    os << buf << ' ';
  };
  for (const auto& d : rec.draws()) {
    os << "draw " << d.x.rows() << ' ' << d.h.cols() << '\n';
    for (double v : d.x.data()) put(v);
    os << '\n';
    for (double v : d.h.data()) put(v);
    os << '\n';
  }
  os << "uniform " << rec.uniforms().size() << '\n';
  for (double v : rec.uniforms()) put(v);
  os << '\n';
  return os.str();
}

/// One chain per value of c on a linear grid, every chain replaying the same
/// noise stream so only c differs.
inline std::vector<InterpolationFrame> interpolate(const Checkpoint& ckpt, const InterpolationRequest& req) {
  if (!ckpt.conditional()) throw ContractError("interpolation requires a conditional checkpoint");
  if (req.steps < 1) throw ConfigError("steps must be >= 1");
  const auto dyn = ckpt.dynamics();
  const auto schedule = ckpt.schedule();
  const auto layout = ckpt.layout();
  std::size_t atoms = req.atoms;
  if (atoms == 0) {
    Rng size_rng(req.seed);
    atoms = ckpt.size_distribution.sample(size_rng);
  }

  std::vector<InterpolationFrame> frames;
  for (int k = 0; k < req.steps; ++k) {
    const double c = req.steps == 1 ? req.from : req.from + (req.to - req.from) * k / (req.steps - 1);
    Rng rng(req.seed);
    RngNoise base(rng);
    RecordingNoise rec(base);
    const double cn = ckpt.normalizer.normalize(c);
    auto mol = sample(atoms, schedule, dyn, layout, rec, std::span<const double>(&cn, 1));
    detail::require_finite(mol);
    InterpolationFrame f;
    f.value = c;
    f.sample.vocabulary = ckpt.vocabulary;
    f.sample.molecules.push_back(std::move(mol));
    f.sample.properties.push_back({{ckpt.config.condition, c}});
    f.noise_log = format_noise_log(rec);
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace edm
