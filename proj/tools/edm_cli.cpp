// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

// edm: train, sample, evaluate and score equivariant diffusion models.
//
// Exit codes: 0 ok, 2 configuration or I/O error, 3 numerical failure,
// 4 contract violation.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "edm/edm.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitContract = 4;

/// Applies "--key value" and "--key=value" pairs to the config.
void apply_overrides(edm::RunConfig& cfg, const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string a = args[i];
    if (a.rfind("--", 0) != 0) throw edm::ConfigError("unexpected argument '" + a + "'");
    a = a.substr(2);
    if (auto eq = a.find('='); eq != std::string::npos) {
      cfg.set(a.substr(0, eq), a.substr(eq + 1));
    } else {
      if (i + 1 >= args.size()) throw edm::ConfigError("option '--" + a + "' needs a value");
      cfg.set(a, args[++i]);
    }
  }
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
  edm::RunConfig cfg;
  if (!config_path.empty()) cfg = edm::RunConfig::parse(edm::read_file(config_path));
  apply_overrides(cfg, overrides);
  auto problems = cfg.problems();
  if (!problems.empty()) {
    for (const auto& p : problems) std::cerr << "config error: " << p << '\n';
    return kExitConfig;
  }
  std::cout << edm::loss_log_header() << '\n';
  auto run = edm::run_training(cfg, &std::cout);
  for (const auto& w : run.warnings) std::cerr << "warning: " << w << '\n';
  std::cerr << "wrote " << run.best_path << ", " << run.last_path << " and " << run.log_path << '\n';
  return kExitOk;
}

int cmd_sample(const std::string& ckpt_path, std::size_t n, const std::string& out, const std::string& condition,
               std::uint64_t seed, std::size_t batch) {
  auto ckpt = edm::load_checkpoint(ckpt_path);
  edm::SampleRequest req;
  req.n = n;
  req.seed = seed;
  req.batch = batch;
  if (!condition.empty()) req.condition = condition;
  auto mols = edm::sample_molecules(ckpt, req);
  edm::write_file_atomic(out, edm::emit_extended_xyz(mols));
  std::cerr << "wrote " << mols.size() << " molecules to " << out << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& mol_path, const std::string& ref_path, const std::string& out) {
  auto mols = edm::parse_extended_xyz(edm::read_file(mol_path));
  std::optional<edm::Dataset> ref;
  if (!ref_path.empty()) ref = edm::parse_extended_xyz(edm::read_file(ref_path));
  auto report = edm::evaluate_molecules(mols, ref ? &*ref : nullptr).format();
  if (out.empty()) {
    std::cout << report;
  } else {
    edm::write_file_atomic(out, report);
  }
  return kExitOk;
}

int cmd_nll(const std::string& ckpt_path, const std::string& mol_path, int estimates, std::uint64_t seed,
            const std::string& out) {
  auto ckpt = edm::load_checkpoint(ckpt_path);
  auto mols = edm::parse_extended_xyz(edm::read_file(mol_path));
  auto rep = edm::evaluate_nll(ckpt, mols, estimates, seed);
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
  if (out.empty()) {
    std::cout << rep.csv();
  } else {
    edm::write_file_atomic(out, rep.csv());
  }
  std::cout << "mean_nll = " << edm::detail::format_double(rep.mean) << '\n';
  std::cout << "standard_error = " << edm::detail::format_double(rep.se) << '\n';
  return kExitOk;
}

int cmd_interpolate(const std::string& ckpt_path, double from, double to, int steps, std::uint64_t seed,
                    std::size_t atoms, const std::string& out_dir) {
  auto ckpt = edm::load_checkpoint(ckpt_path);
  edm::InterpolationRequest req{from, to, steps, seed, atoms};
  auto frames = edm::interpolate(ckpt, req);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "interp_%03zu", k);
    const auto base = std::filesystem::path(out_dir) / stem;
    edm::write_file_atomic(base.string() + ".xyz", edm::emit_extended_xyz(frames[k].sample));
    edm::write_file_atomic(base.string() + ".noise", frames[k].noise_log);
  }
  std::cerr << "wrote " << frames.size() << " samples to " << out_dir << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equivariant diffusion models for 3D molecule generation"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "train a model; --section.key value overrides the config file");
  train->add_option("--config", config_path, "config file (key = value lines)");
  train->allow_extras();

  std::string ckpt, out, condition, molecules, reference;
  std::size_t n = 0, batch = 64, atoms = 0;
  std::uint64_t seed = 0;
  auto* sample = app.add_subcommand("sample", "draw molecules from a checkpoint");
  sample->add_option("--checkpoint", ckpt)->required();
  sample->add_option("--n", n)->required();
  sample->add_option("--out", out)->required();
  sample->add_option("--condition", condition, "'auto' or a property value (conditional checkpoints)");
  sample->add_option("--seed", seed);
  sample->add_option("--batch", batch);

  auto* eval = app.add_subcommand("eval", "stability, uniqueness and distribution metrics");
  eval->add_option("--molecules", molecules)->required();
  eval->add_option("--reference", reference);
  eval->add_option("--out", out);

  int estimates = 100;
  auto* nll = app.add_subcommand("nll", "per-molecule negative log-likelihood estimates");
  nll->add_option("--checkpoint", ckpt)->required();
  nll->add_option("--molecules", molecules)->required();
  nll->add_option("--estimates", estimates);
  nll->add_option("--seed", seed);
  nll->add_option("--out", out);

  double from = 0.0, to = 1.0;
  int steps = 9;
  std::string out_dir = ".";
  auto* interp = app.add_subcommand("interpolate", "conditional samples along a property range with fixed noise");
  interp->add_option("--checkpoint", ckpt)->required();
  interp->add_option("--from", from)->required();
  interp->add_option("--to", to)->required();
  interp->add_option("--steps", steps);
  interp->add_option("--seed", seed);
  interp->add_option("--atoms", atoms, "molecule size; 0 draws it from p(M)");
  interp->add_option("--out-dir", out_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return cmd_train(config_path, train->remaining());
    if (*sample) return cmd_sample(ckpt, n, out, condition, seed, batch);
    if (*eval) return cmd_eval(molecules, reference, out);
    if (*nll) return cmd_nll(ckpt, molecules, estimates, seed, out);
    if (*interp) return cmd_interpolate(ckpt, from, to, steps, seed, atoms, out_dir);
  } catch (const edm::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const edm::ContractError& e) {
    std::cerr << "contract violation: " << e.what() << '\n';
    return kExitContract;
  } catch (const edm::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const edm::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::logic_error& e) {
    std::cerr << "contract violation: " << e.what() << '\n';
    return kExitContract;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}
