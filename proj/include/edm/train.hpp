// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "edm/config.hpp"
#include "edm/diffusion.hpp"
#include "edm/geometry.hpp"
#include "edm/molecule.hpp"
#include "edm/params.hpp"
#include "edm/schedule.hpp"

namespace edm {

/// Centered molecules plus their (already normalized) condition values,
/// condition_dim per molecule.
struct TrainingData {
  std::vector<Molecule> molecules;
  std::vector<double> conditions;

  std::size_t size() const { return molecules.size(); }
};

struct TrainOptions {
  int batch_size = 64;
  int epochs = 1;
  long max_steps = 0;  // 0: run all epochs
  bool augment_rotations = false;
  bool augment_reflections = false;
  LossWeighting weighting = LossWeighting::kSimplified;
  int log_every = 100;
  int val_every = 1000;
  std::size_t val_molecules = 256;
  std::uint64_t val_seed = 0x5eed;
};

struct LogRow {
  long step = 0;
  int epoch = 0;
  double train_loss = 0.0;  // mean since the previous row
  std::optional<double> val_nll;
};

inline std::string loss_log_header() { return "step,epoch,train_loss,val_nll"; }

inline std::string format_log_row(const LogRow& r) {
  std::ostringstream os;
  os << r.step << ',' << r.epoch << ',' << detail::format_double(r.train_loss) << ',';
  if (r.val_nll) os << detail::format_double(*r.val_nll);
  return os.str();
}

struct TrainResult {
  long steps = 0;
  int epochs = 0;
  std::vector<LogRow> log;
  std::optional<double> best_val;
  double last_loss = 0.0;
};

class Trainer {
 public:
  Trainer(Dynamics& dynamics, Adam& optimizer, const NoiseSchedule& schedule, FeatureLayout layout,
          TrainOptions options)
      : dyn_(dynamics), opt_(optimizer), schedule_(schedule), layout_(layout), opts_(options) {
    if (opts_.batch_size < 1) throw std::invalid_argument("Trainer: batch_size must be >= 1");
    if (opts_.log_every < 1 || opts_.val_every < 1) throw std::invalid_argument("Trainer: intervals must be >= 1");
  }

  const TrainOptions& options() const { return opts_; }

  /// Builds the model-space batch, applying the optional random rigid motion.
  DiffusionBatch make_batch(const TrainingData& data, std::span<const std::size_t> idx, Rng& rng) const {
    const auto cdim = static_cast<std::size_t>(dyn_.config().condition_dim);
    DiffusionBatch batch;
    for (auto i : idx) {
      Molecule mol = data.molecules.at(i);
      if (opts_.augment_rotations) {
        mol.positions = apply_rotation(geometry::random_orthogonal(rng, opts_.augment_reflections), mol.positions);
      }
      batch.molecules.push_back(scale(mol, layout_));
      for (std::size_t c = 0; c < cdim; ++c) batch.conditions.push_back(data.conditions.at(i * cdim + c));
    }
    return batch;
  }

  /// One optimizer step on the given molecules; returns the loss value.
  double step(const TrainingData& data, std::span<const std::size_t> idx, Rng& rng) {
    auto batch = make_batch(data, idx, rng);
    dyn_.params().zero_grad();
    auto loss = training_loss(batch, schedule_, dyn_, rng, opts_.weighting);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      std::ostringstream os;
      os << "non-finite training loss at step " << opt_.step_count() + 1 << " (lr=" << opt_.options().lr << ")";
      throw NumericalError(os.str());
    }
    ad::backward(loss);
    opt_.step(dyn_.params());
    return value;
  }

  /// Mean single-draw variational bound over (up to val_molecules of) the
  /// data, excluding log p(M). Uses a fixed seed so successive evaluations
  /// are paired.
  double validation_nll(const TrainingData& data) const {
    Rng rng(opts_.val_seed);
    const auto cdim = static_cast<std::size_t>(dyn_.config().condition_dim);
    const std::size_t n = std::min(data.size(), opts_.val_molecules);
    if (n == 0) throw std::invalid_argument("validation_nll: no molecules");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::span<const double> cond;
      if (cdim) cond = std::span<const double>(data.conditions).subspan(i * cdim, cdim);
      total += nll_estimate(scale(data.molecules[i], layout_), schedule_, dyn_, layout_, 0.0, rng, cond).nll_total;
    }
    return total / static_cast<double>(n);
  }

  /// Runs epochs of shuffled mini-batches. `on_improve` fires whenever the
  /// validation value beats the best seen so far.
  TrainResult run(const TrainingData& train, const TrainingData* val, Rng& rng,
                  const std::function<void(const LogRow&)>& on_log = {},
                  const std::function<void(const TrainResult&)>& on_improve = {}) {
    if (train.size() == 0) throw std::invalid_argument("Trainer: empty training set");
    TrainResult res;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    double acc = 0.0;
    long acc_n = 0;
    for (int epoch = 0; epoch < opts_.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts_.batch_size)) {
        if (opts_.max_steps > 0 && res.steps >= opts_.max_steps) break;
        const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(opts_.batch_size));
        res.last_loss = step(train, std::span<const std::size_t>(order).subspan(start, stop - start), rng);
        ++res.steps;
        res.epochs = epoch + 1;
        acc += res.last_loss;
        ++acc_n;

        const bool do_val = val && val->size() > 0 && res.steps % opts_.val_every == 0;
        if (res.steps % opts_.log_every == 0 || do_val) {
          LogRow row{res.steps, epoch, acc / static_cast<double>(acc_n), std::nullopt};
          acc = 0.0;
          acc_n = 0;
          if (do_val) row.val_nll = validation_nll(*val);
          res.log.push_back(row);
          if (on_log) on_log(row);
          if (row.val_nll && (!res.best_val || *row.val_nll < *res.best_val)) {
            res.best_val = row.val_nll;
            if (on_improve) on_improve(res);
          }
        }
      }
      if (opts_.max_steps > 0 && res.steps >= opts_.max_steps) break;
    }
    if (acc_n > 0) {
      LogRow row{res.steps, std::max(0, res.epochs - 1), acc / static_cast<double>(acc_n), std::nullopt};
      res.log.push_back(row);
      if (on_log) on_log(row);
    }
    return res;
  }

 private:
  Dynamics& dyn_;
  Adam& opt_;
  const NoiseSchedule& schedule_;
  FeatureLayout layout_;
  TrainOptions opts_;
};

}  // namespace edm
