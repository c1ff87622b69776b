// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

// Flat "section.key = value" run configuration.

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "edm/dataio.hpp"
#include "edm/errors.hpp"

namespace edm {

struct RunConfig {
  // model
  int n_layers = 9;
  int nf = 256;
  bool equivariant = true;
  std::string condition;  // property name; empty for unconditional
  int condition_bins = 100;
  // schedule
  int steps = 1000;
  double precision = 1e-5;
  // scaling
  double x_scale = 1.0;
  double onehot_scale = 0.25;
  double charge_scale = 0.1;
  // optimizer
  double lr = 1e-4;
  int batch = 64;
  int epochs = 1000;
  int max_steps = 0;  // 0: no limit beyond epochs
  bool augment_rotations = false;
  bool augment_reflections = false;
  bool variational_loss = false;
  // data
  std::string data_path;
  std::string split = "0.8,0.1,0.1";
  std::string split_file;
  std::string vocabulary;  // comma separated; empty: from the data
  bool include_charges = true;
  int toy_size = 0;  // > 0: use the synthetic toy set instead of data_path
  std::string toy_kind = "rigid";
  // run
  std::string out_dir = "run";
  int log_every = 100;
  int val_every = 1000;
  int val_molecules = 256;
  std::uint64_t seed = 0;

  /// Binds every key to its field, in a fixed order.
  template <typename Visitor>
  void visit(Visitor&& v) {
    v("model.n_layers", n_layers);
    v("model.nf", nf);
    v("model.equivariant", equivariant);
    v("model.condition", condition);
    v("model.condition_bins", condition_bins);
    v("schedule.T", steps);
    v("schedule.s", precision);
    v("scaling.x", x_scale);
    v("scaling.onehot", onehot_scale);
    v("scaling.charge", charge_scale);
    v("optim.lr", lr);
    v("optim.batch", batch);
    v("optim.epochs", epochs);
    v("optim.max_steps", max_steps);
    v("optim.augment_rotations", augment_rotations);
    v("optim.augment_reflections", augment_reflections);
    v("optim.variational_loss", variational_loss);
    v("data.path", data_path);
    v("data.split", split);
    v("data.split_file", split_file);
    v("data.vocabulary", vocabulary);
    v("data.include_charges", include_charges);
    v("data.toy_size", toy_size);
    v("data.toy_kind", toy_kind);
    v("run.out_dir", out_dir);
    v("run.log_every", log_every);
    v("run.val_every", val_every);
    v("run.val_molecules", val_molecules);
    v("run.seed", seed);
  }
  template <typename Visitor>
  void visit(Visitor&& v) const {
    const_cast<RunConfig*>(this)->visit([&](const char* key, auto& field) { v(key, std::as_const(field)); });
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    visit([&](const char* key, const auto&) { out.emplace_back(key); });
    return out;
  }

  /// Sets one key from its text form; throws ConfigError naming the key.
  void set(const std::string& key, const std::string& value) {
    bool found = false;
    visit([&](const char* k, auto& field) {
      if (key != k) return;
      found = true;
      if (!parse_value(value, field)) throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
    });
    if (!found) throw ConfigError("unknown config key '" + key + "'");
  }

  std::string get(const std::string& key) const {
    std::string out;
    bool found = false;
    visit([&](const char* k, const auto& field) {
      if (key == k) {
        out = format_value(field);
        found = true;
      }
    });
    if (!found) throw ConfigError("unknown config key '" + key + "'");
    return out;
  }

  /// "key = value" lines; parse() of the result reproduces the config.
  std::string dump() const {
    std::ostringstream os;
    visit([&](const char* k, const auto& field) { os << k << " = " << format_value(field) << '\n'; });
    return os.str();
  }

  static RunConfig parse(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t ln = 0;
    std::vector<std::string> errors;
    while (std::getline(is, line)) {
      ++ln;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      auto trimmed = trim(line);
      if (trimmed.empty()) continue;
      auto eq = trimmed.find('=');
      if (eq == std::string::npos) {
        errors.push_back("line " + std::to_string(ln) + ": expected 'key = value'");
        continue;
      }
      try {
        cfg.set(std::string(trim(trimmed.substr(0, eq))), std::string(trim(trimmed.substr(eq + 1))));
      } catch (const ConfigError& e) {
        errors.push_back("line " + std::to_string(ln) + ": " + e.what());
      }
    }
    if (!errors.empty()) throw ConfigError(join(errors));
    return cfg;
  }

  /// Every problem with the configuration, empty when it is usable.
  std::vector<std::string> problems() const {
    std::vector<std::string> p;
    if (n_layers < 1) p.push_back("model.n_layers must be >= 1");
    if (nf < 1) p.push_back("model.nf must be >= 1");
    if (condition_bins < 1) p.push_back("model.condition_bins must be >= 1");
    if (steps < 1) p.push_back("schedule.T must be >= 1");
    if (!(precision > 0.0 && precision < 0.5)) p.push_back("schedule.s must be in (0, 0.5)");
    if (!(x_scale > 0.0)) p.push_back("scaling.x must be > 0");
    if (!(onehot_scale > 0.0)) p.push_back("scaling.onehot must be > 0");
    if (!(charge_scale > 0.0)) p.push_back("scaling.charge must be > 0");
    if (!(lr > 0.0)) p.push_back("optim.lr must be > 0");
    if (batch < 1) p.push_back("optim.batch must be >= 1");
    if (epochs < 1) p.push_back("optim.epochs must be >= 1");
    if (max_steps < 0) p.push_back("optim.max_steps must be >= 0");
    if (log_every < 1) p.push_back("run.log_every must be >= 1");
    if (val_every < 1) p.push_back("run.val_every must be >= 1");
    if (val_molecules < 0) p.push_back("run.val_molecules must be >= 0");
    if (toy_size < 0) p.push_back("data.toy_size must be >= 0");
    if (toy_kind != "rigid" && toy_kind != "conditional") p.push_back("data.toy_kind must be 'rigid' or 'conditional'");
    if (toy_size == 0) {
      if (data_path.empty()) {
        p.push_back("data.path is required when data.toy_size = 0");
      } else if (!std::filesystem::exists(data_path)) {
        p.push_back("data.path: file '" + data_path + "' does not exist");
      }
    }
    if (!split_file.empty() && !std::filesystem::exists(split_file)) {
      p.push_back("data.split_file: file '" + split_file + "' does not exist");
    }
    if (split_file.empty()) {
      auto f = split_fractions();
      if (f.size() != 3) p.push_back("data.split must hold three comma-separated fractions");
    }
    if (out_dir.empty()) p.push_back("run.out_dir must not be empty");
    return p;
  }

  void validate() const {
    auto p = problems();
    if (!p.empty()) throw ConfigError(join(p));
  }

  std::vector<double> split_fractions() const {
    std::vector<double> out;
    std::stringstream ss(split);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      double v = 0.0;
      if (!parse_value(std::string(trim(tok)), v)) return {};
      out.push_back(v);
    }
    return out;
  }

  std::vector<std::string> vocabulary_list() const {
    std::vector<std::string> out;
    std::stringstream ss(vocabulary);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      auto t = trim(tok);
      if (!t.empty()) out.emplace_back(t);
    }
    return out;
  }

  static std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  }

 private:
  static std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (const auto& s : items) out += (out.empty() ? "" : "\n") + s;
    return out;
  }

  static bool parse_value(const std::string& s, std::string& out) {
    out = s;
    return true;
  }
  static bool parse_value(const std::string& s, bool& out) {
    if (s == "true" || s == "1") {
      out = true;
    } else if (s == "false" || s == "0") {
      out = false;
    } else {
      return false;
    }
    return true;
  }
  template <typename Number>
  static bool parse_value(const std::string& s, Number& out) {
    Number v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return false;
    out = v;
    return true;
  }

  static std::string format_value(const std::string& v) { return v; }
  static std::string format_value(bool v) { return v ? "true" : "false"; }
  static std::string format_value(double v) { return detail::format_double(v); }
  template <typename Int>
  static std::string format_value(Int v) {
    return std::to_string(v);
  }
};

}  // namespace edm
