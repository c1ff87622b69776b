// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

// Self-describing checkpoints:
//   "EDMCKPT1"
//   parameter records   (count, then path / shape / f64 payload each)
//   Adam moment records (same layout, "<path>.m" and "<path>.v")
//   metadata            (length-prefixed "key = value" text)

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "edm/config.hpp"
#include "edm/distributions.hpp"
#include "edm/egnn.hpp"
#include "edm/molecule.hpp"
#include "edm/params.hpp"
#include "edm/schedule.hpp"

namespace edm {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Writes to a sibling temporary file, then renames it over `path`.
inline void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) throw ConfigError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw ConfigError("cannot rename '" + tmp.string() + "' to '" + path + "': " + ec.message());
}

struct Checkpoint {
  static constexpr char kMagic[9] = "EDMCKPT1";

  RunConfig config;
  std::vector<std::string> vocabulary;
  ParameterSet params;
  std::vector<io::Record> moments;
  std::int64_t adam_steps = 0;
  SizeDistribution size_distribution;
  std::optional<ConditionDistribution> condition_distribution;
  ConditionNormalizer normalizer;
  long step = 0;
  int epoch = 0;

  bool conditional() const { return !config.condition.empty(); }

  FeatureLayout layout() const {
    return {vocabulary.size(), config.include_charges, {config.x_scale, config.onehot_scale, config.charge_scale}};
  }

  DynamicsConfig dynamics_config() const {
    DynamicsConfig d;
    d.n_layers = config.n_layers;
    d.nf = config.nf;
    d.features = static_cast<int>(layout().width());
    d.condition_dim = conditional() ? 1 : 0;
    d.equivariant = config.equivariant;
    return d;
  }

  NoiseSchedule schedule() const { return NoiseSchedule::polynomial(config.steps, config.precision); }

  Dynamics dynamics() const { return Dynamics(dynamics_config(), params.clone()); }

  /// Restores the optimizer state captured with the parameters.
  Adam optimizer() const {
    Adam opt({config.lr});
    io::restore_moments(moments, opt);
    opt.set_step_count(adam_steps);
    return opt;
  }
};

namespace detail {

inline std::string encode_metadata(const Checkpoint& c) {
  std::ostringstream os;
  os << c.config.dump();
  std::string vocab;
  for (const auto& v : c.vocabulary) vocab += (vocab.empty() ? "" : ",") + v;
  os << "meta.vocabulary = " << vocab << '\n';
  os << "meta.step = " << c.step << '\n';
  os << "meta.epoch = " << c.epoch << '\n';
  os << "meta.adam_steps = " << c.adam_steps << '\n';
  os << "meta.size_counts =";
  for (const auto& [m, n] : c.size_distribution.counts()) os << ' ' << m << ':' << n;
  os << '\n';
  if (c.condition_distribution) {
    const auto& cd = *c.condition_distribution;
    os << "meta.condition_range = " << format_double(cd.lower()) << ' ' << format_double(cd.upper()) << ' '
       << cd.n_bins() << '\n';
    os << "meta.condition_counts =";
    for (const auto& [key, n] : cd.counts()) os << ' ' << key.first << ':' << key.second << ':' << n;
    os << '\n';
    os << "meta.normalizer = " << format_double(c.normalizer.mean) << ' ' << format_double(c.normalizer.stddev)
       << '\n';
  }
  return os.str();
}

inline void decode_metadata(const std::string& text, Checkpoint& c) {
  std::istringstream is(text);
  std::string line;
  std::string config_text;
  std::map<std::string, std::string> meta;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key(RunConfig::trim(std::string_view(line).substr(0, eq)));
    if (key.rfind("meta.", 0) == 0) {
      meta[key] = std::string(RunConfig::trim(std::string_view(line).substr(eq + 1)));
    } else {
      config_text += line + '\n';
    }
  }
  c.config = RunConfig::parse(config_text);
  auto need = [&](const std::string& k) -> const std::string& {
    auto it = meta.find(k);
    if (it == meta.end()) throw ConfigError("checkpoint: metadata lacks '" + k + "'");
    return it->second;
  };
  RunConfig vocab_holder;
  vocab_holder.vocabulary = need("meta.vocabulary");
  c.vocabulary = vocab_holder.vocabulary_list();
  c.step = std::stol(need("meta.step"));
  c.epoch = std::stoi(need("meta.epoch"));
  c.adam_steps = std::stoll(need("meta.adam_steps"));

  auto fields = [](const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep)) out.push_back(tok);
    return out;
  };
  std::map<std::size_t, std::size_t> sizes;
  std::istringstream ss(need("meta.size_counts"));
  std::string tok;
  while (ss >> tok) {
    auto f = fields(tok, ':');
    if (f.size() != 2) throw ConfigError("checkpoint: malformed size count '" + tok + "'");
    sizes[std::stoul(f[0])] = std::stoul(f[1]);
  }
  if (!sizes.empty()) c.size_distribution = SizeDistribution::from_counts(sizes);

  if (meta.contains("meta.condition_range")) {
    std::istringstream rs(meta["meta.condition_range"]);
    std::string lo, hi;
    int bins = 0;
    rs >> lo >> hi >> bins;
    std::map<std::pair<int, std::size_t>, std::size_t> counts;
    std::istringstream cs(need("meta.condition_counts"));
    while (cs >> tok) {
      auto f = fields(tok, ':');
      if (f.size() != 3) throw ConfigError("checkpoint: malformed condition count '" + tok + "'");
      counts[{std::stoi(f[0]), std::stoul(f[1])}] = std::stoul(f[2]);
    }
    c.condition_distribution = ConditionDistribution::from_counts(std::stod(lo), std::stod(hi), bins, counts);
    std::istringstream ns(need("meta.normalizer"));
    std::string mean, stddev;
    ns >> mean >> stddev;
    c.normalizer = {std::stod(mean), std::stod(stddev)};
  }
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  std::ostringstream os(std::ios::binary);
  os.write(Checkpoint::kMagic, 8);
  io::write_records(os, io::to_records(c.params));
  io::write_records(os, c.moments);
  io::write_string(os, detail::encode_metadata(c));
  return os.str();
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  char magic[8];
  if (!is.read(magic, 8) || std::string(magic, 8) != Checkpoint::kMagic) {
    throw ConfigError("checkpoint: bad magic bytes");
  }
  Checkpoint c;
  try {
    c.params = io::from_records(io::read_records(is));
    c.moments = io::read_records(is);
    detail::decode_metadata(io::read_string(is), c);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  write_file_atomic(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace edm
