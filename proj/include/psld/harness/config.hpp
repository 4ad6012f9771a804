#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "psld/guidance.hpp"
#include "psld/harness/train.hpp"
#include "psld/params.hpp"
#include "psld/sampler.hpp"

namespace psld::harness {

struct ModelShape {
  std::size_t hidden = 128;
  std::size_t layers = 2;
  std::size_t n_freq = 32;
};

// Everything one CLI run needs. Keys of the text format are listed in the
// README; anything unknown is an error.
struct ExperimentConfig {
  PsldParams params;
  std::size_t dim = 2;
  std::string dataset = "gmm2";
  std::size_t n = 5000;
  std::uint64_t seed = 0;
  sampler::SamplerConfig sampler;
  TrainConfig train;
  ModelShape model;
  guidance::GuidanceConfig guide;
  std::vector<double> observed;  // imputation values, one per coordinate

  std::map<std::string, std::string> raw;  // key -> value as written
  std::string hash;                        // FNV-1a of the canonical key list

  void validate() const;
  // recompute `hash` after editing `raw` (command line overrides)
  void refresh_hash();
};

// Flat `key = value` lines; `#` starts a comment; blank lines ignored.
// Throws ConfigError naming the line on any problem.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);
// Defaults only (no file).
ExperimentConfig default_config();

// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::string_view s);

}  // namespace psld::harness
