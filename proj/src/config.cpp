#include "psld/harness/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "psld/errors.hpp"

namespace psld::harness {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(x))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

long long to_int(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return x;
}

std::size_t to_count(const std::string& key, const std::string& v) {
  const long long x = to_int(key, v);
  if (x < 0) throw ConfigError(key + ": must be >= 0");
  return static_cast<std::size_t>(x);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"gamma", [](auto& c, auto& k, auto& v) { c.params.gamma = to_double(k, v); }},
      {"nu", [](auto& c, auto& k, auto& v) { c.params.nu = to_double(k, v); }},
      {"mass_inv", [](auto& c, auto& k, auto& v) { c.params.mass_inv = to_double(k, v); }},
      {"gamma0", [](auto& c, auto& k, auto& v) { c.params.gamma0 = to_double(k, v); }},
      {"dim", [](auto& c, auto& k, auto& v) { c.dim = to_count(k, v); }},
      {"seed", [](auto& c, auto& k, auto& v) { c.seed = static_cast<std::uint64_t>(to_count(k, v)); }},
      {"beta.kind",
       [](auto& c, auto& k, auto& v) {
         if (v == "constant") c.params.beta.kind = BetaSchedule::Kind::constant;
         else if (v == "linear") c.params.beta.kind = BetaSchedule::Kind::linear;
         else throw ConfigError(k + ": expected constant or linear");
       }},
      {"beta.const", [](auto& c, auto& k, auto& v) { c.params.beta.beta_const = to_double(k, v); }},
      {"beta.min", [](auto& c, auto& k, auto& v) { c.params.beta.beta_min = to_double(k, v); }},
      {"beta.max", [](auto& c, auto& k, auto& v) { c.params.beta.beta_max = to_double(k, v); }},
      {"data.name", [](auto& c, auto&, auto& v) { c.dataset = v; }},
      {"data.n", [](auto& c, auto& k, auto& v) { c.n = to_count(k, v); }},
      {"sampler.kind",
       [](auto& c, auto& k, auto& v) {
         if (v == "em") c.sampler.kind = sampler::Kind::em;
         else if (v == "sscs") c.sampler.kind = sampler::Kind::sscs;
         else if (v == "ode") c.sampler.kind = sampler::Kind::ode;
         else throw ConfigError(k + ": expected em, sscs or ode");
       }},
      {"sampler.nfe", [](auto& c, auto& k, auto& v) { c.sampler.nfe = static_cast<int>(to_int(k, v)); }},
      {"sampler.striding",
       [](auto& c, auto& k, auto& v) {
         if (v == "uniform") c.sampler.striding = sampler::Striding::uniform;
         else if (v == "quadratic") c.sampler.striding = sampler::Striding::quadratic;
         else throw ConfigError(k + ": expected uniform or quadratic");
       }},
      {"sampler.eps_end", [](auto& c, auto& k, auto& v) { c.sampler.eps_end = to_double(k, v); }},
      {"sampler.denoise", [](auto& c, auto& k, auto& v) { c.sampler.denoise_last = to_bool(k, v); }},
      {"sampler.rtol", [](auto& c, auto& k, auto& v) { c.sampler.ode_rtol = to_double(k, v); }},
      {"sampler.atol", [](auto& c, auto& k, auto& v) { c.sampler.ode_atol = to_double(k, v); }},
      {"sampler.max_steps", [](auto& c, auto& k, auto& v) { c.sampler.max_ode_steps = to_int(k, v); }},
      {"sampler.score_time",
       [](auto& c, auto& k, auto& v) {
         if (v == "midpoint") c.sampler.sscs_score_time = sampler::ScoreTime::midpoint;
         else if (v == "start") c.sampler.sscs_score_time = sampler::ScoreTime::start;
         else throw ConfigError(k + ": expected midpoint or start");
       }},
      {"train.iterations", [](auto& c, auto& k, auto& v) { c.train.iterations = to_count(k, v); }},
      {"train.batch", [](auto& c, auto& k, auto& v) { c.train.batch_size = to_count(k, v); }},
      {"train.lr", [](auto& c, auto& k, auto& v) { c.train.learning_rate = to_double(k, v); }},
      {"train.warmup", [](auto& c, auto& k, auto& v) { c.train.warmup_steps = to_count(k, v); }},
      {"train.decay", [](auto& c, auto& k, auto& v) { c.train.linear_decay = to_bool(k, v); }},
      {"train.ema", [](auto& c, auto& k, auto& v) { c.train.ema_rate = to_double(k, v); }},
      {"train.clip", [](auto& c, auto& k, auto& v) { c.train.grad_clip = to_double(k, v); }},
      {"train.log_every", [](auto& c, auto& k, auto& v) { c.train.log_every = to_count(k, v); }},
      {"train.objective",
       [](auto& c, auto& k, auto& v) {
         if (v == "hsm") c.train.objective = Objective::hsm;
         else if (v == "dsm") c.train.objective = Objective::dsm;
         else throw ConfigError(k + ": expected hsm or dsm");
       }},
      {"model.hidden", [](auto& c, auto& k, auto& v) { c.model.hidden = to_count(k, v); }},
      {"model.layers", [](auto& c, auto& k, auto& v) { c.model.layers = to_count(k, v); }},
      {"model.freq", [](auto& c, auto& k, auto& v) { c.model.n_freq = to_count(k, v); }},
      {"guide.weight", [](auto& c, auto& k, auto& v) { c.guide.weight = to_double(k, v); }},
      {"guide.label", [](auto& c, auto& k, auto& v) { c.guide.target_label = static_cast<int>(to_int(k, v)); }},
      {"guide.mask",
       [](auto& c, auto& k, auto& v) {
         c.guide.mask.clear();
         for (const auto& s : split_list(v)) c.guide.mask.push_back(to_bool(k, s));
         c.guide.mode = guidance::Mode::imputation;
       }},
      {"guide.observed",
       [](auto& c, auto& k, auto& v) {
         c.observed.clear();
         for (const auto& s : split_list(v)) c.observed.push_back(to_double(k, s));
       }},
  };
  return table;
}

}  // namespace

std::string fnv1a_hex(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void ExperimentConfig::validate() const {
  params.validate();
  sampler.validate();
  train.validate();
  if (dim == 0) throw ConfigError("dim must be >= 1");
  if (n == 0) throw ConfigError("data.n must be >= 1");
  if (model.hidden == 0 || model.layers == 0) throw ConfigError("model needs hidden units");
  guide.validate(dim);
  if (guide.mode == guidance::Mode::imputation && !observed.empty() && observed.size() != dim)
    throw ConfigError("guide.observed needs one value per coordinate");
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.params = PsldParams::critical(c.params.gamma, c.params.mass_inv);
  c.hash = fnv1a_hex("");
  return c;
}

void ExperimentConfig::refresh_hash() {
  std::string canon;
  for (const auto& [k, v] : raw) canon += k + "=" + v + "\n";
  hash = fnv1a_hex(canon);
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c = default_config();
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end())
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (c.raw.count(key))
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    try {
      it->second(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
    c.raw[key] = value;
  }
  c.refresh_hash();
  try {
    // a missing nu means critical damping for the given Gamma and M^-1
    if (!c.raw.count("nu")) c.params.nu = critical_nu(c.params.gamma, c.params.mass_inv);
    c.validate();
  } catch (const std::domain_error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

}  // namespace psld::harness
