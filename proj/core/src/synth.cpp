#include "ssilab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numbers>
#include <numeric>

#include "ssilab/error.hpp"
#include "ssilab/parallel.hpp"
#include "ssilab/rng.hpp"

namespace ssilab {

namespace {

using ordered_json = nlohmann::ordered_json;

enum StreamTag : std::uint64_t { kSignatureStream = 1, kNoiseStream = 2, kCompletionStream = 3 };

const char* mode_name(SignatureMode mode) {
  switch (mode) {
    case SignatureMode::kOrthogonal:
      return "orthogonal";
    case SignatureMode::kRandomUnit:
      return "random_unit";
    case SignatureMode::kSharedAngle:
      return "shared_angle";
  }
  return "unknown";
}

SignatureMode mode_from(const std::string& name) {
  if (name == "orthogonal") {
    return SignatureMode::kOrthogonal;
  }
  if (name == "random_unit") {
    return SignatureMode::kRandomUnit;
  }
  if (name == "shared_angle") {
    return SignatureMode::kSharedAngle;
  }
  throw ConfigError("unknown signature_mode '" + name + "'");
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) {
    s += x * x;
  }
  return std::sqrt(s);
}

/// Signatures for every phenomenon at one layer.
std::vector<std::vector<double>> layer_signatures(const SynthConfig& c, std::size_t layer) {
  Rng rng(derive_seed(c.rng_seed, {kSignatureStream, layer}));
  std::vector<std::vector<double>> sigs(c.phenomena, std::vector<double>(c.dim, 0.0));
  if (c.signature_mode == SignatureMode::kRandomUnit) {
    for (auto& u : sigs) {
      double n = 0.0;
      do {
        for (auto& x : u) {
          x = rng.normal();
        }
        n = norm(u);
      } while (n < 1e-12);
      for (auto& x : u) {
        x /= n;
      }
    }
    return sigs;
  }
  // Random choice of distinct axes (partial Fisher-Yates over all D axes).
  std::vector<std::size_t> axes(c.dim);
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  for (std::size_t k = 0; k < c.phenomena; ++k) {
    const auto j = k + static_cast<std::size_t>(rng.below(c.dim - k));
    std::swap(axes[k], axes[j]);
  }
  if (c.signature_mode == SignatureMode::kOrthogonal) {
    for (std::size_t p = 0; p < c.phenomena; ++p) {
      sigs[p][axes[p]] = 1.0;
    }
    return sigs;
  }
  const double theta = c.theta_degrees * std::numbers::pi / 180.0;
  sigs[0][axes[0]] = 1.0;
  for (std::size_t p = 1; p < c.phenomena; ++p) {
    sigs[p][axes[0]] = std::cos(theta);
    sigs[p][axes[p]] = std::sin(theta);
  }
  return sigs;
}

/// Raw (unscaled) difference vectors of sample (p, i) for all layers, L x D.
std::vector<double> raw_deltas(const SynthConfig& c, const std::vector<std::vector<std::vector<double>>>& sigs,
                               std::size_t p, std::size_t i, double signal_scale) {
  std::vector<double> out(c.layers * c.dim, 0.0);
  Rng noise(derive_seed(c.rng_seed, {kNoiseStream, p, i}));
  for (std::size_t l = 0; l < c.layers; ++l) {
    for (std::size_t d = 0; d < c.dim; ++d) {
      const double g = noise.normal();
      out[l * c.dim + d] = signal_scale * sigs[l][p][d] + c.noise_sigma * g;
    }
  }
  if (auto it = c.planted.find(p); it != c.planted.end()) {
    for (const auto& n : it->second.neurons) {
      out[n.layer * c.dim + n.dim] += it->second.magnitude;
    }
  }
  return out;
}

std::vector<std::vector<std::vector<double>>> all_signatures(const SynthConfig& c) {
  std::vector<std::vector<std::vector<double>>> sigs;
  sigs.reserve(c.layers);
  for (std::size_t l = 0; l < c.layers; ++l) {
    sigs.push_back(layer_signatures(c, l));
  }
  return sigs;
}

std::vector<double> scales_from(const SynthConfig& c, const std::vector<std::vector<std::vector<double>>>& sigs,
                                double signal_scale, unsigned threads) {
  const std::size_t total = c.phenomena * c.samples_per_phenomenon;
  std::vector<std::vector<double>> per_sample(total);
  parallel_for(total, threads, [&](std::size_t g) {
    const std::size_t p = g / c.samples_per_phenomenon;
    const std::size_t i = g % c.samples_per_phenomenon;
    const auto raw = raw_deltas(c, sigs, p, i, signal_scale);
    std::vector<double> norms(c.layers);
    for (std::size_t l = 0; l < c.layers; ++l) {
      norms[l] = norm(std::span<const double>(raw).subspan(l * c.dim, c.dim));
    }
    per_sample[g] = std::move(norms);
  });
  std::vector<double> scales(c.layers, 1.0);
  for (std::size_t l = 0; l < c.layers; ++l) {
    double max_norm = 0.0;
    for (const auto& n : per_sample) {
      max_norm = std::max(max_norm, n[l]);
    }
    scales[l] = 1.0 / std::max(1.0, max_norm);
  }
  return scales;
}

}  // namespace

void SynthConfig::validate() const {
  if (phenomena < 1 || layers < 1) {
    throw ConfigError("synthetic config needs phenomena >= 1 and layers >= 1");
  }
  if (samples_per_phenomenon < 2) {
    throw ConfigError("synthetic config needs samples_per_phenomenon >= 2");
  }
  if (dim < 2) {
    throw ConfigError("synthetic config needs dim >= 2 to build unit-norm embeddings");
  }
  if (signature_mode != SignatureMode::kRandomUnit && phenomena > dim) {
    throw ConfigError(std::string(mode_name(signature_mode)) + " signatures need phenomena <= dim (" +
                      std::to_string(phenomena) + " > " + std::to_string(dim) + ")");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ConfigError("noise_sigma must be finite and >= 0");
  }
  if (!std::isfinite(signal_scale)) {
    throw ConfigError("signal_scale must be finite");
  }
  if (!phenomenon_names.empty() && phenomenon_names.size() != phenomena) {
    throw ConfigError("phenomenon_names must list exactly one name per phenomenon");
  }
  for (const auto& [p, set] : planted) {
    if (p >= phenomena) {
      throw ConfigError("planted neurons reference phenomenon " + std::to_string(p) + " which does not exist");
    }
    for (const auto& n : set.neurons) {
      if (n.layer >= layers || n.dim >= dim) {
        throw ConfigError("planted neuron [" + std::to_string(n.layer) + "," + std::to_string(n.dim) +
                          "] outside the " + std::to_string(layers) + "x" + std::to_string(dim) + " universe");
      }
    }
  }
}

std::string SynthConfig::phenomenon_name(std::size_t p) const {
  if (!phenomenon_names.empty()) {
    return phenomenon_names[p];
  }
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "phenomenon_%02zu", p);
  return buffer;
}

std::string SynthConfig::pair_id(std::size_t p, std::size_t i) const {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "-%05zu", i);
  return phenomenon_name(p) + buffer;
}

SynthConfig synth_config_from_json(const std::string& text) {
  SynthConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.phenomena = j.at("phenomena").get<std::size_t>();
    c.samples_per_phenomenon = j.at("samples_per_phenomenon").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.dim = j.at("dim").get<std::size_t>();
    c.signature_mode = mode_from(j.value("signature_mode", std::string("orthogonal")));
    c.theta_degrees = j.value("theta_degrees", 60.0);
    c.signal_scale = j.value("signal_scale", 1.0);
    c.noise_sigma = j.value("noise_sigma", 0.0);
    c.rng_seed = j.value("rng_seed", std::uint64_t{0});
    c.model_id = j.value("model_id", std::string("synthetic"));
    c.checkpoint_tokens = j.value("checkpoint_tokens", std::int64_t{0});
    c.phenomenon_names = j.value("phenomenon_names", std::vector<std::string>{});
    if (j.contains("planted_neurons")) {
      for (const auto& [key, value] : j.at("planted_neurons").items()) {
        std::size_t p = 0;
        auto named = std::find(c.phenomenon_names.begin(), c.phenomenon_names.end(), key);
        if (named != c.phenomenon_names.end()) {
          p = static_cast<std::size_t>(named - c.phenomenon_names.begin());
        } else {
          try {
            p = std::stoul(key);
          } catch (const std::exception&) {
            throw ConfigError("planted_neurons key '" + key + "' is neither a phenomenon name nor an index");
          }
        }
        PlantedSet set;
        set.magnitude = value.at("magnitude").get<double>();
        for (const auto& id : value.at("neurons")) {
          set.neurons.push_back(NeuronId{id.at(0).get<std::uint32_t>(), id.at(1).get<std::uint32_t>()});
        }
        c.planted[p] = std::move(set);
      }
    }
    if (j.contains("checkpoint_schedule")) {
      for (const auto& step : j.at("checkpoint_schedule")) {
        c.checkpoint_schedule.push_back(ScheduleStep{step.at(0).get<std::int64_t>(), step.at(1).get<double>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

std::string synth_config_to_json(const SynthConfig& c) {
  ordered_json j;
  j["phenomena"] = c.phenomena;
  j["samples_per_phenomenon"] = c.samples_per_phenomenon;
  j["layers"] = c.layers;
  j["dim"] = c.dim;
  j["signature_mode"] = mode_name(c.signature_mode);
  j["theta_degrees"] = c.theta_degrees;
  j["signal_scale"] = c.signal_scale;
  j["noise_sigma"] = c.noise_sigma;
  j["rng_seed"] = c.rng_seed;
  j["model_id"] = c.model_id;
  j["checkpoint_tokens"] = c.checkpoint_tokens;
  if (!c.phenomenon_names.empty()) {
    j["phenomenon_names"] = c.phenomenon_names;
  }
  auto planted = ordered_json::object();
  for (const auto& [p, set] : c.planted) {
    auto ids = ordered_json::array();
    for (const auto& n : set.neurons) {
      ids.push_back({n.layer, n.dim});
    }
    planted[std::to_string(p)] = {{"neurons", ids}, {"magnitude", set.magnitude}};
  }
  j["planted_neurons"] = std::move(planted);
  auto schedule = ordered_json::array();
  for (const auto& s : c.checkpoint_schedule) {
    schedule.push_back({s.token_count, s.signal_scale});
  }
  j["checkpoint_schedule"] = std::move(schedule);
  return j.dump(2) + "\n";
}

std::vector<double> signature(const SynthConfig& config, std::size_t layer, std::size_t p) {
  config.validate();
  return layer_signatures(config, layer).at(p);
}

std::vector<double> delta_scales(const SynthConfig& config, double signal_scale, unsigned threads) {
  config.validate();
  return scales_from(config, all_signatures(config), signal_scale, threads);
}

std::vector<double> intended_delta(const SynthConfig& config, std::size_t p, std::size_t i, std::size_t layer,
                                   double signal_scale, double layer_scale) {
  config.validate();
  const auto raw = raw_deltas(config, all_signatures(config), p, i, signal_scale);
  std::vector<double> out(raw.begin() + static_cast<std::ptrdiff_t>(layer * config.dim),
                          raw.begin() + static_cast<std::ptrdiff_t>((layer + 1) * config.dim));
  for (auto& x : out) {
    x *= layer_scale;
  }
  return out;
}

void split_delta(std::span<const double> delta, std::span<const double> direction, std::span<double> good,
                 std::span<double> bad) {
  const std::size_t dim = delta.size();
  const double r = norm(delta);
  if (r > 2.0) {
    throw DomainError("difference vector norm exceeds 2; cannot split into unit vectors");
  }
  // w: component of `direction` orthogonal to delta, normalized.
  std::vector<double> w(direction.begin(), direction.end());
  if (r > 0.0) {
    double proj = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      proj += w[d] * delta[d];
    }
    proj /= r * r;
    for (std::size_t d = 0; d < dim; ++d) {
      w[d] -= proj * delta[d];
    }
  }
  const double wn = norm(w);
  if (wn < 1e-12) {
    throw DomainError("completion direction is parallel to the difference vector");
  }
  const double c = std::sqrt(std::max(0.0, 1.0 - r * r / 4.0));
  for (std::size_t d = 0; d < dim; ++d) {
    const double shared = c * w[d] / wn;
    good[d] = delta[d] / 2.0 + shared;
    bad[d] = -delta[d] / 2.0 + shared;
  }
}

Dump generate_step(const SynthConfig& config, const ScheduleStep& step, unsigned threads) {
  config.validate();
  const auto sigs = all_signatures(config);
  const auto scales = scales_from(config, sigs, step.signal_scale, threads);
  const std::size_t n = config.samples_per_phenomenon;
  const std::size_t total = config.phenomena * n;
  const std::size_t dim = config.dim;

  Dump dump;
  auto& h = dump.header;
  h.model_id = config.model_id;
  h.checkpoint_tokens = step.token_count;
  h.seed = static_cast<std::int64_t>(config.rng_seed);
  h.num_layers = config.layers;
  h.hidden_dim = dim;
  h.normalization = Normalization::kL2PerLayer;
  for (std::size_t p = 0; p < config.phenomena; ++p) {
    PhenomenonInfo info{config.phenomenon_name(p), n, {}};
    for (std::size_t i = 0; i < n; ++i) {
      info.pair_ids.push_back(config.pair_id(p, i));
    }
    h.phenomena.push_back(std::move(info));
  }
  ordered_json extra;
  extra["generator"] = kRngName;
  extra["signature_mode"] = mode_name(config.signature_mode);
  extra["signal_scale"] = step.signal_scale;
  extra["noise_sigma"] = config.noise_sigma;
  h.extra_json = extra.dump();

  dump.samples.resize(total);
  parallel_for(total, threads, [&](std::size_t g) {
    const std::size_t p = g / n;
    const std::size_t i = g % n;
    auto raw = raw_deltas(config, sigs, p, i, step.signal_scale);
    Rng completion(derive_seed(config.rng_seed, {kCompletionStream, p, i}));
    SamplePair& s = dump.samples[g];
    s.pair_id = config.pair_id(p, i);
    s.phenomenon = config.phenomenon_name(p);
    s.good.resize(config.layers * dim);
    s.bad.resize(config.layers * dim);
    std::vector<double> delta(dim);
    std::vector<double> direction(dim);
    std::vector<double> good(dim);
    std::vector<double> bad(dim);
    for (std::size_t l = 0; l < config.layers; ++l) {
      for (std::size_t d = 0; d < dim; ++d) {
        delta[d] = raw[l * dim + d] * scales[l];
      }
      // A free coordinate axis keeps g and u symmetric after float rounding,
      // so the stored difference stays exactly parallel to delta.
      std::size_t free_axes = 0;
      for (std::size_t d = 0; d < dim; ++d) {
        free_axes += delta[d] == 0.0 ? 1 : 0;
      }
      if (free_axes > 0) {
        std::size_t pick = static_cast<std::size_t>(completion.below(free_axes));
        for (std::size_t d = 0; d < dim; ++d) {
          direction[d] = 0.0;
          if (delta[d] == 0.0 && pick-- == 0) {
            direction[d] = 1.0;
          }
        }
        split_delta(delta, direction, good, bad);
      }
      for (; free_axes == 0;) {
        for (auto& x : direction) {
          x = completion.normal();
        }
        try {
          split_delta(delta, direction, good, bad);
          break;
        } catch (const DomainError&) {
          // direction happened to be parallel to delta; draw again
        }
      }
      for (std::size_t d = 0; d < dim; ++d) {
        s.good[l * dim + d] = static_cast<float>(good[d]);
        s.bad[l * dim + d] = static_cast<float>(bad[d]);
      }
    }
  });
  return dump;
}

Dump generate(const SynthConfig& config, unsigned threads) {
  return generate_step(config, ScheduleStep{config.checkpoint_tokens, config.signal_scale}, threads);
}

GroundTruth ground_truth(const SynthConfig& config, unsigned threads) {
  config.validate();
  GroundTruth truth;
  truth.generator = kRngName;
  truth.signatures = all_signatures(config);
  truth.planted = config.planted;
  truth.delta_scales = scales_from(config, truth.signatures, config.signal_scale, threads);
  const std::size_t k = config.phenomena;
  truth.signature_cosines.assign(config.layers, std::vector<std::vector<double>>(k, std::vector<double>(k, 0.0)));
  for (std::size_t l = 0; l < config.layers; ++l) {
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t q = 0; q < k; ++q) {
        double c = 0.0;
        for (std::size_t d = 0; d < config.dim; ++d) {
          c += truth.signatures[l][p][d] * truth.signatures[l][q][d];
        }
        truth.signature_cosines[l][p][q] = c;
      }
    }
  }
  bool any_planted = false;
  for (const auto& [p, set] : config.planted) {
    any_planted = any_planted || (!set.neurons.empty() && set.magnitude != 0.0);
  }
  if (config.noise_sigma == 0.0 && !any_planted && config.signal_scale != 0.0 && k >= 2) {
    std::vector<std::vector<ExpectedCell>> expected(k, std::vector<ExpectedCell>(config.layers));
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t l = 0; l < config.layers; ++l) {
        double inter = 0.0;
        for (std::size_t q = 0; q < k; ++q) {
          if (q != p) {
            inter += truth.signature_cosines[l][p][q];
          }
        }
        inter /= static_cast<double>(k - 1);  // equal sample counts
        expected[p][l] = ExpectedCell{1.0, inter, 1.0 - inter};
      }
    }
    truth.expected = std::move(expected);
  }
  return truth;
}

std::string ground_truth_to_json(const SynthConfig& config, const GroundTruth& truth) {
  ordered_json j;
  j["generator"] = truth.generator;
  j["config"] = ordered_json::parse(synth_config_to_json(config));
  j["delta_scales"] = truth.delta_scales;
  auto sigs = ordered_json::array();
  for (std::size_t l = 0; l < truth.signatures.size(); ++l) {
    auto layer = ordered_json::object();
    for (std::size_t p = 0; p < truth.signatures[l].size(); ++p) {
      layer[config.phenomenon_name(p)] = truth.signatures[l][p];
    }
    sigs.push_back(std::move(layer));
  }
  j["signatures"] = std::move(sigs);
  j["signature_cosines"] = truth.signature_cosines;
  auto planted = ordered_json::object();
  for (const auto& [p, set] : truth.planted) {
    auto ids = ordered_json::array();
    for (const auto& n : set.neurons) {
      ids.push_back({n.layer, n.dim});
    }
    planted[config.phenomenon_name(p)] = {{"neurons", ids}, {"magnitude", set.magnitude}};
  }
  j["planted_neurons"] = std::move(planted);
  if (truth.expected) {
    auto expected = ordered_json::array();
    for (std::size_t p = 0; p < truth.expected->size(); ++p) {
      for (std::size_t l = 0; l < (*truth.expected)[p].size(); ++l) {
        const auto& e = (*truth.expected)[p][l];
        expected.push_back(
            {{"phenomenon", config.phenomenon_name(p)}, {"layer", l}, {"intra", e.intra}, {"inter", e.inter}, {"ssi", e.ssi}});
      }
    }
    j["expected_ssi"] = std::move(expected);
  } else {
    j["expected_ssi"] = nullptr;
  }
  return j.dump(2) + "\n";
}

}  // namespace ssilab
