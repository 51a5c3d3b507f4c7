#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssilab/activation_store.hpp"
#include "ssilab/neuron_spec.hpp"

namespace ssilab {

enum class SignatureMode {
  /// Distinct coordinate axes per phenomenon (exactly orthogonal, exactly representable).
  kOrthogonal,
  /// Independent random unit vectors.
  kRandomUnit,
  /// u_0 = e_a; u_p = cos(theta) e_a + sin(theta) e_b(p) for p >= 1.
  kSharedAngle,
};

struct PlantedSet {
  std::vector<NeuronId> neurons;
  double magnitude = 0.0;
};

struct ScheduleStep {
  std::int64_t token_count = 0;
  double signal_scale = 1.0;
};

struct SynthConfig {
  std::size_t phenomena = 3;
  std::size_t samples_per_phenomenon = 10;
  std::size_t layers = 1;
  std::size_t dim = 8;
  SignatureMode signature_mode = SignatureMode::kOrthogonal;
  double theta_degrees = 60.0;
  double signal_scale = 1.0;
  double noise_sigma = 0.0;
  /// Keyed by phenomenon index.
  std::map<std::size_t, PlantedSet> planted;
  std::uint64_t rng_seed = 0;
  std::vector<ScheduleStep> checkpoint_schedule;
  std::string model_id = "synthetic";
  std::int64_t checkpoint_tokens = 0;
  /// Optional; defaults to "phenomenon_00", "phenomenon_01", ...
  std::vector<std::string> phenomenon_names;

  /// Throws ConfigError.
  void validate() const;
  [[nodiscard]] std::string phenomenon_name(std::size_t p) const;
  [[nodiscard]] std::string pair_id(std::size_t p, std::size_t i) const;
};

SynthConfig synth_config_from_json(const std::string& text);
std::string synth_config_to_json(const SynthConfig& config);

/// Unit signature of phenomenon p at `layer`.
std::vector<double> signature(const SynthConfig& config, std::size_t layer, std::size_t p);

/// Per-layer factors applied to every difference vector so that all have norm
/// <= 1 (and can therefore be written as a difference of two unit vectors).
std::vector<double> delta_scales(const SynthConfig& config, double signal_scale, unsigned threads = 1);

/// The difference vector the generator plants for sample i of phenomenon p at
/// `layer`, including the layer scale: scale * (signal * u_p + sigma * g + planted).
std::vector<double> intended_delta(const SynthConfig& config, std::size_t p, std::size_t i, std::size_t layer,
                                   double signal_scale, double layer_scale);

/// Splits delta (norm <= 2) into unit vectors g, u with g - u = delta, using
/// `direction` (any vector not parallel to delta) for the shared component.
void split_delta(std::span<const double> delta, std::span<const double> direction, std::span<double> good,
                 std::span<double> bad);

/// Generates a dump using config.signal_scale and config.checkpoint_tokens.
Dump generate(const SynthConfig& config, unsigned threads = 1);

/// Generates the dump for one checkpoint of the schedule. The noise draws are
/// shared across steps; only the signal scale and the token count change.
Dump generate_step(const SynthConfig& config, const ScheduleStep& step, unsigned threads = 1);

struct ExpectedCell {
  double intra = 0.0;
  double inter = 0.0;
  double ssi = 0.0;
};

struct GroundTruth {
  std::string generator;
  /// [layer][phenomenon] -> unit vector
  std::vector<std::vector<std::vector<double>>> signatures;
  /// [layer][p][q]
  std::vector<std::vector<std::vector<double>>> signature_cosines;
  std::map<std::size_t, PlantedSet> planted;
  std::vector<double> delta_scales;
  /// [phenomenon][layer]; present only when the closed form applies (no noise,
  /// no planted neurons, nonzero signal).
  std::optional<std::vector<std::vector<ExpectedCell>>> expected;
};

GroundTruth ground_truth(const SynthConfig& config, unsigned threads = 1);
std::string ground_truth_to_json(const SynthConfig& config, const GroundTruth& truth);

}  // namespace ssilab
