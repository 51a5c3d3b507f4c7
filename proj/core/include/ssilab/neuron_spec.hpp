#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssilab/ssi_engine.hpp"

namespace ssilab {

/// One scalar coordinate of the pooled hidden representation.
struct NeuronId {
  std::uint32_t layer = 0;
  std::uint32_t dim = 0;

  auto operator<=>(const NeuronId&) const = default;
};

/// How within-phenomenon consistency of a single neuron is measured.
enum class ConsistencyStrategy {
  /// Standardize each neuron over all samples of all phenomena (population
  /// moments), then average the products of standardized responses over all
  /// unordered sample pairs inside the phenomenon.
  kStandardizedPairProduct,
};

const char* strategy_name(ConsistencyStrategy strategy);

/// Consistency c_p(d) for every neuron, indexed layer * D + dim.
struct ConsistencyMap {
  std::string phenomenon;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  std::vector<double> values;
  /// Neurons with zero global variance (value forced to 0).
  std::vector<char> zero_variance;

  [[nodiscard]] std::size_t size() const { return values.size(); }
};

ConsistencyMap neuron_consistency(const DeltaSet& deltas, std::size_t phenomenon, unsigned threads = 1,
                                  ConsistencyStrategy strategy = ConsistencyStrategy::kStandardizedPairProduct);

/// Consistency maps for every phenomenon, sharing one standardization pass.
std::vector<ConsistencyMap> all_consistencies(const DeltaSet& deltas, unsigned threads = 1,
                                              ConsistencyStrategy strategy = ConsistencyStrategy::kStandardizedPairProduct);

/// z_p(d) against the background {c_q(d) : q != p} with sample standard
/// deviation. Empty where the background has zero spread. Needs >= 3 phenomena.
std::vector<std::optional<double>> distinctiveness_z(std::span<const ConsistencyMap> consistencies,
                                                     std::size_t phenomenon);

struct SelectionThresholds {
  double quantile = 0.25;
  double z = 2.0;
};

struct NeuronScore {
  NeuronId neuron;
  double consistency = 0.0;
  std::optional<double> z;
  bool zero_variance = false;
  bool selected = false;
};

struct NeuronSelection {
  std::string phenomenon;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  SelectionThresholds thresholds;
  ConsistencyStrategy strategy = ConsistencyStrategy::kStandardizedPairProduct;
  /// All L x D scores; may be empty for selections loaded without scores.
  std::vector<NeuronScore> scores;
  /// Sorted ascending.
  std::vector<NeuronId> selected;
  /// Smallest consistency inside the top-quantile set.
  double consistency_cutoff = 0.0;
  std::size_t zero_variance_count = 0;
  std::size_t undefined_z_count = 0;
};

/// Selection from precomputed consistencies: a neuron is kept when it ranks
/// within the top ceil(quantile * L * D) by consistency (ties ordered by
/// ascending NeuronId) and its z exceeds the threshold.
NeuronSelection select_from_consistencies(std::span<const ConsistencyMap> consistencies, std::size_t phenomenon,
                                          const SelectionThresholds& thresholds = {});

NeuronSelection select_neurons(const DeltaSet& deltas, std::size_t phenomenon,
                               const SelectionThresholds& thresholds = {}, unsigned threads = 1);

std::vector<NeuronSelection> select_all(const DeltaSet& deltas, const SelectionThresholds& thresholds = {},
                                        unsigned threads = 1);

struct Overlap {
  double jaccard_percent = 0.0;
  /// |a & b| / |a| and |a & b| / |b|, in percent (0 for an empty denominator).
  double a_in_b_percent = 0.0;
  double b_in_a_percent = 0.0;
  std::size_t intersection = 0;
  std::size_t union_size = 0;
  bool both_empty = false;
};

Overlap neuron_overlap(const NeuronSelection& a, const NeuronSelection& b);

/// Union of several selections (same L, D) as a single selection named `name`.
NeuronSelection union_selection(std::span<const NeuronSelection> selections, const std::string& name);

std::string selections_to_json(std::span<const NeuronSelection> selections, bool include_scores);
std::vector<NeuronSelection> selections_from_json(const std::string& text);

}  // namespace ssilab
