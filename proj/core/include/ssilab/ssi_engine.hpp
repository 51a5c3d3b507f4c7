#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssilab/activation_store.hpp"

namespace ssilab {

enum class DeltaPolicy {
  /// Scale each layer row of h_g and h_u to unit L2 norm, then subtract.
  kNormalizeThenSubtract,
  /// Subtract raw rows; kept for sensitivity analysis.
  kSubtractRaw,
};

struct ExcludedSample {
  std::string pair_id;
  std::string phenomenon;
  std::string reason;
};

/// A (sample, layer) whose h_g or h_u row had (near-)zero norm, so its
/// difference vector was set to zero.
struct FlaggedRow {
  std::string pair_id;
  std::size_t layer = 0;
};

/// Retained difference vectors of one phenomenon, stored sample-major as
/// [sample][layer][dim].
struct PhenomenonDeltas {
  std::string name;
  std::vector<std::string> pair_ids;
  std::vector<double> values;

  [[nodiscard]] std::size_t size() const { return pair_ids.size(); }
  [[nodiscard]] bool computable() const { return pair_ids.size() >= 2; }
};

struct DeltaSet {
  std::string model_id;
  std::int64_t seed = 0;
  std::int64_t checkpoint_tokens = 0;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  std::vector<PhenomenonDeltas> phenomena;
  std::vector<ExcludedSample> excluded;
  std::vector<FlaggedRow> flagged_rows;

  [[nodiscard]] std::span<const double> row(std::size_t phenomenon, std::size_t sample, std::size_t layer) const {
    return std::span<const double>(phenomena[phenomenon].values)
        .subspan((sample * num_layers + layer) * hidden_dim, hidden_dim);
  }
  [[nodiscard]] std::optional<std::size_t> index_of(const std::string& name) const;
  [[nodiscard]] std::size_t total_samples() const;
};

DeltaSet compute_deltas(const Dump& dump, DeltaPolicy policy = DeltaPolicy::kNormalizeThenSubtract,
                        unsigned threads = 1);

/// Optional cap on the number of cosine pairs evaluated per (phenomenon,
/// layer) and kind. Pairs are drawn without replacement from a stream seeded by
/// (seed, phenomenon index, layer, kind).
struct PairSampling {
  std::optional<std::uint64_t> cap;
  std::uint64_t seed = 0;
};

enum class SimilarityMethod {
  /// Exact mean via sums of unit vectors: sum_{i<j} u_i.u_j = (|sum u|^2 - sum |u_i|^2) / 2.
  kCentroid,
  /// Exact mean via explicit enumeration of every pair.
  kPairwise,
};

struct SsiOptions {
  PairSampling sampling;
  SimilarityMethod method = SimilarityMethod::kCentroid;
  unsigned threads = 1;
  /// Layers to evaluate; empty means all.
  std::vector<std::size_t> layers;
};

/// Mean cosine similarity and the number of pairs it averages. `value` is empty
/// when the cell is uncomputable.
struct Similarity {
  std::optional<double> value;
  std::uint64_t n_pairs = 0;
};

/// Pairs per enumeration chunk. Partial sums are combined in chunk order, which
/// makes results independent of the worker count.
inline constexpr std::uint64_t kPairChunk = 4096;

Similarity intra_similarity(const DeltaSet& deltas, std::size_t phenomenon, std::size_t layer,
                            const SsiOptions& options = {});
Similarity inter_similarity(const DeltaSet& deltas, std::size_t phenomenon, std::size_t layer,
                            const SsiOptions& options = {});

struct SsiEntry {
  std::string phenomenon;
  std::size_t layer = 0;
  std::optional<double> intra;
  std::optional<double> inter;
  std::optional<double> ssi;
  std::uint64_t n_pairs_intra = 0;
  std::uint64_t n_pairs_inter = 0;
};

struct SsiTable {
  std::string model_id;
  std::int64_t seed = 0;
  std::int64_t checkpoint_tokens = 0;
  std::size_t num_layers = 0;
  std::vector<std::string> phenomena;
  /// Phenomenon-major, layers ascending within a phenomenon.
  std::vector<SsiEntry> entries;

  [[nodiscard]] const SsiEntry* find(const std::string& phenomenon, std::size_t layer) const;
};

SsiTable compute_ssi(const DeltaSet& deltas, const SsiOptions& options = {});

struct LayerProfile {
  /// Mean SSI over computable phenomena; empty at layers with none.
  std::vector<std::optional<double>> values;
  std::size_t skipped_entries = 0;
};

LayerProfile layer_profile(const SsiTable& table);

std::string ssi_table_to_csv(const SsiTable& table);
SsiTable ssi_table_from_csv(const std::string& text);

}  // namespace ssilab
