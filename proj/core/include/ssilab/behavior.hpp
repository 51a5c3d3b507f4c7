#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ssilab/activation_store.hpp"
#include "ssilab/neuron_spec.hpp"

namespace ssilab {

/// Mean natural-log probability per token. Throws DomainError for token_count < 1.
double mean_logprob(double sum_logprob, std::int64_t token_count);

/// exp(-mean_logprob).
double perplexity(double sum_logprob, std::int64_t token_count);

struct PhenomenonAccuracy {
  double accuracy = 0.0;
  std::size_t n_pairs = 0;
  std::size_t n_ties = 0;
};

struct AccuracyResult {
  double overall = 0.0;
  std::map<std::string, PhenomenonAccuracy> per_phenomenon;
  std::size_t n_pairs = 0;
  std::size_t n_ties = 0;
};

/// A pair is correct iff MP(g) > MP(u) strictly; ties count as incorrect.
AccuracyResult accuracy(std::span<const LogProbRecord> records);

std::string accuracy_to_json(const AccuracyResult& result);
std::string accuracy_to_csv(const AccuracyResult& result);

struct AblationMaskSet {
  std::uint64_t rng_seed = 0;
  std::vector<NeuronId> targeted;
  /// Same size as `targeted`, drawn without replacement from its complement.
  std::vector<NeuronId> random;
};

AblationMaskSet make_masks(const NeuronSelection& selection, std::size_t num_layers, std::size_t hidden_dim,
                           std::uint64_t rng_seed);

/// {"seed": s, "targeted": [[layer, dim], ...], "random": [[layer, dim], ...]}
std::string masks_to_json(const AblationMaskSet& masks);
AblationMaskSet masks_from_json(const std::string& text);

enum class SentenceSide { kGrammatical, kUngrammatical };

struct AblationReport {
  SentenceSide side = SentenceSide::kGrammatical;
  double mean_ppl_delta_targeted = 0.0;
  double mean_ppl_delta_random = 0.0;
  double paired_t = 0.0;
  std::int64_t df = 0;
  /// One-sided, alternative: targeted increase > random increase.
  double p_value = 1.0;
  std::size_t n_sentences = 0;
};

/// Per-sentence perplexity changes after targeted vs. random ablation, compared
/// by a paired t test across sentences. Record sets are aligned by pair_id in
/// baseline order.
AblationReport ablation_report(std::span<const LogProbRecord> baseline, std::span<const LogProbRecord> after_targeted,
                               std::span<const LogProbRecord> after_random,
                               SentenceSide side = SentenceSide::kGrammatical);

std::string ablation_report_to_json(const AblationReport& report);
std::string ablation_report_to_csv(const AblationReport& report);

}  // namespace ssilab
