#include "ssilab/behavior.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "ssilab/error.hpp"
#include "ssilab/rng.hpp"
#include "ssilab/stats.hpp"
#include "ssilab/text_io.hpp"

namespace ssilab {

using ordered_json = nlohmann::ordered_json;

double mean_logprob(double sum_logprob, std::int64_t token_count) {
  if (token_count < 1) {
    throw DomainError("token count must be >= 1, got " + std::to_string(token_count));
  }
  if (!std::isfinite(sum_logprob)) {
    throw DomainError("log-probability sum must be finite");
  }
  return sum_logprob / static_cast<double>(token_count);
}

double perplexity(double sum_logprob, std::int64_t token_count) {
  return std::exp(-mean_logprob(sum_logprob, token_count));
}

AccuracyResult accuracy(std::span<const LogProbRecord> records) {
  if (records.empty()) {
    throw DomainError("accuracy of an empty record set");
  }
  AccuracyResult result;
  std::map<std::string, std::size_t> correct_by;
  std::size_t correct = 0;
  for (const auto& r : records) {
    const double g = mean_logprob(r.g_logprob_sum, r.g_token_count);
    const double u = mean_logprob(r.u_logprob_sum, r.u_token_count);
    auto& ph = result.per_phenomenon[r.phenomenon];
    ph.n_pairs += 1;
    if (g > u) {
      correct += 1;
      correct_by[r.phenomenon] += 1;
    } else if (g == u) {
      ph.n_ties += 1;
      result.n_ties += 1;
    }
  }
  result.n_pairs = records.size();
  result.overall = static_cast<double>(correct) / static_cast<double>(records.size());
  for (auto& [name, ph] : result.per_phenomenon) {
    ph.accuracy = static_cast<double>(correct_by[name]) / static_cast<double>(ph.n_pairs);
  }
  return result;
}

std::string accuracy_to_json(const AccuracyResult& result) {
  ordered_json j;
  j["overall"] = result.overall;
  j["n_pairs"] = result.n_pairs;
  j["n_ties"] = result.n_ties;
  auto per = ordered_json::object();
  for (const auto& [name, ph] : result.per_phenomenon) {
    per[name] = {{"accuracy", ph.accuracy}, {"n_pairs", ph.n_pairs}, {"n_ties", ph.n_ties}};
  }
  j["per_phenomenon"] = std::move(per);
  return j.dump(2) + "\n";
}

std::string accuracy_to_csv(const AccuracyResult& result) {
  std::ostringstream out;
  out << "phenomenon,accuracy,n_pairs,n_ties\n";
  for (const auto& [name, ph] : result.per_phenomenon) {
    out << csv_field(name) << ',' << format_real(ph.accuracy) << ',' << ph.n_pairs << ',' << ph.n_ties << '\n';
  }
  out << "__overall__," << format_real(result.overall) << ',' << result.n_pairs << ',' << result.n_ties << '\n';
  return out.str();
}

AblationMaskSet make_masks(const NeuronSelection& selection, std::size_t num_layers, std::size_t hidden_dim,
                           std::uint64_t rng_seed) {
  const std::size_t universe = num_layers * hidden_dim;
  if (selection.selected.empty()) {
    throw ConfigError("cannot build ablation masks from an empty selection");
  }
  std::vector<NeuronId> targeted = selection.selected;
  std::sort(targeted.begin(), targeted.end());
  targeted.erase(std::unique(targeted.begin(), targeted.end()), targeted.end());
  for (const auto& n : targeted) {
    if (n.layer >= num_layers || n.dim >= hidden_dim) {
      throw ConfigError("selected neuron outside the " + std::to_string(num_layers) + "x" +
                        std::to_string(hidden_dim) + " universe");
    }
  }
  const std::size_t k = targeted.size();
  if (k > universe - k) {
    throw ConfigError("selection of " + std::to_string(k) + " neurons leaves only " + std::to_string(universe - k) +
                      " neurons for a disjoint random mask");
  }
  std::vector<std::uint64_t> complement;
  complement.reserve(universe - k);
  std::size_t t = 0;
  for (std::uint64_t idx = 0; idx < universe; ++idx) {
    const NeuronId id{static_cast<std::uint32_t>(idx / hidden_dim), static_cast<std::uint32_t>(idx % hidden_dim)};
    if (t < k && targeted[t] == id) {
      ++t;
      continue;
    }
    complement.push_back(idx);
  }
  // Partial Fisher-Yates: the first k slots become a uniform sample.
  Rng rng(derive_seed(rng_seed, {0x6D61736BULL}));
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(complement.size() - i));
    std::swap(complement[i], complement[j]);
  }
  AblationMaskSet masks;
  masks.rng_seed = rng_seed;
  masks.targeted = std::move(targeted);
  for (std::size_t i = 0; i < k; ++i) {
    masks.random.push_back(NeuronId{static_cast<std::uint32_t>(complement[i] / hidden_dim),
                                    static_cast<std::uint32_t>(complement[i] % hidden_dim)});
  }
  std::sort(masks.random.begin(), masks.random.end());
  return masks;
}

std::string masks_to_json(const AblationMaskSet& masks) {
  ordered_json j;
  j["seed"] = masks.rng_seed;
  auto list = [](const std::vector<NeuronId>& ids) {
    auto arr = ordered_json::array();
    for (const auto& n : ids) {
      arr.push_back({n.layer, n.dim});
    }
    return arr;
  };
  j["targeted"] = list(masks.targeted);
  j["random"] = list(masks.random);
  return j.dump() + "\n";
}

AblationMaskSet masks_from_json(const std::string& text) {
  AblationMaskSet masks;
  try {
    const auto j = nlohmann::json::parse(text);
    masks.rng_seed = j.at("seed").get<std::uint64_t>();
    for (const auto& id : j.at("targeted")) {
      masks.targeted.push_back(NeuronId{id.at(0).get<std::uint32_t>(), id.at(1).get<std::uint32_t>()});
    }
    for (const auto& id : j.at("random")) {
      masks.random.push_back(NeuronId{id.at(0).get<std::uint32_t>(), id.at(1).get<std::uint32_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("mask JSON: ") + e.what());
  }
  return masks;
}

namespace {

double side_ppl(const LogProbRecord& r, SentenceSide side) {
  return side == SentenceSide::kGrammatical ? perplexity(r.g_logprob_sum, r.g_token_count)
                                            : perplexity(r.u_logprob_sum, r.u_token_count);
}

std::unordered_map<std::string, const LogProbRecord*> index_records(std::span<const LogProbRecord> records,
                                                                   const char* label) {
  std::unordered_map<std::string, const LogProbRecord*> index;
  for (const auto& r : records) {
    if (!index.emplace(r.pair_id, &r).second) {
      throw AlignmentError(std::string(label) + " records repeat pair id '" + r.pair_id + "'");
    }
  }
  return index;
}

void check_alignment(std::span<const LogProbRecord> baseline,
                     const std::unordered_map<std::string, const LogProbRecord*>& other, const char* label) {
  std::vector<std::string> missing;
  std::unordered_set<std::string> base_ids;
  for (const auto& r : baseline) {
    base_ids.insert(r.pair_id);
    if (!other.contains(r.pair_id)) {
      missing.push_back(r.pair_id);
    }
  }
  std::vector<std::string> extra;
  for (const auto& [id, _] : other) {
    if (!base_ids.contains(id)) {
      extra.push_back(id);
    }
  }
  std::sort(extra.begin(), extra.end());
  if (missing.empty() && extra.empty()) {
    return;
  }
  std::string msg = std::string(label) + " records do not align with baseline:";
  auto list = [&msg](const char* what, const std::vector<std::string>& ids) {
    if (ids.empty()) {
      return;
    }
    msg += std::string(" ") + what + " [";
    for (std::size_t i = 0; i < ids.size() && i < 10; ++i) {
      msg += (i ? ", " : "") + ids[i];
    }
    if (ids.size() > 10) {
      msg += ", ... (" + std::to_string(ids.size()) + " total)";
    }
    msg += "]";
  };
  list("missing", missing);
  list("unexpected", extra);
  throw AlignmentError(msg);
}

}  // namespace

AblationReport ablation_report(std::span<const LogProbRecord> baseline, std::span<const LogProbRecord> after_targeted,
                               std::span<const LogProbRecord> after_random, SentenceSide side) {
  index_records(baseline, "baseline");
  const auto targeted = index_records(after_targeted, "targeted");
  const auto random = index_records(after_random, "random");
  check_alignment(baseline, targeted, "targeted");
  check_alignment(baseline, random, "random");
  if (baseline.size() < 2) {
    throw DomainError("ablation report needs at least 2 sentences");
  }
  std::vector<double> delta_targeted;
  std::vector<double> delta_random;
  delta_targeted.reserve(baseline.size());
  delta_random.reserve(baseline.size());
  for (const auto& r : baseline) {
    const double base = side_ppl(r, side);
    delta_targeted.push_back(side_ppl(*targeted.at(r.pair_id), side) - base);
    delta_random.push_back(side_ppl(*random.at(r.pair_id), side) - base);
  }
  const auto test = stats::paired_t(delta_targeted, delta_random, stats::Alternative::kGreater);
  AblationReport report;
  report.side = side;
  report.mean_ppl_delta_targeted = stats::mean(delta_targeted);
  report.mean_ppl_delta_random = stats::mean(delta_random);
  report.paired_t = test.t;
  report.df = static_cast<std::int64_t>(baseline.size()) - 1;
  report.p_value = test.p;
  report.n_sentences = baseline.size();
  return report;
}

std::string ablation_report_to_json(const AblationReport& report) {
  ordered_json j;
  j["side"] = report.side == SentenceSide::kGrammatical ? "grammatical" : "ungrammatical";
  j["mean_ppl_delta_targeted"] = report.mean_ppl_delta_targeted;
  j["mean_ppl_delta_random"] = report.mean_ppl_delta_random;
  // JSON has no infinities; a zero-variance difference series is written as a string.
  if (std::isfinite(report.paired_t)) {
    j["paired_t"] = report.paired_t;
  } else {
    j["paired_t"] = report.paired_t > 0 ? "inf" : "-inf";
  }
  j["df"] = report.df;
  j["p_value"] = report.p_value;
  j["n_sentences"] = report.n_sentences;
  return j.dump(2) + "\n";
}

std::string ablation_report_to_csv(const AblationReport& report) {
  std::ostringstream out;
  out << "side,mean_ppl_delta_targeted,mean_ppl_delta_random,paired_t,df,p_value,n_sentences\n";
  out << (report.side == SentenceSide::kGrammatical ? "grammatical" : "ungrammatical") << ','
      << format_real(report.mean_ppl_delta_targeted) << ',' << format_real(report.mean_ppl_delta_random) << ','
      << format_real(report.paired_t) << ',' << report.df << ',' << format_real(report.p_value) << ','
      << report.n_sentences << '\n';
  return out.str();
}

}  // namespace ssilab
