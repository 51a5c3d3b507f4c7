#include "ssilab/neuron_spec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

#include "ssilab/error.hpp"
#include "ssilab/parallel.hpp"
#include "ssilab/stats.hpp"

namespace ssilab {

namespace {

constexpr std::size_t kNeuronChunk = 1024;

void require_all_computable(const DeltaSet& deltas) {
  for (const auto& p : deltas.phenomena) {
    if (!p.computable()) {
      throw ConfigError("phenomenon '" + p.name + "' has " + std::to_string(p.size()) +
                        " retained samples; neuron statistics need at least 2 in every phenomenon");
    }
  }
}

}  // namespace

const char* strategy_name(ConsistencyStrategy strategy) {
  switch (strategy) {
    case ConsistencyStrategy::kStandardizedPairProduct:
      return "standardized_pair_product";
  }
  return "unknown";
}

std::vector<ConsistencyMap> all_consistencies(const DeltaSet& deltas, unsigned threads,
                                              ConsistencyStrategy /*strategy*/) {
  require_all_computable(deltas);
  const std::size_t neurons = deltas.num_layers * deltas.hidden_dim;
  const std::size_t k_count = deltas.phenomena.size();
  const double total = static_cast<double>(deltas.total_samples());

  std::vector<ConsistencyMap> maps(k_count);
  for (std::size_t p = 0; p < k_count; ++p) {
    maps[p].phenomenon = deltas.phenomena[p].name;
    maps[p].num_layers = deltas.num_layers;
    maps[p].hidden_dim = deltas.hidden_dim;
    maps[p].values.assign(neurons, 0.0);
    maps[p].zero_variance.assign(neurons, 0);
  }

  // Each chunk owns a disjoint neuron range; every per-neuron sum runs over
  // samples in storage order.
  const std::size_t chunks = (neurons + kNeuronChunk - 1) / kNeuronChunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t begin = c * kNeuronChunk;
    const std::size_t end = std::min(neurons, begin + kNeuronChunk);
    const std::size_t width = end - begin;
    std::vector<double> mean(width, 0.0);
    std::vector<double> var(width, 0.0);
    std::vector<double> lo(width, std::numeric_limits<double>::infinity());
    std::vector<double> hi(width, -std::numeric_limits<double>::infinity());
    auto for_each_sample = [&](auto&& fn) {
      for (const auto& ph : deltas.phenomena) {
        const std::size_t stride = neurons;
        for (std::size_t i = 0; i < ph.size(); ++i) {
          fn(ph.values.data() + i * stride + begin);
        }
      }
    };
    for_each_sample([&](const double* x) {
      for (std::size_t k = 0; k < width; ++k) {
        mean[k] += x[k];
        lo[k] = std::min(lo[k], x[k]);
        hi[k] = std::max(hi[k], x[k]);
      }
    });
    for (auto& m : mean) {
      m /= total;
    }
    for_each_sample([&](const double* x) {
      for (std::size_t k = 0; k < width; ++k) {
        const double dev = x[k] - mean[k];
        var[k] += dev * dev;
      }
    });
    std::vector<double> inv_sd(width, 0.0);
    for (std::size_t k = 0; k < width; ++k) {
      if (lo[k] < hi[k]) {
        inv_sd[k] = 1.0 / std::sqrt(var[k] / total);
      }
    }
    std::vector<double> s(width);
    std::vector<double> q(width);
    for (std::size_t p = 0; p < k_count; ++p) {
      const auto& ph = deltas.phenomena[p];
      std::fill(s.begin(), s.end(), 0.0);
      std::fill(q.begin(), q.end(), 0.0);
      for (std::size_t i = 0; i < ph.size(); ++i) {
        const double* x = ph.values.data() + i * neurons + begin;
        for (std::size_t k = 0; k < width; ++k) {
          const double z = (x[k] - mean[k]) * inv_sd[k];
          s[k] += z;
          q[k] += z * z;
        }
      }
      const double n = static_cast<double>(ph.size());
      const double pairs = n * (n - 1.0);
      for (std::size_t k = 0; k < width; ++k) {
        if (inv_sd[k] == 0.0) {
          maps[p].zero_variance[begin + k] = 1;
          maps[p].values[begin + k] = 0.0;
        } else {
          maps[p].values[begin + k] = (s[k] * s[k] - q[k]) / pairs;
        }
      }
    }
  });
  return maps;
}

ConsistencyMap neuron_consistency(const DeltaSet& deltas, std::size_t phenomenon, unsigned threads,
                                  ConsistencyStrategy strategy) {
  if (phenomenon >= deltas.phenomena.size()) {
    throw ConfigError("phenomenon index out of range");
  }
  auto maps = all_consistencies(deltas, threads, strategy);
  return std::move(maps[phenomenon]);
}

std::vector<std::optional<double>> distinctiveness_z(std::span<const ConsistencyMap> consistencies,
                                                     std::size_t phenomenon) {
  const std::size_t k_count = consistencies.size();
  if (k_count < 3) {
    throw ConfigError("distinctiveness z needs at least 3 phenomena, got " + std::to_string(k_count));
  }
  if (phenomenon >= k_count) {
    throw ConfigError("phenomenon index out of range");
  }
  const std::size_t neurons = consistencies[phenomenon].size();
  for (const auto& c : consistencies) {
    if (c.size() != neurons) {
      throw ConfigError("consistency maps disagree on the neuron count");
    }
  }
  std::vector<std::optional<double>> z(neurons);
  std::vector<double> background(k_count - 1);
  for (std::size_t d = 0; d < neurons; ++d) {
    std::size_t b = 0;
    for (std::size_t q = 0; q < k_count; ++q) {
      if (q != phenomenon) {
        background[b++] = consistencies[q].values[d];
      }
    }
    const double var = stats::sample_variance(background);
    if (var == 0.0) {
      continue;
    }
    z[d] = (consistencies[phenomenon].values[d] - stats::mean(background)) / std::sqrt(var);
  }
  return z;
}

NeuronSelection select_from_consistencies(std::span<const ConsistencyMap> consistencies, std::size_t phenomenon,
                                          const SelectionThresholds& thresholds) {
  if (!(thresholds.quantile >= 0.0 && thresholds.quantile <= 1.0)) {
    throw ConfigError("quantile must lie in [0, 1]");
  }
  const auto z = distinctiveness_z(consistencies, phenomenon);
  const ConsistencyMap& own = consistencies[phenomenon];
  const std::size_t neurons = own.size();
  const std::size_t dim = own.hidden_dim;

  NeuronSelection sel;
  sel.phenomenon = own.phenomenon;
  sel.num_layers = own.num_layers;
  sel.hidden_dim = dim;
  sel.thresholds = thresholds;
  sel.scores.resize(neurons);
  for (std::size_t d = 0; d < neurons; ++d) {
    auto& s = sel.scores[d];
    s.neuron = NeuronId{static_cast<std::uint32_t>(d / dim), static_cast<std::uint32_t>(d % dim)};
    s.consistency = own.values[d];
    s.z = z[d];
    s.zero_variance = own.zero_variance[d] != 0;
    sel.zero_variance_count += s.zero_variance ? 1 : 0;
    sel.undefined_z_count += s.z ? 0 : 1;
  }

  const auto top_count = static_cast<std::size_t>(
      std::clamp(std::ceil(thresholds.quantile * static_cast<double>(neurons) - 1e-9), 0.0, static_cast<double>(neurons)));
  std::vector<std::size_t> order(neurons);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return own.values[a] > own.values[b]; });
  if (top_count > 0) {
    sel.consistency_cutoff = own.values[order[top_count - 1]];
  }
  for (std::size_t r = 0; r < top_count; ++r) {
    auto& s = sel.scores[order[r]];
    if (s.z && *s.z > thresholds.z) {
      s.selected = true;
    }
  }
  for (const auto& s : sel.scores) {
    if (s.selected) {
      sel.selected.push_back(s.neuron);
    }
  }
  return sel;
}

NeuronSelection select_neurons(const DeltaSet& deltas, std::size_t phenomenon, const SelectionThresholds& thresholds,
                               unsigned threads) {
  if (phenomenon >= deltas.phenomena.size()) {
    throw ConfigError("phenomenon index out of range");
  }
  const auto maps = all_consistencies(deltas, threads);
  return select_from_consistencies(maps, phenomenon, thresholds);
}

std::vector<NeuronSelection> select_all(const DeltaSet& deltas, const SelectionThresholds& thresholds,
                                        unsigned threads) {
  const auto maps = all_consistencies(deltas, threads);
  std::vector<NeuronSelection> out(maps.size());
  parallel_for(maps.size(), threads,
               [&](std::size_t p) { out[p] = select_from_consistencies(maps, p, thresholds); });
  return out;
}

Overlap neuron_overlap(const NeuronSelection& a, const NeuronSelection& b) {
  if (a.num_layers != b.num_layers || a.hidden_dim != b.hidden_dim) {
    throw ConfigError("neuron overlap needs selections over the same L x D universe");
  }
  Overlap o;
  std::vector<NeuronId> common;
  std::set_intersection(a.selected.begin(), a.selected.end(), b.selected.begin(), b.selected.end(),
                        std::back_inserter(common));
  o.intersection = common.size();
  o.union_size = a.selected.size() + b.selected.size() - common.size();
  if (o.union_size == 0) {
    o.both_empty = true;
    return o;
  }
  const double inter = static_cast<double>(o.intersection);
  o.jaccard_percent = 100.0 * inter / static_cast<double>(o.union_size);
  o.a_in_b_percent = a.selected.empty() ? 0.0 : 100.0 * inter / static_cast<double>(a.selected.size());
  o.b_in_a_percent = b.selected.empty() ? 0.0 : 100.0 * inter / static_cast<double>(b.selected.size());
  return o;
}

NeuronSelection union_selection(std::span<const NeuronSelection> selections, const std::string& name) {
  if (selections.empty()) {
    throw ConfigError("no selections to combine");
  }
  NeuronSelection out;
  out.phenomenon = name;
  out.num_layers = selections.front().num_layers;
  out.hidden_dim = selections.front().hidden_dim;
  out.thresholds = selections.front().thresholds;
  out.strategy = selections.front().strategy;
  for (const auto& s : selections) {
    if (s.num_layers != out.num_layers || s.hidden_dim != out.hidden_dim) {
      throw ConfigError("selections disagree on the L x D universe");
    }
    out.selected.insert(out.selected.end(), s.selected.begin(), s.selected.end());
  }
  std::sort(out.selected.begin(), out.selected.end());
  out.selected.erase(std::unique(out.selected.begin(), out.selected.end()), out.selected.end());
  return out;
}

std::string selections_to_json(std::span<const NeuronSelection> selections, bool include_scores) {
  using ordered_json = nlohmann::ordered_json;
  auto id_pair = [](const NeuronId& n) { return ordered_json::array({n.layer, n.dim}); };
  auto optional_real = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json j;
  if (!selections.empty()) {
    j["strategy"] = strategy_name(selections.front().strategy);
    j["num_layers"] = selections.front().num_layers;
    j["hidden_dim"] = selections.front().hidden_dim;
  }
  auto list = ordered_json::array();
  std::vector<double> counts;
  for (const auto& s : selections) {
    ordered_json e;
    e["phenomenon"] = s.phenomenon;
    e["quantile"] = s.thresholds.quantile;
    e["z_threshold"] = s.thresholds.z;
    e["consistency_cutoff"] = s.consistency_cutoff;
    e["n_selected"] = s.selected.size();
    auto selected = ordered_json::array();
    auto zero_variance = ordered_json::array();
    auto undefined_z = ordered_json::array();
    for (const auto& sc : s.scores) {
      if (sc.selected) {
        selected.push_back(
            {{"layer", sc.neuron.layer}, {"dim", sc.neuron.dim}, {"consistency", sc.consistency}, {"z", optional_real(sc.z)}});
      }
      if (sc.zero_variance) {
        zero_variance.push_back(id_pair(sc.neuron));
      }
      if (!sc.z) {
        undefined_z.push_back(id_pair(sc.neuron));
      }
    }
    if (s.scores.empty()) {
      // Selections read back from JSON carry ids only.
      for (const auto& n : s.selected) {
        selected.push_back({{"layer", n.layer}, {"dim", n.dim}, {"consistency", nullptr}, {"z", nullptr}});
      }
    }
    e["selected"] = std::move(selected);
    e["flags"] = {{"zero_variance", std::move(zero_variance)}, {"undefined_z", std::move(undefined_z)}};
    if (include_scores) {
      auto scores = ordered_json::array();
      for (const auto& sc : s.scores) {
        scores.push_back({{"layer", sc.neuron.layer},
                          {"dim", sc.neuron.dim},
                          {"consistency", sc.consistency},
                          {"z", optional_real(sc.z)},
                          {"selected", sc.selected}});
      }
      e["scores"] = std::move(scores);
    }
    list.push_back(std::move(e));
    counts.push_back(static_cast<double>(s.selected.size()));
  }
  j["phenomena"] = std::move(list);
  if (!counts.empty()) {
    ordered_json summary;
    summary["mean_selected"] = stats::mean(counts);
    summary["sd_selected"] = counts.size() >= 2 ? std::sqrt(stats::sample_variance(counts)) : 0.0;
    summary["neuron_universe"] = selections.front().num_layers * selections.front().hidden_dim;
    j["summary"] = std::move(summary);
  }
  return j.dump(2) + "\n";
}

std::vector<NeuronSelection> selections_from_json(const std::string& text) {
  std::vector<NeuronSelection> out;
  try {
    const auto j = nlohmann::json::parse(text);
    const auto layers = j.at("num_layers").get<std::size_t>();
    const auto dim = j.at("hidden_dim").get<std::size_t>();
    auto read_id = [&](std::uint32_t l, std::uint32_t d) {
      if (l >= layers || d >= dim) {
        throw ParseError("neuron [" + std::to_string(l) + "," + std::to_string(d) + "] outside the " +
                         std::to_string(layers) + "x" + std::to_string(dim) + " universe");
      }
      return NeuronId{l, d};
    };
    for (const auto& e : j.at("phenomena")) {
      NeuronSelection s;
      s.phenomenon = e.at("phenomenon").get<std::string>();
      s.num_layers = layers;
      s.hidden_dim = dim;
      s.thresholds = SelectionThresholds{e.value("quantile", 0.25), e.value("z_threshold", 2.0)};
      s.consistency_cutoff = e.value("consistency_cutoff", 0.0);
      for (const auto& n : e.at("selected")) {
        s.selected.push_back(read_id(n.at("layer").get<std::uint32_t>(), n.at("dim").get<std::uint32_t>()));
      }
      if (e.contains("flags")) {
        s.zero_variance_count = e.at("flags").at("zero_variance").size();
        s.undefined_z_count = e.at("flags").at("undefined_z").size();
      }
      std::sort(s.selected.begin(), s.selected.end());
      s.selected.erase(std::unique(s.selected.begin(), s.selected.end()), s.selected.end());
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("neuron selection JSON: ") + e.what());
  }
  return out;
}

}  // namespace ssilab
