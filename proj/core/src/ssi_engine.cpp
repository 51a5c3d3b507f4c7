#include "ssilab/ssi_engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "ssilab/error.hpp"
#include "ssilab/parallel.hpp"
#include "ssilab/rng.hpp"
#include "ssilab/text_io.hpp"

namespace ssilab {

namespace {

enum class PairKind : std::uint64_t { kIntra = 1, kInter = 2 };

double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0;
  double s1 = 0.0;
  double s2 = 0.0;
  double s3 = 0.0;
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    s0 += a[k] * b[k];
    s1 += a[k + 1] * b[k + 1];
    s2 += a[k + 2] * b[k + 2];
    s3 += a[k + 3] * b[k + 3];
  }
  for (; k < n; ++k) {
    s0 += a[k] * b[k];
  }
  return (s0 + s1) + (s2 + s3);
}

/// Unit-normalized difference vectors of every retained sample at one layer,
/// concatenated in phenomenon order. Zero vectors stay zero.
struct LayerUnits {
  std::size_t dim = 0;
  std::vector<std::size_t> offsets;  // K + 1 entries
  std::vector<double> data;
  std::vector<double> sq_norms;

  [[nodiscard]] const double* row(std::size_t global) const { return data.data() + global * dim; }
  [[nodiscard]] std::size_t count(std::size_t p) const { return offsets[p + 1] - offsets[p]; }
  [[nodiscard]] std::size_t total() const { return offsets.back(); }
};

LayerUnits build_units(const DeltaSet& deltas, std::size_t layer, unsigned threads) {
  LayerUnits units;
  units.dim = deltas.hidden_dim;
  units.offsets.push_back(0);
  for (const auto& p : deltas.phenomena) {
    units.offsets.push_back(units.offsets.back() + p.size());
  }
  const std::size_t total = units.total();
  units.data.assign(total * units.dim, 0.0);
  units.sq_norms.assign(total, 0.0);
  std::vector<std::pair<std::size_t, std::size_t>> index;
  index.reserve(total);
  for (std::size_t p = 0; p < deltas.phenomena.size(); ++p) {
    for (std::size_t i = 0; i < deltas.phenomena[p].size(); ++i) {
      index.emplace_back(p, i);
    }
  }
  parallel_for(total, threads, [&](std::size_t g) {
    const auto [p, i] = index[g];
    const auto src = deltas.row(p, i, layer);
    const double norm = std::sqrt(dot(src.data(), src.data(), src.size()));
    if (norm < kZeroNormEpsilon) {
      return;
    }
    double* dst = units.data.data() + g * units.dim;
    for (std::size_t d = 0; d < units.dim; ++d) {
      dst[d] = src[d] / norm;
    }
    units.sq_norms[g] = dot(dst, dst, units.dim);
  });
  return units;
}

double checked_mean(double value, const char* what) {
  if (!(std::abs(value) <= 1.0 + 1e-9)) {
    throw std::logic_error(std::string(what) + " similarity out of range: " + std::to_string(value));
  }
  return std::clamp(value, -1.0, 1.0);
}

/// Maps a rank among the "rest" samples (all phenomena except p, in order) to a
/// global row index.
std::size_t rest_to_global(const LayerUnits& units, std::size_t p, std::size_t j) {
  return j < units.offsets[p] ? j : j + units.count(p);
}

/// Decodes unordered pair index k (row-major over i < j) for n items.
std::pair<std::size_t, std::size_t> decode_triangle(std::uint64_t k, std::uint64_t n) {
  // Row i starts at i*n - i*(i+1)/2. Solve approximately, then correct.
  const double nn = static_cast<double>(n);
  auto i = static_cast<std::uint64_t>(
      std::floor(((2.0 * nn - 1.0) - std::sqrt((2.0 * nn - 1.0) * (2.0 * nn - 1.0) - 8.0 * static_cast<double>(k))) /
                 2.0));
  auto start = [n](std::uint64_t r) { return r * n - r * (r + 1) / 2; };
  while (i > 0 && start(i) > k) {
    --i;
  }
  while (i + 1 < n && start(i + 1) <= k) {
    ++i;
  }
  const std::uint64_t j = i + 1 + (k - start(i));
  return {static_cast<std::size_t>(i), static_cast<std::size_t>(j)};
}

/// Draws `count` distinct indices from [0, total) (Floyd's algorithm), sorted.
std::vector<std::uint64_t> sample_indices(std::uint64_t total, std::uint64_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(static_cast<std::size_t>(count) * 2);
  for (std::uint64_t j = total - count; j < total; ++j) {
    const std::uint64_t t = rng.below(j + 1);
    if (!chosen.insert(t).second) {
      chosen.insert(j);
    }
  }
  std::vector<std::uint64_t> out(chosen.begin(), chosen.end());
  std::sort(out.begin(), out.end());
  return out;
}

/// Sums pair_cosine(k) over k in [0, count) with fixed chunks combined in order.
template <typename PairCos>
double chunked_sum(std::uint64_t count, unsigned threads, PairCos&& pair_cosine) {
  const std::uint64_t chunks = (count + kPairChunk - 1) / kPairChunk;
  std::vector<double> partial(static_cast<std::size_t>(chunks), 0.0);
  parallel_for(static_cast<std::size_t>(chunks), threads, [&](std::size_t c) {
    const std::uint64_t begin = c * kPairChunk;
    const std::uint64_t end = std::min(count, begin + kPairChunk);
    double s = 0.0;
    for (std::uint64_t k = begin; k < end; ++k) {
      s += pair_cosine(k);
    }
    partial[c] = s;
  });
  double total = 0.0;
  for (double s : partial) {
    total += s;
  }
  return total;
}

std::vector<double> phenomenon_sum(const LayerUnits& units, std::size_t p) {
  std::vector<double> sum(units.dim, 0.0);
  for (std::size_t g = units.offsets[p]; g < units.offsets[p + 1]; ++g) {
    const double* r = units.row(g);
    for (std::size_t d = 0; d < units.dim; ++d) {
      sum[d] += r[d];
    }
  }
  return sum;
}

Similarity intra_from_units(const LayerUnits& units, std::size_t p, std::size_t layer, const SsiOptions& options,
                            const std::vector<double>* centroid_sum) {
  const std::uint64_t n = units.count(p);
  if (n < 2) {
    return {};
  }
  const std::uint64_t total_pairs = n * (n - 1) / 2;
  const std::size_t base = units.offsets[p];
  const std::size_t dim = units.dim;
  const bool capped = options.sampling.cap && *options.sampling.cap < total_pairs;

  if (!capped && options.method == SimilarityMethod::kCentroid) {
    const std::vector<double> own = centroid_sum ? std::vector<double>{} : phenomenon_sum(units, p);
    const std::vector<double>& sum = centroid_sum ? *centroid_sum : own;
    double self = 0.0;
    for (std::size_t g = base; g < base + n; ++g) {
      self += units.sq_norms[g];
    }
    const double pair_sum = (dot(sum.data(), sum.data(), dim) - self) / 2.0;
    return {checked_mean(pair_sum / static_cast<double>(total_pairs), "intra"), total_pairs};
  }
  if (!capped) {
    const double s = chunked_sum(total_pairs, options.threads, [&](std::uint64_t k) {
      const auto [i, j] = decode_triangle(k, n);
      return dot(units.row(base + i), units.row(base + j), dim);
    });
    return {checked_mean(s / static_cast<double>(total_pairs), "intra"), total_pairs};
  }
  const std::uint64_t m = *options.sampling.cap;
  if (m == 0) {
    return {};
  }
  const auto picks =
      sample_indices(total_pairs, m, derive_seed(options.sampling.seed, {p, layer, static_cast<std::uint64_t>(PairKind::kIntra)}));
  const double s = chunked_sum(m, options.threads, [&](std::uint64_t k) {
    const auto [i, j] = decode_triangle(picks[k], n);
    return dot(units.row(base + i), units.row(base + j), dim);
  });
  return {checked_mean(s / static_cast<double>(m), "intra"), m};
}

Similarity inter_from_units(const LayerUnits& units, std::size_t p, std::size_t layer, const SsiOptions& options,
                            const std::vector<std::vector<double>>* sums) {
  const std::uint64_t n_p = units.count(p);
  const std::uint64_t n_rest = units.total() - n_p;
  if (n_p < 1 || n_rest < 1) {
    return {};
  }
  const std::uint64_t total_pairs = n_p * n_rest;
  const std::size_t base = units.offsets[p];
  const std::size_t dim = units.dim;
  const bool capped = options.sampling.cap && *options.sampling.cap < total_pairs;

  if (!capped && options.method == SimilarityMethod::kCentroid) {
    const std::size_t k_count = units.offsets.size() - 1;
    std::vector<double> own_sum;
    std::vector<double> rest(dim, 0.0);
    for (std::size_t q = 0; q < k_count; ++q) {
      const std::vector<double> local = sums ? std::vector<double>{} : phenomenon_sum(units, q);
      const std::vector<double>& sq = sums ? (*sums)[q] : local;
      if (q == p) {
        own_sum = sq;
        continue;
      }
      for (std::size_t d = 0; d < dim; ++d) {
        rest[d] += sq[d];
      }
    }
    const double pair_sum = dot(own_sum.data(), rest.data(), dim);
    return {checked_mean(pair_sum / static_cast<double>(total_pairs), "inter"), total_pairs};
  }
  auto cosine = [&](std::uint64_t k) {
    const std::uint64_t i = k / n_rest;
    const std::uint64_t j = k % n_rest;
    return dot(units.row(base + i), units.row(rest_to_global(units, p, j)), dim);
  };
  if (!capped) {
    const double s = chunked_sum(total_pairs, options.threads, cosine);
    return {checked_mean(s / static_cast<double>(total_pairs), "inter"), total_pairs};
  }
  const std::uint64_t m = *options.sampling.cap;
  if (m == 0) {
    return {};
  }
  const auto picks =
      sample_indices(total_pairs, m, derive_seed(options.sampling.seed, {p, layer, static_cast<std::uint64_t>(PairKind::kInter)}));
  const double s = chunked_sum(m, options.threads, [&](std::uint64_t k) { return cosine(picks[k]); });
  return {checked_mean(s / static_cast<double>(m), "inter"), m};
}

void check_cell(const DeltaSet& deltas, std::size_t phenomenon, std::size_t layer) {
  if (phenomenon >= deltas.phenomena.size()) {
    throw ConfigError("phenomenon index " + std::to_string(phenomenon) + " out of range");
  }
  if (layer >= deltas.num_layers) {
    throw ConfigError("layer " + std::to_string(layer) + " out of range");
  }
}

}  // namespace

std::optional<std::size_t> DeltaSet::index_of(const std::string& name) const {
  for (std::size_t p = 0; p < phenomena.size(); ++p) {
    if (phenomena[p].name == name) {
      return p;
    }
  }
  return std::nullopt;
}

std::size_t DeltaSet::total_samples() const {
  std::size_t total = 0;
  for (const auto& p : phenomena) {
    total += p.size();
  }
  return total;
}

DeltaSet compute_deltas(const Dump& dump, DeltaPolicy policy, unsigned threads) {
  const auto& header = dump.header;
  const std::size_t layers = header.num_layers;
  const std::size_t dim = header.hidden_dim;
  const std::size_t stride = layers * dim;
  if (dump.samples.size() != header.total_samples()) {
    throw LayoutError("dump holds " + std::to_string(dump.samples.size()) + " samples, header declares " +
                      std::to_string(header.total_samples()));
  }

  DeltaSet out;
  out.model_id = header.model_id;
  out.seed = header.seed;
  out.checkpoint_tokens = header.checkpoint_tokens;
  out.num_layers = layers;
  out.hidden_dim = dim;

  std::size_t first = 0;
  for (const auto& ph : header.phenomena) {
    const std::size_t n = ph.sample_count;
    std::vector<double> values(n * stride, 0.0);
    // Per sample: bitmask of flagged layers is unbounded, so keep a vector.
    std::vector<std::vector<std::size_t>> flagged(n);
    std::vector<char> all_zero(n, 1);
    parallel_for(n, threads, [&](std::size_t i) {
      const SamplePair& s = dump.samples[first + i];
      if (s.good.size() != stride || s.bad.size() != stride) {
        throw LayoutError("sample '" + s.pair_id + "' has the wrong shape");
      }
      double* dst = values.data() + i * stride;
      for (std::size_t l = 0; l < layers; ++l) {
        const auto g = s.good_row(l, dim);
        const auto u = s.bad_row(l, dim);
        double* row = dst + l * dim;
        if (policy == DeltaPolicy::kNormalizeThenSubtract) {
          double ng = 0.0;
          double nu = 0.0;
          for (std::size_t d = 0; d < dim; ++d) {
            ng += static_cast<double>(g[d]) * g[d];
            nu += static_cast<double>(u[d]) * u[d];
          }
          ng = std::sqrt(ng);
          nu = std::sqrt(nu);
          if (ng < kZeroNormEpsilon || nu < kZeroNormEpsilon) {
            flagged[i].push_back(l);
            continue;
          }
          for (std::size_t d = 0; d < dim; ++d) {
            row[d] = static_cast<double>(g[d]) / ng - static_cast<double>(u[d]) / nu;
          }
        } else {
          for (std::size_t d = 0; d < dim; ++d) {
            row[d] = static_cast<double>(g[d]) - static_cast<double>(u[d]);
          }
        }
        if (std::sqrt(dot(row, row, dim)) >= kZeroNormEpsilon) {
          all_zero[i] = 0;
        }
      }
    });

    PhenomenonDeltas pd;
    pd.name = ph.name;
    std::size_t kept = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const SamplePair& s = dump.samples[first + i];
      if (s.phenomenon != ph.name) {
        throw LayoutError("sample '" + s.pair_id + "' is out of phenomenon order");
      }
      for (std::size_t l : flagged[i]) {
        out.flagged_rows.push_back({s.pair_id, l});
      }
      if (all_zero[i] != 0) {
        out.excluded.push_back({s.pair_id, ph.name, "zero difference vector at every layer"});
        continue;
      }
      if (kept != i) {
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(i * stride), stride,
                    values.begin() + static_cast<std::ptrdiff_t>(kept * stride));
      }
      pd.pair_ids.push_back(s.pair_id);
      ++kept;
    }
    values.resize(kept * stride);
    values.shrink_to_fit();
    pd.values = std::move(values);
    out.phenomena.push_back(std::move(pd));
    first += n;
  }
  return out;
}

Similarity intra_similarity(const DeltaSet& deltas, std::size_t phenomenon, std::size_t layer,
                            const SsiOptions& options) {
  check_cell(deltas, phenomenon, layer);
  const LayerUnits units = build_units(deltas, layer, options.threads);
  return intra_from_units(units, phenomenon, layer, options, nullptr);
}

Similarity inter_similarity(const DeltaSet& deltas, std::size_t phenomenon, std::size_t layer,
                            const SsiOptions& options) {
  check_cell(deltas, phenomenon, layer);
  const LayerUnits units = build_units(deltas, layer, options.threads);
  return inter_from_units(units, phenomenon, layer, options, nullptr);
}

const SsiEntry* SsiTable::find(const std::string& phenomenon, std::size_t layer) const {
  for (const auto& e : entries) {
    if (e.phenomenon == phenomenon && e.layer == layer) {
      return &e;
    }
  }
  return nullptr;
}

SsiTable compute_ssi(const DeltaSet& deltas, const SsiOptions& options) {
  if (deltas.phenomena.size() < 2) {
    throw ConfigError("SSI needs at least 2 phenomena, got " + std::to_string(deltas.phenomena.size()));
  }
  std::vector<std::size_t> layers = options.layers;
  if (layers.empty()) {
    for (std::size_t l = 0; l < deltas.num_layers; ++l) {
      layers.push_back(l);
    }
  }
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  for (std::size_t l : layers) {
    if (l >= deltas.num_layers) {
      throw ConfigError("layer " + std::to_string(l) + " out of range (model has " +
                        std::to_string(deltas.num_layers) + ")");
    }
  }

  const std::size_t k_count = deltas.phenomena.size();
  SsiTable table;
  table.model_id = deltas.model_id;
  table.seed = deltas.seed;
  table.checkpoint_tokens = deltas.checkpoint_tokens;
  table.num_layers = deltas.num_layers;
  for (const auto& p : deltas.phenomena) {
    table.phenomena.push_back(p.name);
  }
  // cells[p][layer-slot]
  std::vector<std::vector<SsiEntry>> cells(k_count, std::vector<SsiEntry>(layers.size()));

  for (std::size_t slot = 0; slot < layers.size(); ++slot) {
    const std::size_t layer = layers[slot];
    const LayerUnits units = build_units(deltas, layer, options.threads);
    std::vector<std::vector<double>> sums(k_count);
    parallel_for(k_count, options.threads, [&](std::size_t q) { sums[q] = phenomenon_sum(units, q); });

    auto fill = [&](std::size_t p, const SsiOptions& cell_options) {
      SsiEntry e;
      e.phenomenon = deltas.phenomena[p].name;
      e.layer = layer;
      const Similarity intra = intra_from_units(units, p, layer, cell_options, &sums[p]);
      const Similarity inter = inter_from_units(units, p, layer, cell_options, &sums);
      e.intra = intra.value;
      e.inter = inter.value;
      e.n_pairs_intra = intra.n_pairs;
      e.n_pairs_inter = inter.n_pairs;
      if (e.intra && e.inter) {
        e.ssi = *e.intra - *e.inter;
      }
      cells[p][slot] = std::move(e);
    };
    const bool centroid_only = options.method == SimilarityMethod::kCentroid && !options.sampling.cap;
    if (centroid_only) {
      SsiOptions serial = options;
      serial.threads = 1;
      parallel_for(k_count, options.threads, [&](std::size_t p) { fill(p, serial); });
    } else {
      for (std::size_t p = 0; p < k_count; ++p) {
        fill(p, options);
      }
    }
  }
  for (auto& row : cells) {
    for (auto& e : row) {
      table.entries.push_back(std::move(e));
    }
  }
  return table;
}

LayerProfile layer_profile(const SsiTable& table) {
  LayerProfile profile;
  std::vector<double> sum(table.num_layers, 0.0);
  std::vector<std::size_t> count(table.num_layers, 0);
  // Phenomenon-major order fixes the summation order per layer.
  for (const auto& e : table.entries) {
    if (e.layer >= table.num_layers) {
      continue;
    }
    if (e.ssi) {
      sum[e.layer] += *e.ssi;
      count[e.layer] += 1;
    } else {
      profile.skipped_entries += 1;
    }
  }
  profile.values.resize(table.num_layers);
  for (std::size_t l = 0; l < table.num_layers; ++l) {
    if (count[l] > 0) {
      profile.values[l] = sum[l] / static_cast<double>(count[l]);
    }
  }
  return profile;
}

std::string ssi_table_to_csv(const SsiTable& table) {
  std::ostringstream out;
  out << "model_id,seed,checkpoint_tokens,phenomenon,layer,intra,inter,ssi,n_pairs_intra,n_pairs_inter\n";
  for (const auto& e : table.entries) {
    out << csv_field(table.model_id) << ',' << table.seed << ',' << table.checkpoint_tokens << ','
        << csv_field(e.phenomenon) << ',' << e.layer << ',' << format_real(e.intra) << ',' << format_real(e.inter)
        << ',' << format_real(e.ssi) << ',' << e.n_pairs_intra << ',' << e.n_pairs_inter << '\n';
  }
  return out.str();
}

SsiTable ssi_table_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError("SSI table CSV is empty");
  }
  const auto header = split_csv_line(line);
  const std::vector<std::string> expected = {"model_id", "seed",  "checkpoint_tokens", "phenomenon",    "layer",
                                             "intra",    "inter", "ssi",               "n_pairs_intra", "n_pairs_inter"};
  if (header != expected) {
    throw ParseError("SSI table CSV has an unexpected header: " + line);
  }
  SsiTable table;
  std::size_t line_no = 1;
  std::size_t max_layer = 0;
  bool any = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") {
      continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != expected.size()) {
      throw ParseError("SSI table CSV line " + std::to_string(line_no) + ": expected 10 fields");
    }
    try {
      if (!any) {
        table.model_id = f[0];
        table.seed = std::stoll(f[1]);
        table.checkpoint_tokens = std::stoll(f[2]);
      }
      SsiEntry e;
      e.phenomenon = f[3];
      e.layer = std::stoul(f[4]);
      e.intra = parse_optional_real(f[5]);
      e.inter = parse_optional_real(f[6]);
      e.ssi = parse_optional_real(f[7]);
      e.n_pairs_intra = std::stoull(f[8]);
      e.n_pairs_inter = std::stoull(f[9]);
      if (std::find(table.phenomena.begin(), table.phenomena.end(), e.phenomenon) == table.phenomena.end()) {
        table.phenomena.push_back(e.phenomenon);
      }
      max_layer = std::max(max_layer, e.layer);
      table.entries.push_back(std::move(e));
      any = true;
    } catch (const std::invalid_argument&) {
      throw ParseError("SSI table CSV line " + std::to_string(line_no) + ": malformed number");
    } catch (const std::out_of_range&) {
      throw ParseError("SSI table CSV line " + std::to_string(line_no) + ": number out of range");
    }
  }
  table.num_layers = any ? max_layer + 1 : 0;
  return table;
}

}  // namespace ssilab
