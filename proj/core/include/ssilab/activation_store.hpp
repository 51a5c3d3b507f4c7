#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ssilab {

inline constexpr std::uint32_t kDumpFormatVersion = 1;
inline constexpr char kDumpMagic[4] = {'A', 'C', 'T', 'D'};

/// Rows whose L2 norm falls below this are treated as zero vectors throughout.
inline constexpr double kZeroNormEpsilon = 1e-12;

enum class Pooling { kMean };
enum class Normalization { kNone, kL2PerLayer };

struct PhenomenonInfo {
  std::string name;
  std::size_t sample_count = 0;
  /// One id per sample, in payload order. Stored in the JSON header.
  std::vector<std::string> pair_ids;

  bool operator==(const PhenomenonInfo&) const = default;
};

struct DumpHeader {
  std::uint32_t format_version = kDumpFormatVersion;
  std::string model_id;
  /// Millions of training tokens seen by the checkpoint.
  std::int64_t checkpoint_tokens = 0;
  std::int64_t seed = 0;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  Pooling pooling = Pooling::kMean;
  Normalization normalization = Normalization::kNone;
  std::vector<PhenomenonInfo> phenomena;
  /// Additional header fields the writer does not interpret (e.g. the
  /// harness's hidden-state source), kept as a serialized JSON object.
  /// Empty means none.
  std::string extra_json;

  [[nodiscard]] std::size_t total_samples() const;
  [[nodiscard]] std::size_t floats_per_embedding() const { return num_layers * hidden_dim; }

  bool operator==(const DumpHeader&) const = default;
};

/// Pooled grammatical/ungrammatical embeddings for one minimal pair, each an
/// L x D row-major matrix.
struct SamplePair {
  std::string pair_id;
  std::string phenomenon;
  std::vector<float> good;
  std::vector<float> bad;

  [[nodiscard]] std::span<const float> good_row(std::size_t layer, std::size_t dim) const {
    return std::span<const float>(good).subspan(layer * dim, dim);
  }
  [[nodiscard]] std::span<const float> bad_row(std::size_t layer, std::size_t dim) const {
    return std::span<const float>(bad).subspan(layer * dim, dim);
  }

  bool operator==(const SamplePair&) const = default;
};

struct Dump {
  DumpHeader header;
  std::vector<SamplePair> samples;
};

/// Checks the header invariants (L, D >= 1, >= 2 samples per phenomenon,
/// unique names, pair-id counts). Throws LayoutError.
void check_header(const DumpHeader& header);

/// Builds the phenomenon list (names, counts, pair ids) from grouped samples.
std::vector<PhenomenonInfo> phenomena_from_samples(std::span<const SamplePair> samples);

/// Serialized header JSON exactly as it is written between the fixed prefix and
/// the payload.
std::string header_to_json(const DumpHeader& header);
DumpHeader header_from_json(const std::string& text);

void write_dump(const DumpHeader& header, std::span<const SamplePair> samples,
                const std::filesystem::path& path);
Dump read_dump(const std::filesystem::path& path);

struct LogProbRecord {
  std::string pair_id;
  std::string phenomenon;
  double g_logprob_sum = 0.0;
  std::int64_t g_token_count = 1;
  double u_logprob_sum = 0.0;
  std::int64_t u_token_count = 1;

  bool operator==(const LogProbRecord&) const = default;
};

/// Reads a JSON-lines log-prob sidecar. Blank lines and objects carrying a
/// "_header" key (scoring-convention metadata) are skipped.
std::vector<LogProbRecord> read_logprobs(const std::filesystem::path& path);
std::vector<LogProbRecord> parse_logprobs(const std::string& text);
void write_logprobs(std::span<const LogProbRecord> records, const std::filesystem::path& path);

struct SentenceMetadata {
  std::string pair_id;
  std::string phenomenon;
  std::string sentence_good;
  std::string sentence_bad;

  bool operator==(const SentenceMetadata&) const = default;
};

std::vector<SentenceMetadata> read_metadata(const std::filesystem::path& path);
void write_metadata(std::span<const SentenceMetadata> rows, const std::filesystem::path& path);

struct ValidationDefect {
  enum class Kind { kNonFinite, kZeroNorm };
  Kind kind = Kind::kNonFinite;
  std::string pair_id;
  std::size_t layer = 0;
  bool grammatical = true;
};

struct ValidationReport {
  std::filesystem::path path;
  bool header_ok = false;
  DumpHeader header;
  /// Samples actually present per phenomenon, header order.
  std::vector<std::size_t> observed_counts;
  std::size_t zero_norm_embeddings = 0;
  std::size_t non_finite_values = 0;
  std::vector<ValidationDefect> defects;
  /// Structural problem (bad magic, truncation, header errors); empty if none.
  std::string structural_error;
  std::vector<std::string> warnings;

  [[nodiscard]] bool passed() const { return header_ok && structural_error.empty() && non_finite_values == 0; }
  [[nodiscard]] std::string to_text() const;
};

/// Read-only scan of a dump. Missing files raise NotFoundError; every other
/// problem is reported rather than thrown.
ValidationReport validate_dump(const std::filesystem::path& path);

}  // namespace ssilab
