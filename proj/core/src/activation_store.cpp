#include "ssilab/activation_store.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "ssilab/error.hpp"
#include "ssilab/text_io.hpp"

namespace ssilab {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::size_t kPrefixBytes = 12;

void put_u32_le(std::string& out, std::uint32_t value) {
  for (int shift = 0; shift < 32; shift += 8) {
    out.push_back(static_cast<char>((value >> shift) & 0xFFU));
  }
}

std::uint32_t get_u32_le(const unsigned char* bytes) {
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8U) |
         (static_cast<std::uint32_t>(bytes[2]) << 16U) | (static_cast<std::uint32_t>(bytes[3]) << 24U);
}

void append_f32_le(std::string& out, std::span<const float> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * 4);
  char* dst = out.data() + start;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, values.data(), values.size() * 4);
  } else {
    for (float v : values) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int shift = 0; shift < 32; shift += 8) {
        *dst++ = static_cast<char>((bits >> shift) & 0xFFU);
      }
    }
  }
}

void decode_f32_le(const char* src, std::span<float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(values.data(), src, values.size() * 4);
  } else {
    const auto* bytes = reinterpret_cast<const unsigned char*>(src);
    for (auto& v : values) {
      v = std::bit_cast<float>(get_u32_le(bytes));
      bytes += 4;
    }
  }
}

const char* to_string(Normalization n) { return n == Normalization::kNone ? "none" : "l2_per_layer"; }

Normalization normalization_from(const std::string& s) {
  if (s == "none") {
    return Normalization::kNone;
  }
  if (s == "l2_per_layer") {
    return Normalization::kL2PerLayer;
  }
  throw FormatError("unknown normalization '" + s + "'");
}

const std::set<std::string>& known_header_keys() {
  static const std::set<std::string> keys = {
      "format_version", "model_id", "checkpoint_tokens", "seed",        "num_layers",
      "hidden_dim",     "pooling",  "normalization",     "phenomena",   "element_type"};
  return keys;
}

template <typename T>
T require(const nlohmann::json& obj, const char* key) {
  if (!obj.contains(key)) {
    throw FormatError(std::string("dump header missing field '") + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(std::string("dump header field '") + key + "' has the wrong type");
  }
}

double row_norm(std::span<const float> row) {
  double sum = 0.0;
  for (float v : row) {
    sum += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(sum);
}

/// Sequential reader shared by read_dump (strict) and validate_dump (lenient).
class DumpStream {
 public:
  explicit DumpStream(const std::filesystem::path& path) : path_(path) {
    if (!std::filesystem::exists(path)) {
      throw NotFoundError("dump not found: " + path.string());
    }
    in_.open(path, std::ios::binary);
    if (!in_) {
      throw IoError("cannot open dump: " + path.string());
    }
  }

  DumpHeader read_header() {
    std::array<unsigned char, kPrefixBytes> prefix{};
    const auto got = read_bytes(reinterpret_cast<char*>(prefix.data()), 4);
    if (got < 4) {
      throw TruncationError("truncated dump: file ends at byte offset " + std::to_string(got) +
                                " inside the magic",
                            got);
    }
    if (std::memcmp(prefix.data(), kDumpMagic, 4) != 0) {
      throw FormatError("bad magic in " + path_.string() + ": expected \"ACTD\"");
    }
    if (read_bytes(reinterpret_cast<char*>(prefix.data()) + 4, 8) < 8) {
      throw TruncationError("truncated dump: file ends inside the fixed header at byte offset " +
                                std::to_string(offset_),
                            offset_);
    }
    const std::uint32_t version = get_u32_le(prefix.data() + 4);
    const std::uint32_t header_length = get_u32_le(prefix.data() + 8);
    if (version > kDumpFormatVersion) {
      throw VersionError("dump version " + std::to_string(version) + " is newer than supported version " +
                         std::to_string(kDumpFormatVersion));
    }
    if (version == 0) {
      throw FormatError("dump version 0 is invalid");
    }
    std::string json_text(header_length, '\0');
    if (read_bytes(json_text.data(), header_length) < header_length) {
      throw TruncationError("truncated dump: header JSON ends at byte offset " + std::to_string(offset_), offset_);
    }
    DumpHeader header = header_from_json(json_text);
    header.format_version = version;
    check_header(header);
    return header;
  }

  /// Reads one sample's payload. Returns false on clean EOF-before-start is
  /// not possible here: any short read raises TruncationError.
  void read_sample(const DumpHeader& header, SamplePair& sample) {
    const std::size_t floats = header.floats_per_embedding();
    const std::size_t bytes = floats * 4;
    buffer_.resize(2 * bytes);
    const std::uint64_t start = offset_;
    const auto got = read_bytes(buffer_.data(), buffer_.size());
    if (got < buffer_.size()) {
      throw TruncationError("truncated payload at byte offset " + std::to_string(start + got) + " in sample '" +
                                sample.pair_id + "' (expected " + std::to_string(buffer_.size()) +
                                " bytes from offset " + std::to_string(start) + ")",
                            start + got);
    }
    sample.good.resize(floats);
    sample.bad.resize(floats);
    decode_f32_le(buffer_.data(), sample.good);
    decode_f32_le(buffer_.data() + bytes, sample.bad);
  }

  [[nodiscard]] bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  [[nodiscard]] std::uint64_t offset() const { return offset_; }

 private:
  std::size_t read_bytes(char* dst, std::size_t count) {
    in_.read(dst, static_cast<std::streamsize>(count));
    const auto got = static_cast<std::size_t>(in_.gcount());
    offset_ += got;
    return got;
  }

  std::filesystem::path path_;
  std::ifstream in_;
  std::uint64_t offset_ = 0;
  std::vector<char> buffer_;
};

std::vector<SamplePair> prepare_samples(const DumpHeader& header) {
  std::vector<SamplePair> samples;
  samples.reserve(header.total_samples());
  for (const auto& ph : header.phenomena) {
    for (std::size_t i = 0; i < ph.sample_count; ++i) {
      SamplePair s;
      s.pair_id = ph.pair_ids[i];
      s.phenomenon = ph.name;
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

}  // namespace

std::size_t DumpHeader::total_samples() const {
  std::size_t total = 0;
  for (const auto& p : phenomena) {
    total += p.sample_count;
  }
  return total;
}

void check_header(const DumpHeader& header) {
  if (header.num_layers < 1 || header.hidden_dim < 1) {
    throw LayoutError("dump header requires num_layers >= 1 and hidden_dim >= 1");
  }
  if (header.phenomena.empty()) {
    throw LayoutError("dump header lists no phenomena");
  }
  std::set<std::string> names;
  for (const auto& p : header.phenomena) {
    if (!names.insert(p.name).second) {
      throw LayoutError("duplicate phenomenon name '" + p.name + "'");
    }
    if (p.sample_count < 2) {
      throw LayoutError("phenomenon '" + p.name + "' has " + std::to_string(p.sample_count) +
                        " samples; at least 2 are required");
    }
    if (p.pair_ids.size() != p.sample_count) {
      throw LayoutError("phenomenon '" + p.name + "' lists " + std::to_string(p.pair_ids.size()) +
                        " pair ids for " + std::to_string(p.sample_count) + " samples");
    }
  }
}

std::vector<PhenomenonInfo> phenomena_from_samples(std::span<const SamplePair> samples) {
  std::vector<PhenomenonInfo> out;
  for (const auto& s : samples) {
    if (out.empty() || out.back().name != s.phenomenon) {
      out.push_back(PhenomenonInfo{s.phenomenon, 0, {}});
    }
    out.back().sample_count += 1;
    out.back().pair_ids.push_back(s.pair_id);
  }
  return out;
}

std::string header_to_json(const DumpHeader& header) {
  ordered_json j;
  j["format_version"] = header.format_version;
  j["model_id"] = header.model_id;
  j["checkpoint_tokens"] = header.checkpoint_tokens;
  j["seed"] = header.seed;
  j["num_layers"] = header.num_layers;
  j["hidden_dim"] = header.hidden_dim;
  j["pooling"] = "mean";
  j["normalization"] = to_string(header.normalization);
  auto phenomena = ordered_json::array();
  for (const auto& p : header.phenomena) {
    ordered_json entry;
    entry["name"] = p.name;
    entry["sample_count"] = p.sample_count;
    entry["pair_ids"] = p.pair_ids;
    phenomena.push_back(std::move(entry));
  }
  j["phenomena"] = std::move(phenomena);
  j["element_type"] = "f32";
  if (!header.extra_json.empty()) {
    const auto extra = ordered_json::parse(header.extra_json);
    if (!extra.is_object()) {
      throw LayoutError("extra header fields must form a JSON object");
    }
    for (const auto& [key, value] : extra.items()) {
      if (known_header_keys().contains(key)) {
        throw LayoutError("extra header field '" + key + "' collides with a standard field");
      }
      j[key] = value;
    }
  }
  return j.dump();
}

DumpHeader header_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("dump header is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) {
    throw FormatError("dump header is not a JSON object");
  }
  DumpHeader h;
  h.format_version = require<std::uint32_t>(j, "format_version");
  h.model_id = require<std::string>(j, "model_id");
  h.checkpoint_tokens = require<std::int64_t>(j, "checkpoint_tokens");
  h.seed = require<std::int64_t>(j, "seed");
  h.num_layers = require<std::size_t>(j, "num_layers");
  h.hidden_dim = require<std::size_t>(j, "hidden_dim");
  if (require<std::string>(j, "pooling") != "mean") {
    throw FormatError("unsupported pooling '" + j["pooling"].get<std::string>() + "'");
  }
  h.normalization = normalization_from(require<std::string>(j, "normalization"));
  if (require<std::string>(j, "element_type") != "f32") {
    throw FormatError("unsupported element_type '" + j["element_type"].get<std::string>() + "'");
  }
  const auto& phenomena = j.at("phenomena");
  if (!phenomena.is_array()) {
    throw FormatError("dump header field 'phenomena' must be an array");
  }
  for (const auto& entry : phenomena) {
    PhenomenonInfo p;
    p.name = require<std::string>(entry, "name");
    p.sample_count = require<std::size_t>(entry, "sample_count");
    if (entry.contains("pair_ids")) {
      p.pair_ids = require<std::vector<std::string>>(entry, "pair_ids");
    } else {
      for (std::size_t i = 0; i < p.sample_count; ++i) {
        p.pair_ids.push_back(p.name + "/" + std::to_string(i));
      }
    }
    h.phenomena.push_back(std::move(p));
  }
  ordered_json extra = ordered_json::object();
  const auto ordered = ordered_json::parse(text);
  for (const auto& [key, value] : ordered.items()) {
    if (!known_header_keys().contains(key)) {
      extra[key] = value;
    }
  }
  if (!extra.empty()) {
    h.extra_json = extra.dump();
  }
  return h;
}

void write_dump(const DumpHeader& header, std::span<const SamplePair> samples, const std::filesystem::path& path) {
  check_header(header);
  if (samples.size() != header.total_samples()) {
    throw LayoutError("header declares " + std::to_string(header.total_samples()) + " samples but " +
                      std::to_string(samples.size()) + " were supplied");
  }
  const std::size_t floats = header.floats_per_embedding();
  std::size_t index = 0;
  for (const auto& ph : header.phenomena) {
    for (std::size_t i = 0; i < ph.sample_count; ++i, ++index) {
      const auto& s = samples[index];
      if (s.phenomenon != ph.name) {
        throw LayoutError("sample " + std::to_string(index) + " ('" + s.pair_id + "') belongs to '" + s.phenomenon +
                          "' but header order expects '" + ph.name + "'");
      }
      if (s.pair_id != ph.pair_ids[i]) {
        throw LayoutError("sample " + std::to_string(index) + " has pair id '" + s.pair_id + "', header lists '" +
                          ph.pair_ids[i] + "'");
      }
      if (s.good.size() != floats || s.bad.size() != floats) {
        throw LayoutError("sample '" + s.pair_id + "' does not have shape " + std::to_string(header.num_layers) + "x" +
                          std::to_string(header.hidden_dim));
      }
      for (std::size_t k = 0; k < floats; ++k) {
        if (!std::isfinite(s.good[k]) || !std::isfinite(s.bad[k])) {
          throw DataError("sample '" + s.pair_id + "' has a non-finite value at layer " +
                          std::to_string(k / header.hidden_dim));
        }
      }
    }
  }

  auto tmp = path;
  tmp += ".tmp";
  std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open for writing: " + tmp.string());
  }
  const std::string json = header_to_json(header);
  std::string prefix(kDumpMagic, 4);
  put_u32_le(prefix, header.format_version);
  put_u32_le(prefix, static_cast<std::uint32_t>(json.size()));
  prefix += json;
  out.write(prefix.data(), static_cast<std::streamsize>(prefix.size()));
  std::string chunk;
  for (const auto& s : samples) {
    chunk.clear();
    append_f32_le(chunk, s.good);
    append_f32_le(chunk, s.bad);
    out.write(chunk.data(), static_cast<std::streamsize>(chunk.size()));
  }
  out.close();
  std::error_code ec;
  if (!out) {
    std::filesystem::remove(tmp, ec);
    throw IoError("write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " into place: " + path.string());
  }
}

Dump read_dump(const std::filesystem::path& path) {
  DumpStream stream(path);
  Dump dump;
  dump.header = stream.read_header();
  dump.samples = prepare_samples(dump.header);
  const std::size_t dim = dump.header.hidden_dim;
  for (auto& s : dump.samples) {
    stream.read_sample(dump.header, s);
    for (std::size_t k = 0; k < s.good.size(); ++k) {
      if (!std::isfinite(s.good[k]) || !std::isfinite(s.bad[k])) {
        const bool good = !std::isfinite(s.good[k]);
        throw DataError("non-finite value in sample '" + s.pair_id + "' (" + (good ? "grammatical" : "ungrammatical") +
                        ", layer " + std::to_string(k / dim) + ", dim " + std::to_string(k % dim) + ")");
      }
    }
  }
  if (!stream.at_end()) {
    throw FormatError("trailing bytes after payload at byte offset " + std::to_string(stream.offset()));
  }
  return dump;
}

std::vector<LogProbRecord> parse_logprobs(const std::string& text) {
  std::vector<LogProbRecord> records;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw ParseError("line " + std::to_string(line_no) + ": not valid JSON");
    }
    if (!j.is_object()) {
      throw ParseError("line " + std::to_string(line_no) + ": expected a JSON object");
    }
    if (j.contains("_header")) {
      continue;
    }
    auto field = [&](const char* key) -> const nlohmann::json& {
      if (!j.contains(key)) {
        throw ParseError("line " + std::to_string(line_no) + ": missing field '" + key + "'");
      }
      return j.at(key);
    };
    LogProbRecord r;
    try {
      r.pair_id = field("pair_id").get<std::string>();
      r.phenomenon = j.value("phenomenon", std::string{});
      r.g_logprob_sum = field("g_logprob_sum").get<double>();
      r.g_token_count = field("g_token_count").get<std::int64_t>();
      r.u_logprob_sum = field("u_logprob_sum").get<double>();
      r.u_token_count = field("u_token_count").get<std::int64_t>();
    } catch (const nlohmann::json::type_error&) {
      throw ParseError("line " + std::to_string(line_no) + ": field has the wrong type");
    }
    if (r.g_token_count < 1 || r.u_token_count < 1) {
      throw DataError("line " + std::to_string(line_no) + ": token count must be >= 1 (pair '" + r.pair_id + "')");
    }
    if (!std::isfinite(r.g_logprob_sum) || !std::isfinite(r.u_logprob_sum)) {
      throw DataError("line " + std::to_string(line_no) + ": non-finite log-probability (pair '" + r.pair_id + "')");
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<LogProbRecord> read_logprobs(const std::filesystem::path& path) {
  return parse_logprobs(read_text_file(path));
}

void write_logprobs(std::span<const LogProbRecord> records, const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : records) {
    ordered_json j;
    j["pair_id"] = r.pair_id;
    j["phenomenon"] = r.phenomenon;
    j["g_logprob_sum"] = r.g_logprob_sum;
    j["g_token_count"] = r.g_token_count;
    j["u_logprob_sum"] = r.u_logprob_sum;
    j["u_token_count"] = r.u_token_count;
    out += j.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::vector<SentenceMetadata> read_metadata(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::vector<SentenceMetadata> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      const auto j = nlohmann::json::parse(line);
      rows.push_back(SentenceMetadata{j.at("pair_id").get<std::string>(), j.at("phenomenon").get<std::string>(),
                                      j.at("sentence_good").get<std::string>(),
                                      j.at("sentence_bad").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

void write_metadata(std::span<const SentenceMetadata> rows, const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : rows) {
    ordered_json j;
    j["pair_id"] = r.pair_id;
    j["phenomenon"] = r.phenomenon;
    j["sentence_good"] = r.sentence_good;
    j["sentence_bad"] = r.sentence_bad;
    out += j.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

ValidationReport validate_dump(const std::filesystem::path& path) {
  ValidationReport report;
  report.path = path;
  DumpStream stream(path);
  try {
    report.header = stream.read_header();
    report.header_ok = true;
  } catch (const FormatError& e) {
    report.structural_error = e.what();
    return report;
  } catch (const LayoutError& e) {
    report.structural_error = e.what();
    return report;
  }
  const auto& header = report.header;
  const std::size_t layers = header.num_layers;
  const std::size_t dim = header.hidden_dim;
  report.observed_counts.assign(header.phenomena.size(), 0);
  SamplePair sample;
  try {
    for (std::size_t p = 0; p < header.phenomena.size(); ++p) {
      for (std::size_t i = 0; i < header.phenomena[p].sample_count; ++i) {
        sample.pair_id = header.phenomena[p].pair_ids[i];
        stream.read_sample(header, sample);
        report.observed_counts[p] += 1;
        for (std::size_t l = 0; l < layers; ++l) {
          for (bool good : {true, false}) {
            const auto row = good ? sample.good_row(l, dim) : sample.bad_row(l, dim);
            std::size_t bad_values = 0;
            for (float v : row) {
              bad_values += std::isfinite(v) ? 0 : 1;
            }
            if (bad_values > 0) {
              report.non_finite_values += bad_values;
              report.defects.push_back({ValidationDefect::Kind::kNonFinite, sample.pair_id, l, good});
            } else if (row_norm(row) < kZeroNormEpsilon) {
              report.zero_norm_embeddings += 1;
              report.defects.push_back({ValidationDefect::Kind::kZeroNorm, sample.pair_id, l, good});
            }
          }
        }
      }
    }
    if (!stream.at_end()) {
      report.structural_error = "trailing bytes after payload at byte offset " + std::to_string(stream.offset());
    }
  } catch (const TruncationError& e) {
    report.structural_error = e.what();
  }
  if (report.zero_norm_embeddings > 0) {
    report.warnings.push_back(std::to_string(report.zero_norm_embeddings) +
                              " zero-norm layer embedding(s); affected layers yield a zero difference vector");
  }
  return report;
}

std::string ValidationReport::to_text() const {
  std::ostringstream out;
  out << "dump: " << path.string() << '\n';
  if (header_ok) {
    out << "model_id: " << header.model_id << "  checkpoint_tokens: " << header.checkpoint_tokens
        << "  seed: " << header.seed << '\n';
    out << "layers: " << header.num_layers << "  hidden_dim: " << header.hidden_dim
        << "  normalization: " << to_string(header.normalization) << '\n';
    for (std::size_t p = 0; p < header.phenomena.size(); ++p) {
      out << "  phenomenon " << header.phenomena[p].name << ": " << observed_counts[p] << "/"
          << header.phenomena[p].sample_count << " samples\n";
    }
  }
  out << "zero_norm_embeddings: " << zero_norm_embeddings << '\n';
  out << "non_finite_values: " << non_finite_values << '\n';
  for (const auto& d : defects) {
    if (d.kind == ValidationDefect::Kind::kNonFinite) {
      out << "  non-finite: pair " << d.pair_id << " layer " << d.layer << (d.grammatical ? " (g)" : " (u)") << '\n';
    }
  }
  if (!structural_error.empty()) {
    out << "error: " << structural_error << '\n';
  }
  for (const auto& w : warnings) {
    out << "warning: " << w << '\n';
  }
  out << (passed() ? "PASS" : "FAIL") << '\n';
  return out.str();
}

}  // namespace ssilab
