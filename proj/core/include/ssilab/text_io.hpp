#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ssilab {

/// Real number for CSV output: '.' decimal, 9 significant digits, "NA" for missing
/// or non-finite values.
std::string format_real(double value);
std::string format_real(const std::optional<double>& value);

/// Quotes a CSV field when it contains separators, quotes, or newlines.
std::string csv_field(std::string_view text);

/// Splits one CSV line, honouring double-quoted fields.
std::vector<std::string> split_csv_line(std::string_view line);

/// Parses a real written by format_real; "NA" and empty map to nullopt.
std::optional<double> parse_optional_real(std::string_view text);

/// Writes `contents` to a sibling temporary file and renames it over `path`, so
/// the destination either holds the complete artifact or is untouched.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Reads a whole text file. Missing files raise NotFoundError.
std::string read_text_file(const std::filesystem::path& path);

}  // namespace ssilab
