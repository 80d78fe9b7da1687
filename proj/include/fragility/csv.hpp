#pragma once

// Minimal CSV reading/writing for the project's flat numeric tables.
// No quoting support: fields never contain commas.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace fragility {

class CsvTable {
 public:
  static CsvTable parse(std::istream& in, std::string source_name);
  static CsvTable read(const std::filesystem::path& path);

  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }

  /// Column index; throws InvalidInput naming the missing column.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;

  const std::string& text(std::size_t row, std::size_t col) const;
  double number(std::size_t row, std::size_t col) const;
  long long integer(std::size_t row, std::size_t col) const;

  /// 1-based line number of a data row in the source file.
  std::size_t line(std::size_t row) const { return lines_[row]; }
  const std::string& source() const { return source_; }

 private:
  std::string source_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
  std::vector<std::size_t> lines_;
};

/// Round-trip exact double formatting (17 significant digits).
std::string format_double(double x);

/// Writes the text atomically enough for our purposes (truncate + write).
void write_text_file(const std::filesystem::path& path, std::string_view text);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace fragility
