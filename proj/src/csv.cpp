#include "fragility/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "fragility/errors.hpp"

namespace fragility {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.emplace_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

CsvTable CsvTable::parse(std::istream& in, std::string source_name) {
  CsvTable t;
  t.source_ = std::move(source_name);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || trim(line).front() == '#') continue;
    auto fields = split(line);
    if (!have_header) {
      t.header_ = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header_.size()) {
      throw InvalidInput(fmt::format("{}:{}: expected {} fields, found {}", t.source_, lineno,
                                     t.header_.size(), fields.size()));
    }
    t.rows_.push_back(std::move(fields));
    t.lines_.push_back(lineno);
  }
  if (!have_header) throw InvalidInput(fmt::format("{}: missing CSV header", t.source_));
  return t;
}

CsvTable CsvTable::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput(fmt::format("cannot open {}", path.string()));
  return parse(in, path.string());
}

bool CsvTable::has_column(std::string_view name) const {
  for (const auto& h : header_) {
    if (h == name) return true;
  }
  return false;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i) {
    if (header_[i] == name) return i;
  }
  throw InvalidInput(fmt::format("{}:1: missing required column '{}'", source_, name));
}

const std::string& CsvTable::text(std::size_t row, std::size_t col) const {
  return rows_.at(row).at(col);
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  const auto& s = text(row, col);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw InvalidInput(fmt::format("{}:{}: column '{}' is not a number: '{}'", source_, lines_[row],
                                   header_[col], s));
  }
  return value;
}

long long CsvTable::integer(std::size_t row, std::size_t col) const {
  const auto& s = text(row, col);
  long long value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw InvalidInput(fmt::format("{}:{}: column '{}' is not an integer: '{}'", source_,
                                   lines_[row], header_[col], s));
  }
  return value;
}

std::string format_double(double x) { return fmt::format("{:.17g}", x); }

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput(fmt::format("cannot write {}", path.string()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fragility
