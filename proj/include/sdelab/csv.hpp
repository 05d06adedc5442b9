#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace sdelab {

// Shortest representation that parses back to the same double.
std::string format_double(double v);

// Quotes a field when it holds a comma, quote or line break.
std::string csv_escape(const std::string& field);

// Comma separated, header row first, '\n' line ends.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

  CsvWriter& cell(const std::string& v);
  CsvWriter& cell(double v);
  CsvWriter& cell(long long v);
  void end_row();

  // One row of numbers.
  void row(const std::vector<double>& values);

 private:
  std::ofstream out_;
  std::size_t columns_;
  std::size_t in_row_ = 0;
  std::filesystem::path path_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace sdelab
