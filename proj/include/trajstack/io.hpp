#pragma once

#include "trajstack/types.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace trajstack::io {

/// Numbers are written with 12 significant digits; NaN is an empty cell.
std::string format_number(double v);

/// Parse one cell; an empty cell is NaN. Throws Parse naming `where`.
double parse_number(const std::string& cell, const std::string& where);

/// Write through a temporary file in the same directory and rename it over
/// `path`, so readers never see a partial file.
void write_atomic(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

/// A numeric CSV table with a header line.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  /// Throws InputValidation when the column is absent.
  std::size_t column(const std::string& name) const;
  bool has(const std::string& name) const;
  VectorXd values(const std::string& name) const;
};

std::string to_csv(const Table& table);
Table parse_csv(const std::string& text, const std::string& source);
Table read_table(const std::filesystem::path& path);
void write_table(const std::filesystem::path& path, const Table& table);

struct Ingested {
  TrajectoryDataset data;
  /// Position of each dataset row in the file (rows are re-sorted by t).
  std::vector<Index> file_row;
  std::vector<std::string> warnings;
};

/// Trajectory CSV: required columns t, x, y, response; every other column is
/// a covariate unless `covariates` selects and orders them. Rows are sorted
/// by t with a warning when needed; a repeated t is an error; a blank
/// response marks a prediction target.
Ingested ingest_csv(const std::filesystem::path& path,
                    const std::optional<std::vector<std::string>>& covariates = std::nullopt);
Ingested ingest_csv_text(const std::string& text, const std::string& source,
                         const std::optional<std::vector<std::string>>& covariates = std::nullopt);

std::string emit_csv(const TrajectoryDataset& data);
void write_dataset(const std::filesystem::path& path, const TrajectoryDataset& data);

}  // namespace trajstack::io
