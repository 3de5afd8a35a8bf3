#include "trajstack/io.hpp"

#include "trajstack/error.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unistd.h>

namespace trajstack::io {
namespace {

[[noreturn]] void fail(ErrorKind kind, const char* op, const std::string& what) {
  throw Error(kind, "cli", op, what);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return {};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

double parse_number(const std::string& raw, const std::string& where) {
  const std::string cell = trim(raw);
  if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  const auto res = std::from_chars(cell.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) fail(ErrorKind::Parse, "parse_number", where + ": not a number: '" + cell + "'");
  return v;
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  std::filesystem::create_directories(dir);
  const auto tmp = dir / ("." + path.filename().string() + ".tmp" + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::InputValidation, "write_atomic", "cannot open " + tmp.string());
    out << content;
    out.flush();
    if (!out) fail(ErrorKind::InputValidation, "write_atomic", "cannot write " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    fail(ErrorKind::InputValidation, "write_atomic", "cannot rename onto " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::InputValidation, "read_file", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t Table::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) fail(ErrorKind::InputValidation, "table_column", "missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

bool Table::has(const std::string& name) const { return std::find(header.begin(), header.end(), name) != header.end(); }

VectorXd Table::values(const std::string& name) const {
  const std::size_t c = column(name);
  VectorXd v(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) v(static_cast<Index>(i)) = rows[i][c];
  return v;
}

std::string to_csv(const Table& table) {
  std::string out;
  for (std::size_t j = 0; j < table.header.size(); ++j) out += (j ? "," : "") + table.header[j];
  out += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out += ',';
      out += format_number(row[j]);
    }
    out += '\n';
  }
  return out;
}

Table parse_csv(const std::string& text, const std::string& source) {
  Table t;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (t.header.empty()) {
      if (trim(line).empty()) continue;
      for (const auto& c : split(line)) t.header.push_back(trim(c));
      continue;
    }
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() != t.header.size()) {
      fail(ErrorKind::Parse, "parse_csv",
           source + " line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
               " cells, found " + std::to_string(cells.size()));
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      row.push_back(parse_number(cells[j], source + " line " + std::to_string(line_no) + " column '" + t.header[j] + "'"));
    }
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) fail(ErrorKind::Parse, "parse_csv", source + ": missing header");
  return t;
}

Table read_table(const std::filesystem::path& path) { return parse_csv(read_file(path), path.string()); }

void write_table(const std::filesystem::path& path, const Table& table) { write_atomic(path, to_csv(table)); }

Ingested ingest_csv_text(const std::string& text, const std::string& source,
                         const std::optional<std::vector<std::string>>& covariates) {
  const Table t = parse_csv(text, source);
  for (const char* req : {"t", "x", "y", "response"}) {
    if (!t.has(req)) fail(ErrorKind::InputValidation, "ingest_csv", source + ": missing required column '" + req + "'");
  }
  std::vector<std::string> names;
  if (covariates) {
    for (const auto& c : *covariates) {
      if (!t.has(c)) fail(ErrorKind::Configuration, "ingest_csv", source + ": covariate column '" + c + "' not found");
      names.push_back(c);
    }
  } else {
    for (const auto& h : t.header) {
      if (h != "t" && h != "x" && h != "y" && h != "response") names.push_back(h);
    }
  }
  const auto n = static_cast<Index>(t.rows.size());
  if (n == 0) fail(ErrorKind::EmptyData, "ingest_csv", source + ": no data rows");
  const std::size_t ct = t.column("t"), cx = t.column("x"), cy = t.column("y"), cr = t.column("response");
  std::vector<std::size_t> cc;
  for (const auto& c : names) cc.push_back(t.column(c));

  Ingested out;
  out.file_row.resize(static_cast<std::size_t>(n));
  std::iota(out.file_row.begin(), out.file_row.end(), Index{0});
  auto cell = [&](Index r, std::size_t c) { return t.rows[static_cast<std::size_t>(r)][c]; };
  for (Index r = 0; r < n; ++r) {
    for (std::size_t c : {ct, cx, cy}) {
      if (!std::isfinite(cell(r, c))) {
        fail(ErrorKind::Parse, "ingest_csv",
             source + " data row " + std::to_string(r + 1) + ": column '" + t.header[c] + "' must be a finite number");
      }
    }
    for (std::size_t c : cc) {
      if (!std::isfinite(cell(r, c))) {
        fail(ErrorKind::Parse, "ingest_csv",
             source + " data row " + std::to_string(r + 1) + ": covariate '" + t.header[c] + "' must be a finite number");
      }
    }
    if (std::isinf(cell(r, cr))) {
      fail(ErrorKind::Parse, "ingest_csv", source + " data row " + std::to_string(r + 1) + ": infinite response");
    }
  }
  if (!std::is_sorted(out.file_row.begin(), out.file_row.end(), [&](Index a, Index b) { return cell(a, ct) < cell(b, ct); })) {
    std::stable_sort(out.file_row.begin(), out.file_row.end(), [&](Index a, Index b) { return cell(a, ct) < cell(b, ct); });
    out.warnings.push_back(source + ": rows were not sorted by t and have been reordered");
  }
  TrajectoryDataset& d = out.data;
  d.t.resize(n);
  d.y.resize(n);
  d.x.resize(n, static_cast<Index>(cc.size()));
  d.covariate_names = names;
  for (Index i = 0; i < n; ++i) {
    const Index r = out.file_row[static_cast<std::size_t>(i)];
    d.t(i) = cell(r, ct);
    d.s.push_back({cell(r, cx), cell(r, cy)});
    d.y(i) = cell(r, cr);
    for (std::size_t j = 0; j < cc.size(); ++j) d.x(i, static_cast<Index>(j)) = cell(r, cc[j]);
    if (i > 0 && d.t(i) == d.t(i - 1)) {
      fail(ErrorKind::InputValidation, "ingest_csv",
           source + ": duplicate t = " + format_number(d.t(i)) + " at data rows " +
               std::to_string(out.file_row[static_cast<std::size_t>(i - 1)] + 1) + " and " + std::to_string(r + 1));
    }
  }
  return out;
}

Ingested ingest_csv(const std::filesystem::path& path, const std::optional<std::vector<std::string>>& covariates) {
  return ingest_csv_text(read_file(path), path.string(), covariates);
}

std::string emit_csv(const TrajectoryDataset& data) {
  data.validate();
  Table t;
  t.header = {"t", "x", "y", "response"};
  for (const auto& c : data.covariate_names) t.header.push_back(c);
  for (Index j = static_cast<Index>(data.covariate_names.size()); j < data.covariates(); ++j) {
    t.header.push_back("x" + std::to_string(j + 1));
  }
  for (Index i = 0; i < data.size(); ++i) {
    std::vector<double> row{data.t(i), data.s[static_cast<std::size_t>(i)].x, data.s[static_cast<std::size_t>(i)].y, data.y(i)};
    for (Index j = 0; j < data.covariates(); ++j) row.push_back(data.x(i, j));
    t.rows.push_back(std::move(row));
  }
  return to_csv(t);
}

void write_dataset(const std::filesystem::path& path, const TrajectoryDataset& data) {
  write_atomic(path, emit_csv(data));
}

}  // namespace trajstack::io
