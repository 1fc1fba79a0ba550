#pragma once

// CSV ingestion and export of datasets, driven by a JSON manifest.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "dcorsel/covariate.hpp"
#include "dcorsel/selector.hpp"

namespace dcorsel::io {

inline constexpr int kManifestSchemaVersion = 1;

using json = nlohmann::ordered_json;

/// Malformed input; the message starts with "file:line:" when a line is known.
class ParseError : public StructuralError {
 public:
  using StructuralError::StructuralError;
};

inline std::string where(const std::string& path, std::size_t line) {
  return line ? path + ":" + std::to_string(line) + ": " : path + ": ";
}

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view cell, const std::string& path, std::size_t line) {
  while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
  while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || r.ec != std::errc() || r.ptr != cell.data() + cell.size())
    throw ParseError(where(path, line) + "expected a number, found '" + std::string(cell) + "'");
  if (!std::isfinite(v)) throw ParseError(where(path, line) + "missing or non-finite value '" + std::string(cell) + "'");
  return v;
}

struct CsvTable {
  std::string path;
  std::vector<std::vector<std::string>> rows;
  /// 1-based source line of each row.
  std::vector<std::size_t> lines;
};

inline std::vector<std::string> split_csv_line(const std::string& text, const std::string& path, std::size_t line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cell += ch;
      }
    } else if (ch == '"' && cell.find_first_not_of(" \t") == std::string::npos) {
      quoted = true;
      cell.clear();
    } else if (ch == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else if (ch != '\r') {
      cell += ch;
    }
  }
  if (quoted) throw ParseError(where(path, line) + "unterminated quoted field");
  out.push_back(std::move(cell));
  for (auto& c : out) {
    const auto b = c.find_first_not_of(" \t");
    const auto e = c.find_last_not_of(" \t");
    c = b == std::string::npos ? std::string() : c.substr(b, e - b + 1);
  }
  return out;
}

/// Reads a comma-separated file; blank lines are skipped and every row must
/// have as many fields as the first.
inline CsvTable read_csv(const std::filesystem::path& file) {
  CsvTable t;
  t.path = file.string();
  std::ifstream in(file);
  if (!in) throw ParseError(t.path + ": cannot open file");
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = split_csv_line(text, t.path, line);
    if (!t.rows.empty() && fields.size() != t.rows.front().size())
      throw ParseError(where(t.path, line) + "expected " + std::to_string(t.rows.front().size()) + " fields, found " +
                       std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.lines.push_back(line);
  }
  if (t.rows.empty()) throw ParseError(t.path + ": file is empty");
  return t;
}

inline std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

enum class BlockKind { scalar, categorical, vector, functional };

inline BlockKind parse_block_kind(const std::string& s, const std::string& path) {
  if (s == "scalar") return BlockKind::scalar;
  if (s == "categorical") return BlockKind::categorical;
  if (s == "vector") return BlockKind::vector;
  if (s == "functional") return BlockKind::functional;
  throw ParseError(path + ": unknown covariate kind '" + s + "'");
}

struct BlockRef {
  std::filesystem::path file;
  BlockKind kind = BlockKind::scalar;
  /// Name of a vector or functional covariate.
  std::string name;
  /// Columns to use from a scalar or categorical file; empty means all.
  std::vector<std::string> columns;
};

struct Manifest {
  std::filesystem::path path;
  std::filesystem::path response_file;
  std::string response_column;
  bool response_categorical = false;
  std::vector<BlockRef> blocks;
  json config = json::object();
  std::string output_dir;
};

namespace detail {

inline const json& require(const json& j, const char* key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(path + ": missing field '" + key + "'");
  return j.at(key);
}

inline std::string require_string(const json& j, const char* key, const std::string& path) {
  const auto& v = require(j, key, path);
  if (!v.is_string()) throw ParseError(path + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

inline std::size_t column_index(const CsvTable& t, const std::string& name) {
  const auto& h = t.rows.front();
  for (std::size_t j = 0; j < h.size(); ++j)
    if (h[j] == name) return j;
  throw ParseError(where(t.path, t.lines.front()) + "no column named '" + name + "'");
}

inline std::vector<double> numeric_column(const CsvTable& t, std::size_t j) {
  std::vector<double> v;
  v.reserve(t.rows.size() - 1);
  for (std::size_t r = 1; r < t.rows.size(); ++r) v.push_back(parse_double(t.rows[r][j], t.path, t.lines[r]));
  return v;
}

inline std::vector<std::string> label_column(const CsvTable& t, std::size_t j) {
  std::vector<std::string> v;
  v.reserve(t.rows.size() - 1);
  for (std::size_t r = 1; r < t.rows.size(); ++r) {
    if (t.rows[r][j].empty()) throw ParseError(where(t.path, t.lines[r]) + "missing value in column '" +
                                               t.rows.front()[j] + "'");
    v.push_back(t.rows[r][j]);
  }
  return v;
}

inline Covariate read_functional(const std::filesystem::path& file, const std::string& name) {
  const CsvTable t = read_csv(file);
  std::vector<double> grid;
  for (const auto& cell : t.rows.front()) grid.push_back(parse_double(cell, t.path, t.lines.front()));
  for (std::size_t k = 0; k + 1 < grid.size(); ++k)
    if (!(grid[k + 1] > grid[k]))
      throw ParseError(where(t.path, t.lines.front()) + "grid points must be strictly increasing");
  std::vector<double> values;
  values.reserve((t.rows.size() - 1) * grid.size());
  for (std::size_t r = 1; r < t.rows.size(); ++r)
    for (const auto& cell : t.rows[r]) values.push_back(parse_double(cell, t.path, t.lines[r]));
  return Covariate::functional(name, std::move(grid), std::move(values));
}

}  // namespace detail

inline Manifest load_manifest(const std::filesystem::path& file) {
  const std::string path = file.string();
  std::ifstream in(file);
  if (!in) throw ParseError(path + ": cannot open manifest");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    // e.byte is the offset of the failure; turn it into a line number.
    std::ifstream again(file);
    std::string text((std::istreambuf_iterator<char>(again)), std::istreambuf_iterator<char>());
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const std::size_t line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + upto, '\n'));
    throw ParseError(where(path, line) + "invalid JSON");
  }
  if (!j.is_object()) throw ParseError(path + ": manifest must be a JSON object");
  const auto& ver = detail::require(j, "schema_version", path);
  if (!ver.is_number_integer() || ver.get<int>() != kManifestSchemaVersion)
    throw ParseError(path + ": unsupported schema_version " + ver.dump() + " (expected " +
                     std::to_string(kManifestSchemaVersion) + ")");

  Manifest m;
  m.path = file;
  const auto base = file.parent_path();
  auto resolve = [&](const std::string& f) {
    std::filesystem::path p(f);
    return p.is_absolute() ? p : base / p;
  };
  const auto& resp = detail::require(j, "response", path);
  m.response_file = resolve(detail::require_string(resp, "file", path));
  m.response_column = detail::require_string(resp, "column", path);
  if (resp.contains("kind")) {
    const auto k = resp.at("kind").get<std::string>();
    if (k != "scalar" && k != "categorical")
      throw ParseError(path + ": response kind must be 'scalar' or 'categorical'");
    m.response_categorical = k == "categorical";
  }
  const auto& blocks = detail::require(j, "covariates", path);
  if (!blocks.is_array()) throw ParseError(path + ": 'covariates' must be an array");
  for (const auto& b : blocks) {
    BlockRef ref;
    ref.file = resolve(detail::require_string(b, "file", path));
    ref.kind = parse_block_kind(detail::require_string(b, "kind", path), path);
    if (ref.kind == BlockKind::vector || ref.kind == BlockKind::functional)
      ref.name = detail::require_string(b, "name", path);
    if (b.contains("columns")) ref.columns = b.at("columns").get<std::vector<std::string>>();
    m.blocks.push_back(std::move(ref));
  }
  if (j.contains("config")) {
    if (!j.at("config").is_object()) throw ParseError(path + ": 'config' must be an object");
    m.config = j.at("config");
  }
  if (j.contains("output_dir")) m.output_dir = j.at("output_dir").get<std::string>();
  return m;
}

/// Overrides fields of `cfg` from a manifest's config object.
inline void apply_config(const json& j, SelectorConfig& cfg, const std::string& path = "config") {
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "alpha_screen") cfg.alpha_screen = v.get<double>();
      else if (key == "alpha_model") cfg.alpha_model = v.get<double>();
      else if (key == "n_perm") cfg.n_perm = v.get<std::size_t>();
      else if (key == "catalog") cfg.catalog = parse_catalog(v.get<std::string>());
      else if (key == "max_iterations") cfg.max_iterations = v.get<std::size_t>();
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "memory_budget") cfg.memory_budget = v.get<std::size_t>();
      else if (key == "block_size") cfg.block_size = v.get<std::size_t>();
      else if (key == "smooth_df") cfg.smooth_df = v.get<double>();
      else if (key == "fpca_k") cfg.fpca_k = v.get<std::size_t>();
      else throw ParseError(path + ": unknown config field '" + key + "'");
    } catch (const json::exception&) {
      throw ParseError(path + ": config field '" + key + "' has the wrong type");
    } catch (const std::invalid_argument& e) {
      throw ParseError(path + ": config field '" + key + "': " + e.what());
    }
  }
}

inline Dataset load_dataset(const Manifest& m) {
  std::map<std::filesystem::path, CsvTable> tables;
  auto table = [&](const std::filesystem::path& f) -> const CsvTable& {
    auto it = tables.find(f);
    if (it == tables.end()) it = tables.emplace(f, read_csv(f)).first;
    return it->second;
  };

  const CsvTable& rt = table(m.response_file);
  const std::size_t rj = detail::column_index(rt, m.response_column);
  Covariate response = m.response_categorical
                           ? Covariate::categorical_from_labels(m.response_column, detail::label_column(rt, rj))
                           : Covariate::scalar(m.response_column, detail::numeric_column(rt, rj));

  std::vector<Covariate> cands;
  for (const auto& b : m.blocks) {
    if (b.kind == BlockKind::functional) {
      cands.push_back(detail::read_functional(b.file, b.name));
      continue;
    }
    const CsvTable& t = table(b.file);
    std::vector<std::size_t> cols;
    if (b.columns.empty()) {
      for (std::size_t j = 0; j < t.rows.front().size(); ++j)
        if (!(b.file == m.response_file && j == rj)) cols.push_back(j);
    } else {
      for (const auto& c : b.columns) cols.push_back(detail::column_index(t, c));
    }
    if (cols.empty()) throw ParseError(t.path + ": block has no covariate columns");
    if (b.kind == BlockKind::vector) {
      const std::size_t n = t.rows.size() - 1;
      std::vector<double> values(n * cols.size());
      for (std::size_t q = 0; q < cols.size(); ++q) {
        const auto col = detail::numeric_column(t, cols[q]);
        for (std::size_t i = 0; i < n; ++i) values[i * cols.size() + q] = col[i];
      }
      cands.push_back(Covariate::vector(b.name, cols.size(), std::move(values)));
      continue;
    }
    for (std::size_t j : cols) {
      const std::string& name = t.rows.front()[j];
      if (name.empty()) throw ParseError(where(t.path, t.lines.front()) + "empty column name");
      if (b.kind == BlockKind::scalar) cands.push_back(Covariate::scalar(name, detail::numeric_column(t, j)));
      else cands.push_back(Covariate::categorical_from_labels(name, detail::label_column(t, j)));
    }
  }
  return Dataset(std::move(response), std::move(cands));
}

inline Dataset load_dataset(const std::filesystem::path& manifest) { return load_dataset(load_manifest(manifest)); }

namespace detail {

inline std::string file_stem_for(const std::string& name, std::map<std::string, int>& used) {
  std::string s;
  for (char ch : name) s += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_';
  if (s.empty()) s = "covariate";
  if (const int k = used[s]++; k > 0) s += "_" + std::to_string(k);
  return s;
}

inline void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error(file.string() + ": cannot open for writing");
  out << text;
  if (!out) throw std::runtime_error(file.string() + ": write failed");
}

}  // namespace detail

/// Writes `data` as CSV files plus manifest.json under `dir`; returns the manifest path.
/// Numbers are written in shortest round-trip form, so reading back gives identical values.
inline std::filesystem::path write_dataset(const Dataset& data, const std::filesystem::path& dir,
                                           const json& config = json::object()) {
  std::filesystem::create_directories(dir);
  std::map<std::string, int> used{{"columns", 1}, {"manifest", 1}};
  json blocks = json::array();

  const Covariate& resp = data.response();
  std::vector<const Covariate*> columns{&resp};
  for (const auto& c : data.candidates())
    if (c.kind() == CovariateKind::scalar || c.kind() == CovariateKind::categorical) columns.push_back(&c);

  std::ostringstream tab;
  for (std::size_t q = 0; q < columns.size(); ++q) tab << (q ? "," : "") << quote_csv(columns[q]->name());
  tab << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t q = 0; q < columns.size(); ++q) {
      const Covariate& c = *columns[q];
      tab << (q ? "," : "")
          << (c.kind() == CovariateKind::categorical ? quote_csv(c.levels()[c.code(i)]) : format_double(c.value(i)));
    }
    tab << '\n';
  }
  detail::write_text(dir / "columns.csv", tab.str());

  for (const auto& c : data.candidates()) {
    switch (c.kind()) {
      case CovariateKind::scalar:
      case CovariateKind::categorical:
        blocks.push_back({{"file", "columns.csv"},
                          {"kind", std::string(to_string(c.kind()))},
                          {"columns", json::array({c.name()})}});
        break;
      case CovariateKind::vector: {
        const std::string file = detail::file_stem_for(c.name(), used) + ".csv";
        std::ostringstream os;
        for (std::size_t k = 0; k < c.width(); ++k) os << (k ? "," : "") << quote_csv(c.name() + "_" + std::to_string(k + 1));
        os << '\n';
        for (std::size_t i = 0; i < c.size(); ++i) {
          auto r = c.row(i);
          for (std::size_t k = 0; k < r.size(); ++k) os << (k ? "," : "") << format_double(r[k]);
          os << '\n';
        }
        detail::write_text(dir / file, os.str());
        blocks.push_back({{"file", file}, {"kind", "vector"}, {"name", c.name()}});
        break;
      }
      case CovariateKind::functional: {
        const std::string file = detail::file_stem_for(c.name(), used) + ".csv";
        std::ostringstream os;
        for (std::size_t k = 0; k < c.grid().size(); ++k) os << (k ? "," : "") << format_double(c.grid()[k]);
        os << '\n';
        for (std::size_t i = 0; i < c.size(); ++i) {
          auto r = c.row(i);
          for (std::size_t k = 0; k < r.size(); ++k) os << (k ? "," : "") << format_double(r[k]);
          os << '\n';
        }
        detail::write_text(dir / file, os.str());
        blocks.push_back({{"file", file}, {"kind", "functional"}, {"name", c.name()}});
        break;
      }
    }
  }

  json m;
  m["schema_version"] = kManifestSchemaVersion;
  m["response"] = {{"file", "columns.csv"},
                   {"column", resp.name()},
                   {"kind", data.is_classification() ? "categorical" : "scalar"}};
  m["covariates"] = blocks;
  if (!config.empty()) m["config"] = config;
  const auto path = dir / "manifest.json";
  detail::write_text(path, m.dump(2) + "\n");
  return path;
}

}  // namespace dcorsel::io
