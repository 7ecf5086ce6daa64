#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "lmest/error.hpp"
#include "lmest/model.hpp"
#include "lmest/types.hpp"

namespace lmest::io {

// Shortest representation that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) fail(ErrorKind::Numerical, "cannot format number");
  return std::string(buf, end);
}

struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> lines;  // 1-based source line of each row

  [[noreturn]] void error(std::size_t row, const std::string& msg) const {
    fail(ErrorKind::Parse, path + ":" + std::to_string(lines[row]) + ": " + msg);
  }
};

inline std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

/// Plain comma-separated file with a mandatory header row. Quoting is not
/// supported; blank lines are skipped.
inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  CsvTable t;
  t.path = path;
  std::string line;
  int lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.find('"') != std::string::npos)
      fail(ErrorKind::Parse, path + ":" + std::to_string(lineno) + ": quoted fields are not supported");
    auto fields = split_fields(line);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size())
      fail(ErrorKind::Parse, path + ":" + std::to_string(lineno) + ": expected " +
                                 std::to_string(t.header.size()) + " fields, found " +
                                 std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.lines.push_back(lineno);
  }
  if (!have_header) fail(ErrorKind::Parse, path + ": missing header row");
  return t;
}

inline std::optional<long> parse_int(std::string_view s) {
  long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline void write_text(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out << text;
  out.close();
  if (!out) fail(ErrorKind::Io, "error while writing " + path);
}

//---------------------------------------------------------------------------//
// Long-format panels: unit_id,time,<columns>; time runs 1..T for every unit.

struct ResponseData {
  ResponsePanel panel;
  std::vector<std::string> unit_ids;
  std::vector<std::string> item_names;
};

namespace detail {

struct LongLayout {
  std::vector<std::string> unit_ids;
  int T = 0;
  std::vector<std::size_t> row_of;  // (unit * T + t) -> table row
};

inline LongLayout long_layout(const CsvTable& t, const std::vector<std::string>* expected_units) {
  if (t.header.size() < 2 || t.header[0] != "unit_id" || t.header[1] != "time")
    fail(ErrorKind::Parse, t.path + ":1: header must start with unit_id,time");
  LongLayout L;
  std::map<std::string, int> index;
  std::vector<std::vector<std::pair<int, std::size_t>>> per_unit;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string& id = t.rows[r][0];
    if (id.empty()) t.error(r, "empty unit_id");
    const auto time = parse_int(t.rows[r][1]);
    if (!time || *time < 1) t.error(r, "time must be a positive integer");
    auto [it, fresh] = index.emplace(id, static_cast<int>(L.unit_ids.size()));
    if (fresh) {
      L.unit_ids.push_back(id);
      per_unit.emplace_back();
    }
    per_unit[it->second].emplace_back(static_cast<int>(*time), r);
    L.T = std::max(L.T, static_cast<int>(*time));
  }
  if (L.unit_ids.empty()) fail(ErrorKind::Parse, t.path + ": no data rows");
  L.row_of.assign(L.unit_ids.size() * L.T, static_cast<std::size_t>(-1));
  for (std::size_t u = 0; u < per_unit.size(); ++u)
    for (auto [time, r] : per_unit[u]) {
      auto& slot = L.row_of[u * L.T + (time - 1)];
      if (slot != static_cast<std::size_t>(-1)) t.error(r, "duplicate time for unit " + L.unit_ids[u]);
      slot = r;
    }
  for (std::size_t u = 0; u < per_unit.size(); ++u)
    for (int time = 1; time <= L.T; ++time)
      if (L.row_of[u * L.T + (time - 1)] == static_cast<std::size_t>(-1))
        fail(ErrorKind::Parse, t.path + ": unit " + L.unit_ids[u] + " has no row for time " +
                                   std::to_string(time) + " (panels must be balanced)");
  if (expected_units && *expected_units != L.unit_ids)
    fail(ErrorKind::Parse, t.path + ": unit ids do not match the response file (same ids, same order required)");
  return L;
}

}  // namespace detail

/// Reads unit_id,time,item_1..item_r with blank cells as missing. Category
/// counts come from `cats` when given, else max observed code + 1 (>= 2).
inline ResponseData read_responses(const std::string& path,
                                   const std::optional<std::vector<int>>& cats = std::nullopt) {
  const CsvTable t = read_csv(path);
  const auto L = detail::long_layout(t, nullptr);
  const int r = static_cast<int>(t.header.size()) - 2;
  if (r < 1) fail(ErrorKind::Parse, path + ":1: no item columns");
  const int n = static_cast<int>(L.unit_ids.size());
  std::vector<int> y(static_cast<std::size_t>(n) * L.T * r);
  std::vector<int> maxcode(r, 1);
  for (int i = 0; i < n; ++i)
    for (int s = 0; s < L.T; ++s) {
      const std::size_t row = L.row_of[static_cast<std::size_t>(i) * L.T + s];
      for (int j = 0; j < r; ++j) {
        const std::string& cell = t.rows[row][j + 2];
        int v = kMissing;
        if (!cell.empty()) {
          const auto parsed = parse_int(cell);
          if (!parsed || *parsed < 0) t.error(row, "item " + t.header[j + 2] + ": expected a category code >= 0");
          v = static_cast<int>(*parsed);
          maxcode[j] = std::max(maxcode[j], v);
        }
        y[(static_cast<std::size_t>(i) * L.T + s) * r + j] = v;
      }
    }
  std::vector<int> c(r);
  for (int j = 0; j < r; ++j) c[j] = maxcode[j] + 1;
  if (cats) {
    if (static_cast<int>(cats->size()) != r) fail(ErrorKind::Usage, "category list length differs from item count");
    for (int j = 0; j < r; ++j) {
      if ((*cats)[j] < c[j]) fail(ErrorKind::Parse, path + ": item " + t.header[j + 2] + " has codes beyond its category count");
      c[j] = (*cats)[j];
    }
  }
  ResponseData out{ResponsePanel(n, L.T, c, std::move(y)), L.unit_ids,
                   std::vector<std::string>(t.header.begin() + 2, t.header.end())};
  return out;
}

inline std::string format_responses(const ResponseData& d) {
  const auto& p = d.panel;
  std::ostringstream os;
  os << "unit_id,time";
  for (int j = 0; j < p.r(); ++j)
    os << ',' << (static_cast<int>(d.item_names.size()) == p.r() ? d.item_names[j] : "item_" + std::to_string(j + 1));
  os << '\n';
  for (int i = 0; i < p.n(); ++i)
    for (int t = 0; t < p.T(); ++t) {
      os << d.unit_ids[i] << ',' << (t + 1);
      for (int j = 0; j < p.r(); ++j) {
        os << ',';
        if (p(i, t, j) != kMissing) os << p(i, t, j);
      }
      os << '\n';
    }
  return os.str();
}

inline void write_responses(const std::string& path, const ResponseData& d) {
  write_text(path, format_responses(d));
}

/// Reads unit_id,time,x_1..x_q. `init_cols` / `trans_cols` select the
/// columns of each design (all columns when empty).
inline CovariatePanel read_covariates(const std::string& path, const std::vector<std::string>& unit_ids,
                                      int T, std::optional<std::vector<int>> init_cols = std::nullopt,
                                      std::optional<std::vector<int>> trans_cols = std::nullopt) {
  const CsvTable t = read_csv(path);
  const auto L = detail::long_layout(t, &unit_ids);
  if (L.T != T) fail(ErrorKind::Parse, path + ": occasion count differs from the response file");
  const int q = static_cast<int>(t.header.size()) - 2;
  const int n = static_cast<int>(unit_ids.size());
  Eigen::MatrixXd series(static_cast<Eigen::Index>(n) * T, q);
  for (std::size_t cell = 0; cell < L.row_of.size(); ++cell) {
    const std::size_t row = L.row_of[cell];
    for (int c = 0; c < q; ++c) {
      const auto v = parse_double(t.rows[row][c + 2]);
      if (!v || !std::isfinite(*v))
        t.error(row, "covariate " + t.header[c + 2] + ": expected a finite number (missing covariates are not supported)");
      series(static_cast<Eigen::Index>(cell), c) = *v;
    }
  }
  std::vector<int> all(q);
  for (int c = 0; c < q; ++c) all[c] = c;
  return CovariatePanel(n, T, std::move(series), init_cols.value_or(all), trans_cols.value_or(all),
                        std::vector<std::string>(t.header.begin() + 2, t.header.end()));
}

inline void write_covariates(const std::string& path, const CovariatePanel& covs,
                             const std::vector<std::string>& unit_ids) {
  std::ostringstream os;
  os << "unit_id,time";
  for (const auto& name : covs.names()) os << ',' << name;
  os << '\n';
  for (int i = 0; i < covs.n(); ++i)
    for (int t = 0; t < covs.T(); ++t) {
      os << unit_ids[i] << ',' << (t + 1);
      for (int c = 0; c < covs.q(); ++c)
        os << ',' << format_double(covs.series()(static_cast<Eigen::Index>(i) * covs.T() + t, c));
      os << '\n';
    }
  write_text(path, os.str());
}

// True states, 1-based.
inline void write_states(const std::string& path, const std::vector<int>& states, int n, int T,
                         const std::vector<std::string>& unit_ids) {
  std::ostringstream os;
  os << "unit_id,time,state\n";
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < T; ++t)
      os << unit_ids[i] << ',' << (t + 1) << ',' << states[static_cast<std::size_t>(i) * T + t] + 1 << '\n';
  write_text(path, os.str());
}

inline std::vector<std::string> sequential_ids(int n) {
  std::vector<std::string> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = std::to_string(i + 1);
  return ids;
}

//---------------------------------------------------------------------------//
// Parameter tables

inline std::string state_header(const std::string& lead, int k, const std::string& prefix = "state_") {
  std::string h = lead;
  for (int u = 0; u < k; ++u) h += "," + prefix + std::to_string(u + 1);
  return h + "\n";
}

// item,category,state_1..state_k
inline std::string format_phi(const MeasurementParams& m) {
  std::ostringstream os;
  os << state_header("item,category", m.k);
  for (int j = 0; j < m.r(); ++j)
    for (int y = 0; y < m.phi[j].rows(); ++y) {
      os << (j + 1) << ',' << y;
      for (int u = 0; u < m.k; ++u) os << ',' << format_double(m.phi[j](y, u));
      os << '\n';
    }
  return os.str();
}

inline MeasurementParams read_phi(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header.size() < 3 || t.header[0] != "item" || t.header[1] != "category")
    fail(ErrorKind::Parse, path + ":1: header must be item,category,state_1..state_k");
  const int k = static_cast<int>(t.header.size()) - 2;
  std::map<int, std::map<int, std::vector<double>>> cells;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto j = parse_int(t.rows[r][0]);
    const auto y = parse_int(t.rows[r][1]);
    if (!j || *j < 1) t.error(r, "item must be a positive integer");
    if (!y || *y < 0) t.error(r, "category must be an integer >= 0");
    std::vector<double> vals(k);
    for (int u = 0; u < k; ++u) {
      const auto v = parse_double(t.rows[r][u + 2]);
      if (!v || !(*v >= 0.0 && *v <= 1.0)) t.error(r, "probability expected in [0,1]");
      vals[u] = *v;
    }
    if (!cells[static_cast<int>(*j)].emplace(static_cast<int>(*y), vals).second) t.error(r, "duplicate item/category");
  }
  MeasurementParams m{k, {}};
  int expect = 1;
  for (const auto& [j, rows] : cells) {
    if (j != expect++) fail(ErrorKind::Parse, path + ": items must be numbered 1..r without gaps");
    const int c = static_cast<int>(rows.size());
    Eigen::MatrixXd phi(c, k);
    int y_expect = 0;
    for (const auto& [y, vals] : rows) {
      if (y != y_expect++) fail(ErrorKind::Parse, path + ": categories of item " + std::to_string(j) + " must run 0..c-1");
      for (int u = 0; u < k; ++u) phi(y, u) = vals[u];
    }
    m.phi.push_back(std::move(phi));
  }
  try {
    m.validate(1e-8);
  } catch (const Error& e) {
    fail(ErrorKind::Parse, path + ": " + e.what());
  }
  return m;
}

inline std::string format_initial(const Eigen::VectorXd& pi) {
  std::ostringstream os;
  os << "state,pi\n";
  for (Eigen::Index u = 0; u < pi.size(); ++u) os << (u + 1) << ',' << format_double(pi(u)) << '\n';
  return os.str();
}

// from,to_1..to_k
inline std::string format_transition(const Eigen::MatrixXd& P) {
  std::ostringstream os;
  os << state_header("from", static_cast<int>(P.cols()), "to_");
  for (Eigen::Index u = 0; u < P.rows(); ++u) {
    os << (u + 1);
    for (Eigen::Index v = 0; v < P.cols(); ++v) os << ',' << format_double(P(u, v));
    os << '\n';
  }
  return os.str();
}

inline std::string term_name(int c, const std::vector<std::string>& names) {
  return c == 0 ? "intercept" : names[c - 1];
}

// term,state_2..state_k
inline std::string format_beta(const CovariateLatentParams& g, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << "term";
  for (int u = 1; u < g.k; ++u) os << ",state_" << (u + 1);
  os << '\n';
  for (int c = 0; c <= g.q1; ++c) {
    os << term_name(c, names);
    for (int u = 1; u < g.k; ++u) os << ',' << format_double(g.beta(c, u - 1));
    os << '\n';
  }
  return os.str();
}

// from,term,to_1..to_k; the self-transition (reference) cell is blank.
inline std::string format_gamma_pairwise(const CovariateLatentParams& g, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << state_header("from,term", g.k, "to_");
  for (int u = 0; u < g.k; ++u)
    for (int c = 0; c <= g.q2; ++c) {
      os << (u + 1) << ',' << term_name(c, names);
      for (int v = 0; v < g.k; ++v) {
        os << ',';
        if (v != u) os << format_double(g.gamma_pairwise[u](c, dest_column(u, v)));
      }
      os << '\n';
    }
  return os.str();
}

// term,state_1..state_k (state 1 fixed at zero)
inline std::string format_gamma_slope(const CovariateLatentParams& g, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << state_header("term", g.k);
  for (int c = 0; c < g.q2; ++c) {
    os << names[c];
    for (int u = 0; u < g.k; ++u) os << ',' << format_double(g.gamma_slope(c, u));
    os << '\n';
  }
  return os.str();
}

/// Writes phi.csv and the latent block (pi.csv + Pi.csv, or beta.csv plus
/// gamma.csv / gamma_intercept.csv + gamma_slope.csv) into `dir`.
/// `init_names` / `trans_names` label the covariate terms.
inline void write_params(const std::string& dir, const ModelParams& p,
                         const std::vector<std::string>& init_names = {},
                         const std::vector<std::string>& trans_names = {}) {
  const std::filesystem::path d(dir);
  write_text((d / "phi.csv").string(), format_phi(p.measurement));
  if (!p.has_covariates()) {
    write_text((d / "pi.csv").string(), format_initial(p.chain().initial));
    write_text((d / "Pi.csv").string(), format_transition(p.chain().transition));
    return;
  }
  const auto& g = p.regression();
  auto names_or_default = [](const std::vector<std::string>& names, int q) {
    if (static_cast<int>(names.size()) == q) return names;
    std::vector<std::string> out;
    for (int c = 0; c < q; ++c) out.push_back("x_" + std::to_string(c + 1));
    return out;
  };
  write_text((d / "beta.csv").string(), format_beta(g, names_or_default(init_names, g.q1)));
  const auto tn = names_or_default(trans_names, g.q2);
  if (g.layout == TransitionLayout::Pairwise) {
    write_text((d / "gamma.csv").string(), format_gamma_pairwise(g, tn));
  } else {
    write_text((d / "gamma_intercept.csv").string(), format_transition(g.gamma_intercept));
    write_text((d / "gamma_slope.csv").string(), format_gamma_slope(g, tn));
  }
}

/// item,section file; items are 1-based indices, sections are labels kept in
/// order of first appearance.
struct SectionMap {
  std::vector<int> section_of;       // per item, 0-based
  std::vector<std::string> names;    // per section
};

inline SectionMap read_sections(const std::string& path, int r) {
  const CsvTable t = read_csv(path);
  if (t.header.size() != 2 || t.header[0] != "item" || t.header[1] != "section")
    fail(ErrorKind::Parse, path + ":1: header must be item,section");
  SectionMap m;
  m.section_of.assign(r, -1);
  std::map<std::string, int> index;
  for (std::size_t row = 0; row < t.rows.size(); ++row) {
    const auto j = parse_int(t.rows[row][0]);
    if (!j || *j < 1 || *j > r) t.error(row, "item must be an integer in 1.." + std::to_string(r));
    if (t.rows[row][1].empty()) t.error(row, "empty section label");
    if (m.section_of[*j - 1] != -1) t.error(row, "item " + std::to_string(*j) + " assigned twice");
    auto [it, fresh] = index.emplace(t.rows[row][1], static_cast<int>(m.names.size()));
    if (fresh) m.names.push_back(t.rows[row][1]);
    m.section_of[*j - 1] = it->second;
  }
  for (int j = 0; j < r; ++j)
    if (m.section_of[j] == -1) fail(ErrorKind::Parse, path + ": item " + std::to_string(j + 1) + " has no section");
  return m;
}

}  // namespace lmest::io
