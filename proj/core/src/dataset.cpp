#include "speccausal/dataset.hpp"

#include "speccausal/error.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace speccausal {

Setting parse_setting(const std::string& s) {
  if (s == "iv") return Setting::iv;
  if (s == "ivoc") return Setting::ivoc;
  if (s == "pcl") return Setting::pcl;
  throw ConfigError("unknown setting '" + s + "' (expected iv, ivoc or pcl)");
}

std::string to_string(Setting s) {
  switch (s) {
    case Setting::iv: return "iv";
    case Setting::ivoc: return "ivoc";
    case Setting::pcl: return "pcl";
  }
  return "iv";
}

std::vector<std::string> required_columns(Setting s, bool require_outcome) {
  std::vector<std::string> cols = {"x", "z"};
  if (s == Setting::ivoc) cols.push_back("o");
  if (s == Setting::pcl) cols.push_back("w");
  if (require_outcome) cols.push_back("y");
  return cols;
}

Eigen::Index Dataset::rows() const {
  if (columns.empty()) return 0;
  return columns.begin()->second.rows();
}

const Matrix& Dataset::col(const std::string& name) const {
  auto it = columns.find(name);
  if (it == columns.end()) {
    throw DimensionError("dataset (" + to_string(setting) + ") has no column '" + name + "'");
  }
  return it->second;
}

void Dataset::validate(bool require_outcome) const {
  for (const auto& name : required_columns(setting, require_outcome)) {
    if (!has(name)) throw DimensionError("dataset (" + to_string(setting) + ") is missing column '" + name + "'");
  }
  const Eigen::Index n = rows();
  for (const auto& [name, m] : columns) {
    if (m.rows() != n) throw DimensionError("column '" + name + "' has " + std::to_string(m.rows()) + " rows, expected " + std::to_string(n));
    if (m.cols() == 0) throw DimensionError("column '" + name + "' has zero width");
    require_finite(m, "column '" + name + "'");
  }
  if (truth && truth->size() != n) throw DimensionError("truth length does not match row count");
  if (weights) {
    if (weights->size() != n) throw DimensionError("weights length does not match row count");
    if ((weights->array() < 0).any() || !(weights->sum() > 0)) throw NumericError("weights must be nonnegative with positive sum");
  }
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
  Dataset out;
  out.setting = setting;
  out.metadata = metadata;
  for (const auto& [name, m] : columns) {
    Matrix s(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) s.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
    out.columns.emplace(name, std::move(s));
  }
  auto pick = [&](const Vector& v) {
    Vector s(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) s(static_cast<Eigen::Index>(i)) = v(static_cast<Eigen::Index>(idx[i]));
    return s;
  };
  if (truth) out.truth = pick(*truth);
  if (weights) out.weights = pick(*weights);
  return out;
}

Vector Dataset::normalized_weights() const {
  const Eigen::Index n = rows();
  if (n == 0) throw DimensionError("dataset is empty");
  if (!weights) return Vector::Constant(n, 1.0 / static_cast<double>(n));
  return *weights / weights->sum();
}

Matrix weighted_cross_moment(const Matrix& A, const Matrix& B, const Vector& w) {
  if (A.rows() != B.rows() || A.rows() != w.size()) throw DimensionError("weighted_cross_moment: row counts differ");
  return A.transpose() * (B.array().colwise() * w.array()).matrix();
}

Dataset concat_rows(const Dataset& a, const Dataset& b) {
  if (a.columns.size() != b.columns.size()) throw DimensionError("concat_rows: column sets differ");
  Dataset out;
  out.setting = a.setting;
  out.metadata = a.metadata;
  for (const auto& [name, m] : a.columns) {
    const Matrix& o = b.col(name);
    if (o.cols() != m.cols()) throw DimensionError("concat_rows: column '" + name + "' widths differ");
    Matrix s(m.rows() + o.rows(), m.cols());
    s << m, o;
    out.columns.emplace(name, std::move(s));
  }
  if (a.truth && b.truth) {
    Vector t(a.truth->size() + b.truth->size());
    t << *a.truth, *b.truth;
    out.truth = std::move(t);
  }
  if (a.weights || b.weights) throw DimensionError("concat_rows: weighted datasets cannot be concatenated");
  return out;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) throw Error("dataset file line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

}  // namespace

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  d.validate(false);
  nlohmann::json header;
  header["setting"] = to_string(d.setting);
  header["rows"] = d.rows();
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& [name, m] : d.columns) cols.push_back({{"name", name}, {"dim", m.cols()}});
  header["columns"] = cols;
  header["truth"] = d.truth.has_value();
  header["weights"] = d.weights.has_value();
  header["metadata"] = d.metadata;

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << header.dump() << "\n";
  bool first = true;
  auto sep = [&] {
    if (!first) os << ',';
    first = false;
  };
  for (const auto& [name, m] : d.columns) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      sep();
      os << name << '_' << j;
    }
  }
  if (d.truth) { sep(); os << "truth"; }
  if (d.weights) { sep(); os << "weight"; }
  os << "\n";
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf;
  };
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    first = true;
    for (const auto& [name, m] : d.columns) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        sep();
        put(m(i, j));
      }
    }
    if (d.truth) { sep(); put((*d.truth)(i)); }
    if (d.weights) { sep(); put((*d.weights)(i)); }
    os << "\n";
  }
  if (!os) throw Error("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open dataset " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw Error("dataset " + path.string() + " is empty");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error("dataset header is not valid JSON: " + std::string(e.what()));
  }
  Dataset d;
  d.setting = parse_setting(header.at("setting").get<std::string>());
  d.metadata = header.value("metadata", nlohmann::json::object());
  const auto n = header.at("rows").get<Eigen::Index>();
  std::vector<std::pair<std::string, Eigen::Index>> layout;
  Eigen::Index width = 0;
  for (const auto& c : header.at("columns")) {
    layout.emplace_back(c.at("name").get<std::string>(), c.at("dim").get<Eigen::Index>());
    width += layout.back().second;
  }
  const bool has_truth = header.value("truth", false);
  const bool has_weights = header.value("weights", false);
  width += (has_truth ? 1 : 0) + (has_weights ? 1 : 0);
  if (!std::getline(is, line)) throw Error("dataset is missing the CSV header line");
  if (static_cast<Eigen::Index>(split_csv(line).size()) != width) throw Error("dataset CSV header does not match the JSON header");

  for (const auto& [name, dim] : layout) d.columns.emplace(name, Matrix(n, dim));
  if (has_truth) d.truth = Vector(n);
  if (has_weights) d.weights = Vector(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::getline(is, line)) throw Error("dataset has fewer rows than declared");
    auto fields = split_csv(line);
    if (static_cast<Eigen::Index>(fields.size()) != width) throw Error("dataset row " + std::to_string(i) + " has the wrong width");
    std::size_t k = 0;
    const std::size_t lineno = static_cast<std::size_t>(i) + 3;
    for (const auto& [name, dim] : layout) {
      Matrix& m = d.columns.at(name);
      for (Eigen::Index j = 0; j < dim; ++j) m(i, j) = parse_double(fields[k++], lineno);
    }
    if (has_truth) (*d.truth)(i) = parse_double(fields[k++], lineno);
    if (has_weights) (*d.weights)(i) = parse_double(fields[k++], lineno);
  }
  d.validate(false);
  return d;
}

}  // namespace speccausal
