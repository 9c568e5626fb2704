#include "milup/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string_view>
#include <unordered_map>

#include "milup/diagnostics.hpp"
#include "milup/error.hpp"

namespace milup {

std::size_t Dataset::treated_count() const {
  return static_cast<std::size_t>(std::count(treatment.begin(), treatment.end(), 1));
}

void Dataset::validate() const {
  const std::size_t n = treatment.size();
  if (outcome.size() != n || features.rows() != n) {
    throw ShapeError("dataset: features, treatment and outcome lengths differ");
  }
  if (true_ite && true_ite->size() != n) throw ShapeError("dataset: true_ite length differs");
  if (!feature_names.empty() && feature_names.size() != features.cols()) {
    throw ShapeError("dataset: feature name count differs from feature columns");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if ((treatment[i] != 0 && treatment[i] != 1) || (outcome[i] != 0 && outcome[i] != 1)) {
      throw ParseError("dataset: treatment and outcome must be 0 or 1", i + 1);
    }
    if (true_ite && !((*true_ite)[i] >= -1.0 && (*true_ite)[i] <= 1.0)) {
      throw ParseError("dataset: true_ite outside [-1, 1]", i + 1);
    }
  }
  for (double v : features.values()) {
    if (!std::isfinite(v)) throw ParseError("dataset: non-finite feature value", 0);
  }
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> rows) {
  Dataset out;
  out.features = gather_rows(ds.features, rows);
  out.feature_names = ds.feature_names;
  out.treatment.reserve(rows.size());
  out.outcome.reserve(rows.size());
  for (std::size_t r : rows) {
    out.treatment.push_back(ds.treatment[r]);
    out.outcome.push_back(ds.outcome[r]);
  }
  if (ds.true_ite) {
    std::vector<double> ite;
    ite.reserve(rows.size());
    for (std::size_t r : rows) ite.push_back((*ds.true_ite)[r]);
    out.true_ite = std::move(ite);
  }
  return out;
}

namespace {

std::vector<std::string_view> split_line(std::string_view line, char delim) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

int parse_binary(std::string_view field, const std::string& column, std::size_t row) {
  auto v = parse_double(field);
  if (!v || (*v != 0.0 && *v != 1.0)) {
    throw ParseError("row " + std::to_string(row) + ": column '" + column +
                         "' must be 0 or 1, got '" + std::string(trim(field)) + "'",
                     row);
  }
  return *v == 1.0 ? 1 : 0;
}

}  // namespace

Dataset load_table(const std::filesystem::path& path, const TableSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("'" + path.string() + "' has no header row", 0);

  std::vector<std::string> header;
  for (auto f : split_line(line, schema.delimiter)) header.emplace_back(trim(f));
  std::unordered_map<std::string, std::size_t> column_index;
  for (std::size_t i = 0; i < header.size(); ++i) column_index.emplace(header[i], i);

  auto require = [&](const std::string& name) {
    auto it = column_index.find(name);
    if (it == column_index.end()) {
      throw SchemaError("'" + path.string() + "': missing column '" + name + "'", name);
    }
    return it->second;
  };
  const std::size_t t_col = require(schema.treatment_column);
  const std::size_t y_col = require(schema.outcome_column);
  std::optional<std::size_t> ite_col;
  if (auto it = column_index.find(schema.ite_column);
      !schema.ite_column.empty() && it != column_index.end()) {
    ite_col = it->second;
  }

  std::vector<std::size_t> feature_cols;
  Dataset ds;
  if (schema.feature_columns.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i == t_col || i == y_col || (ite_col && i == *ite_col)) continue;
      feature_cols.push_back(i);
      ds.feature_names.push_back(header[i]);
    }
  } else {
    for (const auto& name : schema.feature_columns) {
      feature_cols.push_back(require(name));
      ds.feature_names.push_back(name);
    }
  }

  std::vector<double> values;
  std::vector<double> ite;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    auto fields = split_line(line, schema.delimiter);
    if (fields.size() != header.size()) {
      throw ParseError("row " + std::to_string(row) + ": expected " +
                           std::to_string(header.size()) + " fields, got " +
                           std::to_string(fields.size()),
                       row);
    }
    for (std::size_t i = 0; i < feature_cols.size(); ++i) {
      auto v = parse_double(fields[feature_cols[i]]);
      if (!v || !std::isfinite(*v)) {
        throw ParseError("row " + std::to_string(row) + ": non-numeric value '" +
                             std::string(trim(fields[feature_cols[i]])) + "' in column '" +
                             ds.feature_names[i] + "'",
                         row);
      }
      values.push_back(*v);
    }
    ds.treatment.push_back(parse_binary(fields[t_col], schema.treatment_column, row));
    ds.outcome.push_back(parse_binary(fields[y_col], schema.outcome_column, row));
    if (ite_col) {
      auto v = parse_double(fields[*ite_col]);
      if (!v || !(*v >= -1.0 && *v <= 1.0)) {
        throw ParseError("row " + std::to_string(row) + ": bad " + schema.ite_column + " value",
                         row);
      }
      ite.push_back(*v);
    }
  }
  ds.features = Matrix(row, feature_cols.size(), std::move(values));
  if (ite_col) ds.true_ite = std::move(ite);
  return ds;
}

void write_table(const Dataset& ds, const std::filesystem::path& path, const TableSchema& schema) {
  ds.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  const char d = schema.delimiter;
  for (std::size_t j = 0; j < ds.dims(); ++j) {
    out << (ds.feature_names.empty() ? "x" + std::to_string(j + 1) : ds.feature_names[j]) << d;
  }
  out << schema.treatment_column << d << schema.outcome_column;
  if (ds.true_ite) out << d << schema.ite_column;
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.dims(); ++j) out << ds.features(i, j) << d;
    out << ds.treatment[i] << d << ds.outcome[i];
    if (ds.true_ite) out << d << (*ds.true_ite)[i];
    out << '\n';
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

SplitIndices split_indices(const Dataset& ds, SplitFractions f, std::uint64_t seed) {
  if (!(f.train > 0.0 && f.valid > 0.0 && f.test > 0.0) ||
      std::abs(f.train + f.valid + f.test - 1.0) > 1e-9) {
    throw ConfigError("split: fractions must be positive and sum to 1");
  }
  const std::size_t n = ds.size();
  const std::size_t n_train = std::min<std::size_t>(n, std::llround(f.train * n));
  const std::size_t n_valid = std::min<std::size_t>(n - n_train, std::llround(f.valid * n));

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order;
  SplitIndices out;

  std::array<std::vector<std::size_t>, 4> cells;
  for (std::size_t i = 0; i < n; ++i) cells[2 * ds.treatment[i] + ds.outcome[i]].push_back(i);
  const bool stratify =
      std::all_of(cells.begin(), cells.end(), [](const auto& c) { return c.size() >= 3; });

  if (stratify) {
    // Each cell is shuffled and its rows spread evenly over [0, 1); cutting
    // the merged sequence at the split sizes keeps every cell's share.
    struct Keyed {
      double key;
      std::size_t cell;
      std::size_t row;
    };
    std::vector<Keyed> keyed;
    keyed.reserve(n);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      auto& rows = cells[c];
      std::shuffle(rows.begin(), rows.end(), rng);
      const double offset = unit(rng);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        keyed.push_back({(static_cast<double>(r) + offset) / static_cast<double>(rows.size()), c,
                         rows[r]});
      }
    }
    std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
      return a.key != b.key ? a.key < b.key : a.cell < b.cell;
    });
    for (const auto& k : keyed) order.push_back(k.row);
  } else {
    warn("split: a (treatment, outcome) cell has fewer than 3 rows; using an unstratified split");
    out.stratified = false;
    order.resize(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
  }

  out.train.assign(order.begin(), order.begin() + n_train);
  out.valid.assign(order.begin() + n_train, order.begin() + n_train + n_valid);
  out.test.assign(order.begin() + n_train + n_valid, order.end());
  for (auto* part : {&out.train, &out.valid, &out.test}) std::sort(part->begin(), part->end());
  return out;
}

DataSplits split(const Dataset& ds, SplitFractions fractions, std::uint64_t seed) {
  const SplitIndices idx = split_indices(ds, fractions, seed);
  return DataSplits{subset(ds, idx.train), subset(ds, idx.valid), subset(ds, idx.test),
                    idx.stratified};
}

std::vector<MiniBatch> minibatches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                                   std::uint64_t epoch) {
  if (batch_size < 2) throw ConfigError("minibatches: batch size must be at least 2");
  std::vector<MiniBatch> batches;
  const std::size_t n = ds.size();
  if (batch_size > n) {
    warn("minibatches: batch size " + std::to_string(batch_size) + " exceeds dataset size " +
         std::to_string(n) + "; no batches produced");
    return batches;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t start = 0; start + batch_size <= n; start += batch_size) {
    MiniBatch b;
    b.rows.assign(order.begin() + start, order.begin() + start + batch_size);
    std::size_t treated = 0;
    for (std::size_t r : b.rows) treated += ds.treatment[r];
    b.u_t = static_cast<double>(treated) / static_cast<double>(batch_size);
    batches.push_back(std::move(b));
  }
  return batches;
}

void SynthConfig::validate() const {
  if (n == 0) throw ConfigError("synth: n must be positive");
  if (d < 3) throw ConfigError("synth: d must be at least 3");
  if (!(treated_fraction >= 0.0 && treated_fraction <= 1.0)) {
    throw ConfigError("synth: treated_fraction must lie in [0, 1]");
  }
  if (!(tau_max >= -1.0 && tau_max <= 1.0)) throw ConfigError("synth: tau_max must lie in [-1, 1]");
  // p_c + t * ite is affine in (x1, ite) so the extremes sit at the corners.
  const double lo = base_rate + std::min(0.0, slope) + std::min(0.0, tau_max);
  const double hi = base_rate + std::max(0.0, slope) + std::max(0.0, tau_max);
  const double lo_c = base_rate + std::min(0.0, slope);
  const double hi_c = base_rate + std::max(0.0, slope);
  if (!(lo >= 0.0 && hi <= 1.0 && lo_c >= 0.0 && hi_c <= 1.0)) {
    throw ConfigError("synth: response probabilities leave [0, 1] (base_rate=" +
                      std::to_string(base_rate) + ", slope=" + std::to_string(slope) +
                      ", tau_max=" + std::to_string(tau_max) + ")");
  }
}

Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Dataset ds;
  ds.features = Matrix(cfg.n, cfg.d);
  ds.treatment.resize(cfg.n);
  ds.outcome.resize(cfg.n);
  std::vector<double> ite(cfg.n);
  for (std::size_t j = 0; j < cfg.d; ++j) ds.feature_names.push_back("x" + std::to_string(j + 1));
  for (std::size_t i = 0; i < cfg.n; ++i) {
    auto row = ds.features.row(i);
    for (double& v : row) v = unit(rng);
    const double p_control = cfg.base_rate + cfg.slope * row[0];
    ite[i] = cfg.tau_max * std::max(0.0, 2.0 * (row[1] - 0.5));
    ds.treatment[i] = unit(rng) < cfg.treated_fraction ? 1 : 0;
    const double p = p_control + ds.treatment[i] * ite[i];
    ds.outcome[i] = unit(rng) < p ? 1 : 0;
  }
  ds.true_ite = std::move(ite);
  return ds;
}

double empirical_ate(std::size_t treated_pos, std::size_t treated_n, std::size_t control_pos,
                     std::size_t control_n) {
  if (treated_n == 0 || control_n == 0) {
    throw UndefinedError("ATE undefined: an arm has no rows");
  }
  return static_cast<double>(treated_pos) / static_cast<double>(treated_n) -
         static_cast<double>(control_pos) / static_cast<double>(control_n);
}

namespace {

struct ArmCounts {
  std::size_t tp = 0, tn = 0, cp = 0, cn = 0;
};

ArmCounts arm_counts(const Dataset& ds) {
  ArmCounts c;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.treatment[i] == 1) {
      ++c.tn;
      c.tp += ds.outcome[i];
    } else {
      ++c.cn;
      c.cp += ds.outcome[i];
    }
  }
  return c;
}

}  // namespace

double empirical_ate(const Dataset& ds) {
  const ArmCounts c = arm_counts(ds);
  return empirical_ate(c.tp, c.tn, c.cp, c.cn);
}

double ate_standard_error(const Dataset& ds) {
  const ArmCounts c = arm_counts(ds);
  if (c.tn < 2 || c.cn < 2) throw UndefinedError("standard error needs two rows per arm");
  auto var_of_mean = [](std::size_t pos, std::size_t n) {
    const double p = static_cast<double>(pos) / static_cast<double>(n);
    // Sample variance of a 0/1 variable, divided by n.
    return p * (1.0 - p) * static_cast<double>(n) / static_cast<double>(n - 1) /
           static_cast<double>(n);
  };
  return std::sqrt(var_of_mean(c.tp, c.tn) + var_of_mean(c.cp, c.cn));
}

Standardizer Standardizer::fit(const Matrix& x) {
  Standardizer s;
  const std::size_t n = x.rows(), d = x.cols();
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 1.0);
  if (n == 0) return s;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += x(i, j);
  for (double& m : s.mean) m /= static_cast<double>(n);
  std::vector<double> var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x(i, j) - s.mean[j];
      var[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(var[j] / static_cast<double>(n));
    s.scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (empty()) return x;
  if (x.cols() != mean.size()) throw ShapeError("standardizer: column count mismatch");
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mean[j]) / scale[j];
  }
  return out;
}

}  // namespace milup
