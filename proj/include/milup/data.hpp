#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "milup/matrix.hpp"

namespace milup {

// Randomized-experiment data: features, binary treatment flag, binary
// outcome and, for generated data, the ground-truth individual effect.
struct Dataset {
  Matrix features;
  std::vector<int> treatment;
  std::vector<int> outcome;
  std::optional<std::vector<double>> true_ite;
  std::vector<std::string> feature_names;

  std::size_t size() const { return treatment.size(); }
  std::size_t dims() const { return features.cols(); }
  std::size_t treated_count() const;

  // Throws ShapeError / ParseError when the invariants do not hold.
  void validate() const;
};

Dataset subset(const Dataset& ds, std::span<const std::size_t> rows);

struct TableSchema {
  // Empty means every column other than treatment, outcome and ite.
  std::vector<std::string> feature_columns;
  std::string treatment_column = "treatment";
  std::string outcome_column = "outcome";
  // Loaded into Dataset::true_ite when the header has it.
  std::string ite_column = "true_ite";
  char delimiter = ',';
};

Dataset load_table(const std::filesystem::path& path, const TableSchema& schema = {});

// Writes the dataset in the format load_table reads. Features are written
// with 17 significant digits; true_ite, when present, goes in a trailing
// column named by schema.ite_column.
void write_table(const Dataset& ds, const std::filesystem::path& path,
                 const TableSchema& schema = {});

struct SplitFractions {
  double train = 0.7;
  double valid = 0.15;
  double test = 0.15;
};

struct DataSplits {
  Dataset train;
  Dataset valid;
  Dataset test;
  bool stratified = true;
};

// Partition stratified jointly on (treatment, outcome). Falls back to an
// unstratified shuffle, with a warning, when any of the four cells has fewer
// rows than there are splits.
DataSplits split(const Dataset& ds, SplitFractions fractions, std::uint64_t seed);

// Row indices of the three parts; exposed for partition tests.
struct SplitIndices {
  std::vector<std::size_t> train, valid, test;
  bool stratified = true;
};
SplitIndices split_indices(const Dataset& ds, SplitFractions fractions, std::uint64_t seed);

struct MiniBatch {
  std::vector<std::size_t> rows;
  double u_t = 0.0;  // treated fraction of the batch
};

// One pass over `ds` in an order shuffled by (seed, epoch). The trailing
// partial batch is dropped. batch_size > ds.size() gives no batches and a
// warning.
std::vector<MiniBatch> minibatches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                                   std::uint64_t epoch);

struct SynthConfig {
  std::size_t n = 50000;
  std::size_t d = 5;
  double base_rate = 0.10;
  double slope = 0.02;
  double tau_max = 0.06;
  double treated_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Features uniform on [0,1]^d. Control response rate base_rate + slope*x1,
// individual effect tau_max * max(0, 2*(x2 - 0.5)), treatment assigned
// independently of x.
Dataset generate_synthetic(const SynthConfig& cfg);

// mean(Y | T=1) - mean(Y | T=0). Throws UndefinedError if an arm is empty.
double empirical_ate(const Dataset& ds);

// Same estimate from per-arm positive and total counts.
double empirical_ate(std::size_t treated_pos, std::size_t treated_n, std::size_t control_pos,
                     std::size_t control_n);

// Standard error of the two-sample difference of rates.
double ate_standard_error(const Dataset& ds);

// Per-column affine standardization fitted on one split.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;  // 1 for constant columns

  bool empty() const { return mean.empty(); }
  static Standardizer fit(const Matrix& x);
  Matrix apply(const Matrix& x) const;
  bool operator==(const Standardizer&) const = default;
};

}  // namespace milup
