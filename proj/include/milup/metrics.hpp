#pragma once

// Uplift curves and AUUC.
//
// With separate ranking, treated and control rows are each ordered by score
// (descending). At targeting fraction phi = k / n_points the top
// ceil(phi * N_T) treated and top ceil(phi * N_C) control rows are selected
// and
//
//   g(phi) = phi * (positive rate of selected treated
//                   - positive rate of selected control),
//
// AUUC = mean over k = 1..n_points of g(k / n_points). g(1) is the empirical
// ATE of the evaluated rows; random targeting scores about ATE / 2.
//
// Ties: by default a cut that falls inside a block of equal scores takes
// each tied row fractionally (the block's mean outcome), so the curve does
// not depend on row order. TieHandling::kIndex instead breaks ties by
// original row index.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace milup {

enum class Ranking { kSeparate, kJoint };
enum class TieHandling { kAverage, kIndex };

struct CurveOptions {
  std::size_t n_points = 100;
  Ranking ranking = Ranking::kSeparate;
  TieHandling ties = TieHandling::kAverage;
};

struct CurvePoint {
  double phi = 0.0;
  double g = 0.0;
  bool operator==(const CurvePoint&) const = default;
};

struct UpliftCurve {
  std::vector<CurvePoint> points;
  double auuc = 0.0;
};

// Throws UndefinedError when either arm is empty, ConfigError for
// n_points < 2 or mismatched lengths.
UpliftCurve uplift_curve(std::span<const double> scores, std::span<const int> outcome,
                         std::span<const int> treatment, const CurveOptions& options = {});

inline UpliftCurve uplift_curve(std::span<const double> scores, std::span<const int> outcome,
                                std::span<const int> treatment, std::size_t n_points) {
  return uplift_curve(scores, outcome, treatment, CurveOptions{n_points});
}

// uplift_curve(...).auuc with 100 points.
double auuc(std::span<const double> scores, std::span<const int> outcome,
            std::span<const int> treatment);

struct RunAggregate {
  std::vector<double> values;
  double mean = 0.0;
  double stddev = 0.0;  // sample (n - 1) standard deviation, 0 for one run
  bool single_run = false;

  // "mean±std" in units of 0.001 with three decimals, e.g. "5.694±0.631".
  std::string formatted() const;
};

RunAggregate aggregate_runs(std::span<const double> auucs);

// "phi,g" header then one row per point, 17 significant digits.
void export_curve(const UpliftCurve& curve, const std::filesystem::path& path);
UpliftCurve import_curve(const std::filesystem::path& path);

}  // namespace milup
