#include "milup/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "milup/error.hpp"

namespace milup {
namespace {

// One arm (or the whole set, for joint ranking) sorted by score descending
// with tie blocks recorded.
struct RankedArm {
  std::vector<std::size_t> order;      // row ids
  std::vector<std::size_t> positives;  // positives[m] = positives among first m
  std::vector<std::size_t> block_start;  // block_start[p] = first position of p's tie block
  std::vector<std::size_t> block_end;    // one past the last position of p's tie block
};

RankedArm rank(std::span<const double> scores, std::span<const int> outcome,
               std::vector<std::size_t> rows) {
  RankedArm arm;
  std::stable_sort(rows.begin(), rows.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const std::size_t n = rows.size();
  arm.order = std::move(rows);
  arm.positives.assign(n + 1, 0);
  for (std::size_t m = 0; m < n; ++m) {
    arm.positives[m + 1] = arm.positives[m] + static_cast<std::size_t>(outcome[arm.order[m]]);
  }
  arm.block_start.resize(n);
  arm.block_end.resize(n);
  for (std::size_t p = 0; p < n;) {
    std::size_t q = p + 1;
    while (q < n && scores[arm.order[q]] == scores[arm.order[p]]) ++q;
    for (std::size_t r = p; r < q; ++r) {
      arm.block_start[r] = p;
      arm.block_end[r] = q;
    }
    p = q;
  }
  return arm;
}

// Expected number of positives among the first m ranked rows.
double selected_positives(const RankedArm& arm, std::size_t m, TieHandling ties) {
  if (m == 0) return 0.0;
  const std::size_t start = arm.block_start[m - 1];
  const std::size_t end = arm.block_end[m - 1];
  if (ties == TieHandling::kIndex || m == end) return static_cast<double>(arm.positives[m]);
  const double block_pos = static_cast<double>(arm.positives[end] - arm.positives[start]);
  return static_cast<double>(arm.positives[start]) +
         static_cast<double>(m - start) * block_pos / static_cast<double>(end - start);
}

std::size_t ceil_fraction(std::size_t k, std::size_t total, std::size_t n_points) {
  return (k * total + n_points - 1) / n_points;
}

}  // namespace

UpliftCurve uplift_curve(std::span<const double> scores, std::span<const int> outcome,
                         std::span<const int> treatment, const CurveOptions& options) {
  const std::size_t n = scores.size();
  if (outcome.size() != n || treatment.size() != n) {
    throw ConfigError("uplift_curve: scores, outcome and treatment lengths differ");
  }
  if (options.n_points < 2) throw ConfigError("uplift_curve: need at least 2 points");
  std::vector<std::size_t> treated_rows, control_rows;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(scores[i])) throw ConfigError("uplift_curve: non-finite score");
    (treatment[i] == 1 ? treated_rows : control_rows).push_back(i);
  }
  if (treated_rows.empty() || control_rows.empty()) {
    throw UndefinedError("uplift_curve: both treated and control rows are required");
  }

  UpliftCurve curve;
  curve.points.reserve(options.n_points);
  const double np = static_cast<double>(options.n_points);

  if (options.ranking == Ranking::kSeparate) {
    const std::size_t nt = treated_rows.size(), nc = control_rows.size();
    const RankedArm t = rank(scores, outcome, std::move(treated_rows));
    const RankedArm c = rank(scores, outcome, std::move(control_rows));
    for (std::size_t k = 1; k <= options.n_points; ++k) {
      const double phi = static_cast<double>(k) / np;
      const std::size_t mt = ceil_fraction(k, nt, options.n_points);
      const std::size_t mc = ceil_fraction(k, nc, options.n_points);
      const double rate_t = selected_positives(t, mt, options.ties) / static_cast<double>(mt);
      const double rate_c = selected_positives(c, mc, options.ties) / static_cast<double>(mc);
      curve.points.push_back({phi, phi * (rate_t - rate_c)});
    }
  } else {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const RankedArm joint = rank(scores, outcome, std::move(all));
    // Prefix counts per arm over the joint order.
    std::vector<std::size_t> tn(n + 1, 0), tp(n + 1, 0), cn(n + 1, 0), cp(n + 1, 0);
    for (std::size_t m = 0; m < n; ++m) {
      const std::size_t row = joint.order[m];
      const bool treated = treatment[row] == 1;
      tn[m + 1] = tn[m] + (treated ? 1 : 0);
      tp[m + 1] = tp[m] + (treated ? outcome[row] : 0);
      cn[m + 1] = cn[m] + (treated ? 0 : 1);
      cp[m + 1] = cp[m] + (treated ? 0 : outcome[row]);
    }
    auto partial = [&](const std::vector<std::size_t>& prefix, std::size_t m) {
      const std::size_t start = joint.block_start[m - 1], end = joint.block_end[m - 1];
      if (options.ties == TieHandling::kIndex || m == end) return static_cast<double>(prefix[m]);
      return static_cast<double>(prefix[start]) +
             static_cast<double>(m - start) * static_cast<double>(prefix[end] - prefix[start]) /
                 static_cast<double>(end - start);
    };
    for (std::size_t k = 1; k <= options.n_points; ++k) {
      const double phi = static_cast<double>(k) / np;
      const std::size_t m = ceil_fraction(k, n, options.n_points);
      const double nt_sel = partial(tn, m), nc_sel = partial(cn, m);
      const double rate_t = nt_sel > 0.0 ? partial(tp, m) / nt_sel : 0.0;
      const double rate_c = nc_sel > 0.0 ? partial(cp, m) / nc_sel : 0.0;
      curve.points.push_back({phi, phi * (rate_t - rate_c)});
    }
  }

  double total = 0.0;
  for (const auto& p : curve.points) total += p.g;
  curve.auuc = total / np;
  return curve;
}

double auuc(std::span<const double> scores, std::span<const int> outcome,
            std::span<const int> treatment) {
  return uplift_curve(scores, outcome, treatment, CurveOptions{}).auuc;
}

std::string RunAggregate::formatted() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f±%.3f", mean * 1e3, stddev * 1e3);
  return buf;
}

RunAggregate aggregate_runs(std::span<const double> auucs) {
  if (auucs.empty()) throw ConfigError("aggregate_runs: no runs");
  RunAggregate agg;
  agg.values.assign(auucs.begin(), auucs.end());
  const double n = static_cast<double>(auucs.size());
  agg.mean = std::accumulate(auucs.begin(), auucs.end(), 0.0) / n;
  agg.single_run = auucs.size() == 1;
  if (!agg.single_run) {
    double ss = 0.0;
    for (double v : auucs) ss += (v - agg.mean) * (v - agg.mean);
    agg.stddev = std::sqrt(ss / (n - 1.0));
  }
  return agg;
}

void export_curve(const UpliftCurve& curve, const std::filesystem::path& path) {
  if (curve.points.size() < 2) throw ConfigError("export_curve: curve needs at least 2 points");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write curve file '" + path.string() + "'");
  out << "phi,g\n" << std::setprecision(17);
  for (const auto& p : curve.points) out << p.phi << ',' << p.g << '\n';
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

UpliftCurve import_curve(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open curve file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != "phi,g") {
    throw ParseError("curve file '" + path.string() + "' lacks the 'phi,g' header", 0);
  }
  UpliftCurve curve;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    std::istringstream fields(line);
    CurvePoint p;
    char comma = 0;
    if (!(fields >> p.phi >> comma >> p.g) || comma != ',') {
      throw ParseError("curve file: malformed row " + std::to_string(row), row);
    }
    curve.points.push_back(p);
  }
  double total = 0.0;
  for (const auto& p : curve.points) total += p.g;
  curve.auuc = curve.points.empty() ? 0.0 : total / static_cast<double>(curve.points.size());
  return curve;
}

}  // namespace milup
