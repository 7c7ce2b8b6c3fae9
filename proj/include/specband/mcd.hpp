#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "specband/common.hpp"
#include "specband/heatmap.hpp"

namespace specband {

// Inverse standard normal CDF: Acklam's rational approximation plus one
// Halley refinement (well inside the 1e-6 contract).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("normal_quantile requires 0 < p < 1");
  static constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                  -2.759285104469687e+02, 1.383577518672690e+02,
                                  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                  -1.556989798598866e+02, 6.680131188771972e+01,
                                  -1.328068155288572e+01};
  static constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                  -2.400758277161838e+00, -2.549732539343734e+00,
                                  4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                  2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

// chi^2 quantile with 1 dof via chi2_{1,p} = Phi^{-1}((1+p)/2)^2.
inline double chi2_quantile_1dof(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("chi2_quantile_1dof requires 0 < p < 1");
  const double z = normal_quantile((1.0 + p) / 2.0);
  return z * z;
}

// Robust 1-D location/scale from the least-variable h-subset.
struct McdFit {
  double mu = 0.0;
  double sigma2 = 0.0;  // consistency-corrected
  int h = 0;
  std::vector<int> support;  // original indices of the h-subset
  bool degenerate = false;
};

// Exact 1-D MCD: the minimum-variance size-h subset is contiguous in sorted
// order, so all n-h+1 windows are scanned (ties -> lowest start). For h < n,
// sigma2 gets the median-based consistency correction against chi2_{1,0.5},
// computed over all n points relative to the support fit; h = n reduces to the
// classical mean and sample variance.
inline McdFit mcd_1d(const std::vector<double>& x, int h) {
  const int n = static_cast<int>(x.size());
  if (n < 2) throw DataError("mcd_1d requires at least 2 values");
  if (h > n || h < (n + 2) / 2) {
    throw ConfigError("mcd_1d support size " + std::to_string(h) + " outside [" +
                      std::to_string((n + 2) / 2) + ", " + std::to_string(n) + "]");
  }

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) {
    if (x[static_cast<std::size_t>(i)] != x[static_cast<std::size_t>(j)])
      return x[static_cast<std::size_t>(i)] < x[static_cast<std::size_t>(j)];
    return i < j;
  });

  std::vector<double> prefix(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> prefix2(static_cast<std::size_t>(n) + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    const double v = x[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    prefix[static_cast<std::size_t>(i) + 1] = prefix[static_cast<std::size_t>(i)] + v;
    prefix2[static_cast<std::size_t>(i) + 1] = prefix2[static_cast<std::size_t>(i)] + v * v;
  }

  int best_start = 0;
  double best_var = -1.0;
  for (int j = 0; j + h <= n; ++j) {
    const double s1 = prefix[static_cast<std::size_t>(j + h)] - prefix[static_cast<std::size_t>(j)];
    const double s2 = prefix2[static_cast<std::size_t>(j + h)] - prefix2[static_cast<std::size_t>(j)];
    double var = (s2 - s1 * s1 / h) / (h - 1);
    if (var < 0.0) var = 0.0;  // rounding guard
    if (best_var < 0.0 || var < best_var) {
      best_var = var;
      best_start = j;
    }
  }

  McdFit fit;
  fit.h = h;
  fit.mu = (prefix[static_cast<std::size_t>(best_start + h)] - prefix[static_cast<std::size_t>(best_start)]) / h;
  fit.support.assign(order.begin() + best_start, order.begin() + best_start + h);
  std::sort(fit.support.begin(), fit.support.end());

  if (best_var <= 0.0) {
    fit.degenerate = true;
    fit.sigma2 = 0.0;
    return fit;
  }

  if (h == n) {
    fit.sigma2 = best_var;
    return fit;
  }

  std::vector<double> d2(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double d = x[static_cast<std::size_t>(i)] - fit.mu;
    d2[static_cast<std::size_t>(i)] = d * d;
  }
  std::sort(d2.begin(), d2.end());
  const double med = (n % 2 == 1) ? d2[static_cast<std::size_t>(n / 2)]
                                  : 0.5 * (d2[static_cast<std::size_t>(n / 2) - 1] +
                                           d2[static_cast<std::size_t>(n / 2)]);
  fit.sigma2 = med / chi2_quantile_1dof(0.5);
  if (fit.sigma2 <= 0.0) {
    fit.degenerate = true;
    fit.sigma2 = 0.0;
  }
  return fit;
}

// D = sqrt((x - mu)^2 / sigma2), the 1-D Mahalanobis distance.
inline double mahalanobis(double x, const McdFit& fit) {
  if (fit.degenerate) throw DataError("mahalanobis: degenerate fit (zero robust variance)");
  const double d = x - fit.mu;
  return std::sqrt(d * d / fit.sigma2);
}

struct BandSelection {
  std::vector<int> selected;  // strictly increasing band indices
  double lambda = 0.0;
  std::vector<double> distances;  // per band; zero-filled when degenerate
  double threshold = 0.0;
  McdFit fit;
  bool degenerate = false;
};

// Bands whose robust distance exceeds sqrt(chi2_{1,1-lambda}) on the upper
// side (score > mu) are flagged informative. A fully uniform heatmap has no
// information to offer and yields an empty selection.
inline BandSelection select_bands(const Heatmap& heatmap, double lambda) {
  if (!(lambda > 0.0 && lambda < 0.5)) {
    throw ConfigError("contamination rate must lie in (0, 0.5), got " + std::to_string(lambda));
  }
  heatmap.validate();
  const int bands = heatmap.bands();

  BandSelection sel;
  sel.lambda = lambda;
  sel.threshold = std::sqrt(chi2_quantile_1dof(1.0 - lambda));
  sel.fit = mcd_1d(heatmap.scores, (bands + 2) / 2);
  sel.distances.assign(static_cast<std::size_t>(bands), 0.0);
  if (sel.fit.degenerate) {
    sel.degenerate = true;
    if (log_level() >= 1) {
      std::fprintf(stderr, "[specband] warning: degenerate heatmap (constant robust support), empty selection\n");
    }
    return sel;
  }
  for (int i = 0; i < bands; ++i) {
    const double score = heatmap.scores[static_cast<std::size_t>(i)];
    sel.distances[static_cast<std::size_t>(i)] = mahalanobis(score, sel.fit);
    if (sel.distances[static_cast<std::size_t>(i)] > sel.threshold && score > sel.fit.mu) {
      sel.selected.push_back(i);
    }
  }
  return sel;
}

inline void write_selection_report(const std::string& path, const BandSelection& sel) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write selection report to " + path);
  out.precision(17);
  out << "# band selection report\n";
  out << "lambda = " << sel.lambda << "\n";
  out << "threshold = " << sel.threshold << "\n";
  out << "mu = " << sel.fit.mu << "\n";
  out << "sigma2 = " << sel.fit.sigma2 << "\n";
  out << "h = " << sel.fit.h << "\n";
  out << "bands = " << sel.distances.size() << "\n";
  out << "status = " << (sel.degenerate ? "degenerate" : "ok") << "\n";
  out << "selected =";
  for (int i : sel.selected) out << ' ' << i;
  out << "\n";
  out << "distances =";
  for (double d : sel.distances) out << ' ' << d;
  out << "\n";
  if (!out) throw DataError("failed writing selection report to " + path);
}

inline BandSelection read_selection_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open selection report " + path);
  BandSelection sel;
  int bands = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(path + ": malformed line '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto trim = [](std::string& s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      s = (b == std::string::npos) ? std::string() : s.substr(b, e - b + 1);
    };
    trim(key);
    trim(value);
    std::istringstream vs(value);
    if (key == "lambda") vs >> sel.lambda;
    else if (key == "threshold") vs >> sel.threshold;
    else if (key == "mu") vs >> sel.fit.mu;
    else if (key == "sigma2") vs >> sel.fit.sigma2;
    else if (key == "h") vs >> sel.fit.h;
    else if (key == "bands") vs >> bands;
    else if (key == "status") sel.degenerate = (value == "degenerate");
    else if (key == "selected") {
      int idx;
      while (vs >> idx) sel.selected.push_back(idx);
    } else if (key == "distances") {
      double d;
      while (vs >> d) sel.distances.push_back(d);
    }
  }
  if (bands > 0 && sel.distances.empty()) sel.distances.assign(static_cast<std::size_t>(bands), 0.0);
  return sel;
}

}  // namespace specband
