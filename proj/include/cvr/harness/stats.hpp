#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "cvr/errors.hpp"

namespace cvr {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) throw ContractError("mean_std: no values");
  MeanStd r;
  r.n = v.size();
  r.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(r.n);
  if (r.n > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(r.n - 1));
  }
  return r;
}

// Root mean of the two variances, for comparing two equally replicated cells.
inline double pooled_std(const MeanStd& a, const MeanStd& b) { return std::sqrt(0.5 * (a.std * a.std + b.std * b.std)); }

struct LogLinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

// Least squares of y against ln(x). A perfectly flat y has R^2 = 1 (nothing
// left unexplained).
inline LogLinearFit fit_loglinear(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) throw ContractError("fit_loglinear: need at least 3 points");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].first > 0.0)) throw ContractError("fit_loglinear: day counts must be > 0");
    for (std::size_t j = 0; j < i; ++j)
      if (points[i].first == points[j].first) throw ContractError("fit_loglinear: day counts must be distinct");
  }
  const double n = static_cast<double>(points.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : points) {
    mx += std::log(x);
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, y] : points) {
    const double dx = std::log(x) - mx, dy = y - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  LogLinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0.0;
  for (const auto& [x, y] : points) {
    const double e = y - (f.intercept + f.slope * std::log(x));
    ss_res += e * e;
  }
  const bool flat = std::all_of(points.begin(), points.end(), [&](const auto& p) { return p.second == points[0].second; });
  if (flat) f.slope = 0.0, f.intercept = points[0].second;
  f.r2 = flat ? 1.0 : 1.0 - ss_res / syy;
  return f;
}

inline std::string format_fixed(double v, int digits) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string s = buf;
  if (s.find_first_not_of("-0.") == std::string::npos && s[0] == '-') s.erase(0, 1);  // no "-0.00"
  return s;
}

// Signed percent with two decimals, e.g. +0.55%, 0.00%, -14.63%.
inline std::string format_percent_delta(double pct) {
  std::string s = format_fixed(pct, 2);
  if (s != "nan" && s[0] != '-' && s != "0.00") s = "+" + s;
  return s + "%";
}

// Free text inside one CSV cell: separators become spaces.
inline std::string csv_cell(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ' ';
  return s;
}

// Every harness CSV starts with this line.
inline void write_digest_header(std::ostream& os, const std::string& config_digest) {
  os << "# config_digest=" << config_digest << '\n';
}

}  // namespace cvr
