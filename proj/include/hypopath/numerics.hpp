#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace hypopath {

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};

inline LinearFit fit_linear(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_linear: need >= 2 points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - mx) * (y[i] - my);
    den += (x[i] - mx) * (x[i] - mx);
  }
  LinearFit f;
  f.slope = num / den;
  f.intercept = my - f.slope * mx;
  return f;
}

inline double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > 0.0 && y[i] > 0.0) {
      lx.push_back(std::log(x[i]));
      ly.push_back(std::log(y[i]));
    }
  }
  return fit_linear(lx, ly).slope;
}

struct MomentStats {
  double mean = 0.0;
  double variance = 0.0;
  double std_error = 0.0;
  std::size_t count = 0;
};

inline MomentStats moments(const std::vector<double>& values) {
  MomentStats s;
  s.count = values.size();
  if (s.count == 0) return s;
  double acc = 0.0;
  for (double v : values) acc += v;
  s.mean = acc / s.count;
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.variance = s.count > 1 ? var / (s.count - 1) : 0.0;
  s.std_error = std::sqrt(s.variance / s.count);
  return s;
}

}  // namespace hypopath
