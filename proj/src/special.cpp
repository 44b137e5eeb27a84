#include "sorel/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sorel/common.hpp"

namespace sorel {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
      return "config";
    case ErrorCode::kData:
      return "data";
    case ErrorCode::kNumeric:
      return "numeric";
    case ErrorCode::kUndefinedPil:
      return "pil_undefined";
  }
  return "unknown";
}

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw NumericError("digamma: argument must be positive and finite");
  }
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  // B_{2k} / (2k) for k = 1..7
  static constexpr double kCoeffs[] = {
      1.0 / 12.0,        -1.0 / 120.0,      1.0 / 252.0,        -1.0 / 240.0,
      1.0 / 132.0,       -691.0 / 32760.0,  1.0 / 12.0,
  };
  const double inv2 = 1.0 / (x * x);
  double series = 0.0;
  double power = inv2;
  for (double c : kCoeffs) {
    series += c * power;
    power *= inv2;
  }
  return result + std::log(x) - 0.5 / x - series;
}

double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double percentile(std::span<const double> values, double q) {
  if (values.empty()) throw DataError("percentile of an empty sample");
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("percentile: q outside [0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double median(std::span<const double> values) {
  if (values.empty()) throw DataError("median of an empty sample");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  if (n % 2 == 1) return sorted[n / 2];
  return 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

}  // namespace sorel
