#include "ssilab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ssilab/error.hpp"

namespace ssilab::stats {

namespace {

constexpr double kTiny = 1e-300;
constexpr double kCfEpsilon = 1e-16;
constexpr int kCfMaxIterations = 20000;

/// Continued fraction for I_x(a, b) (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) {
    d = kTiny;
  }
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kCfMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) {
      d = kTiny;
    }
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) {
      c = kTiny;
    }
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) {
      d = kTiny;
    }
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) {
      c = kTiny;
    }
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kCfEpsilon) {
      return h;
    }
  }
  return h;
}

bool all_equal(std::span<const double> x) {
  return std::adjacent_find(x.begin(), x.end(), std::not_equal_to<>()) == x.end();
}

TTestResult finish(double numerator, double standard_error, double df, Alternative alternative) {
  TTestResult r;
  r.df = df;
  if (standard_error == 0.0) {
    r.degenerate = true;
    if (numerator == 0.0) {
      r.t = 0.0;
    } else {
      r.t = numerator > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    }
  } else {
    r.t = numerator / standard_error;
  }
  r.p = t_p_value(r.t, df, alternative);
  return r;
}

}  // namespace

double incomplete_beta(double a, double b, double x, double y) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw DomainError("incomplete beta requires a, b > 0");
  }
  if (x <= 0.0) {
    return 0.0;
  }
  if (y <= 0.0) {
    return 1.0;
  }
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log(y);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - front * beta_continued_fraction(b, a, y) / b;
}

double incomplete_beta(double a, double b, double x) { return incomplete_beta(a, b, x, 1.0 - x); }

namespace {

/// P(T > |t|), computed without cancellation.
double upper_tail_abs(double t, double df) {
  if (std::isinf(t)) {
    return 0.0;
  }
  const double t2 = t * t;
  const double x = df / (df + t2);
  const double y = t2 / (df + t2);
  return 0.5 * incomplete_beta(df / 2.0, 0.5, x, y);
}

}  // namespace

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) {
    throw DomainError("t distribution requires df > 0");
  }
  if (std::isnan(t)) {
    return t;
  }
  const double tail = upper_tail_abs(t, df);
  return t >= 0.0 ? 1.0 - tail : tail;
}

double t_p_value(double t, double df, Alternative alternative) {
  if (!(df > 0.0)) {
    throw DomainError("t distribution requires df > 0");
  }
  const double tail = upper_tail_abs(t, df);  // P(T > |t|)
  switch (alternative) {
    case Alternative::kGreater:
      return t >= 0.0 ? tail : 1.0 - tail;
    case Alternative::kLess:
      return t <= 0.0 ? tail : 1.0 - tail;
    case Alternative::kTwoSided:
      return std::min(1.0, 2.0 * tail);
  }
  return 1.0;
}

double mean(std::span<const double> x) {
  if (x.empty()) {
    throw DomainError("mean of an empty sequence");
  }
  double s = 0.0;
  for (double v : x) {
    s += v;
  }
  return s / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
  if (x.size() < 2) {
    throw DomainError("sample variance needs at least 2 values");
  }
  if (all_equal(x)) {
    return 0.0;
  }
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) {
    ss += (v - m) * (v - m);
  }
  return ss / static_cast<double>(x.size() - 1);
}

TTestResult welch_t(std::span<const double> a, std::span<const double> b, Alternative alternative) {
  if (a.size() < 2 || b.size() < 2) {
    throw DomainError("Welch's t test needs at least 2 values per group (got " + std::to_string(a.size()) + " and " +
                      std::to_string(b.size()) + ")");
  }
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double va = sample_variance(a) / na;
  const double vb = sample_variance(b) / nb;
  const double se2 = va + vb;
  double df = na + nb - 2.0;
  if (se2 > 0.0) {
    df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  }
  return finish(mean(a) - mean(b), std::sqrt(se2), df, alternative);
}

TTestResult paired_t(std::span<const double> a, std::span<const double> b, Alternative alternative) {
  if (a.size() != b.size()) {
    throw DomainError("paired t test needs equal-length inputs");
  }
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff[i] = a[i] - b[i];
  }
  return one_sample_t(diff, 0.0, alternative);
}

TTestResult one_sample_t(std::span<const double> x, double mu, Alternative alternative) {
  if (x.size() < 2) {
    throw DomainError("t test needs at least 2 observations");
  }
  const double n = static_cast<double>(x.size());
  const double se = std::sqrt(sample_variance(x) / n);
  return finish(mean(x) - mu, se, n - 1.0, alternative);
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw DomainError("Pearson correlation needs equal-length inputs of length >= 2");
  }
  if (all_equal(x) || all_equal(y)) {
    return std::nullopt;
  }
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
}

ZScores zscore(std::span<const double> x) {
  ZScores out;
  out.values.assign(x.size(), 0.0);
  if (x.size() < 2 || all_equal(x)) {
    out.flagged = true;
    return out;
  }
  const double m = mean(x);
  const double sd = std::sqrt(sample_variance(x));
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.values[i] = (x[i] - m) / sd;
  }
  return out;
}

}  // namespace ssilab::stats
