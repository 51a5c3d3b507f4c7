#pragma once

#include <optional>
#include <span>
#include <vector>

namespace ssilab::stats {

enum class Alternative { kGreater, kLess, kTwoSided };

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
  /// Set when a variance was exactly zero and t had to be defined by convention.
  bool degenerate = false;
};

/// Regularized incomplete beta I_x(a, b), evaluated by continued fraction.
/// `y` must equal 1 - x; passing it separately preserves precision near x = 1.
double incomplete_beta(double a, double b, double x, double y);
double incomplete_beta(double a, double b, double x);

/// Student t CDF for real-valued (including fractional) degrees of freedom.
double student_t_cdf(double t, double df);

/// P-value of statistic t under a t distribution with df degrees of freedom.
double t_p_value(double t, double df, Alternative alternative);

double mean(std::span<const double> x);

/// Sample variance (divisor n - 1); exactly 0 when all values are equal.
double sample_variance(std::span<const double> x);

/// Welch's unequal-variance t test with the Welch-Satterthwaite df.
/// Requires at least 2 values per group (DomainError otherwise).
TTestResult welch_t(std::span<const double> a, std::span<const double> b, Alternative alternative = Alternative::kGreater);

/// Paired t test on the differences a[i] - b[i]; df = n - 1.
TTestResult paired_t(std::span<const double> a, std::span<const double> b, Alternative alternative = Alternative::kGreater);

/// One-sample t test of mean(x) against mu; df = n - 1.
TTestResult one_sample_t(std::span<const double> x, double mu = 0.0, Alternative alternative = Alternative::kTwoSided);

/// Pearson correlation; empty when either input has zero variance. Requires
/// equal lengths >= 2 (DomainError otherwise).
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

struct ZScores {
  std::vector<double> values;
  /// Fewer than 2 values or zero variance: every z is 0.
  bool flagged = false;
};

/// (x - mean) / sample standard deviation.
ZScores zscore(std::span<const double> x);

}  // namespace ssilab::stats
