#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ssilab/behavior.hpp"
#include "ssilab/ssi_engine.hpp"
#include "ssilab/stats.hpp"

namespace ssilab {

/// One training run observed at several checkpoints (millions of tokens).
struct Trajectory {
  std::string run_id;
  std::string model_family;
  std::int64_t seed = 0;
  /// Strictly increasing; the last entry is the reference (final) checkpoint.
  std::vector<std::int64_t> checkpoints;
  std::map<std::int64_t, SsiTable> tables;
  /// Optional; checkpoints without an entry get no accuracy fields.
  std::map<std::int64_t, AccuracyResult> accuracies;

  /// Throws ConfigError on unordered checkpoints or missing tables.
  void validate() const;
  [[nodiscard]] std::int64_t final_checkpoint() const { return checkpoints.back(); }
};

struct ProgressionPoint {
  std::int64_t checkpoint = 0;
  std::string phenomenon;
  std::size_t layer = 0;
  double ssi = 0.0;
  /// |SSI_final - SSI_checkpoint|
  double delta_ssi = 0.0;
  std::optional<double> accuracy;
  /// |Acc_final - Acc_checkpoint| for the phenomenon, repeated across layers.
  std::optional<double> delta_acc;
  double z_delta_ssi = 0.0;
  std::optional<double> z_delta_acc;
};

struct ProgressionGap {
  std::int64_t checkpoint = 0;
  std::string phenomenon;
  std::size_t layer = 0;
  std::string reason;
};

struct Progression {
  std::vector<ProgressionPoint> points;
  std::vector<ProgressionGap> gaps;
};

/// Differences of every (checkpoint, phenomenon, layer) cell from the reference
/// checkpoint, which defaults to the trajectory's last one.
Progression progression(const Trajectory& trajectory, std::optional<std::int64_t> reference = std::nullopt);

struct StandardizeFlags {
  bool delta_ssi_flagged = false;
  bool delta_acc_flagged = false;
};

/// z-scores |delta| within one group (one model family) using the sample
/// standard deviation; fills z_delta_ssi and z_delta_acc in place.
StandardizeFlags standardize(std::span<ProgressionPoint> group);

/// Pearson r; empty when either series has zero variance.
std::optional<double> correlate(std::span<const double> x, std::span<const double> y);

struct CorrelationMatrix {
  std::vector<std::string> run_ids;
  /// Symmetric; the diagonal is 1 for profiles with nonzero variance.
  std::vector<std::vector<std::optional<double>>> r;

  struct Pair {
    std::size_t a = 0;
    std::size_t b = 0;
    std::optional<double> r;
  };
  /// Off-diagonal entries with a < b; self-correlations and duplicates excluded.
  [[nodiscard]] std::vector<Pair> unique_pairs() const;
};

CorrelationMatrix profile_correlation_matrix(const std::vector<std::pair<std::string, std::vector<double>>>& profiles);

stats::TTestResult welch_t(std::span<const double> group_a, std::span<const double> group_b);

enum class Phase { kEarly, kLate };

inline constexpr double kDivergenceEpsilon = 1e-9;

struct DivergencePoint {
  std::int64_t checkpoint = 0;
  std::string phenomenon;
  std::size_t layer = 0;
  double ssi_a = 0.0;
  double ssi_b = 0.0;
  double raw_delta = 0.0;
  /// raw_delta / mean(ssi_a, ssi_b); empty when |mean| < kDivergenceEpsilon.
  std::optional<double> normalized_delta;
  Phase phase = Phase::kEarly;
};

/// Cell-wise |SSI_A - SSI_B| over shared checkpoints; checkpoints at or below
/// `boundary_tokens` are early.
std::vector<DivergencePoint> divergence(const Trajectory& a, const Trajectory& b, std::int64_t boundary_tokens = 16);

struct PhaseSummary {
  double early_mean = 0.0;
  double late_mean = 0.0;
  double early_raw_mean = 0.0;
  double late_raw_mean = 0.0;
  std::size_t n_early = 0;
  std::size_t n_late = 0;
  /// Cells with defined normalized values in both phases.
  std::size_t n_cells = 0;
  /// Two-sided one-sample t test of per-cell (late mean - early mean) against 0.
  stats::TTestResult cell_test;
};

PhaseSummary phase_summary(std::span<const DivergencePoint> points);

std::string phase_summary_to_json(const PhaseSummary& summary);

/// One row of the tidy long-format export (checkpoint x phenomenon x layer x run).
struct LongRow {
  std::string run_id;
  std::int64_t seed = 0;
  std::string model_family;
  std::int64_t checkpoint_tokens = 0;
  std::string phenomenon;
  std::size_t layer = 0;
  std::optional<double> ssi;
  std::optional<double> delta_ssi;
  std::optional<double> z_delta_ssi;
  std::optional<double> accuracy;
  std::optional<double> delta_acc;
  std::optional<double> z_delta_acc;
  std::optional<double> raw_divergence;
  std::optional<double> normalized_divergence;
  std::optional<Phase> phase;
};

std::vector<LongRow> progression_rows(const Trajectory& trajectory, std::span<const ProgressionPoint> points);
std::vector<LongRow> divergence_rows(const Trajectory& a, const Trajectory& b, std::span<const DivergencePoint> points);
std::string long_format_csv(std::span<const LongRow> rows);

}  // namespace ssilab
