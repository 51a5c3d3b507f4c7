#include <gtest/gtest.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <random>

#include "ssilab/dynamics.hpp"
#include "ssilab/error.hpp"
#include "ssilab/text_io.hpp"

namespace ssilab {
namespace {

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    out.push_back(text.substr(start, end - start));
    start = end == std::string::npos ? text.size() : end + 1;
  }
  return out;
}

/// Table with one entry per (phenomenon, layer); values[p][l] is the SSI,
/// NaN meaning uncomputable.
SsiTable table_of(std::int64_t ckpt, const std::vector<std::vector<double>>& values) {
  SsiTable t;
  t.model_id = "m";
  t.checkpoint_tokens = ckpt;
  t.num_layers = values.empty() ? 0 : values[0].size();
  for (std::size_t p = 0; p < values.size(); ++p) {
    t.phenomena.push_back("ph" + std::to_string(p));
    for (std::size_t l = 0; l < values[p].size(); ++l) {
      SsiEntry e;
      e.phenomenon = t.phenomena.back();
      e.layer = l;
      if (!std::isnan(values[p][l])) {
        e.ssi = values[p][l];
        e.intra = values[p][l];
        e.inter = 0.0;
      }
      t.entries.push_back(e);
    }
  }
  return t;
}

Trajectory trajectory_of(const std::string& id, const std::vector<std::int64_t>& ckpts,
                         const std::vector<std::vector<std::vector<double>>>& values) {
  Trajectory t;
  t.run_id = id;
  t.model_family = "fam";
  t.seed = 3;
  t.checkpoints = ckpts;
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    t.tables[ckpts[i]] = table_of(ckpts[i], values[i]);
  }
  return t;
}

AccuracyResult acc_of(std::map<std::string, double> per) {
  AccuracyResult a;
  for (const auto& [k, v] : per) {
    a.per_phenomenon[k].accuracy = v;
    a.per_phenomenon[k].n_pairs = 10;
  }
  return a;
}

TEST(Progression, DifferencesFromFinal) {
  auto t = trajectory_of("r", {1, 4, 16}, {{{0.1, 0.5}}, {{0.2, 0.45}}, {{0.3, 0.4}}});
  t.accuracies[1] = acc_of({{"ph0", 0.6}});
  t.accuracies[16] = acc_of({{"ph0", 0.9}});
  const auto prog = progression(t);
  ASSERT_EQ(prog.points.size(), 6U);
  EXPECT_TRUE(prog.gaps.empty());
  for (const auto& p : prog.points) {
    if (p.checkpoint == 16) {
      EXPECT_EQ(p.delta_ssi, 0.0);
    }
  }
  EXPECT_NEAR(prog.points[0].delta_ssi, 0.2, 1e-12);  // ckpt 1, layer 0
  EXPECT_NEAR(prog.points[1].delta_ssi, 0.1, 1e-12);  // |0.4 - 0.5|
  ASSERT_TRUE(prog.points[0].delta_acc.has_value());
  EXPECT_NEAR(*prog.points[0].delta_acc, 0.3, 1e-12);
  EXPECT_EQ(*prog.points[1].delta_acc, *prog.points[0].delta_acc);
  EXPECT_FALSE(prog.points[2].accuracy.has_value());  // ckpt 4 has no accuracy
}

TEST(Progression, UncomputableCellsBecomeGaps) {
  const double na = std::nan("");
  const auto t = trajectory_of("r", {1, 2}, {{{na, 0.2}}, {{0.3, 0.4}}});
  const auto prog = progression(t);
  EXPECT_EQ(prog.points.size(), 3U);
  ASSERT_EQ(prog.gaps.size(), 1U);
  EXPECT_EQ(prog.gaps[0].checkpoint, 1);
  EXPECT_EQ(prog.gaps[0].layer, 0U);
}

TEST(Progression, Validation) {
  auto t = trajectory_of("r", {4, 2}, {{{0.1}}, {{0.2}}});
  EXPECT_THROW(progression(t), ConfigError);
  t = trajectory_of("r", {2}, {{{0.1}}});
  EXPECT_THROW(progression(t), ConfigError);
  t = trajectory_of("r", {1, 2}, {{{0.1}}, {{0.2}}});
  t.tables.erase(1);
  EXPECT_THROW(progression(t), ConfigError);
  t = trajectory_of("r", {1, 2}, {{{0.1}}, {{0.2}}});
  EXPECT_THROW(progression(t, 7), ConfigError);
  EXPECT_NEAR(progression(t, 1).points[1].delta_ssi, 0.1, 1e-12);
}

TEST(Standardize, SampleSigmaWithinGroup) {
  std::vector<ProgressionPoint> pts(2);
  pts[0].delta_ssi = 1.0;
  pts[1].delta_ssi = 3.0;
  pts[0].delta_acc = 0.2;
  const auto flags = standardize(pts);
  EXPECT_NEAR(pts[0].z_delta_ssi, -std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(pts[1].z_delta_ssi, std::sqrt(0.5), 1e-12);
  EXPECT_FALSE(flags.delta_ssi_flagged);
  EXPECT_TRUE(flags.delta_acc_flagged);  // a single accuracy value
  EXPECT_EQ(*pts[0].z_delta_acc, 0.0);
  EXPECT_FALSE(pts[1].z_delta_acc.has_value());
}

TEST(Correlation, MatrixAndUniquePairs) {
  const std::vector<std::pair<std::string, std::vector<double>>> profiles = {
      {"a", {1, 2, 3, 4}}, {"b", {2, 4, 6, 8.5}}, {"c", {4, 3, 2, 1}}, {"flat", {1, 1, 1, 1}}};
  const auto m = profile_correlation_matrix(profiles);
  EXPECT_NEAR(*m.r[0][0], 1.0, 1e-15);
  EXPECT_NEAR(*m.r[0][2], -1.0, 1e-15);
  EXPECT_EQ(m.r[0][1], m.r[1][0]);
  EXPECT_FALSE(m.r[3][0].has_value());
  EXPECT_FALSE(m.r[3][3].has_value());
  const auto pairs = m.unique_pairs();
  ASSERT_EQ(pairs.size(), 6U);
  for (const auto& p : pairs) {
    EXPECT_LT(p.a, p.b);
  }
  EXPECT_THROW(profile_correlation_matrix({{"a", {1, 2}}, {"b", {1, 2, 3}}}), ConfigError);
}

TEST(Divergence, HandExampleAndSymmetry) {
  const auto a = trajectory_of("a", {8, 32}, {{{0.2}}, {{0.5}}});
  const auto b = trajectory_of("b", {8, 32}, {{{0.4}}, {{0.5}}});
  const auto ab = divergence(a, b);
  const auto ba = divergence(b, a);
  ASSERT_EQ(ab.size(), 2U);
  EXPECT_NEAR(ab[0].raw_delta, 0.2, 1e-12);
  EXPECT_NEAR(*ab[0].normalized_delta, 0.2 / 0.3, 1e-9);
  EXPECT_NEAR(*ab[0].normalized_delta, 0.6667, 1e-4);
  EXPECT_EQ(*ab[0].normalized_delta, *ba[0].normalized_delta);
  EXPECT_EQ(ab[0].phase, Phase::kEarly);
  EXPECT_EQ(ab[1].phase, Phase::kLate);
  EXPECT_EQ(*ab[1].normalized_delta, 0.0);
}

TEST(Divergence, BoundaryAndUndefinedNormalization) {
  const auto a = trajectory_of("a", {16, 17}, {{{0.1}}, {{1e-12}}});
  const auto b = trajectory_of("b", {16, 17}, {{{0.3}}, {{-1e-12}}});
  const auto d = divergence(a, b, 16);
  EXPECT_EQ(d[0].phase, Phase::kEarly);
  EXPECT_EQ(d[1].phase, Phase::kLate);
  EXPECT_FALSE(d[1].normalized_delta.has_value());
  EXPECT_NEAR(d[1].raw_delta, 2e-12, 1e-24);
  EXPECT_EQ(divergence(a, b, 0)[0].phase, Phase::kLate);
}

TEST(Divergence, Errors) {
  const auto a = trajectory_of("a", {1, 2}, {{{0.1}}, {{0.2}}});
  const auto b = trajectory_of("b", {3, 4}, {{{0.1}}, {{0.2}}});
  EXPECT_THROW(divergence(a, b), ConfigError);
  const auto c = trajectory_of("c", {1, 2}, {{{0.1, 0.2}}, {{0.2, 0.3}}});
  EXPECT_THROW(divergence(a, c), ConfigError);
}

TEST(PhaseSummary, IdenticalRunsGiveZeroT) {
  const auto a = trajectory_of("a", {1, 8, 32, 64}, {{{0.1, 0.2}}, {{0.3, 0.2}}, {{0.4, 0.5}}, {{0.5, 0.6}}});
  const auto d = divergence(a, a);
  const auto s = phase_summary(d);
  EXPECT_EQ(s.early_mean, 0.0);
  EXPECT_EQ(s.late_mean, 0.0);
  EXPECT_EQ(s.cell_test.t, 0.0);
  EXPECT_EQ(s.n_cells, 2U);
}

TEST(PhaseSummary, DecayingDivergenceHasNegativeT) {
  // Per-cell early/late means by hand; the test compares them with a one-sample t.
  const auto a = trajectory_of("a", {2, 8, 32, 64}, {{{0.2, 0.3, 0.1}}, {{0.25, 0.3, 0.2}}, {{0.5, 0.4, 0.6}}, {{0.6, 0.5, 0.6}}});
  const auto b = trajectory_of("b", {2, 8, 32, 64}, {{{0.4, 0.5, 0.3}}, {{0.35, 0.6, 0.1}}, {{0.52, 0.42, 0.61}}, {{0.6, 0.51, 0.62}}});
  const auto s = phase_summary(divergence(a, b));
  auto nd = [](double x, double y) { return std::abs(x - y) / ((x + y) / 2.0); };
  const std::vector<double> diffs = {
      (nd(0.5, 0.52) + nd(0.6, 0.6)) / 2 - (nd(0.2, 0.4) + nd(0.25, 0.35)) / 2,
      (nd(0.4, 0.42) + nd(0.5, 0.51)) / 2 - (nd(0.3, 0.5) + nd(0.3, 0.6)) / 2,
      (nd(0.6, 0.61) + nd(0.6, 0.62)) / 2 - (nd(0.1, 0.3) + nd(0.2, 0.1)) / 2,
  };
  const double m = (diffs[0] + diffs[1] + diffs[2]) / 3;
  double ss = 0;
  for (double v : diffs) {
    ss += (v - m) * (v - m);
  }
  const double t = m / std::sqrt(ss / 2.0 / 3.0);
  EXPECT_LT(s.late_mean, s.early_mean);
  EXPECT_NEAR(s.cell_test.t, t, 1e-9 * std::abs(t));
  EXPECT_LT(s.cell_test.t, 0.0);
  EXPECT_EQ(s.cell_test.df, 2.0);
  EXPECT_EQ(s.n_early, 6U);
  EXPECT_EQ(s.n_late, 6U);
  const auto j = nlohmann::json::parse(phase_summary_to_json(s));
  EXPECT_TRUE(j.contains("p_two_sided"));
}

TEST(PhaseSummary, NeedsBothPhases) {
  const auto a = trajectory_of("a", {32, 64}, {{{0.1, 0.2}}, {{0.2, 0.3}}});
  EXPECT_THROW(phase_summary(divergence(a, a)), DomainError);
}

TEST(LongFormat, ColumnsAndValues) {
  auto t = trajectory_of("run,1", {1, 2}, {{{0.1}}, {{0.3}}});
  auto prog = progression(t);
  standardize(prog.points);
  const auto csv = long_format_csv(progression_rows(t, prog.points));
  const auto lines = split_lines(csv);
  ASSERT_EQ(lines.size(), 3U);
  EXPECT_EQ(lines[0],
            "run_id,seed,model_family,checkpoint_tokens,phenomenon,layer,ssi,delta_ssi,z_delta_ssi,accuracy,delta_acc,"
            "z_delta_acc,raw_divergence,normalized_divergence,phase");
  const auto row = split_csv_line(lines[1]);
  ASSERT_EQ(row.size(), 15U);
  EXPECT_EQ(row[0], "run,1");
  EXPECT_EQ(row[3], "1");
  EXPECT_EQ(row[6], "0.1");
  EXPECT_EQ(row[7], "0.2");
  EXPECT_EQ(row[9], "NA");
  EXPECT_EQ(row[14], "NA");
  const auto drows = divergence_rows(t, t, divergence(t, t, 1));
  EXPECT_EQ(drows.size(), 4U);
  EXPECT_EQ(split_csv_line(split_lines(long_format_csv(drows))[1])[14], "early");
}

}  // namespace
}  // namespace ssilab
