#include "ssilab/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "ssilab/error.hpp"
#include "ssilab/text_io.hpp"

namespace ssilab {

void Trajectory::validate() const {
  if (checkpoints.empty()) {
    throw ConfigError("trajectory '" + run_id + "' has no checkpoints");
  }
  for (std::size_t i = 1; i < checkpoints.size(); ++i) {
    if (checkpoints[i] <= checkpoints[i - 1]) {
      throw ConfigError("trajectory '" + run_id + "' checkpoints are not strictly increasing");
    }
  }
  for (auto c : checkpoints) {
    if (!tables.contains(c)) {
      throw ConfigError("trajectory '" + run_id + "' has no SSI table for checkpoint " + std::to_string(c));
    }
  }
}

Progression progression(const Trajectory& trajectory, std::optional<std::int64_t> reference) {
  trajectory.validate();
  if (trajectory.checkpoints.size() < 2) {
    throw ConfigError("progression needs at least 2 checkpoints");
  }
  const std::int64_t final_ckpt = reference.value_or(trajectory.final_checkpoint());
  const auto final_it = trajectory.tables.find(final_ckpt);
  if (final_it == trajectory.tables.end()) {
    throw ConfigError("reference checkpoint " + std::to_string(final_ckpt) + " is not part of the trajectory");
  }
  const SsiTable& final_table = final_it->second;
  const auto final_acc = trajectory.accuracies.find(final_ckpt);

  Progression out;
  for (auto ckpt : trajectory.checkpoints) {
    const SsiTable& table = trajectory.tables.at(ckpt);
    const auto acc = trajectory.accuracies.find(ckpt);
    for (const auto& ref : final_table.entries) {
      const SsiEntry* cur = table.find(ref.phenomenon, ref.layer);
      if (cur == nullptr) {
        out.gaps.push_back({ckpt, ref.phenomenon, ref.layer, "cell missing at checkpoint"});
        continue;
      }
      if (!ref.ssi || !cur->ssi) {
        out.gaps.push_back({ckpt, ref.phenomenon, ref.layer, "SSI uncomputable"});
        continue;
      }
      ProgressionPoint pt;
      pt.checkpoint = ckpt;
      pt.phenomenon = ref.phenomenon;
      pt.layer = ref.layer;
      pt.ssi = *cur->ssi;
      pt.delta_ssi = std::abs(*ref.ssi - *cur->ssi);
      if (acc != trajectory.accuracies.end()) {
        if (auto it = acc->second.per_phenomenon.find(ref.phenomenon); it != acc->second.per_phenomenon.end()) {
          pt.accuracy = it->second.accuracy;
        }
      }
      if (pt.accuracy && final_acc != trajectory.accuracies.end()) {
        if (auto it = final_acc->second.per_phenomenon.find(ref.phenomenon);
            it != final_acc->second.per_phenomenon.end()) {
          pt.delta_acc = std::abs(it->second.accuracy - *pt.accuracy);
        }
      }
      out.points.push_back(std::move(pt));
    }
  }
  return out;
}

StandardizeFlags standardize(std::span<ProgressionPoint> group) {
  StandardizeFlags flags;
  std::vector<double> ssi;
  std::vector<double> acc;
  std::vector<std::size_t> acc_index;
  for (std::size_t i = 0; i < group.size(); ++i) {
    ssi.push_back(std::abs(group[i].delta_ssi));
    if (group[i].delta_acc) {
      acc.push_back(std::abs(*group[i].delta_acc));
      acc_index.push_back(i);
    }
  }
  const auto z_ssi = stats::zscore(ssi);
  flags.delta_ssi_flagged = z_ssi.flagged;
  for (std::size_t i = 0; i < group.size(); ++i) {
    group[i].z_delta_ssi = z_ssi.values[i];
  }
  if (!acc.empty()) {
    const auto z_acc = stats::zscore(acc);
    flags.delta_acc_flagged = z_acc.flagged;
    for (std::size_t k = 0; k < acc_index.size(); ++k) {
      group[acc_index[k]].z_delta_acc = z_acc.values[k];
    }
  }
  return flags;
}

std::optional<double> correlate(std::span<const double> x, std::span<const double> y) { return stats::pearson(x, y); }

std::vector<CorrelationMatrix::Pair> CorrelationMatrix::unique_pairs() const {
  std::vector<Pair> pairs;
  for (std::size_t a = 0; a < run_ids.size(); ++a) {
    for (std::size_t b = a + 1; b < run_ids.size(); ++b) {
      pairs.push_back({a, b, r[a][b]});
    }
  }
  return pairs;
}

CorrelationMatrix profile_correlation_matrix(const std::vector<std::pair<std::string, std::vector<double>>>& profiles) {
  CorrelationMatrix m;
  const std::size_t n = profiles.size();
  if (n > 0) {
    const std::size_t len = profiles.front().second.size();
    for (const auto& [id, values] : profiles) {
      if (values.size() != len) {
        throw ConfigError("profile '" + id + "' has length " + std::to_string(values.size()) + ", expected " +
                          std::to_string(len));
      }
    }
  }
  m.r.assign(n, std::vector<std::optional<double>>(n));
  for (std::size_t a = 0; a < n; ++a) {
    m.run_ids.push_back(profiles[a].first);
    for (std::size_t b = a; b < n; ++b) {
      const auto r = correlate(profiles[a].second, profiles[b].second);
      m.r[a][b] = r;
      m.r[b][a] = r;
    }
  }
  return m;
}

stats::TTestResult welch_t(std::span<const double> group_a, std::span<const double> group_b) {
  return stats::welch_t(group_a, group_b, stats::Alternative::kGreater);
}

std::vector<DivergencePoint> divergence(const Trajectory& a, const Trajectory& b, std::int64_t boundary_tokens) {
  a.validate();
  b.validate();
  std::vector<std::int64_t> shared;
  std::set_intersection(a.checkpoints.begin(), a.checkpoints.end(), b.checkpoints.begin(), b.checkpoints.end(),
                        std::back_inserter(shared));
  if (shared.empty()) {
    throw ConfigError("trajectories '" + a.run_id + "' and '" + b.run_id + "' share no checkpoints");
  }
  std::vector<DivergencePoint> out;
  for (auto ckpt : shared) {
    const SsiTable& ta = a.tables.at(ckpt);
    const SsiTable& tb = b.tables.at(ckpt);
    if (ta.entries.size() != tb.entries.size()) {
      throw ConfigError("checkpoint " + std::to_string(ckpt) + ": runs cover different (phenomenon, layer) cells");
    }
    for (const auto& ea : ta.entries) {
      const SsiEntry* eb = tb.find(ea.phenomenon, ea.layer);
      if (eb == nullptr) {
        throw ConfigError("checkpoint " + std::to_string(ckpt) + ": run '" + b.run_id + "' lacks cell (" +
                          ea.phenomenon + ", " + std::to_string(ea.layer) + ")");
      }
      if (!ea.ssi || !eb->ssi) {
        continue;
      }
      DivergencePoint pt;
      pt.checkpoint = ckpt;
      pt.phenomenon = ea.phenomenon;
      pt.layer = ea.layer;
      pt.ssi_a = *ea.ssi;
      pt.ssi_b = *eb->ssi;
      pt.raw_delta = std::abs(pt.ssi_a - pt.ssi_b);
      const double mean = (pt.ssi_a + pt.ssi_b) / 2.0;
      if (std::abs(mean) >= kDivergenceEpsilon) {
        pt.normalized_delta = pt.raw_delta / mean;
      }
      pt.phase = ckpt <= boundary_tokens ? Phase::kEarly : Phase::kLate;
      out.push_back(std::move(pt));
    }
  }
  return out;
}

PhaseSummary phase_summary(std::span<const DivergencePoint> points) {
  PhaseSummary s;
  struct Cell {
    double early_sum = 0.0;
    std::size_t early_n = 0;
    double late_sum = 0.0;
    std::size_t late_n = 0;
  };
  std::map<std::pair<std::string, std::size_t>, Cell> cells;
  double early_sum = 0.0;
  double late_sum = 0.0;
  double early_raw = 0.0;
  double late_raw = 0.0;
  std::size_t early_raw_n = 0;
  std::size_t late_raw_n = 0;
  for (const auto& p : points) {
    const bool early = p.phase == Phase::kEarly;
    (early ? early_raw : late_raw) += p.raw_delta;
    (early ? early_raw_n : late_raw_n) += 1;
    if (!p.normalized_delta) {
      continue;
    }
    auto& cell = cells[{p.phenomenon, p.layer}];
    if (early) {
      early_sum += *p.normalized_delta;
      s.n_early += 1;
      cell.early_sum += *p.normalized_delta;
      cell.early_n += 1;
    } else {
      late_sum += *p.normalized_delta;
      s.n_late += 1;
      cell.late_sum += *p.normalized_delta;
      cell.late_n += 1;
    }
  }
  if (s.n_early == 0 || s.n_late == 0) {
    throw DomainError("phase summary needs defined normalized divergences in both phases (early " +
                      std::to_string(s.n_early) + ", late " + std::to_string(s.n_late) + ")");
  }
  s.early_mean = early_sum / static_cast<double>(s.n_early);
  s.late_mean = late_sum / static_cast<double>(s.n_late);
  s.early_raw_mean = early_raw / static_cast<double>(early_raw_n);
  s.late_raw_mean = late_raw / static_cast<double>(late_raw_n);
  std::vector<double> diffs;
  for (const auto& [key, cell] : cells) {
    if (cell.early_n > 0 && cell.late_n > 0) {
      diffs.push_back(cell.late_sum / static_cast<double>(cell.late_n) -
                      cell.early_sum / static_cast<double>(cell.early_n));
    }
  }
  s.n_cells = diffs.size();
  if (diffs.size() < 2) {
    throw DomainError("phase summary needs at least 2 cells observed in both phases, got " +
                      std::to_string(diffs.size()));
  }
  s.cell_test = stats::one_sample_t(diffs, 0.0, stats::Alternative::kTwoSided);
  return s;
}

std::string phase_summary_to_json(const PhaseSummary& summary) {
  nlohmann::ordered_json j;
  j["early_mean"] = summary.early_mean;
  j["late_mean"] = summary.late_mean;
  j["early_raw_mean"] = summary.early_raw_mean;
  j["late_raw_mean"] = summary.late_raw_mean;
  j["n_early"] = summary.n_early;
  j["n_late"] = summary.n_late;
  j["n_cells"] = summary.n_cells;
  auto number = [](double v) -> nlohmann::ordered_json {
    if (std::isfinite(v)) {
      return v;
    }
    return v > 0 ? "inf" : "-inf";
  };
  j["t"] = number(summary.cell_test.t);
  j["df"] = summary.cell_test.df;
  j["p_two_sided"] = summary.cell_test.p;
  return j.dump(2) + "\n";
}

std::vector<LongRow> progression_rows(const Trajectory& trajectory, std::span<const ProgressionPoint> points) {
  std::vector<LongRow> rows;
  rows.reserve(points.size());
  for (const auto& p : points) {
    LongRow r;
    r.run_id = trajectory.run_id;
    r.seed = trajectory.seed;
    r.model_family = trajectory.model_family;
    r.checkpoint_tokens = p.checkpoint;
    r.phenomenon = p.phenomenon;
    r.layer = p.layer;
    r.ssi = p.ssi;
    r.delta_ssi = p.delta_ssi;
    r.z_delta_ssi = p.z_delta_ssi;
    r.accuracy = p.accuracy;
    r.delta_acc = p.delta_acc;
    r.z_delta_acc = p.z_delta_acc;
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<LongRow> divergence_rows(const Trajectory& a, const Trajectory& b, std::span<const DivergencePoint> points) {
  std::vector<LongRow> rows;
  rows.reserve(points.size() * 2);
  for (const auto& p : points) {
    for (const Trajectory* run : {&a, &b}) {
      LongRow r;
      r.run_id = run->run_id;
      r.seed = run->seed;
      r.model_family = run->model_family;
      r.checkpoint_tokens = p.checkpoint;
      r.phenomenon = p.phenomenon;
      r.layer = p.layer;
      r.ssi = run == &a ? p.ssi_a : p.ssi_b;
      r.raw_divergence = p.raw_delta;
      r.normalized_divergence = p.normalized_delta;
      r.phase = p.phase;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

std::string long_format_csv(std::span<const LongRow> rows) {
  std::ostringstream out;
  out << "run_id,seed,model_family,checkpoint_tokens,phenomenon,layer,ssi,delta_ssi,z_delta_ssi,accuracy,delta_acc,"
         "z_delta_acc,raw_divergence,normalized_divergence,phase\n";
  for (const auto& r : rows) {
    out << csv_field(r.run_id) << ',' << r.seed << ',' << csv_field(r.model_family) << ',' << r.checkpoint_tokens
        << ',' << csv_field(r.phenomenon) << ',' << r.layer << ',' << format_real(r.ssi) << ','
        << format_real(r.delta_ssi) << ',' << format_real(r.z_delta_ssi) << ',' << format_real(r.accuracy) << ','
        << format_real(r.delta_acc) << ',' << format_real(r.z_delta_acc) << ',' << format_real(r.raw_divergence)
        << ',' << format_real(r.normalized_divergence) << ','
        << (r.phase ? (*r.phase == Phase::kEarly ? "early" : "late") : "NA") << '\n';
  }
  return out.str();
}

}  // namespace ssilab
