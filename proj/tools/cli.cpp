#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>

#include "ssilab/activation_store.hpp"
#include "ssilab/behavior.hpp"
#include "ssilab/error.hpp"
#include "ssilab/neuron_spec.hpp"
#include "ssilab/parallel.hpp"
#include "ssilab/ssi_engine.hpp"
#include "ssilab/synth.hpp"
#include "ssilab/text_io.hpp"

namespace ssilab::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

fs::path require_file(const fs::path& path, const char* what) {
  if (!fs::exists(path)) {
    throw NotFoundError(std::string(what) + " not found: " + path.string());
  }
  return path;
}

bool is_csv(const fs::path& path) { return path.extension() == ".csv"; }

DeltaPolicy policy_from(const std::string& name) {
  if (name == "normalize") {
    return DeltaPolicy::kNormalizeThenSubtract;
  }
  if (name == "raw") {
    return DeltaPolicy::kSubtractRaw;
  }
  throw ConfigError("unknown --policy '" + name + "' (expected normalize or raw)");
}

SimilarityMethod method_from(const std::string& name) {
  if (name == "centroid") {
    return SimilarityMethod::kCentroid;
  }
  if (name == "pairwise") {
    return SimilarityMethod::kPairwise;
  }
  throw ConfigError("unknown --method '" + name + "' (expected centroid or pairwise)");
}

void report_exclusions(const DeltaSet& deltas, std::ostream& err) {
  for (const auto& e : deltas.excluded) {
    err << "warning: excluded sample '" << e.pair_id << "' (" << e.phenomenon << "): " << e.reason << '\n';
  }
  if (!deltas.flagged_rows.empty()) {
    err << "warning: " << deltas.flagged_rows.size() << " zero-norm embedding rows contributed a zero difference\n";
  }
}

DeltaSet load_deltas(const fs::path& path, DeltaPolicy policy, unsigned threads) {
  require_file(path, "dump");
  Dump dump = read_dump(path);
  return compute_deltas(dump, policy, threads);
}

std::string one_line(std::string text) {
  std::replace(text.begin(), text.end(), '\n', ' ');
  return text;
}

/// Options shared by every subcommand that computes SSI.
struct SsiFlags {
  std::optional<std::uint64_t> pair_cap;
  std::uint64_t seed = 0;
  std::vector<std::size_t> layers;
  std::string method = "centroid";
  std::string policy = "normalize";

  void attach(CLI::App* cmd, bool with_layers) {
    cmd->add_option("--pair-cap", pair_cap, "Sample at most this many pairs per Intra/Inter term");
    cmd->add_option("--seed", seed, "Seed for pair sampling");
    if (with_layers) {
      cmd->add_option("--layers", layers, "Comma-separated layer indices (default: all)")->delimiter(',');
    }
    cmd->add_option("--method", method, "Exact similarity route: centroid or pairwise")->capture_default_str();
    cmd->add_option("--policy", policy, "Difference policy: normalize or raw")->capture_default_str();
  }

  [[nodiscard]] SsiOptions options(unsigned threads) const {
    SsiOptions o;
    o.sampling.cap = pair_cap;
    o.sampling.seed = seed;
    o.method = method_from(method);
    o.threads = threads;
    o.layers = layers;
    return o;
  }
};

int cmd_ssi(const fs::path& dump, const fs::path& out_path, const SsiFlags& flags, unsigned threads,
            std::ostream& out, std::ostream& err) {
  const auto options = flags.options(threads);
  const auto deltas = load_deltas(dump, policy_from(flags.policy), threads);
  report_exclusions(deltas, err);
  const auto table = compute_ssi(deltas, options);
  write_file_atomic(out_path, ssi_table_to_csv(table));
  out << "wrote " << table.entries.size() << " rows to " << out_path.string() << '\n';
  return 0;
}

int cmd_neurons(const fs::path& dump, const fs::path& out_path, const SelectionThresholds& thresholds,
                const std::string& policy, bool scores, unsigned threads, std::ostream& out, std::ostream& err) {
  const auto deltas = load_deltas(dump, policy_from(policy), threads);
  report_exclusions(deltas, err);
  const auto selections = select_all(deltas, thresholds, threads);
  write_file_atomic(out_path, selections_to_json(selections, scores));
  for (const auto& s : selections) {
    out << s.phenomenon << ": " << s.selected.size() << " neurons\n";
  }
  return 0;
}

int cmd_masks(const fs::path& neurons, const fs::path& out_path, std::uint64_t seed,
              const std::optional<std::string>& phenomenon, std::ostream& out) {
  const auto selections = selections_from_json(read_text_file(require_file(neurons, "neuron selection")));
  if (selections.empty()) {
    throw ConfigError(neurons.string() + ": no phenomena in selection file");
  }
  NeuronSelection chosen;
  if (phenomenon) {
    auto it = std::find_if(selections.begin(), selections.end(),
                           [&](const NeuronSelection& s) { return s.phenomenon == *phenomenon; });
    if (it == selections.end()) {
      throw ConfigError(neurons.string() + ": phenomenon '" + *phenomenon + "' not present");
    }
    chosen = *it;
  } else {
    chosen = union_selection(selections, "union");
  }
  const auto masks = make_masks(chosen, chosen.num_layers, chosen.hidden_dim, seed);
  write_file_atomic(out_path, masks_to_json(masks));
  out << "targeted " << masks.targeted.size() << ", random " << masks.random.size() << '\n';
  return 0;
}

int cmd_accuracy(const fs::path& logprobs, const fs::path& out_path, std::ostream& out) {
  const auto records = read_logprobs(require_file(logprobs, "log-prob sidecar"));
  const auto result = accuracy(records);
  write_file_atomic(out_path, is_csv(out_path) ? accuracy_to_csv(result) : accuracy_to_json(result));
  out << "accuracy " << format_real(result.overall) << " over " << result.n_pairs << " pairs\n";
  return 0;
}

int cmd_ablation(const fs::path& baseline, const fs::path& targeted, const fs::path& random,
                 const fs::path& out_path, const std::string& side_name, std::ostream& out) {
  SentenceSide side = SentenceSide::kGrammatical;
  if (side_name == "ungrammatical") {
    side = SentenceSide::kUngrammatical;
  } else if (side_name != "grammatical") {
    throw ConfigError("unknown --side '" + side_name + "' (expected grammatical or ungrammatical)");
  }
  const auto b = read_logprobs(require_file(baseline, "baseline sidecar"));
  const auto t = read_logprobs(require_file(targeted, "targeted sidecar"));
  const auto r = read_logprobs(require_file(random, "random sidecar"));
  const auto report = ablation_report(b, t, r, side);
  write_file_atomic(out_path, is_csv(out_path) ? ablation_report_to_csv(report) : ablation_report_to_json(report));
  out << "paired t " << format_real(report.paired_t) << ", p " << format_real(report.p_value) << '\n';
  return 0;
}

int cmd_dynamics(const fs::path& manifest_path, const fs::path& out_path, std::optional<std::int64_t> final_ckpt,
                 const SsiFlags& flags, unsigned threads, std::ostream& out, std::ostream& err) {
  const auto manifest = read_manifest(manifest_path);
  const auto trajectory = load_trajectory(manifest, TrajectoryOptions{flags.options(threads), policy_from(flags.policy)});
  auto prog = progression(trajectory, final_ckpt);
  for (const auto& g : prog.gaps) {
    err << "warning: checkpoint " << g.checkpoint << ' ' << g.phenomenon << " layer " << g.layer << ": " << g.reason
        << '\n';
  }
  const auto flagged = standardize(prog.points);
  if (flagged.delta_ssi_flagged) {
    err << "warning: delta_ssi has zero variance; z-scores set to 0\n";
  }
  if (flagged.delta_acc_flagged) {
    err << "warning: delta_acc has zero variance; z-scores set to 0\n";
  }
  const auto rows = progression_rows(trajectory, prog.points);
  write_file_atomic(out_path, long_format_csv(rows));
  out << "wrote " << rows.size() << " rows to " << out_path.string() << '\n';
  return 0;
}

int cmd_diverge(const fs::path& manifest_a, const fs::path& manifest_b, const fs::path& out_path,
                std::int64_t boundary, const std::optional<fs::path>& summary_path, const SsiFlags& flags,
                unsigned threads, std::ostream& out) {
  const TrajectoryOptions options{flags.options(threads), policy_from(flags.policy)};
  const auto a = load_trajectory(read_manifest(manifest_a), options);
  const auto b = load_trajectory(read_manifest(manifest_b), options);
  const auto points = divergence(a, b, boundary);
  const auto rows = divergence_rows(a, b, points);
  std::optional<std::string> summary;
  if (summary_path) {
    summary = phase_summary_to_json(phase_summary(points));
  }
  write_file_atomic(out_path, long_format_csv(rows));
  if (summary) {
    write_file_atomic(*summary_path, *summary);
  }
  out << "wrote " << rows.size() << " rows to " << out_path.string() << '\n';
  return 0;
}

int cmd_compare(const std::vector<fs::path>& profiles, const std::vector<std::string>& family_args,
                const fs::path& out_path, std::ostream& out) {
  if (profiles.size() < 2) {
    throw ConfigError("compare needs at least 2 SSI tables");
  }
  std::map<std::string, std::string> family_of;
  for (const auto& arg : family_args) {
    const auto eq = arg.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size()) {
      throw ConfigError("--family expects RUN=FAMILY, got '" + arg + "'");
    }
    family_of[arg.substr(0, eq)] = arg.substr(eq + 1);
  }
  std::vector<std::pair<std::string, std::vector<double>>> series;
  std::vector<std::string> families;
  std::set<std::string> seen;
  for (const auto& path : profiles) {
    const auto table = ssi_table_from_csv(read_text_file(require_file(path, "SSI table")));
    const std::string run_id = path.stem().string();
    if (!seen.insert(run_id).second) {
      throw ConfigError(path.string() + ": run id '" + run_id + "' appears twice");
    }
    const auto profile = layer_profile(table);
    std::vector<double> values;
    for (std::size_t l = 0; l < profile.values.size(); ++l) {
      if (!profile.values[l]) {
        throw DataError(path.string() + ": layer " + std::to_string(l) + " has no defined SSI");
      }
      values.push_back(*profile.values[l]);
    }
    auto fam = family_of.find(run_id);
    families.push_back(fam != family_of.end() ? fam->second : table.model_id);
    series.emplace_back(run_id, std::move(values));
  }
  for (const auto& [run, _] : family_of) {
    if (!seen.contains(run)) {
      throw ConfigError("--family names run '" + run + "' which is not among the inputs");
    }
  }
  for (const auto& s : series) {
    if (s.second.size() != series.front().second.size()) {
      throw ConfigError("profile of '" + s.first + "' has " + std::to_string(s.second.size()) + " layers, '" +
                        series.front().first + "' has " + std::to_string(series.front().second.size()));
    }
  }
  const auto matrix = profile_correlation_matrix(series);

  ordered_json j;
  auto runs = ordered_json::array();
  for (std::size_t i = 0; i < series.size(); ++i) {
    runs.push_back({{"run_id", series[i].first}, {"family", families[i]}, {"profile", series[i].second}});
  }
  j["runs"] = std::move(runs);
  auto rows = ordered_json::array();
  for (const auto& row : matrix.r) {
    auto r = ordered_json::array();
    for (const auto& v : row) {
      r.push_back(v ? ordered_json(*v) : ordered_json(nullptr));
    }
    rows.push_back(std::move(r));
  }
  j["matrix"] = std::move(rows);
  std::vector<double> intra;
  std::vector<double> inter;
  auto pairs = ordered_json::array();
  for (const auto& p : matrix.unique_pairs()) {
    const bool same = families[p.a] == families[p.b];
    pairs.push_back({{"a", series[p.a].first},
                     {"b", series[p.b].first},
                     {"r", p.r ? ordered_json(*p.r) : ordered_json(nullptr)},
                     {"group", same ? "intra" : "inter"}});
    if (p.r) {
      (same ? intra : inter).push_back(*p.r);
    }
  }
  j["pairs"] = std::move(pairs);
  auto group = [](const std::vector<double>& v) {
    ordered_json g;
    g["n"] = v.size();
    g["mean"] = v.empty() ? ordered_json(nullptr) : ordered_json(stats::mean(v));
    return g;
  };
  j["groups"] = {{"intra", group(intra)}, {"inter", group(inter)}};
  if (intra.size() >= 2 && inter.size() >= 2) {
    const auto w = welch_t(intra, inter);
    ordered_json t;
    t["alternative"] = "intra > inter";
    if (std::isfinite(w.t)) {
      t["t"] = w.t;
    } else {
      t["t"] = w.t > 0 ? "inf" : "-inf";
    }
    t["df"] = w.df;
    t["p"] = w.p;
    j["welch"] = std::move(t);
  } else {
    j["welch"] = nullptr;
  }
  write_file_atomic(out_path, j.dump(2) + "\n");
  out << "compared " << series.size() << " runs (" << intra.size() << " intra, " << inter.size() << " inter pairs)\n";
  return 0;
}

int cmd_synth(const fs::path& config_path, const fs::path& out_path, const std::optional<fs::path>& truth_path,
              unsigned threads, std::ostream& out) {
  const auto config = synth_config_from_json(read_text_file(require_file(config_path, "synthetic config")));
  if (config.checkpoint_schedule.empty()) {
    const auto dump = generate(config, threads);
    write_dump(dump.header, dump.samples, out_path);
    out << "wrote " << dump.samples.size() << " pairs to " << out_path.string() << '\n';
  } else {
    fs::create_directories(out_path);
    RunManifest manifest;
    manifest.run_id = config.model_id;
    manifest.model_family = config.model_id;
    manifest.seed = static_cast<std::int64_t>(config.rng_seed);
    for (const auto& step : config.checkpoint_schedule) {
      const auto dump = generate_step(config, step, threads);
      const std::string name = "ckpt_" + std::to_string(step.token_count) + ".actd";
      write_dump(dump.header, dump.samples, out_path / name);
      ManifestCheckpoint c;
      c.tokens = step.token_count;
      c.dump = name;
      manifest.checkpoints.push_back(c);
    }
    write_file_atomic(out_path / "manifest.json", manifest_to_json(manifest));
    out << "wrote " << manifest.checkpoints.size() << " checkpoints to " << out_path.string() << '\n';
  }
  if (truth_path) {
    write_file_atomic(*truth_path, ground_truth_to_json(config, ground_truth(config, threads)));
  }
  return 0;
}

int cmd_validate(const fs::path& dump, const std::optional<fs::path>& report_path, std::ostream& out) {
  require_file(dump, "dump");
  const auto report = validate_dump(dump);
  const std::string text = report.to_text();
  if (report_path) {
    write_file_atomic(*report_path, text);
  }
  out << text;
  return report.passed() ? 0 : kExitFailure;
}

}  // namespace

RunManifest read_manifest(const fs::path& path) {
  const std::string text = read_text_file(require_file(path, "manifest"));
  const fs::path base = path.parent_path();
  RunManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.run_id = j.at("run_id").get<std::string>();
    m.model_family = j.at("model_family").get<std::string>();
    m.seed = j.value("seed", std::int64_t{0});
    for (const auto& c : j.at("checkpoints")) {
      ManifestCheckpoint cp;
      cp.tokens = c.at("tokens").get<std::int64_t>();
      auto resolve = [&](const char* key) -> std::optional<fs::path> {
        if (!c.contains(key) || c.at(key).is_null()) {
          return std::nullopt;
        }
        fs::path p = c.at(key).get<std::string>();
        return p.is_absolute() ? p : base / p;
      };
      cp.dump = resolve("dump");
      cp.ssi_csv = resolve("ssi");
      cp.logprobs = resolve("logprobs");
      if (cp.dump.has_value() == cp.ssi_csv.has_value()) {
        throw ConfigError(path.string() + ": checkpoint " + std::to_string(cp.tokens) +
                          " needs exactly one of 'dump' or 'ssi'");
      }
      m.checkpoints.push_back(std::move(cp));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  for (const auto& c : m.checkpoints) {
    for (const auto& p : {c.dump, c.ssi_csv, c.logprobs}) {
      if (p) {
        require_file(*p, ("manifest '" + path.string() + "' entry").c_str());
      }
    }
  }
  return m;
}

std::string manifest_to_json(const RunManifest& manifest) {
  ordered_json j;
  j["run_id"] = manifest.run_id;
  j["model_family"] = manifest.model_family;
  j["seed"] = manifest.seed;
  auto list = ordered_json::array();
  for (const auto& c : manifest.checkpoints) {
    ordered_json e;
    e["tokens"] = c.tokens;
    if (c.dump) {
      e["dump"] = c.dump->generic_string();
    }
    if (c.ssi_csv) {
      e["ssi"] = c.ssi_csv->generic_string();
    }
    if (c.logprobs) {
      e["logprobs"] = c.logprobs->generic_string();
    }
    list.push_back(std::move(e));
  }
  j["checkpoints"] = std::move(list);
  return j.dump(2) + "\n";
}

Trajectory load_trajectory(const RunManifest& manifest, const TrajectoryOptions& options) {
  Trajectory t;
  t.run_id = manifest.run_id;
  t.model_family = manifest.model_family;
  t.seed = manifest.seed;
  for (const auto& c : manifest.checkpoints) {
    SsiTable table;
    if (c.dump) {
      const auto deltas = load_deltas(*c.dump, options.policy, options.ssi.threads);
      if (deltas.checkpoint_tokens != c.tokens) {
        throw ConfigError(c.dump->string() + ": checkpoint_tokens is " + std::to_string(deltas.checkpoint_tokens) +
                          " but the manifest lists " + std::to_string(c.tokens));
      }
      table = compute_ssi(deltas, options.ssi);
    } else {
      table = ssi_table_from_csv(read_text_file(*c.ssi_csv));
      if (table.checkpoint_tokens != c.tokens) {
        throw ConfigError(c.ssi_csv->string() + ": checkpoint_tokens is " + std::to_string(table.checkpoint_tokens) +
                          " but the manifest lists " + std::to_string(c.tokens));
      }
    }
    t.checkpoints.push_back(c.tokens);
    t.tables.emplace(c.tokens, std::move(table));
    if (c.logprobs) {
      t.accuracies.emplace(c.tokens, accuracy(read_logprobs(*c.logprobs)));
    }
  }
  t.validate();
  return t;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Syntactic sensitivity analysis of transformer activation dumps", "ssilab"};
  app.require_subcommand(1);
  app.fallthrough();
  unsigned threads_flag = 0;
  app.add_option("--threads", threads_flag, "Worker threads (0: SSILAB_THREADS or all cores)");

  fs::path out_path;
  SsiFlags ssi_flags;

  auto* ssi = app.add_subcommand("ssi", "Compute the SSI table of a dump");
  fs::path dump_path;
  ssi->add_option("dump", dump_path, "ACTD dump")->required();
  ssi->add_option("-o,--out", out_path, "Output CSV")->required();
  ssi_flags.attach(ssi, true);

  auto* neurons = app.add_subcommand("neurons", "Select phenomenon-specific neurons");
  SelectionThresholds thresholds;
  std::string neuron_policy = "normalize";
  bool with_scores = false;
  neurons->add_option("dump", dump_path, "ACTD dump")->required();
  neurons->add_option("-o,--out", out_path, "Output JSON")->required();
  neurons->add_option("--quantile", thresholds.quantile, "Top fraction by consistency")->capture_default_str();
  neurons->add_option("--z", thresholds.z, "Distinctiveness z threshold")->capture_default_str();
  neurons->add_option("--policy", neuron_policy, "Difference policy: normalize or raw")->capture_default_str();
  neurons->add_flag("--scores", with_scores, "Include per-neuron scores");

  auto* masks = app.add_subcommand("masks", "Build targeted and random ablation masks");
  fs::path neurons_path;
  std::uint64_t mask_seed = 0;
  std::optional<std::string> mask_phenomenon;
  masks->add_option("neurons", neurons_path, "Neuron selection JSON")->required();
  masks->add_option("-o,--out", out_path, "Output JSON")->required();
  masks->add_option("--seed", mask_seed, "Seed for the random mask");
  masks->add_option("--phenomenon", mask_phenomenon, "Use one phenomenon (default: union of all)");

  auto* acc = app.add_subcommand("accuracy", "Minimal-pair accuracy from a log-prob sidecar");
  fs::path logprobs_path;
  acc->add_option("logprobs", logprobs_path, "Log-prob JSONL")->required();
  acc->add_option("-o,--out", out_path, "Output JSON or .csv")->required();

  auto* abl = app.add_subcommand("ablation-report", "Compare targeted and random ablation perplexity");
  fs::path base_path;
  fs::path targeted_path;
  fs::path random_path;
  std::string side = "grammatical";
  abl->add_option("baseline", base_path, "Unablated log-prob JSONL")->required();
  abl->add_option("targeted", targeted_path, "Log-probs after targeted ablation")->required();
  abl->add_option("random", random_path, "Log-probs after random ablation")->required();
  abl->add_option("-o,--out", out_path, "Output JSON or .csv")->required();
  abl->add_option("--side", side, "grammatical or ungrammatical")->capture_default_str();

  auto* dyn = app.add_subcommand("dynamics", "SSI and accuracy progression over checkpoints");
  fs::path manifest_path;
  std::optional<std::int64_t> final_ckpt;
  dyn->add_option("manifest", manifest_path, "Run manifest JSON")->required();
  dyn->add_option("-o,--out", out_path, "Output long-format CSV")->required();
  dyn->add_option("--final-ckpt", final_ckpt, "Reference checkpoint in tokens (default: last)");
  ssi_flags.attach(dyn, false);

  auto* div = app.add_subcommand("diverge", "Cell-wise SSI divergence between two runs");
  fs::path manifest_b;
  std::int64_t boundary = 16;
  std::optional<fs::path> summary_path;
  div->add_option("manifest_a", manifest_path, "First run manifest")->required();
  div->add_option("manifest_b", manifest_b, "Second run manifest")->required();
  div->add_option("-o,--out", out_path, "Output long-format CSV")->required();
  div->add_option("--boundary", boundary, "Last early-phase checkpoint in tokens")->capture_default_str();
  div->add_option("--summary", summary_path, "Also write the early/late phase summary JSON");
  ssi_flags.attach(div, false);

  auto* cmp = app.add_subcommand("compare", "Correlate layer profiles across runs");
  std::vector<fs::path> profile_paths;
  std::vector<std::string> family_args;
  cmp->add_option("profiles", profile_paths, "SSI table CSVs; the file stem is the run id")->required();
  cmp->add_option("-o,--out", out_path, "Output JSON")->required();
  cmp->add_option("--family", family_args, "RUN=FAMILY (default family: the table's model_id)");

  auto* syn = app.add_subcommand("synth", "Generate a synthetic dump with known structure");
  fs::path config_path;
  std::optional<fs::path> truth_path;
  syn->add_option("config", config_path, "Synthetic config JSON")->required();
  syn->add_option("-o,--out", out_path, "Output dump (a directory when the config has a schedule)")->required();
  syn->add_option("--ground-truth", truth_path, "Write the ground-truth JSON here");

  auto* val = app.add_subcommand("validate", "Check a dump for structural and numeric defects");
  std::optional<fs::path> report_path;
  val->add_option("dump", dump_path, "ACTD dump")->required();
  val->add_option("-o,--out", report_path, "Also write the report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const unsigned threads = resolve_threads(threads_flag);
  const CLI::App* cmd = app.get_subcommands().front();
  try {
    if (cmd == ssi) {
      return cmd_ssi(dump_path, out_path, ssi_flags, threads, out, err);
    }
    if (cmd == neurons) {
      return cmd_neurons(dump_path, out_path, thresholds, neuron_policy, with_scores, threads, out, err);
    }
    if (cmd == masks) {
      return cmd_masks(neurons_path, out_path, mask_seed, mask_phenomenon, out);
    }
    if (cmd == acc) {
      return cmd_accuracy(logprobs_path, out_path, out);
    }
    if (cmd == abl) {
      return cmd_ablation(base_path, targeted_path, random_path, out_path, side, out);
    }
    if (cmd == dyn) {
      return cmd_dynamics(manifest_path, out_path, final_ckpt, ssi_flags, threads, out, err);
    }
    if (cmd == div) {
      return cmd_diverge(manifest_path, manifest_b, out_path, boundary, summary_path, ssi_flags, threads, out);
    }
    if (cmd == cmp) {
      return cmd_compare(profile_paths, family_args, out_path, out);
    }
    if (cmd == syn) {
      return cmd_synth(config_path, out_path, truth_path, threads, out);
    }
    return cmd_validate(dump_path, report_path, out);
  } catch (const NotFoundError& e) {
    err << "ssilab " << cmd->get_name() << ": " << one_line(e.what()) << '\n';
    return kExitNotFound;
  } catch (const std::exception& e) {
    err << "ssilab " << cmd->get_name() << ": " << one_line(e.what()) << '\n';
    return kExitFailure;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("ssilab");
  for (const auto& a : args) {
    argv.push_back(a.c_str());
  }
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace ssilab::cli
