#include <gtest/gtest.h>

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <nlohmann/json.hpp>
#include <random>
#include <set>

#include "ssilab/behavior.hpp"
#include "ssilab/error.hpp"

namespace ssilab {
namespace {

LogProbRecord rec(const std::string& id, const std::string& ph, double g, std::int64_t gn, double u, std::int64_t un) {
  return LogProbRecord{id, ph, g, gn, u, un};
}

TEST(MeanLogProb, Examples) {
  EXPECT_DOUBLE_EQ(mean_logprob(-10.0, 5), -2.0);
  EXPECT_DOUBLE_EQ(mean_logprob(0.0, 3), 0.0);
  EXPECT_THROW(mean_logprob(-1.0, 0), DomainError);
}

TEST(Perplexity, Examples) {
  EXPECT_NEAR(perplexity(-10.0, 5), std::exp(2.0), 1e-12);
  EXPECT_NEAR(perplexity(-10.0, 5), 7.38905609893065, 1e-9);
  EXPECT_DOUBLE_EQ(perplexity(0.0, 4), 1.0);
}

TEST(Accuracy, LengthNormalizedComparisonAndTies) {
  const std::vector<LogProbRecord> r = {
      rec("a", "x", -10.0, 5, -9.0, 3),  // -2 vs -3: correct
      rec("b", "x", -6.0, 2, -4.0, 2),   // -3 vs -2: wrong
      rec("c", "x", -4.0, 2, -6.0, 3),   // tie at -2: wrong
      rec("d", "y", -1.0, 1, -5.0, 1),   // correct
  };
  const auto acc = accuracy(r);
  EXPECT_DOUBLE_EQ(acc.overall, 0.5);
  EXPECT_EQ(acc.n_pairs, 4U);
  EXPECT_EQ(acc.n_ties, 1U);
  EXPECT_DOUBLE_EQ(acc.per_phenomenon.at("x").accuracy, 1.0 / 3.0);
  EXPECT_EQ(acc.per_phenomenon.at("x").n_ties, 1U);
  EXPECT_DOUBLE_EQ(acc.per_phenomenon.at("y").accuracy, 1.0);
}

std::vector<LogProbRecord> random_records(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<int> tokens(1, 20);
  std::uniform_int_distribution<int> coarse(-40, 0);
  std::vector<LogProbRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    // Integer sums over small counts make exact ties common.
    out.push_back(rec("s" + std::to_string(i), "ph" + std::to_string(i % 3), coarse(gen), tokens(gen) % 4 + 1,
                      coarse(gen), tokens(gen) % 4 + 1));
  }
  return out;
}

TEST(Accuracy, MatchesDirectCount) {
  const auto r = random_records(1, 300);
  std::size_t correct = 0;
  for (const auto& x : r) {
    correct += (x.g_logprob_sum / double(x.g_token_count) > x.u_logprob_sum / double(x.u_token_count)) ? 1 : 0;
  }
  EXPECT_DOUBLE_EQ(accuracy(r).overall, double(correct) / 300.0);
}

TEST(Accuracy, SwappingLabelsComplementsUpToTies) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto r = random_records(seed, 200);
    const auto before = accuracy(r);
    for (auto& x : r) {
      std::swap(x.g_logprob_sum, x.u_logprob_sum);
      std::swap(x.g_token_count, x.u_token_count);
    }
    const auto after = accuracy(r);
    EXPECT_NEAR(after.overall, 1.0 - before.overall - double(before.n_ties) / 200.0, 1e-12);
    EXPECT_EQ(after.n_ties, before.n_ties);
  }
}

TEST(Accuracy, OrderInvariant) {
  auto r = random_records(2, 150);
  const auto a = accuracy_to_json(accuracy(r));
  std::mt19937_64 gen(3);
  std::shuffle(r.begin(), r.end(), gen);
  EXPECT_EQ(accuracy_to_json(accuracy(r)), a);
}

TEST(Accuracy, OutputsAndErrors) {
  const std::vector<LogProbRecord> r = {rec("a", "x", -1.0, 1, -2.0, 1), rec("b", "y", -3.0, 1, -2.0, 1)};
  const auto j = nlohmann::json::parse(accuracy_to_json(accuracy(r)));
  EXPECT_EQ(j.at("overall"), 0.5);
  EXPECT_EQ(j.at("per_phenomenon").at("x").at("accuracy"), 1.0);
  EXPECT_EQ(accuracy_to_csv(accuracy(r)), "phenomenon,accuracy,n_pairs,n_ties\nx,1,1,0\ny,0,1,0\n__overall__,0.5,2,0\n");
  EXPECT_THROW(accuracy(std::vector<LogProbRecord>{}), DomainError);
  EXPECT_THROW(accuracy(std::vector<LogProbRecord>{rec("a", "x", -1.0, 0, -2.0, 1)}), DomainError);
}

NeuronSelection selection_of(std::vector<NeuronId> ids) {
  NeuronSelection s;
  s.num_layers = 3;
  s.hidden_dim = 16;
  s.selected = std::move(ids);
  return s;
}

TEST(Masks, DisjointEqualSizeAndDeterministic) {
  const auto sel = selection_of({{0, 3}, {1, 7}, {2, 15}, {2, 0}, {0, 4}});
  const auto m = make_masks(sel, 3, 16, 42);
  ASSERT_EQ(m.targeted.size(), 5U);
  ASSERT_EQ(m.random.size(), 5U);
  const std::set<NeuronId> t(m.targeted.begin(), m.targeted.end());
  const std::set<NeuronId> r(m.random.begin(), m.random.end());
  EXPECT_EQ(r.size(), 5U);
  for (const auto& n : r) {
    EXPECT_FALSE(t.contains(n));
    EXPECT_LT(n.layer, 3U);
    EXPECT_LT(n.dim, 16U);
  }
  EXPECT_EQ(masks_to_json(make_masks(sel, 3, 16, 42)), masks_to_json(m));
  EXPECT_NE(masks_to_json(make_masks(sel, 3, 16, 43)), masks_to_json(m));
}

TEST(Masks, RandomMaskCoversComplementUniformly) {
  // Each complement neuron should appear with probability k / (N - k).
  const auto sel = selection_of({{0, 0}, {0, 1}, {0, 2}, {0, 3}});
  std::map<NeuronId, int> hits;
  const int trials = 4000;
  for (int s = 0; s < trials; ++s) {
    for (const auto& n : make_masks(sel, 3, 16, std::uint64_t(s)).random) {
      hits[n] += 1;
    }
  }
  EXPECT_EQ(hits.size(), 44U);
  const double expected = trials * 4.0 / 44.0;
  for (const auto& [n, count] : hits) {
    EXPECT_NEAR(count, expected, 5.0 * std::sqrt(expected));
  }
}

TEST(Masks, Errors) {
  EXPECT_THROW(make_masks(selection_of({}), 3, 16, 1), ConfigError);
  EXPECT_THROW(make_masks(selection_of({{3, 0}}), 3, 16, 1), ConfigError);
  std::vector<NeuronId> most;
  for (std::uint32_t d = 0; d < 9; ++d) {
    most.push_back({0, d});
  }
  EXPECT_THROW(make_masks(selection_of(most), 1, 16, 1), ConfigError);
}

TEST(Masks, JsonRoundTrip) {
  const auto m = make_masks(selection_of({{1, 2}, {2, 3}}), 3, 16, 9);
  const auto text = masks_to_json(m);
  const auto j = nlohmann::json::parse(text);
  EXPECT_EQ(j.at("seed"), 9);
  EXPECT_EQ(j.at("targeted"), nlohmann::json::parse("[[1,2],[2,3]]"));
  const auto back = masks_from_json(text);
  EXPECT_EQ(back.rng_seed, 9U);
  EXPECT_EQ(back.targeted, m.targeted);
  EXPECT_EQ(back.random, m.random);
  EXPECT_THROW(masks_from_json("{\"seed\": 1}"), ParseError);
}

std::vector<LogProbRecord> shifted(const std::vector<LogProbRecord>& base, const std::vector<double>& ppl_increase) {
  // Rewrites the grammatical log-prob sums so that perplexity rises by the given amounts.
  std::vector<LogProbRecord> out = base;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double ppl = std::exp(-out[i].g_logprob_sum / double(out[i].g_token_count)) + ppl_increase[i];
    out[i].g_logprob_sum = -std::log(ppl) * double(out[i].g_token_count);
  }
  return out;
}

TEST(Ablation, IdenticalRunsGiveZeroT) {
  const auto base = random_records(4, 12);
  const auto r = ablation_report(base, base, base);
  EXPECT_EQ(r.paired_t, 0.0);
  EXPECT_EQ(r.df, 11);
  EXPECT_EQ(r.mean_ppl_delta_targeted, 0.0);
}

TEST(Ablation, PairedTMatchesHandComputation) {
  const auto base = random_records(5, 8);
  const std::vector<double> dt = {2.0, 2.3, 1.7, 2.1, 1.9, 2.4, 1.8, 1.8};
  const std::vector<double> dr = {0.5, 0.4, 0.6, 0.7, 0.3, 0.5, 0.6, 0.4};
  const auto r = ablation_report(base, shifted(base, dt), shifted(base, dr));
  double md = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    md += dt[i] - dr[i];
  }
  md /= 8.0;
  double ss = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    ss += (dt[i] - dr[i] - md) * (dt[i] - dr[i] - md);
  }
  const double t = md / std::sqrt(ss / 7.0 / 8.0);
  EXPECT_NEAR(r.paired_t, t, 1e-9 * t);
  EXPECT_EQ(r.df, 7);
  EXPECT_NEAR(r.mean_ppl_delta_targeted, 2.0, 1e-9);
  EXPECT_NEAR(r.mean_ppl_delta_random, 0.5, 1e-9);
  const boost::math::students_t_distribution<double> dist(7.0);
  EXPECT_NEAR(r.p_value, boost::math::cdf(boost::math::complement(dist, t)), 1e-9);
  EXPECT_LT(r.p_value, 0.05);
}

TEST(Ablation, UngrammaticalSideUsesOtherSentence) {
  const auto base = random_records(6, 5);
  const auto r = ablation_report(base, shifted(base, {1, 1, 1, 1, 1}), base, SentenceSide::kUngrammatical);
  EXPECT_EQ(r.mean_ppl_delta_targeted, 0.0);
}

TEST(Ablation, AlignmentErrorsNameIds) {
  const auto base = random_records(7, 4);
  auto other = base;
  other.pop_back();
  other.push_back(rec("zz", "x", -1, 1, -1, 1));
  try {
    ablation_report(base, other, base);
    FAIL() << "expected AlignmentError";
  } catch (const AlignmentError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("s3"), std::string::npos);
    EXPECT_NE(msg.find("zz"), std::string::npos);
  }
  auto dup = base;
  dup[1].pair_id = dup[0].pair_id;
  EXPECT_THROW(ablation_report(base, base, dup), AlignmentError);
}

TEST(Ablation, Outputs) {
  const auto base = random_records(8, 6);
  const auto r = ablation_report(base, shifted(base, {1, 2, 1, 2, 1, 3}), base);
  const auto j = nlohmann::json::parse(ablation_report_to_json(r));
  EXPECT_EQ(j.at("side"), "grammatical");
  EXPECT_EQ(j.at("df"), 5);
  EXPECT_EQ(j.at("n_sentences"), 6);
  const auto csv = ablation_report_to_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "side,mean_ppl_delta_targeted,mean_ppl_delta_random,paired_t,df,p_value,n_sentences");
}

}  // namespace
}  // namespace ssilab
