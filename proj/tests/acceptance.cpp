// End-to-end acceptance gates for the dialogue SRL stack. Each gate checks
// one observable guarantee -- mask construction, relation typing, graph
// convolution against brute-force loops, gradients against finite
// differences, loss identities, synthetic training behavior, the scorer
// against a set-based oracle, and BIO round-trips -- and prints exactly one
// [PASS]/[FAIL] line. The process exits nonzero if any gate fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "convsrl/harness.hpp"
#include "convsrl/synthetic.hpp"
#include "testutil.hpp"

using namespace convsrl;

namespace {

// Pinned gate tolerances and budgets.
constexpr double kMaskBudgetSecs = 10.0;
constexpr double kAlphaRowSumTol = 1e-6;
constexpr double kRgcnOracleTol = 1e-9;
constexpr double kGradTol = 1e-4;
constexpr double kGradBudgetSecs = 120.0;
constexpr double kLossIdentityTol = 1e-9;
constexpr double kOverfitF1 = 0.99;
constexpr int kOverfitEpochCap = 200;
constexpr double kOverfitBudgetSecs = 300.0;

using Clock = std::chrono::steady_clock;

double secs_since(const Clock::time_point& t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int g_failures = 0;

void report(int index, bool ok, const std::string& detail) {
  std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << index << ": "
            << detail << std::endl;
  if (!ok) ++g_failures;
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

Conversation random_conv(std::mt19937_64& rng, int max_utts, int max_len,
                         int num_speakers) {
  Conversation conv;
  conv.id = "acc" + std::to_string(rng() % 1000000);
  conv.num_speakers = num_speakers;
  const int K = 1 + int(rng() % max_utts);
  for (int k = 0; k < K; ++k) {
    Utterance u;
    u.index = k;
    u.speaker = int(rng() % num_speakers);
    const int len = 1 + int(rng() % max_len);
    for (int t = 0; t < len; ++t)
      u.tokens.push_back("w" + std::to_string(rng() % 30));
    conv.utterances.push_back(std::move(u));
  }
  return conv;
}

// ---------------------------------------------------------------------
// 1. Predicate mask vs exhaustive per-pair evaluation of the rule
//    "same utterance, or the key lies in the predicate's utterance".

void criterion1() {
  std::mt19937_64 rng(41);
  const auto t0 = Clock::now();
  int64_t mismatches = 0;
  int64_t pairs = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Conversation conv = random_conv(rng, 8, 8, 2);  // K <= 8, n <= 64
    const int pred = int(rng() % conv.num_utterances());
    const AttentionMask mask = build_predicate_mask(conv, pred);
    const std::vector<int> utt = conv.token_utterances();
    const int n = conv.total_tokens();
    if (mask.n != n) {
      ++mismatches;
      continue;
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j, ++pairs) {
        const bool want = utt[i] == utt[j] || utt[j] == pred;
        if (mask.at(i, j) != want) ++mismatches;
      }
  }
  const double secs = secs_since(t0);
  const bool ok = mismatches == 0 && secs < kMaskBudgetSecs;
  report(1, ok,
         "predicate mask matches the exhaustive rule on 1000 conversations (" +
             std::to_string(pairs) + " pairs, " + std::to_string(mismatches) +
             " mismatches, " + fmt(secs) + "s)");
}

// ---------------------------------------------------------------------
// 2. Four utterances with the predicate in the last one: earlier
//    utterances may attend to themselves and to the predicate's
//    utterance only; the predicate's utterance attends only to itself.

void criterion2() {
  Conversation conv;
  conv.id = "fourth";
  conv.num_speakers = 2;
  const int lengths[4] = {2, 3, 2, 3};
  for (int k = 0; k < 4; ++k) {
    Utterance u;
    u.index = k;
    u.speaker = k % 2;
    for (int t = 0; t < lengths[k]; ++t)
      u.tokens.push_back("u" + std::to_string(k) + "t" + std::to_string(t));
    conv.utterances.push_back(std::move(u));
  }
  const AttentionMask mask = build_predicate_mask(conv, 3);
  const std::vector<int> utt = conv.token_utterances();
  const int n = conv.total_tokens();
  bool ok = mask.n == n;
  for (int i = 0; ok && i < n; ++i)
    for (int j = 0; ok && j < n; ++j) {
      const bool want =
          utt[i] < 3 ? (utt[j] == utt[i] || utt[j] == 3) : (utt[j] == 3);
      if (mask.at(i, j) != want) ok = false;
    }
  report(2, ok,
         "with the predicate in the 4th of 4 utterances, rows permit own "
         "utterance plus the predicate's; its own rows see only themselves");
}

// ---------------------------------------------------------------------
// 3. Relation ids stay within 2*M*M distinct values, and with M=2,
//    a predicate present, and both speakers active, exactly 8 ids are
//    reachable across graphs.

void criterion3() {
  std::mt19937_64 rng(43);
  bool ok = true;
  std::set<int> two_speaker_ids;
  for (int trial = 0; trial < 1000; ++trial) {
    const int M = 1 + int(rng() % 3);
    const Conversation conv = random_conv(rng, 6, 3, M);
    const int pred = int(rng() % conv.num_utterances());
    const int window = 1 + int(rng() % 5);
    const GraphStructure graph = build_graph(conv, pred, window, M);
    if (graph.num_relations() != 2 * M * M) ok = false;
    std::set<int> ids;
    for (const GraphEdge& e : graph.edges) {
      const int id = graph.relation_id(e);
      if (id < 0 || id >= 2 * M * M) ok = false;
      ids.insert(id);
    }
    if (int(ids.size()) > 2 * M * M) ok = false;
    if (M == 2) two_speaker_ids.insert(ids.begin(), ids.end());
  }
  // Deterministic sweep: 5 alternating-speaker utterances, every predicate
  // position. Both speakers are active and the predicate flag takes both
  // values, so the union must be the full two-speaker relation space.
  Conversation alt;
  alt.id = "alt";
  alt.num_speakers = 2;
  for (int k = 0; k < 5; ++k) {
    Utterance u;
    u.index = k;
    u.speaker = k % 2;
    u.tokens = {"t" + std::to_string(k)};
    alt.utterances.push_back(std::move(u));
  }
  for (int pred = 0; pred < 5; ++pred) {
    const GraphStructure graph = build_graph(alt, pred, 4, 2);
    for (const GraphEdge& e : graph.edges)
      two_speaker_ids.insert(graph.relation_id(e));
  }
  ok = ok && two_speaker_ids.size() == 8 &&
       *two_speaker_ids.begin() >= 0 && *two_speaker_ids.rbegin() < 8;
  report(3, ok,
         "relation ids stay within 2M^2 over 1000 graphs; two-speaker "
         "graphs with a predicate reach exactly " +
             std::to_string(two_speaker_ids.size()) + " ids");
}

// ---------------------------------------------------------------------
// 4. Edge-weight rows: incoming weights sum to 1 per vertex.

void criterion4() {
  std::mt19937_64 rng(44);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int M = 1 + int(rng() % 3);
    const Conversation conv = random_conv(rng, 6, 3, M);
    const int K = conv.num_utterances();
    const int pred = int(rng() % K);
    const int window = 1 + int(rng() % 4);
    const GraphStructure graph = build_graph(conv, pred, window, M);
    const int d = 3 + int(rng() % 4);
    const Tensor g = Tensor::constant(
        {K, d}, testutil::random_values(rng, int64_t(K) * d, -2.0, 2.0));
    const Tensor w_e = Tensor::constant(
        {d, d}, testutil::random_values(rng, int64_t(d) * d, -2.0, 2.0));
    const Tensor alpha = edge_weights(g, graph, w_e);
    for (int i = 0; i < K; ++i) {
      double s = 0.0;
      for (int j = 0; j < K; ++j) s += alpha.at(i, j);
      worst = std::max(worst, std::fabs(s - 1.0));
    }
  }
  report(4, worst <= kAlphaRowSumTol,
         "incoming edge weights sum to 1 per vertex on 1000 random "
         "parameterizations (worst |sum-1| = " +
             fmt(worst) + ")");
}

// ---------------------------------------------------------------------
// 5. Graph convolution vs brute-force triple loops.

using Matrix = std::vector<std::vector<double>>;

Matrix tensor_rows(const Tensor& t) {
  Matrix out(t.dim(0), std::vector<double>(t.dim(1)));
  for (int i = 0; i < t.dim(0); ++i)
    for (int j = 0; j < t.dim(1); ++j) out[i][j] = t.at(i, j);
  return out;
}

std::vector<double> vec_mat(const std::vector<double>& v, const Tensor& w) {
  std::vector<double> out(w.dim(1), 0.0);
  for (int c = 0; c < w.dim(0); ++c)
    for (int o = 0; o < w.dim(1); ++o) out[o] += v[c] * w.at(c, o);
  return out;
}

Matrix oracle_alpha(const Matrix& g, const GraphStructure& graph,
                    const Tensor& w_e) {
  const int K = graph.num_vertices;
  Matrix alpha(K, std::vector<double>(K, 0.0));
  for (int i = 0; i < K; ++i) {
    std::vector<int> nbrs;
    for (int idx : graph.in_edges[i]) nbrs.push_back(graph.edges[idx].from);
    std::vector<double> scores;
    for (int j : nbrs) {
      double s = 0.0;
      for (size_t a = 0; a < g[i].size(); ++a)
        for (size_t b = 0; b < g[j].size(); ++b)
          s += g[i][a] * w_e.at(int(a), int(b)) * g[j][b];
      scores.push_back(s);
    }
    const double mx = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (double& s : scores) z += (s = std::exp(s - mx));
    for (size_t t = 0; t < nbrs.size(); ++t) alpha[i][nbrs[t]] = scores[t] / z;
  }
  return alpha;
}

Matrix oracle_layer1(const Matrix& g, const GraphStructure& graph,
                     const Matrix& alpha, const GraphParams& params) {
  const int K = graph.num_vertices;
  const int d = static_cast<int>(g[0].size());
  const int R = graph.num_relations();
  Matrix out(K, std::vector<double>(d, 0.0));
  for (int i = 0; i < K; ++i) {
    std::vector<double> acc(d, 0.0);
    for (int r = 0; r < R; ++r) {
      std::vector<int> members;
      for (int idx : graph.in_edges[i]) {
        const GraphEdge& e = graph.edges[idx];
        if (e.from != e.to && graph.relation_id(e) == r)
          members.push_back(e.from);
      }
      if (members.empty()) continue;
      const double c = params.log_c.empty()
                           ? double(members.size())
                           : std::exp(params.log_c[r].at(0));
      for (int j : members) {
        const std::vector<double> msg = vec_mat(g[j], params.w1_rel[r]);
        for (int o = 0; o < d; ++o) acc[o] += alpha[i][j] / c * msg[o];
      }
    }
    const std::vector<double> self_msg = vec_mat(g[i], params.w1_self);
    for (int o = 0; o < d; ++o)
      out[i][o] = std::max(0.0, acc[o] + alpha[i][i] * self_msg[o]);
  }
  return out;
}

Matrix oracle_layer2(const Matrix& h1, const GraphStructure& graph,
                     const GraphParams& params) {
  const int K = graph.num_vertices;
  const int d = static_cast<int>(h1[0].size());
  Matrix out(K, std::vector<double>(d, 0.0));
  for (int i = 0; i < K; ++i) {
    std::vector<double> acc = vec_mat(h1[i], params.w2_self);
    for (int idx : graph.in_edges[i]) {
      const GraphEdge& e = graph.edges[idx];
      if (e.from == e.to) continue;
      const std::vector<double> msg = vec_mat(h1[e.from], params.w2);
      for (int o = 0; o < d; ++o) acc[o] += msg[o];
    }
    for (int o = 0; o < d; ++o) out[i][o] = std::max(0.0, acc[o]);
  }
  return out;
}

void criterion5() {
  std::mt19937_64 rng(45);
  double worst = 0.0;
  for (int trial = 0; trial < 60; ++trial) {
    const int M = 1 + int(rng() % 3);
    const Conversation conv = random_conv(rng, 6, 3, M);  // K <= 6
    const int K = conv.num_utterances();
    const int pred = int(rng() % K);
    const int window = 1 + int(rng() % 4);
    const GraphStructure graph = build_graph(conv, pred, window, M);
    const int d = 3 + int(rng() % 3);
    const bool learnable = trial % 2 == 1;
    GraphParams params =
        GraphParams::init(d, graph.num_relations(), learnable, rng);
    const Tensor g = Tensor::param(
        {K, d}, testutil::random_values(rng, int64_t(K) * d), "g");
    const Matrix gm = tensor_rows(g);

    const Tensor alpha_t = edge_weights(g, graph, params.w_e);
    const Tensor h1_t = rgcn_layer1(g, graph, alpha_t, params);
    const Tensor h2_t = rgcn_layer2(h1_t, graph, params);
    const GraphOutput full = run_graph(g, graph, params);

    const Matrix alpha_o = oracle_alpha(gm, graph, params.w_e);
    const Matrix h1_o = oracle_layer1(gm, graph, alpha_o, params);
    const Matrix h2_o = oracle_layer2(h1_o, graph, params);

    for (int i = 0; i < K; ++i)
      for (int o = 0; o < d; ++o) {
        worst = std::max(worst, std::fabs(h1_t.at(i, o) - h1_o[i][o]));
        worst = std::max(worst, std::fabs(h2_t.at(i, o) - h2_o[i][o]));
        worst = std::max(worst,
                         std::fabs(full.h.at(i, o) - (gm[i][o] + h2_o[i][o])));
      }
  }
  report(5, worst <= kRgcnOracleTol,
         "both convolution layers match brute-force triple loops on 60 "
         "graphs, both normalizations (worst delta = " +
             fmt(worst) + ")");
}

// ---------------------------------------------------------------------
// 6. Finite-difference gradient checks: every differentiable op pattern,
//    then the composed encode -> graph -> weighted-loss pipeline.

struct GradScope {
  bool ok = true;
  double worst = 0.0;
  std::string first_failure;
  int checks = 0;
};

void run_grad(GradScope& scope, const std::string& label,
              const std::vector<Tensor>& params,
              const std::function<Tensor()>& f, const GradCheckOptions& opts) {
  const GradCheckReport rep = grad_check(f, params, opts);
  scope.worst = std::max(scope.worst, rep.max_rel_err);
  ++scope.checks;
  if (!rep.ok) {
    scope.ok = false;
    if (scope.first_failure.empty()) scope.first_failure = label;
  }
}

void per_op_checks(uint64_t seed, GradScope& scope) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  GradCheckOptions opts;
  opts.tol = kGradTol;
  auto P = [&rng](const Shape& s, const char* n) {
    return testutil::random_param(rng, s, n);
  };
  auto Poz = [&rng](const Shape& s, const char* n) {
    return testutil::random_param(rng, s, n, /*off_zero=*/true);
  };
  auto C = [&rng](const Shape& s) {
    return Tensor::constant(s, testutil::random_values(rng, numel_of(s)));
  };

  {
    const Tensor a = P({3, 4}, "a"), b = P({3, 4}, "b"), c = C({3, 4});
    run_grad(scope, "add", {a, b},
             [=] { return sum(mul_elementwise(add(a, b), c)); }, opts);
  }
  {
    const Tensor a = P({3, 4}, "a"), b = P({3, 4}, "b"), c = C({3, 4});
    run_grad(scope, "sub", {a, b},
             [=] { return sum(mul_elementwise(sub(a, b), c)); }, opts);
  }
  {
    const Tensor a = P({3, 4}, "a"), b = P({3, 4}, "b"), c = C({3, 4});
    run_grad(scope, "mul_elementwise", {a, b},
             [=] { return sum(mul_elementwise(mul_elementwise(a, b), c)); },
             opts);
  }
  {
    const Tensor a = Poz({3, 4}, "a"), c = C({3, 4});
    run_grad(scope, "abs_elementwise", {a},
             [=] { return sum(mul_elementwise(abs_elementwise(a), c)); }, opts);
  }
  {
    const Tensor a = Poz({3, 4}, "a"), c = C({3, 4});
    run_grad(scope, "relu", {a},
             [=] { return sum(mul_elementwise(relu(a), c)); }, opts);
  }
  {
    const Tensor a = P({3, 4}, "a"), c = C({3, 4});
    run_grad(scope, "exp_elementwise", {a},
             [=] { return sum(mul_elementwise(exp_elementwise(a), c)); }, opts);
  }
  {
    const Tensor a = P({3, 4}, "a"), c = C({3, 4});
    run_grad(scope, "scalar_scale", {a},
             [=] { return sum(mul_elementwise(scalar_scale(a, 1.7), c)); },
             opts);
  }
  {
    const Tensor a = P({3, 4}, "a"), s = P({1}, "s"), c = C({3, 4});
    run_grad(scope, "scalar_bcast_mul", {a, s},
             [=] { return sum(mul_elementwise(scalar_bcast_mul(a, s), c)); },
             opts);
  }
  {
    const Tensor x = P({3, 4}, "x"), bias = P({4}, "bias"), c = C({3, 4});
    run_grad(scope, "add_bias", {x, bias},
             [=] { return sum(mul_elementwise(add_bias(x, bias), c)); }, opts);
  }
  {
    const Tensor a = P({3, 4}, "a"), b = P({4, 2}, "b"), c = C({3, 2});
    run_grad(scope, "matmul", {a, b},
             [=] { return sum(mul_elementwise(matmul(a, b), c)); }, opts);
  }
  {
    const Tensor a = P({3, 4}, "a"), b = P({2, 4}, "b"), c = C({3, 2});
    run_grad(scope, "matmul_nt", {a, b},
             [=] { return sum(mul_elementwise(matmul_nt(a, b), c)); }, opts);
  }
  {
    const Tensor p = P({2, 3}, "p"), q = P({1, 3}, "q"), c = C({3, 3});
    run_grad(scope, "concat axis 0", {p, q},
             [=] {
               return sum(mul_elementwise(concat({p, q}, 0), c));
             },
             opts);
  }
  {
    const Tensor p = P({3, 2}, "p"), q = P({3, 2}, "q"), c = C({3, 4});
    run_grad(scope, "concat axis 1", {p, q},
             [=] {
               return sum(mul_elementwise(concat({p, q}, 1), c));
             },
             opts);
  }
  {
    const Tensor x = P({3, 4}, "x"), c = C({3, 4});
    run_grad(scope, "softmax", {x},
             [=] { return sum(mul_elementwise(softmax(x), c)); }, opts);
  }
  {
    const Tensor x = P({3, 4}, "x");
    run_grad(scope, "sum", {x}, [=] { return sum(x); }, opts);
  }
  {
    // Well-separated values so a finite-difference step never flips an
    // argmax inside the pooling windows.
    std::vector<double> grid(18);
    for (size_t i = 0; i < grid.size(); ++i)
      grid[i] = (double(i) - 9.0) * 0.07;
    std::shuffle(grid.begin(), grid.end(), rng);
    const Tensor x = Tensor::param({6, 3}, grid, "x");
    const Tensor c = C({3, 3});
    const std::vector<int> ids = {0, 0, 1, 1, 2, 2};
    run_grad(scope, "max_pool_segments", {x},
             [=] {
               return sum(mul_elementwise(max_pool_segments(x, ids, 3), c));
             },
             opts);
  }
  {
    const Tensor table = P({5, 3}, "table"), c = C({5, 3});
    const std::vector<int> ids = {0, 2, 2, 4, 1};
    run_grad(scope, "gather_rows", {table},
             [=] { return sum(mul_elementwise(gather_rows(table, ids), c)); },
             opts);
  }
  {
    const Tensor x = P({3, 4}, "x"), gain = P({4}, "gain"),
                 bias = P({4}, "bias"), c = C({3, 4});
    run_grad(scope, "layer_norm", {x, gain, bias},
             [=] {
               return sum(mul_elementwise(layer_norm(x, gain, bias), c));
             },
             opts);
  }
  {
    const Tensor logits = P({5}, "logits");
    run_grad(scope, "cross_entropy", {logits},
             [=] { return cross_entropy(logits, 2); }, opts);
  }
  {
    const Tensor logits = P({4, 5}, "logits");
    const std::vector<int> targets = {1, 0, 3, 2};
    const std::vector<double> weights = {1.0, 0.5, 0.0, 2.0};
    run_grad(scope, "cross_entropy_rows", {logits},
             [=] { return cross_entropy_rows(logits, targets, &weights); },
             opts);
  }
}

void composed_check(uint64_t seed, GradScope& scope) {
  std::mt19937_64 rng(seed * 104729 + 7);
  const LabelInventory inv = testutil::test_inventory();
  testutil::RandomInstanceOptions opt;
  opt.max_utterances = 4;
  opt.max_tokens_per_utt = 4;
  const Instance inst = testutil::random_instance(rng, inv, opt);
  Dataset ds;
  ds.inventory = inv;
  ds.instances.push_back(inst);

  ModelConfig mc;
  mc.encoder.d_enc = 8;
  mc.encoder.n_blocks = 1;
  mc.encoder.n_heads = 2;
  mc.encoder.d_ff = 16;
  mc.encoder.d_graph = 6;
  mc.window = 3;
  mc.num_speakers = 2;
  mc.learnable_norm = (seed % 2 == 1);
  const Model model = Model::init(mc, Vocabulary::from_dataset(ds), inv, seed);

  GradCheckOptions opts;
  opts.tol = kGradTol;
  opts.max_elements_per_param = 3;
  opts.subsample_seed = seed;
  run_grad(scope, "composed pipeline seed " + std::to_string(seed),
           model.parameters(),
           [&] { return model.forward(inst, LossWeights{}).loss; }, opts);
}

void criterion6() {
  const auto t0 = Clock::now();
  GradScope scope;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    per_op_checks(seed, scope);
    composed_check(seed, scope);
  }
  const double secs = secs_since(t0);
  const bool ok = scope.ok && secs < kGradBudgetSecs;
  std::string detail = "gradients match central differences on " +
                       std::to_string(scope.checks) +
                       " checks over 20 seeds (worst rel err = " +
                       fmt(scope.worst) + ", " + fmt(secs) + "s)";
  if (!scope.ok) detail += "; first failure: " + scope.first_failure;
  report(6, ok, detail);
}

// ---------------------------------------------------------------------
// 7. Loss identities: srl-only weighting is bit-exact, a zeroed intra
//    mask silences that loss exactly, and zeroed classifier weights give
//    the uniform baselines n*ln(labels) and K*ln(3).

void criterion7() {
  std::mt19937_64 rng(47);
  bool ok = true;
  std::string why;

  // (a) weights (1,0,0): total equals the labeling loss bitwise.
  {
    const Tensor l_srl = Tensor::scalar(1.2345678901234567);
    const Tensor l_intra = Tensor::scalar(0.7071067811865476);
    const Tensor l_ut = Tensor::scalar(0.5772156649015329);
    if (total_loss(l_srl, l_intra, l_ut, LossWeights{1.0, 0.0, 0.0}).item() !=
        l_srl.item()) {
      ok = false;
      why = "weighted total != srl loss";
    }

    const LabelInventory inv = testutil::test_inventory();
    const Instance inst = testutil::random_instance(rng, inv);
    Dataset ds;
    ds.inventory = inv;
    ds.instances.push_back(inst);
    ModelConfig mc;
    mc.encoder.d_enc = 8;
    mc.encoder.n_blocks = 1;
    mc.encoder.n_heads = 2;
    mc.encoder.d_ff = 16;
    mc.encoder.d_graph = 6;
    const Model model =
        Model::init(mc, Vocabulary::from_dataset(ds), inv, 11);
    const Model::Forward f =
        model.forward(inst, LossWeights{1.0, 0.0, 0.0});
    if (f.loss.item() != f.l_srl.item()) {
      ok = false;
      why = "model total != model srl loss under (1,0,0)";
    }
  }

  // Shared 3-utterance conversation for the remaining identities.
  Conversation conv;
  conv.id = "ident";
  conv.num_speakers = 2;
  for (int k = 0; k < 3; ++k) {
    Utterance u;
    u.index = k;
    u.speaker = k % 2;
    u.tokens = {"a" + std::to_string(k), "b" + std::to_string(k),
                "c" + std::to_string(k)};
    conv.utterances.push_back(std::move(u));
  }
  Frame frame;
  frame.predicate_utt = 1;
  frame.predicate_start = 0;
  frame.predicate_end = 1;
  frame.arguments = {{0, 0, 2, "ARG0"}, {2, 1, 3, "ARG1"}};
  const LabelInventory inv = testutil::test_inventory();
  validate_instance(conv, frame, inv, "identity fixture");
  const TagSequence tags = derive_tags(conv, frame, inv);
  const int n = conv.total_tokens();
  const int K = conv.num_utterances();
  const int d_enc = 6, d_graph = 5;
  const int L = inv.size();

  // (b) every argument lives off the predicate's utterance, so the intra
  // mask is all zero and the intra loss is exactly zero.
  {
    const std::vector<double> mask = intra_argument_mask(conv, frame);
    bool all_zero = true;
    for (double v : mask) all_zero = all_zero && v == 0.0;
    HeadParams heads = HeadParams::init(d_enc, d_graph, L, rng);
    const Tensor e = testutil::random_param(rng, {n, d_enc}, "e");
    const Tensor p = testutil::random_param(rng, {n, d_enc}, "p");
    const double li = intra_loss(e, p, tags, mask, heads).item();
    if (!all_zero || li != 0.0) {
      ok = false;
      why = "zero intra mask gave loss " + fmt(li, 17);
    }
  }

  // (c) zeroed classifier weights: uniform predictions, so the labeling
  // loss is n*ln(L) and the utterance-type loss is K*ln(3).
  {
    HeadParams heads = HeadParams::init(d_enc, d_graph, L, rng);
    std::fill(heads.w_c.values().begin(), heads.w_c.values().end(), 0.0);
    std::fill(heads.w_ut.values().begin(), heads.w_ut.values().end(), 0.0);
    const Tensor p = testutil::random_param(rng, {n, d_enc}, "p");
    const Tensor g = testutil::random_param(rng, {K, d_graph}, "g");
    const Tensor h = testutil::random_param(rng, {K, d_graph}, "h");
    const double l_srl = srl_loss(p, h, conv, tags, heads).item();
    const double want_srl = double(n) * std::log(double(L));
    const std::vector<UtteranceType> types =
        derive_utterance_types(conv, frame);
    const double l_ut = utterance_type_loss(g, h, types, heads).item();
    const double want_ut = double(K) * std::log(3.0);
    if (std::fabs(l_srl - want_srl) > kLossIdentityTol ||
        std::fabs(l_ut - want_ut) > kLossIdentityTol) {
      ok = false;
      why = "uniform baselines off: srl " + fmt(l_srl, 17) + " vs " +
            fmt(want_srl, 17) + ", ut " + fmt(l_ut, 17) + " vs " +
            fmt(want_ut, 17);
    }
  }

  report(7, ok,
         ok ? "srl-only total is bit-exact; zero intra mask zeroes the intra "
              "loss; zeroed classifiers give n*ln(" +
                  std::to_string(L) + ") and K*ln(3)"
            : why);
}

// ---------------------------------------------------------------------
// 8. Synthetic training: a 50-dialogue corpus is memorized quickly, and
//    on a larger corpus the full model's held-out cross-utterance F1 is
//    never beaten by the full-attention or graphless ablations
//    (non-strict, median over 5 seeds).

void criterion8() {
  // Overfit half.
  SyntheticConfig small_cfg;  // 50 dialogues, ~20% cross tuples
  small_cfg.seed = 1;
  const Dataset small = generate_synthetic(small_cfg);

  TrainConfig overfit;
  overfit.batch_size = 8;
  overfit.learning_rate = 3e-3;
  overfit.max_epochs = kOverfitEpochCap;
  overfit.seed = 0;
  overfit.stop_at_train_f1 = kOverfitF1;
  const auto t0 = Clock::now();
  const TrainResult r = train(small, Dataset{}, overfit);
  const double overfit_secs = secs_since(t0);
  const double train_f1 = evaluate(r.model, small).all.f1;
  const bool part1 = train_f1 >= kOverfitF1 &&
                     int(r.log.size()) <= kOverfitEpochCap &&
                     overfit_secs < kOverfitBudgetSecs;

  // Directional half: medians over 5 seeds on a corpus large enough that
  // the full model generalizes to held-out dialogues.
  SyntheticConfig big_cfg;
  big_cfg.num_dialogs = 200;
  big_cfg.seed = 1;
  const Dataset big = generate_synthetic(big_cfg);
  SyntheticConfig held_cfg;
  held_cfg.num_dialogs = 60;
  held_cfg.seed = 2001;
  const Dataset held = generate_synthetic(held_cfg);

  auto held_cross_f1 = [&](uint64_t seed, const char* switch_name) {
    TrainConfig tc;
    tc.batch_size = 8;
    tc.learning_rate = 3e-3;
    tc.max_epochs = 60;
    tc.seed = seed;
    tc.stop_at_train_f1 = 0.995;
    if (switch_name) tc = apply_ablation_switch(tc, switch_name);
    const TrainResult res = train(big, Dataset{}, tc);
    return evaluate(res.model, held).cross.f1;
  };
  auto median5 = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };

  std::vector<double> full_scores, flat_scores, graphless_scores;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    full_scores.push_back(held_cross_f1(seed, nullptr));
    flat_scores.push_back(held_cross_f1(seed, "full_attention"));
    graphless_scores.push_back(held_cross_f1(seed, "no_sagn"));
  }
  const double med_full = median5(full_scores);
  const double med_flat = median5(flat_scores);
  const double med_graphless = median5(graphless_scores);
  const bool part2 = med_flat <= med_full && med_graphless <= med_full;

  report(8, part1 && part2,
         "overfit f1=" + fmt(train_f1) + " in " +
             std::to_string(r.log.size()) + " epochs/" + fmt(overfit_secs) +
             "s; held-out cross f1 medians: full=" + fmt(med_full) +
             " full_attention=" + fmt(med_flat) +
             " no_sagn=" + fmt(med_graphless));
}

// ---------------------------------------------------------------------
// 9. Scorer vs a set-based oracle, and the intra/cross decomposition.

struct OracleCounts {
  int64_t tp_i = 0, fp_i = 0, fn_i = 0;
  int64_t tp_c = 0, fp_c = 0, fn_c = 0;
};

OracleCounts oracle_counts(const std::vector<ArgumentSpan>& predicted,
                           const std::vector<ArgumentSpan>& gold,
                           int predicate_utt) {
  using Tup = std::tuple<int, int, int, std::string>;
  std::set<Tup> ps, gs;
  for (const auto& s : predicted)
    ps.insert({s.utt_index, s.start, s.end, s.role});
  for (const auto& s : gold) gs.insert({s.utt_index, s.start, s.end, s.role});
  OracleCounts c;
  for (const auto& t : ps) {
    const bool intra = std::get<0>(t) == predicate_utt;
    if (gs.count(t))
      (intra ? c.tp_i : c.tp_c) += 1;
    else
      (intra ? c.fp_i : c.fp_c) += 1;
  }
  for (const auto& t : gs)
    if (!ps.count(t)) ((std::get<0>(t) == predicate_utt) ? c.fn_i : c.fn_c) += 1;
  return c;
}

bool counts_match(const Metrics& m, const OracleCounts& c) {
  return m.intra.tp == c.tp_i && m.intra.fp == c.fp_i && m.intra.fn == c.fn_i &&
         m.cross.tp == c.tp_c && m.cross.fp == c.fp_c && m.cross.fn == c.fn_c &&
         m.all.tp == c.tp_i + c.tp_c && m.all.fp == c.fp_i + c.fp_c &&
         m.all.fn == c.fn_i + c.fn_c;
}

void criterion9() {
  std::mt19937_64 rng(49);
  const std::vector<std::string> roles = {"ARG0", "ARG1", "ARGM-TMP"};
  auto random_spans = [&](int max_n) {
    std::vector<ArgumentSpan> v;
    const int count = int(rng() % (max_n + 1));
    for (int t = 0; t < count; ++t) {
      ArgumentSpan s;
      s.utt_index = int(rng() % 4);
      s.start = int(rng() % 5);
      s.end = s.start + 1 + int(rng() % 3);
      s.role = roles[rng() % roles.size()];
      v.push_back(std::move(s));  // duplicates are possible and intended
    }
    return v;
  };

  bool ok = true;
  Metrics aggregate;
  OracleCounts aggregate_oracle;
  for (int trial = 0; trial < 500; ++trial) {
    const int pred_utt = int(rng() % 4);
    const auto predicted = random_spans(6);
    const auto gold = random_spans(6);
    Metrics m;
    tally_spans(predicted, gold, pred_utt, m);
    const OracleCounts c = oracle_counts(predicted, gold, pred_utt);
    if (!counts_match(m, c)) ok = false;
    tally_spans(predicted, gold, pred_utt, aggregate);
    aggregate_oracle.tp_i += c.tp_i;
    aggregate_oracle.fp_i += c.fp_i;
    aggregate_oracle.fn_i += c.fn_i;
    aggregate_oracle.tp_c += c.tp_c;
    aggregate_oracle.fp_c += c.fp_c;
    aggregate_oracle.fn_c += c.fn_c;
  }
  if (!counts_match(aggregate, aggregate_oracle)) ok = false;
  finalize_metrics(aggregate);
  {
    const double tp = double(aggregate.all.tp);
    const double precision = tp / double(aggregate.all.tp + aggregate.all.fp);
    const double recall = tp / double(aggregate.all.tp + aggregate.all.fn);
    const double f1 = 2.0 * precision * recall / (precision + recall);
    if (std::fabs(aggregate.all.f1 - f1) > 1e-12) ok = false;
  }

  // The same law must hold through the full evaluation path on real
  // predictions from a model.
  SyntheticConfig sc;
  sc.num_dialogs = 12;
  sc.seed = 5;
  const Dataset ds = generate_synthetic(sc);
  ModelConfig mc;
  mc.encoder.d_enc = 8;
  mc.encoder.n_blocks = 1;
  mc.encoder.n_heads = 2;
  mc.encoder.d_ff = 16;
  mc.encoder.d_graph = 6;
  const Model model =
      Model::init(mc, Vocabulary::from_dataset(ds), ds.inventory, 21);
  const Metrics viaEvaluate = evaluate(model, ds);
  OracleCounts from_predictions;
  for (const Instance& inst : ds.instances) {
    const OracleCounts c = oracle_counts(model.predict(inst),
                                         inst.frame.arguments,
                                         inst.frame.predicate_utt);
    from_predictions.tp_i += c.tp_i;
    from_predictions.fp_i += c.fp_i;
    from_predictions.fn_i += c.fn_i;
    from_predictions.tp_c += c.tp_c;
    from_predictions.fp_c += c.fp_c;
    from_predictions.fn_c += c.fn_c;
  }
  if (!counts_match(viaEvaluate, from_predictions)) ok = false;

  report(9, ok,
         "span scorer matches the set-based oracle on 500 random pairs and "
         "on live predictions; counts split exactly into intra + cross");
}

// ---------------------------------------------------------------------
// 10. Spans -> tags -> spans round-trips, and a stray inside-tag never
//     knocks out a well-formed span.

void criterion10() {
  std::mt19937_64 rng(50);
  const LabelInventory inv = testutil::test_inventory();
  bool ok = true;
  int injections = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Instance inst = testutil::random_instance(rng, inv);
    const TagSequence tags = derive_tags(inst.conv, inst.frame, inv);
    std::vector<ArgumentSpan> decoded = bio_to_spans(inst.conv, tags, inv);
    std::vector<ArgumentSpan> want = inst.frame.arguments;
    std::sort(decoded.begin(), decoded.end());
    std::sort(want.begin(), want.end());
    if (decoded != want) {
      ok = false;
      continue;
    }

    // Inject one stray inside-tag at an O position where it cannot extend
    // a neighboring span; decoding must repair it to a fresh single-token
    // span and keep every original span intact.
    const std::vector<int> utt = inst.conv.token_utterances();
    std::vector<std::pair<int, int>> candidates;  // (position, role)
    for (int p = 0; p < tags.size(); ++p) {
      if (tags.labels[p] != LabelInventory::kOutside) continue;
      const bool at_start = p == inst.conv.flat_offset(utt[p]);
      for (int role = 0; role < inv.num_roles(); ++role)
        if (at_start || inv.role_of(tags.labels[p - 1]) != role)
          candidates.push_back({p, role});
    }
    if (candidates.empty()) continue;  // cannot happen: predicate stays O
    const auto [pos, role] = candidates[rng() % candidates.size()];
    TagSequence mutated = tags;
    mutated.labels[pos] = inv.inside_id(role);
    ++injections;

    std::vector<ArgumentSpan> repaired =
        bio_to_spans(inst.conv, mutated, inv);
    std::sort(repaired.begin(), repaired.end());
    ArgumentSpan stray;
    stray.utt_index = utt[pos];
    stray.start = pos - inst.conv.flat_offset(utt[pos]);
    stray.end = stray.start + 1;
    stray.role = inv.role_name(role);
    std::vector<ArgumentSpan> expect = want;
    expect.push_back(stray);
    std::sort(expect.begin(), expect.end());
    if (repaired != expect) ok = false;
  }
  report(10, ok,
         "spans -> tags -> spans is the identity on 1000 frames; " +
             std::to_string(injections) +
             " stray inside-tags decoded without dropping any span");
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  criterion9();
  criterion10();
  const double secs = secs_since(t0);
  if (g_failures == 0) {
    std::cout << "all 10 criteria passed (" << fmt(secs) << "s)" << std::endl;
    return 0;
  }
  std::cout << g_failures << " criteria FAILED (" << fmt(secs) << "s)"
            << std::endl;
  return 1;
}
