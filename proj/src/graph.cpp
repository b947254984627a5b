#include "convsrl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace convsrl {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_speakers(int num_speakers) {
  if (num_speakers < 1)
    throw std::invalid_argument("relation encoding requires at least one speaker");
}

}  // namespace

int encode_relation(const RelationId& rel, int num_speakers) {
  check_speakers(num_speakers);
  if (rel.from_speaker < 0 || rel.from_speaker >= num_speakers ||
      rel.to_speaker < 0 || rel.to_speaker >= num_speakers)
    throw std::invalid_argument("relation speakers out of range [0," +
                                std::to_string(num_speakers) + ")");
  return ((rel.from_speaker * num_speakers) + rel.to_speaker) * 2 +
         (rel.pred_flag ? 1 : 0);
}

RelationId decode_relation(int id, int num_speakers) {
  check_speakers(num_speakers);
  if (id < 0 || id >= 2 * num_speakers * num_speakers)
    throw std::invalid_argument("relation id " + std::to_string(id) +
                                " out of range [0," +
                                std::to_string(2 * num_speakers * num_speakers) +
                                ")");
  RelationId rel;
  rel.pred_flag = (id % 2) != 0;
  const int pair = id / 2;
  rel.to_speaker = pair % num_speakers;
  rel.from_speaker = pair / num_speakers;
  return rel;
}

int GraphStructure::num_relations() const {
  const int speaker_part =
      speaker_dependency ? num_speakers * num_speakers : 1;
  return speaker_part * (predicate_dependency ? 2 : 1);
}

int GraphStructure::relation_id(const GraphEdge& edge) const {
  const RelationId& r = edge.relation;
  const int speaker_part =
      speaker_dependency ? (r.from_speaker * num_speakers) + r.to_speaker : 0;
  if (predicate_dependency) return speaker_part * 2 + (r.pred_flag ? 1 : 0);
  return speaker_part;
}

GraphStructure build_graph(const Conversation& conv, int predicate_utt,
                           int window, int num_speakers) {
  const int K = conv.num_utterances();
  if (K < 1) throw std::invalid_argument("graph needs at least one utterance");
  if (predicate_utt < 0 || predicate_utt >= K)
    throw std::invalid_argument("predicate utterance " +
                                std::to_string(predicate_utt) + " out of range");
  if (window < 0) throw std::invalid_argument("graph window must be >= 0");
  if (num_speakers == 0) num_speakers = conv.num_speakers;
  if (num_speakers < conv.num_speakers)
    throw std::invalid_argument("graph speaker space (" +
                                std::to_string(num_speakers) +
                                ") narrower than the conversation's (" +
                                std::to_string(conv.num_speakers) + ")");

  GraphStructure graph;
  graph.num_vertices = K;
  graph.num_speakers = num_speakers;
  graph.window = window;
  graph.in_edges.resize(K);
  for (int i = 0; i < K; ++i) {
    for (int j = std::max(0, i - window); j <= i; ++j) {
      GraphEdge edge;
      edge.from = j;
      edge.to = i;
      edge.relation.from_speaker = conv.utterances[j].speaker;
      edge.relation.to_speaker = conv.utterances[i].speaker;
      edge.relation.pred_flag = (j == predicate_utt || i == predicate_utt);
      graph.in_edges[i].push_back(static_cast<int>(graph.edges.size()));
      graph.edges.push_back(edge);
    }
  }
  return graph;
}

GraphStructure ablate(const GraphStructure& graph, const std::string& mode) {
  GraphStructure out = graph;
  if (mode == "no_speaker_dep")
    out.speaker_dependency = false;
  else if (mode == "no_predicate_dep")
    out.predicate_dependency = false;
  else
    throw std::invalid_argument(
        "unknown graph ablation mode '" + mode +
        "' (expected no_speaker_dep or no_predicate_dep)");
  return out;
}

GraphParams GraphParams::init(int d_graph, int num_relations,
                              bool learnable_norm, std::mt19937_64& rng) {
  if (d_graph < 1) throw std::invalid_argument("graph dimension must be >= 1");
  if (num_relations < 1)
    throw std::invalid_argument("graph needs at least one relation type");
  const double limit = std::sqrt(6.0 / (d_graph + d_graph));
  std::uniform_real_distribution<double> dist(-limit, limit);
  auto matrix = [&](const std::string& name) {
    std::vector<double> v(int64_t(d_graph) * d_graph);
    for (auto& x : v) x = dist(rng);
    return Tensor::param({d_graph, d_graph}, std::move(v), name);
  };

  GraphParams params;
  params.w_e = matrix("graph.w_e");
  for (int r = 0; r < num_relations; ++r)
    params.w1_rel.push_back(matrix("graph.rel" + std::to_string(r) + ".w1"));
  params.w1_self = matrix("graph.w1_self");
  params.w2 = matrix("graph.w2");
  params.w2_self = matrix("graph.w2_self");
  if (learnable_norm)
    for (int r = 0; r < num_relations; ++r)
      params.log_c.push_back(Tensor::param(
          {1}, {0.0}, "graph.rel" + std::to_string(r) + ".log_c"));
  return params;
}

std::vector<Tensor> GraphParams::parameters() const {
  std::vector<Tensor> out{w_e};
  for (const auto& t : w1_rel) out.push_back(t);
  out.push_back(w1_self);
  out.push_back(w2);
  out.push_back(w2_self);
  for (const auto& t : log_c) out.push_back(t);
  return out;
}

Tensor edge_weights(const Tensor& g, const GraphStructure& graph,
                    const Tensor& w_e) {
  const int K = graph.num_vertices;
  if (g.dim(0) != K)
    throw std::invalid_argument("edge_weights: feature rows (" +
                                std::to_string(g.dim(0)) +
                                ") != graph vertices (" + std::to_string(K) + ")");
  // scores[i][j] = g_i^T W_e g_j; -inf off-neighborhood so softmax rows
  // normalize over exactly the incoming edges.
  std::vector<double> bias(int64_t(K) * K, kNegInf);
  for (const auto& edge : graph.edges) bias[int64_t(edge.to) * K + edge.from] = 0.0;
  const Tensor scores = matmul_nt(matmul(g, w_e), g);
  return softmax(add(scores, Tensor::constant({K, K}, std::move(bias))));
}

Tensor rgcn_layer1(const Tensor& g, const GraphStructure& graph,
                   const Tensor& alpha, const GraphParams& params) {
  const int K = graph.num_vertices;
  const int R = graph.num_relations();
  if (!params.log_c.empty() &&
      static_cast<int>(params.log_c.size()) < R)
    throw std::invalid_argument("rgcn_layer1: learnable normalizers cover " +
                                std::to_string(params.log_c.size()) +
                                " relations, graph has " + std::to_string(R));
  if (static_cast<int>(params.w1_rel.size()) < R)
    throw std::invalid_argument("rgcn_layer1: params hold " +
                                std::to_string(params.w1_rel.size()) +
                                " relation matrices, graph has " +
                                std::to_string(R));

  // Per relation, a constant selector carrying membership and (by default)
  // the 1/|N_i^r| normalization; alpha multiplies in element-wise so the
  // whole aggregation stays differentiable in both alpha and g.
  std::vector<std::vector<double>> selector(R,
                                            std::vector<double>(int64_t(K) * K, 0.0));
  std::vector<std::vector<int>> count(R, std::vector<int>(K, 0));
  for (const auto& edge : graph.edges) {
    if (edge.from == edge.to) continue;
    ++count[graph.relation_id(edge)][edge.to];
  }
  const bool learnable = !params.log_c.empty();
  for (const auto& edge : graph.edges) {
    if (edge.from == edge.to) continue;
    const int r = graph.relation_id(edge);
    const double norm = learnable ? 1.0 : 1.0 / count[r][edge.to];
    selector[r][int64_t(edge.to) * K + edge.from] = norm;
  }

  Tensor acc;
  for (int r = 0; r < R; ++r) {
    bool any = false;
    for (double v : selector[r]) any |= (v != 0.0);
    if (!any) continue;
    const Tensor sel = Tensor::constant({K, K}, selector[r]);
    Tensor term = matmul(mul_elementwise(alpha, sel), matmul(g, params.w1_rel[r]));
    if (learnable) {
      const Tensor inv_c =
          exp_elementwise(scalar_scale(params.log_c[r], -1.0));
      term = scalar_bcast_mul(term, inv_c);
    }
    acc = acc.defined() ? add(acc, term) : term;
  }

  std::vector<double> diag(int64_t(K) * K, 0.0);
  for (int i = 0; i < K; ++i) diag[int64_t(i) * K + i] = 1.0;
  const Tensor self_term = matmul(mul_elementwise(alpha, Tensor::constant({K, K}, std::move(diag))),
                                  matmul(g, params.w1_self));
  acc = acc.defined() ? add(acc, self_term) : self_term;
  return relu(acc);
}

Tensor rgcn_layer2(const Tensor& h1, const GraphStructure& graph,
                   const GraphParams& params) {
  const int K = graph.num_vertices;
  std::vector<double> adjacency(int64_t(K) * K, 0.0);
  for (const auto& edge : graph.edges)
    if (edge.from != edge.to)
      adjacency[int64_t(edge.to) * K + edge.from] = 1.0;
  const Tensor neighbor_sum =
      matmul(Tensor::constant({K, K}, std::move(adjacency)), matmul(h1, params.w2));
  return relu(add(neighbor_sum, matmul(h1, params.w2_self)));
}

Tensor residual_update(const Tensor& g, const Tensor& h2) {
  if (g.shape() != h2.shape())
    throw std::invalid_argument("residual_update: shape mismatch " +
                                shape_str(g.shape()) + " vs " +
                                shape_str(h2.shape()));
  return add(g, h2);
}

GraphOutput run_graph(const Tensor& g, const GraphStructure& graph,
                      const GraphParams& params) {
  GraphOutput out;
  out.alpha = edge_weights(g, graph, params.w_e);
  const Tensor h1 = rgcn_layer1(g, graph, out.alpha, params);
  const Tensor h2 = rgcn_layer2(h1, graph, params);
  out.h = residual_update(g, h2);
  return out;
}

std::string graph_to_json(const GraphStructure& graph, const Tensor* alpha) {
  nlohmann::json doc;
  doc["num_vertices"] = graph.num_vertices;
  doc["num_speakers"] = graph.num_speakers;
  doc["window"] = graph.window;
  doc["speaker_dependency"] = graph.speaker_dependency;
  doc["predicate_dependency"] = graph.predicate_dependency;
  doc["num_relations"] = graph.num_relations();
  doc["edges"] = nlohmann::json::array();
  for (const auto& edge : graph.edges) {
    nlohmann::json e;
    e["from"] = edge.from;
    e["to"] = edge.to;
    e["relation"] = {{"from_spk", edge.relation.from_speaker},
                     {"to_spk", edge.relation.to_speaker},
                     {"pred", edge.relation.pred_flag}};
    e["relation_id"] = graph.relation_id(edge);
    if (alpha) e["alpha"] = alpha->at(edge.to, edge.from);
    doc["edges"].push_back(std::move(e));
  }
  return doc.dump(2);
}

}  // namespace convsrl
