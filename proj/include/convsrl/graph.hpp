#pragma once

// Utterance graph over a conversation: directed edges from each utterance's
// recent past (plus a self-loop), relations typed by the speaker pair and
// predicate membership, attention-style edge weights, and a two-step
// relational graph convolution with a residual update.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "convsrl/corpus.hpp"
#include "convsrl/tensor.hpp"

namespace convsrl {

struct RelationId {
  int from_speaker = 0;
  int to_speaker = 0;
  bool pred_flag = false;

  friend bool operator==(const RelationId&, const RelationId&) = default;
};

// id = ((from * M) + to) * 2 + pred, in [0, 2*M*M).
int encode_relation(const RelationId& rel, int num_speakers);
RelationId decode_relation(int id, int num_speakers);

struct GraphEdge {
  int from = 0;  // source vertex j (j <= to: no edges from the future)
  int to = 0;    // target vertex i
  RelationId relation;
};

// Pure structure; vertex features and weights live elsewhere. The two
// dependency switches select how much of the relation triple the id keeps,
// so ablations only coarsen the typing without rebuilding edges.
struct GraphStructure {
  int num_vertices = 0;
  int num_speakers = 1;
  int window = 4;
  bool speaker_dependency = true;
  bool predicate_dependency = true;
  std::vector<GraphEdge> edges;           // sorted by (to, from)
  std::vector<std::vector<int>> in_edges; // per vertex, indices into edges

  int num_relations() const;
  int relation_id(const GraphEdge& edge) const;
};

// num_speakers widens the relation-id space beyond the conversation's own
// speaker count (0 keeps the conversation's), so ids stay comparable across
// a corpus with varying speaker counts.
GraphStructure build_graph(const Conversation& conv, int predicate_utt,
                           int window, int num_speakers = 0);

// mode: "no_speaker_dep" or "no_predicate_dep"; anything else is an error.
GraphStructure ablate(const GraphStructure& graph, const std::string& mode);

struct GraphParams {
  Tensor w_e;                    // [d, d] edge-score bilinear form
  std::vector<Tensor> w1_rel;    // per relation id, [d, d]
  Tensor w1_self;                // [d, d]
  Tensor w2;                     // [d, d]
  Tensor w2_self;                // [d, d]
  // When nonempty, per-relation log normalizers: c_r = exp(log_c[r]),
  // replacing the neighbor-count normalization.
  std::vector<Tensor> log_c;

  static GraphParams init(int d_graph, int num_relations, bool learnable_norm,
                          std::mt19937_64& rng);
  std::vector<Tensor> parameters() const;
};

// alpha[i][j] = softmax_j of g_i^T W_e g_j over i's in-neighborhood
// (self included); exactly zero where no edge exists.
Tensor edge_weights(const Tensor& g, const GraphStructure& graph,
                    const Tensor& w_e);

// h1_i = ReLU(sum_r sum_{j in N_i^r} alpha_ij / c_{i,r} * W1_r g_j
//             + alpha_ii W1_self g_i), with N_i^r the non-self in-neighbors
// of relation r and c_{i,r} = |N_i^r| unless learnable.
Tensor rgcn_layer1(const Tensor& g, const GraphStructure& graph,
                   const Tensor& alpha, const GraphParams& params);

// h2_i = ReLU(sum_{j in N_i} W2 h1_j + W2_self h1_i), relation-agnostic.
Tensor rgcn_layer2(const Tensor& h1, const GraphStructure& graph,
                   const GraphParams& params);

// h = g + h2.
Tensor residual_update(const Tensor& g, const Tensor& h2);

struct GraphOutput {
  Tensor alpha;  // [K, K]
  Tensor h;      // [K, d]
};

// build -> weights -> layer1 -> layer2 -> residual in one call.
GraphOutput run_graph(const Tensor& g, const GraphStructure& graph,
                      const GraphParams& params);

// Debug JSON: vertices, relation switches, and per-edge relation triples;
// includes each edge's weight when alpha is given.
std::string graph_to_json(const GraphStructure& graph,
                          const Tensor* alpha = nullptr);

}  // namespace convsrl
