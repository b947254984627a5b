#pragma once

// Training objectives and decoding: the per-token label loss over
// predicate-aware and graph features, the intra-argument auxiliary loss on
// the matched feature matrix, the 3-way utterance-type loss, their weighted
// combination, and greedy argmax decoding back to spans.

#include <random>
#include <vector>

#include "convsrl/corpus.hpp"
#include "convsrl/tensor.hpp"

namespace convsrl {

struct LossOptions {
  // Losses are token sums by default; set to average over the contributing
  // tokens instead.
  bool token_mean = false;
};

struct LossWeights {
  double srl = 1.0;
  double intra = 1.0;
  double ut = 1.0;
};

struct HeadParams {
  Tensor w_srl_proj;  // [d_enc, d_graph], aligns token and utterance features
  Tensor w_c;         // [2*d_graph, num_labels]
  Tensor w_c_intra;   // [4*d_enc, num_labels]
  Tensor w_ut;        // [2*d_graph, 3]

  static HeadParams init(int d_enc, int d_graph, int num_labels,
                         std::mt19937_64& rng);
  std::vector<Tensor> parameters() const;
};

// 1.0 at flat positions inside an argument span lying in the predicate's
// utterance, else 0.0.
std::vector<double> intra_argument_mask(const Conversation& conv,
                                        const Frame& frame);

// Per-token label logits over [proj(p_t) ++ h_{utt(t)}].
Tensor srl_logits(const Tensor& p, const Tensor& h, const Conversation& conv,
                  const HeadParams& params);

Tensor srl_loss(const Tensor& p, const Tensor& h, const Conversation& conv,
                const TagSequence& tags, const HeadParams& params,
                const LossOptions& options = {});

// Feature matrix per token: [p_t, |p_t - e_t|, p_t * e_t, e_t]; rows with a
// zero mask contribute exactly nothing.
Tensor intra_loss(const Tensor& e, const Tensor& p, const TagSequence& tags,
                  const std::vector<double>& intra_mask,
                  const HeadParams& params, const LossOptions& options = {});

Tensor utterance_type_loss(const Tensor& g, const Tensor& h,
                           const std::vector<UtteranceType>& utt_types,
                           const HeadParams& params);

// weights.srl * l_srl + weights.intra * l_intra + weights.ut * l_ut.
// Zero-weighted components are dropped from the graph entirely.
Tensor total_loss(const Tensor& l_srl, const Tensor& l_intra,
                  const Tensor& l_ut, const LossWeights& weights);

// Greedy per-token argmax; ties resolve to the lowest label id. Feed the
// result to bio_to_spans for span output.
TagSequence decode(const Tensor& p, const Tensor& h, const Conversation& conv,
                   const HeadParams& params);

}  // namespace convsrl
