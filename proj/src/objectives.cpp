#include "convsrl/objectives.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace convsrl {

namespace {

std::vector<double> xavier(int rows, int cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(int64_t(rows) * cols);
  for (auto& x : v) x = dist(rng);
  return v;
}

void check_tags(const TagSequence& tags, int n, int num_labels,
                const char* who) {
  if (tags.size() != n)
    throw std::invalid_argument(std::string(who) + ": " +
                                std::to_string(tags.size()) + " tags for " +
                                std::to_string(n) + " tokens");
  for (int t = 0; t < n; ++t)
    if (tags.labels[t] < 0 || tags.labels[t] >= num_labels)
      throw std::invalid_argument(std::string(who) + ": tag " +
                                  std::to_string(tags.labels[t]) +
                                  " at token " + std::to_string(t) +
                                  " outside the label inventory [0," +
                                  std::to_string(num_labels) + ")");
}

}  // namespace

HeadParams HeadParams::init(int d_enc, int d_graph, int num_labels,
                            std::mt19937_64& rng) {
  if (d_enc < 1 || d_graph < 1)
    throw std::invalid_argument("head init: dimensions must be positive");
  if (num_labels < 1)
    throw std::invalid_argument("head init: empty label inventory");
  HeadParams params;
  params.w_srl_proj = Tensor::param({d_enc, d_graph},
                                    xavier(d_enc, d_graph, rng), "head.srl_proj");
  params.w_c = Tensor::param({2 * d_graph, num_labels},
                             xavier(2 * d_graph, num_labels, rng), "head.w_c");
  params.w_c_intra =
      Tensor::param({4 * d_enc, num_labels},
                    xavier(4 * d_enc, num_labels, rng), "head.w_c_intra");
  params.w_ut = Tensor::param({2 * d_graph, 3}, xavier(2 * d_graph, 3, rng),
                              "head.w_ut");
  return params;
}

std::vector<Tensor> HeadParams::parameters() const {
  return {w_srl_proj, w_c, w_c_intra, w_ut};
}

std::vector<double> intra_argument_mask(const Conversation& conv,
                                        const Frame& frame) {
  std::vector<double> mask(conv.total_tokens(), 0.0);
  for (const auto& span : frame.arguments) {
    if (span.utt_index != frame.predicate_utt) continue;
    const int off = conv.flat_offset(span.utt_index);
    for (int t = span.start; t < span.end; ++t) mask[off + t] = 1.0;
  }
  return mask;
}

Tensor srl_logits(const Tensor& p, const Tensor& h, const Conversation& conv,
                  const HeadParams& params) {
  const int n = conv.total_tokens();
  if (p.dim(0) != n)
    throw std::invalid_argument("srl_logits: p has " + std::to_string(p.dim(0)) +
                                " rows for " + std::to_string(n) + " tokens");
  if (h.dim(0) != conv.num_utterances())
    throw std::invalid_argument("srl_logits: h has " + std::to_string(h.dim(0)) +
                                " rows for " +
                                std::to_string(conv.num_utterances()) +
                                " utterances");
  const Tensor proj = matmul(p, params.w_srl_proj);
  const Tensor h_tok = gather_rows(h, conv.token_utterances());
  return matmul(concat({proj, h_tok}, 1), params.w_c);
}

Tensor srl_loss(const Tensor& p, const Tensor& h, const Conversation& conv,
                const TagSequence& tags, const HeadParams& params,
                const LossOptions& options) {
  const Tensor logits = srl_logits(p, h, conv, params);
  check_tags(tags, logits.dim(0), logits.dim(1), "srl_loss");
  Tensor loss = cross_entropy_rows(logits, tags.labels);
  if (options.token_mean) loss = scalar_scale(loss, 1.0 / logits.dim(0));
  return loss;
}

Tensor intra_loss(const Tensor& e, const Tensor& p, const TagSequence& tags,
                  const std::vector<double>& intra_mask,
                  const HeadParams& params, const LossOptions& options) {
  if (e.shape() != p.shape())
    throw std::invalid_argument("intra_loss: e is " + shape_str(e.shape()) +
                                " but p is " + shape_str(p.shape()));
  const int n = e.dim(0);
  if (static_cast<int>(intra_mask.size()) != n)
    throw std::invalid_argument("intra_loss: mask covers " +
                                std::to_string(intra_mask.size()) +
                                " of " + std::to_string(n) + " tokens");
  check_tags(tags, n, params.w_c_intra.dim(1), "intra_loss");

  double active = 0.0;
  for (double m : intra_mask) active += (m != 0.0) ? 1.0 : 0.0;
  if (active == 0.0) return Tensor::scalar(0.0);

  const Tensor features = concat(
      {p, abs_elementwise(sub(p, e)), mul_elementwise(p, e), e}, 1);
  const Tensor logits = matmul(features, params.w_c_intra);
  Tensor loss = cross_entropy_rows(logits, tags.labels, &intra_mask);
  if (options.token_mean) loss = scalar_scale(loss, 1.0 / active);
  return loss;
}

Tensor utterance_type_loss(const Tensor& g, const Tensor& h,
                           const std::vector<UtteranceType>& utt_types,
                           const HeadParams& params) {
  if (g.shape() != h.shape())
    throw std::invalid_argument("utterance_type_loss: g is " +
                                shape_str(g.shape()) + " but h is " +
                                shape_str(h.shape()));
  const int K = g.dim(0);
  if (static_cast<int>(utt_types.size()) != K)
    throw std::invalid_argument("utterance_type_loss: " +
                                std::to_string(utt_types.size()) +
                                " types for " + std::to_string(K) +
                                " utterances");
  std::vector<int> targets(K);
  for (int k = 0; k < K; ++k) targets[k] = static_cast<int>(utt_types[k]);
  const Tensor logits = matmul(concat({g, h}, 1), params.w_ut);
  return cross_entropy_rows(logits, targets);
}

Tensor total_loss(const Tensor& l_srl, const Tensor& l_intra,
                  const Tensor& l_ut, const LossWeights& weights) {
  if (weights.srl < 0.0 || weights.intra < 0.0 || weights.ut < 0.0)
    throw std::invalid_argument("total_loss: loss weights must be nonnegative");
  Tensor acc;
  auto accumulate = [&acc](const Tensor& component, double w) {
    if (w == 0.0) return;
    const Tensor scaled = scalar_scale(component, w);
    acc = acc.defined() ? add(acc, scaled) : scaled;
  };
  accumulate(l_srl, weights.srl);
  accumulate(l_intra, weights.intra);
  accumulate(l_ut, weights.ut);
  return acc.defined() ? acc : Tensor::scalar(0.0);
}

TagSequence decode(const Tensor& p, const Tensor& h, const Conversation& conv,
                   const HeadParams& params) {
  const Tensor logits = srl_logits(p, h, conv, params);
  TagSequence tags;
  tags.labels.resize(logits.dim(0));
  for (int t = 0; t < logits.dim(0); ++t) {
    int best = 0;
    for (int l = 1; l < logits.dim(1); ++l)
      if (logits.at(t, l) > logits.at(t, best)) best = l;
    tags.labels[t] = best;
  }
  return tags;
}

}  // namespace convsrl
