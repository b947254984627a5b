#include "convsrl/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>

namespace convsrl {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> normal_values(int64_t count, double stddev,
                                  std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> out(count);
  for (auto& v : out) v = dist(rng);
  return out;
}

// Xavier/Glorot uniform for a [fan_in, fan_out] matrix.
std::vector<double> xavier_values(int fan_in, int fan_out,
                                  std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> out(int64_t(fan_in) * fan_out);
  for (auto& v : out) v = dist(rng);
  return out;
}

Tensor xavier_param(int fan_in, int fan_out, std::mt19937_64& rng,
                    std::string name) {
  return Tensor::param({fan_in, fan_out}, xavier_values(fan_in, fan_out, rng),
                       std::move(name));
}

}  // namespace

Vocabulary::Vocabulary() : tokens_{"<unk>", "<pad>"} {
  index_[tokens_[0]] = kUnk;
  index_[tokens_[1]] = kPad;
}

Vocabulary Vocabulary::from_dataset(const Dataset& dataset) {
  std::set<std::string> seen;
  for (const auto& inst : dataset.instances)
    for (const auto& utt : inst.conv.utterances)
      for (const auto& tok : utt.tokens) seen.insert(tok);
  Vocabulary vocab;
  for (const auto& tok : seen) {
    if (vocab.index_.count(tok)) continue;
    vocab.index_[tok] = vocab.size();
    vocab.tokens_.push_back(tok);
  }
  return vocab;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 2)
    throw CorpusError("a vocabulary needs at least the UNK and PAD entries");
  Vocabulary vocab;
  vocab.tokens_.clear();
  vocab.index_.clear();
  for (auto& tok : tokens) {
    if (vocab.index_.count(tok))
      throw CorpusError("duplicate vocabulary token '" + tok + "'");
    vocab.index_[tok] = vocab.size();
    vocab.tokens_.push_back(std::move(tok));
  }
  return vocab;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open vocabulary file '" + path + "'");
  Vocabulary vocab;
  vocab.tokens_.clear();
  vocab.index_.clear();
  std::string line;
  while (std::getline(in, line)) {
    if (vocab.index_.count(line))
      throw CorpusError("vocabulary file '" + path + "': duplicate token '" +
                        line + "'");
    vocab.index_[line] = vocab.size();
    vocab.tokens_.push_back(line);
  }
  if (vocab.size() < 2)
    throw CorpusError("vocabulary file '" + path +
                      "' must hold at least the UNK and PAD entries");
  return vocab;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write vocabulary file '" + path + "'");
  for (const auto& tok : tokens_) out << tok << '\n';
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

EncoderParams EncoderParams::init(const EncoderConfig& config, int vocab_size,
                                  std::mt19937_64& rng) {
  if (config.d_enc <= 0 || config.n_blocks <= 0 || config.n_heads <= 0 ||
      config.d_ff <= 0 || config.d_graph <= 0 || config.max_len <= 0)
    throw std::invalid_argument("encoder config: all dimensions must be positive");
  if (config.d_enc % config.n_heads != 0)
    throw std::invalid_argument("encoder config: d_enc (" +
                                std::to_string(config.d_enc) +
                                ") must be divisible by n_heads (" +
                                std::to_string(config.n_heads) + ")");
  if (vocab_size < 2)
    throw std::invalid_argument("encoder init: vocabulary too small");

  const int d = config.d_enc;
  const int dh = d / config.n_heads;

  EncoderParams params;
  params.config = config;
  params.token_embedding =
      Tensor::param({vocab_size, d}, normal_values(int64_t(vocab_size) * d, 0.5, rng),
                    "encoder.token_embedding");
  params.indicator_embedding =
      Tensor::param({2, d}, normal_values(2 * int64_t(d), 0.5, rng),
                    "encoder.indicator_embedding");
  params.position_embedding =
      Tensor::param({config.max_len, d},
                    normal_values(int64_t(config.max_len) * d, 0.5, rng),
                    "encoder.position_embedding");

  for (int b = 0; b < config.n_blocks; ++b) {
    const std::string prefix = "encoder.block" + std::to_string(b) + ".";
    AttentionBlockParams block;
    for (int h = 0; h < config.n_heads; ++h) {
      const std::string hs = std::to_string(h);
      block.wq.push_back(xavier_param(d, dh, rng, prefix + "wq" + hs));
      block.wk.push_back(xavier_param(d, dh, rng, prefix + "wk" + hs));
      block.wv.push_back(xavier_param(d, dh, rng, prefix + "wv" + hs));
    }
    block.wo = xavier_param(d, d, rng, prefix + "wo");
    block.ln1_gain = Tensor::param({d}, std::vector<double>(d, 1.0), prefix + "ln1.gain");
    block.ln1_bias = Tensor::param({d}, std::vector<double>(d, 0.0), prefix + "ln1.bias");
    block.ln2_gain = Tensor::param({d}, std::vector<double>(d, 1.0), prefix + "ln2.gain");
    block.ln2_bias = Tensor::param({d}, std::vector<double>(d, 0.0), prefix + "ln2.bias");
    block.ff_w1 = xavier_param(d, config.d_ff, rng, prefix + "ffn.w1");
    block.ff_b1 = Tensor::param({config.d_ff}, std::vector<double>(config.d_ff, 0.0),
                                prefix + "ffn.b1");
    block.ff_w2 = xavier_param(config.d_ff, d, rng, prefix + "ffn.w2");
    block.ff_b2 = Tensor::param({d}, std::vector<double>(d, 0.0), prefix + "ffn.b2");
    params.blocks.push_back(std::move(block));
  }

  params.utterance_proj_w = xavier_param(d, config.d_graph, rng, "encoder.utterance_proj.w");
  params.utterance_proj_b =
      Tensor::param({config.d_graph}, std::vector<double>(config.d_graph, 0.0),
                    "encoder.utterance_proj.b");
  return params;
}

std::vector<Tensor> EncoderParams::parameters() const {
  std::vector<Tensor> out{token_embedding, indicator_embedding,
                          position_embedding};
  for (const auto& block : blocks) {
    for (const auto& t : block.wq) out.push_back(t);
    for (const auto& t : block.wk) out.push_back(t);
    for (const auto& t : block.wv) out.push_back(t);
    out.push_back(block.wo);
    out.push_back(block.ln1_gain);
    out.push_back(block.ln1_bias);
    out.push_back(block.ln2_gain);
    out.push_back(block.ln2_bias);
    out.push_back(block.ff_w1);
    out.push_back(block.ff_b1);
    out.push_back(block.ff_w2);
    out.push_back(block.ff_b2);
  }
  out.push_back(utterance_proj_w);
  out.push_back(utterance_proj_b);
  return out;
}

AttentionMask build_predicate_mask(const Conversation& conv,
                                   int predicate_utt) {
  if (predicate_utt < 0 || predicate_utt >= conv.num_utterances())
    throw std::invalid_argument("predicate utterance " +
                                std::to_string(predicate_utt) +
                                " out of range for conversation with " +
                                std::to_string(conv.num_utterances()) +
                                " utterances");
  const std::vector<int> utt = conv.token_utterances();
  const int n = static_cast<int>(utt.size());
  AttentionMask mask;
  mask.n = n;
  mask.allowed.assign(int64_t(n) * n, 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (utt[i] == utt[j] || utt[j] == predicate_utt)
        mask.allowed[int64_t(i) * n + j] = 1;
  return mask;
}

AttentionMask full_attention_mask(int n) {
  AttentionMask mask;
  mask.n = n;
  mask.allowed.assign(int64_t(n) * n, 1);
  return mask;
}

Tensor embed_tokens(const Conversation& conv, const Frame& frame,
                    const EncoderParams& params, const Vocabulary& vocab) {
  const int n = conv.total_tokens();
  if (n > params.config.max_len)
    throw std::invalid_argument(
        "conversation has " + std::to_string(n) +
        " tokens, above the position table size max_len=" +
        std::to_string(params.config.max_len));

  std::vector<int> token_ids, position_ids(n), indicator_ids(n, 0);
  token_ids.reserve(n);
  for (const auto& utt : conv.utterances)
    for (const auto& tok : utt.tokens) token_ids.push_back(vocab.id_of(tok));
  for (int i = 0; i < n; ++i) position_ids[i] = i;
  const int off = conv.flat_offset(frame.predicate_utt);
  for (int t = frame.predicate_start; t < frame.predicate_end; ++t)
    indicator_ids[off + t] = 1;

  return add(add(gather_rows(params.token_embedding, token_ids),
                 gather_rows(params.position_embedding, position_ids)),
             gather_rows(params.indicator_embedding, indicator_ids));
}

namespace {

Tensor mask_bias_tensor(const AttentionMask& mask) {
  std::vector<double> bias(int64_t(mask.n) * mask.n, 0.0);
  for (size_t i = 0; i < bias.size(); ++i)
    if (!mask.allowed[i]) bias[i] = kNegInf;
  return Tensor::constant({mask.n, mask.n}, std::move(bias));
}

}  // namespace

Tensor attention_block(const Tensor& x, const AttentionMask& mask,
                       const AttentionBlockParams& params,
                       std::vector<Tensor>* head_weights) {
  const int n = x.dim(0);
  if (mask.n != n)
    throw std::invalid_argument("attention mask is " + std::to_string(mask.n) +
                                "x" + std::to_string(mask.n) + " but input has " +
                                std::to_string(n) + " rows");
  const int dh = params.wq[0].dim(1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Tensor normed = layer_norm(x, params.ln1_gain, params.ln1_bias);
  const Tensor bias = mask_bias_tensor(mask);
  std::vector<Tensor> heads;
  for (size_t h = 0; h < params.wq.size(); ++h) {
    const Tensor q = matmul(normed, params.wq[h]);
    const Tensor k = matmul(normed, params.wk[h]);
    const Tensor v = matmul(normed, params.wv[h]);
    const Tensor weights =
        softmax(add(scalar_scale(matmul_nt(q, k), scale), bias));
    if (head_weights) head_weights->push_back(weights);
    heads.push_back(matmul(weights, v));
  }
  const Tensor attended = add(x, matmul(concat(heads, 1), params.wo));

  const Tensor normed2 = layer_norm(attended, params.ln2_gain, params.ln2_bias);
  const Tensor hidden = relu(add_bias(matmul(normed2, params.ff_w1), params.ff_b1));
  const Tensor ff = add_bias(matmul(hidden, params.ff_w2), params.ff_b2);
  return add(attended, ff);
}

EncoderOutput encode(const Conversation& conv, const Frame& frame,
                     const EncoderParams& params, const Vocabulary& vocab,
                     const EncodeOptions& options) {
  const Tensor e = embed_tokens(conv, frame, params, vocab);
  const int n = e.dim(0);

  Tensor p = e;
  if (!options.bypass_attention) {
    const AttentionMask mask = options.full_attention
                                   ? full_attention_mask(n)
                                   : build_predicate_mask(conv, frame.predicate_utt);
    if (options.trace) options.trace->attention.clear();
    for (const auto& block : params.blocks) {
      std::vector<Tensor> weights;
      p = attention_block(p, mask, block,
                          options.trace ? &weights : nullptr);
      if (options.trace) options.trace->attention.push_back(std::move(weights));
    }
  }

  const Tensor pooled =
      max_pool_segments(p, conv.token_utterances(), conv.num_utterances());
  const Tensor u =
      add_bias(matmul(pooled, params.utterance_proj_w), params.utterance_proj_b);
  return {e, p, u};
}

}  // namespace convsrl
