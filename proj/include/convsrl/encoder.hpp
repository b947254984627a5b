#pragma once

// Token encoder: trainable embeddings (token + position + predicate
// indicator), a stack of self-attention blocks restricted by the
// predicate-aware mask, and max-pooled utterance features projected to the
// graph dimension. Pure over read-only parameters.

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "convsrl/corpus.hpp"
#include "convsrl/tensor.hpp"

namespace convsrl {

// One token per line, line number = id; id 0 is UNK, id 1 is PAD.
class Vocabulary {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kPad = 1;

  Vocabulary();
  static Vocabulary from_dataset(const Dataset& dataset);
  static Vocabulary from_tokens(std::vector<std::string> tokens);
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  int id_of(const std::string& token) const;  // kUnk when absent
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct EncoderConfig {
  int d_enc = 64;
  int n_blocks = 4;
  int n_heads = 4;
  int d_ff = 128;
  int d_graph = 100;
  int max_len = 512;
};

struct AttentionBlockParams {
  std::vector<Tensor> wq, wk, wv;  // per head, [d_enc, d_head]
  Tensor wo;                       // [d_enc, d_enc]
  Tensor ln1_gain, ln1_bias;
  Tensor ln2_gain, ln2_bias;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

struct EncoderParams {
  EncoderConfig config;
  Tensor token_embedding;      // [vocab, d_enc]
  Tensor indicator_embedding;  // [2, d_enc]: row 1 = inside the predicate
  Tensor position_embedding;   // [max_len, d_enc]
  std::vector<AttentionBlockParams> blocks;
  Tensor utterance_proj_w;  // [d_enc, d_graph]
  Tensor utterance_proj_b;  // [d_graph]

  static EncoderParams init(const EncoderConfig& config, int vocab_size,
                            std::mt19937_64& rng);
  std::vector<Tensor> parameters() const;
};

// n x n boolean matrix over flattened token positions.
struct AttentionMask {
  int n = 0;
  std::vector<uint8_t> allowed;  // row-major
  bool at(int i, int j) const { return allowed[int64_t(i) * n + j] != 0; }
};

// allowed[i][j] = 1 iff tokens i and j share an utterance, or j lies in the
// utterance containing the predicate.
AttentionMask build_predicate_mask(const Conversation& conv, int predicate_utt);
AttentionMask full_attention_mask(int n);

// e: one row per flat token position.
Tensor embed_tokens(const Conversation& conv, const Frame& frame,
                    const EncoderParams& params, const Vocabulary& vocab);

// Pre-norm residual block; masked positions get exactly zero attention.
// When head_weights is given, it receives one [n, n] weight matrix per head.
Tensor attention_block(const Tensor& x, const AttentionMask& mask,
                       const AttentionBlockParams& params,
                       std::vector<Tensor>* head_weights = nullptr);

struct EncoderTrace {
  std::vector<std::vector<Tensor>> attention;  // [block][head] -> [n, n]
};

struct EncodeOptions {
  bool full_attention = false;    // substitute the all-ones mask
  bool bypass_attention = false;  // p := e
  EncoderTrace* trace = nullptr;
};

struct EncoderOutput {
  Tensor token_embed;      // e  [n, d_enc]
  Tensor predicate_aware;  // p  [n, d_enc]
  Tensor utterance_nodes;  // u  [K, d_graph]: pooled p, projected
};

EncoderOutput encode(const Conversation& conv, const Frame& frame,
                     const EncoderParams& params, const Vocabulary& vocab,
                     const EncodeOptions& options = {});

}  // namespace convsrl
