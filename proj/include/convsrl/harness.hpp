#pragma once

// Model assembly, optimization, evaluation, ablations, and checkpointing.
// The model couples the encoder, the utterance graph, and the classifier
// heads; the trainer runs seeded mini-batch descent with early stopping on
// dev F1 and keeps the best-dev parameters.

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "convsrl/corpus.hpp"
#include "convsrl/encoder.hpp"
#include "convsrl/graph.hpp"
#include "convsrl/objectives.hpp"
#include "convsrl/tensor.hpp"

namespace convsrl {

struct AblationSwitches {
  bool full_attention = false;    // all-ones token mask
  bool no_sagn = false;           // skip the graph: h = g
  bool no_predicate_rep = false;  // skip the attention stack: p = e
  bool no_speaker_dep = false;    // collapse speaker factors in relations
  bool no_predicate_dep = false;  // collapse the predicate flag in relations
  bool srl_only = false;          // loss weights forced to (1, 0, 0)
  bool no_intra_obj = false;      // drop the intra-argument objective
  bool no_ut_obj = false;         // drop the utterance-type objective
};

struct ModelConfig {
  EncoderConfig encoder;  // d_enc 64, 4 blocks, 4 heads, d_graph 100
  int window = 4;
  int num_speakers = 2;   // global speaker-id space for relation typing
  bool learnable_norm = false;
  AblationSwitches ablation;

  int num_relations() const;
};

struct TrainConfig {
  ModelConfig model;
  int batch_size = 128;
  double learning_rate = 3e-3;
  int max_epochs = 200;
  uint64_t seed = 0;
  LossWeights loss_weights;
  LossOptions loss_options;
  double clip_norm = 5.0;
  int patience = 10;
  // When >= 0, stop once train-set F1_all reaches this value (checked once
  // per epoch); keeps small overfit runs short.
  double stop_at_train_f1 = -1.0;
};

struct Model {
  ModelConfig config;
  Vocabulary vocab;
  LabelInventory inventory;
  EncoderParams encoder;
  GraphParams graph;
  HeadParams heads;

  static Model init(const ModelConfig& config, const Vocabulary& vocab,
                    const LabelInventory& inventory, uint64_t seed);
  std::vector<Tensor> parameters() const;

  struct Forward {
    Tensor e, p, g, h;
    Tensor l_srl, l_intra, l_ut;  // undefined when weighted out
    Tensor loss;
  };
  // Weighted loss honoring the ablation switches; components with zero
  // effective weight are never built.
  Forward forward(const Instance& inst, const LossWeights& weights,
                  const LossOptions& options = {}) const;
  // Effective weights after srl_only / no_intra_obj / no_ut_obj.
  LossWeights effective_weights(const LossWeights& weights) const;

  // Graph for one conversation under this model's relation-space settings.
  GraphStructure instance_graph(const Conversation& conv,
                                int predicate_utt) const;

  std::vector<ArgumentSpan> predict(const Instance& inst) const;
};

// Adaptive-moment gradient descent with global-norm clipping.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor> params, double learning_rate,
                double clip_norm = 5.0, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);
  void step();       // consumes current grads
  void zero_grad();  // clears grads on all tracked parameters

 private:
  std::vector<Tensor> params_;
  double lr_, clip_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct PRF {
  int64_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Micro-averaged scores over (predicate, argument, label) tuples; the
// intra/cross split keys on whether the argument shares the predicate's
// utterance, and partitions the raw counts of `all` exactly.
struct Metrics {
  PRF all, intra, cross;
};

// Adds one instance's exact-match counts to the running totals. Each side
// is treated as a set of (utterance, start, end, role) tuples; a predicted
// tuple lands in `intra` when its utterance is predicate_utt, else in
// `cross`, and always in `all`. Derived rates are left untouched; call
// finalize_metrics once all instances are tallied.
void tally_spans(const std::vector<ArgumentSpan>& predicted,
                 const std::vector<ArgumentSpan>& gold, int predicate_utt,
                 Metrics& metrics);
void finalize_metrics(Metrics& metrics);

Metrics evaluate(const Model& model, const Dataset& dataset);
std::string metrics_to_json(const Metrics& metrics);

// One prediction line per instance, mirroring the corpus "arguments" field.
std::string predictions_to_jsonl(const Model& model, const Dataset& dataset);

struct EpochLog {
  int epoch = 0;
  double l_srl = 0.0, l_intra = 0.0, l_ut = 0.0;  // per-instance means
  Metrics dev;
};

struct TrainResult {
  Model model;  // best-dev parameters (final ones if no dev set)
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_dev_f1 = 0.0;
};

// Deterministic for a fixed config.seed. When log_stream is given, writes
// one JSON object per epoch. Throws on non-finite loss.
TrainResult train(const Dataset& train_set, const Dataset& dev_set,
                  const TrainConfig& config, std::ostream* log_stream = nullptr);

// Returns config with the named switch enabled; throws on unknown names.
TrainConfig apply_ablation_switch(TrainConfig config,
                                  const std::string& switch_name);
const std::vector<std::string>& ablation_switch_names();

struct AblationReport {
  std::string switch_name;
  Metrics baseline;
  Metrics ablated;
};

// Trains twice from the same seed (baseline and switched) and scores both
// on the dev set.
AblationReport run_ablation(const Dataset& train_set, const Dataset& dev_set,
                            const TrainConfig& config,
                            const std::string& switch_name,
                            std::ostream* log_stream = nullptr);

// Versioned JSON checkpoint holding the config, vocabulary, label roles,
// and every named parameter tensor.
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace convsrl
