#pragma once

// Data model for dialogue SRL corpora: JSON-lines loading with validation,
// BIO tag derivation and span decoding, utterance typing, statistics and
// dataset splitting. All operations are pure over immutable inputs.

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace convsrl {

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Utterance {
  int index = 0;
  int speaker = 0;
  std::vector<std::string> tokens;
};

struct Conversation {
  std::string id;
  std::vector<Utterance> utterances;
  int num_speakers = 1;

  int num_utterances() const { return static_cast<int>(utterances.size()); }
  int total_tokens() const;
  // Flat token index of the first token of utterance k.
  int flat_offset(int k) const;
  // Utterance id per flat token position.
  std::vector<int> token_utterances() const;
};

// Token offsets are half-open within one utterance.
struct ArgumentSpan {
  int utt_index = 0;
  int start = 0;
  int end = 0;
  std::string role;

  friend bool operator==(const ArgumentSpan&, const ArgumentSpan&) = default;
  friend auto operator<=>(const ArgumentSpan&, const ArgumentSpan&) = default;
};

struct Frame {
  int predicate_utt = 0;
  int predicate_start = 0;
  int predicate_end = 0;
  std::vector<ArgumentSpan> arguments;
};

struct Instance {
  Conversation conv;
  Frame frame;
};

// Closed BIO label set declared by the dataset header: O first, then
// B-role / I-role per role in header order.
class LabelInventory {
 public:
  LabelInventory() = default;
  explicit LabelInventory(std::vector<std::string> roles);

  static constexpr int kOutside = 0;
  int size() const { return 1 + 2 * static_cast<int>(roles_.size()); }
  int num_roles() const { return static_cast<int>(roles_.size()); }
  const std::vector<std::string>& roles() const { return roles_; }

  int begin_id(int role_index) const { return 1 + 2 * role_index; }
  int inside_id(int role_index) const { return 2 + 2 * role_index; }
  bool is_begin(int label) const { return label > 0 && label % 2 == 1; }
  bool is_inside(int label) const { return label > 0 && label % 2 == 0; }
  // -1 for O.
  int role_of(int label) const { return label == 0 ? -1 : (label - 1) / 2; }
  int find_role(const std::string& role) const;
  const std::string& role_name(int role_index) const { return roles_[role_index]; }
  std::string label_name(int label) const;

 private:
  std::vector<std::string> roles_;
};

// Per-token BIO labels over the flattened conversation.
struct TagSequence {
  std::vector<int> labels;
  int size() const { return static_cast<int>(labels.size()); }
};

enum class UtteranceType { kPredicate = 0, kArgument = 1, kIrrelevant = 2 };

struct CorpusStats {
  int64_t num_dialogs = 0;
  int64_t num_utterances = 0;
  int64_t num_predicates = 0;
  double cross_ratio = 0.0;
};

struct Dataset {
  LabelInventory inventory;
  std::vector<Instance> instances;
};

// Throws CorpusError naming the offending field when an invariant fails;
// 'where' prefixes the message (e.g. "line 3 (id 'd1')").
void validate_instance(const Conversation& conv, const Frame& frame,
                       const LabelInventory& inventory,
                       const std::string& where);

// One JSON object per line; the first line is the {"roles": [...]} header.
Dataset load_corpus(const std::string& path);
void save_corpus(const std::string& path, const Dataset& dataset);
void save_corpus(std::ostream& out, const Dataset& dataset);

TagSequence derive_tags(const Conversation& conv, const Frame& frame,
                        const LabelInventory& inventory);

// Decodes BIO labels to spans. A stray I-X (no matching B-X/I-X directly
// before it in the same utterance) is repaired to B-X, so every label
// sequence decodes.
std::vector<ArgumentSpan> bio_to_spans(const Conversation& conv,
                                       const TagSequence& tags,
                                       const LabelInventory& inventory);

std::vector<UtteranceType> derive_utterance_types(const Conversation& conv,
                                                  const Frame& frame);

CorpusStats stats(const Dataset& dataset);

// Deterministic 3-way partition over distinct dialogue ids; ratios must be
// nonnegative and sum to 1.
struct SplitResult {
  Dataset train, dev, test;
};
SplitResult split(const Dataset& dataset, double train_ratio, double dev_ratio,
                  double test_ratio, uint64_t seed);

}  // namespace convsrl
