#pragma once

// Synthetic dialogue generator with a deterministic argument rule, used by
// the overfit and ablation checks. Each utterance is five tokens
// [person, verb, "the", thing, time] spoken by two alternating speakers.
// The marked predicate's verb class decides where ARG1 lives: hand-off
// verbs (returned/brought/fetched) point two utterances back, local verbs
// (keeps/shows/holds) stay in the predicate's utterance. ARG0 and ARGM-TMP
// are always the local person and time tokens.

#include <cstdint>

#include "convsrl/corpus.hpp"

namespace convsrl {

struct SyntheticConfig {
  int num_dialogs = 50;
  int min_utterances = 3;  // >= 3 so a two-back antecedent always exists
  int max_utterances = 6;
  double cross_prob = 0.6;  // chance the predicate takes a hand-off verb
  uint64_t seed = 0;
};

// Deterministic for a fixed config. Roles are {ARG0, ARG1, ARGM-TMP};
// dialogue ids are "synth-<i>".
Dataset generate_synthetic(const SyntheticConfig& config);

}  // namespace convsrl
