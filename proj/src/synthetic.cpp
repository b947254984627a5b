#include "convsrl/synthetic.hpp"

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace convsrl {

namespace {

const std::vector<std::string> kPersons = {"alice", "bob", "carol", "dave"};
const std::vector<std::string> kCrossVerbs = {"returned", "brought", "fetched"};
const std::vector<std::string> kIntraVerbs = {"keeps", "shows", "holds"};
const std::vector<std::string> kThings = {"ball", "book", "lamp",
                                          "cup",  "coin", "vase"};
const std::vector<std::string> kTimes = {"today", "yesterday", "tonight",
                                         "now"};

const std::string& pick(const std::vector<std::string>& pool,
                        std::mt19937_64& rng) {
  return pool[std::uniform_int_distribution<size_t>(0, pool.size() - 1)(rng)];
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& config) {
  if (config.num_dialogs < 1)
    throw std::invalid_argument("synthetic corpus needs at least one dialog");
  if (config.min_utterances < 3)
    throw std::invalid_argument(
        "synthetic dialogs need >= 3 utterances so the hand-off antecedent "
        "exists");
  if (config.max_utterances < config.min_utterances)
    throw std::invalid_argument("max_utterances < min_utterances");
  if (config.cross_prob < 0.0 || config.cross_prob > 1.0)
    throw std::invalid_argument("cross_prob must lie in [0, 1]");

  std::mt19937_64 rng(config.seed);
  Dataset dataset;
  dataset.inventory = LabelInventory({"ARG0", "ARG1", "ARGM-TMP"});

  for (int d = 0; d < config.num_dialogs; ++d) {
    const int num_utts = std::uniform_int_distribution<int>(
        config.min_utterances, config.max_utterances)(rng);

    // Two distinct names, one per speaker, fixed for the whole dialog.
    const std::string name0 = pick(kPersons, rng);
    std::string name1 = pick(kPersons, rng);
    while (name1 == name0) name1 = pick(kPersons, rng);

    Conversation conv;
    conv.id = "synth-" + std::to_string(d);
    conv.num_speakers = 2;
    for (int k = 0; k < num_utts; ++k) {
      Utterance utt;
      utt.index = k;
      utt.speaker = k % 2;
      utt.tokens = {utt.speaker == 0 ? name0 : name1,
                    pick(rng() % 2 == 0 ? kCrossVerbs : kIntraVerbs, rng),
                    "the", pick(kThings, rng), pick(kTimes, rng)};
      conv.utterances.push_back(std::move(utt));
    }

    const int k_p =
        std::uniform_int_distribution<int>(2, num_utts - 1)(rng);
    const bool cross =
        std::uniform_real_distribution<double>(0.0, 1.0)(rng) <
        config.cross_prob;
    conv.utterances[k_p].tokens[1] =
        pick(cross ? kCrossVerbs : kIntraVerbs, rng);

    Frame frame;
    frame.predicate_utt = k_p;
    frame.predicate_start = 1;
    frame.predicate_end = 2;
    frame.arguments = {{k_p, 0, 1, "ARG0"},
                       {cross ? k_p - 2 : k_p, 2, 4, "ARG1"},
                       {k_p, 4, 5, "ARGM-TMP"}};

    validate_instance(conv, frame, dataset.inventory, conv.id);
    dataset.instances.push_back({std::move(conv), std::move(frame)});
  }
  return dataset;
}

}  // namespace convsrl
