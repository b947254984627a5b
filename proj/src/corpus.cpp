#include "convsrl/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace convsrl {

using nlohmann::json;

int Conversation::total_tokens() const {
  int n = 0;
  for (const auto& u : utterances) n += static_cast<int>(u.tokens.size());
  return n;
}

int Conversation::flat_offset(int k) const {
  int off = 0;
  for (int i = 0; i < k; ++i) off += static_cast<int>(utterances[i].tokens.size());
  return off;
}

std::vector<int> Conversation::token_utterances() const {
  std::vector<int> ids;
  ids.reserve(total_tokens());
  for (const auto& u : utterances)
    ids.insert(ids.end(), u.tokens.size(), u.index);
  return ids;
}

LabelInventory::LabelInventory(std::vector<std::string> roles)
    : roles_(std::move(roles)) {}

int LabelInventory::find_role(const std::string& role) const {
  for (size_t i = 0; i < roles_.size(); ++i)
    if (roles_[i] == role) return static_cast<int>(i);
  return -1;
}

std::string LabelInventory::label_name(int label) const {
  if (label == kOutside) return "O";
  const int r = role_of(label);
  return (is_begin(label) ? "B-" : "I-") + roles_[r];
}

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& msg) {
  throw CorpusError(where + ": " + msg);
}

void check_span(const std::string& where, const std::string& field,
                const Conversation& conv, int utt, int start, int end) {
  if (utt < 0 || utt >= conv.num_utterances())
    bad(where, field + ": utterance index " + std::to_string(utt) +
                   " out of range [0," + std::to_string(conv.num_utterances()) +
                   ")");
  const int len = static_cast<int>(conv.utterances[utt].tokens.size());
  if (start < 0 || end > len || start >= end)
    bad(where, field + ": span [" + std::to_string(start) + "," +
                   std::to_string(end) + ") invalid for utterance " +
                   std::to_string(utt) + " of length " + std::to_string(len));
}

bool overlaps(int a0, int a1, int b0, int b1) { return a0 < b1 && b0 < a1; }

}  // namespace

void validate_instance(const Conversation& conv, const Frame& frame,
                       const LabelInventory& inventory,
                       const std::string& where) {
  if (conv.utterances.empty()) bad(where, "utterances: empty conversation");
  if (conv.num_speakers < 1) bad(where, "num_speakers: must be >= 1");
  for (size_t k = 0; k < conv.utterances.size(); ++k) {
    const auto& u = conv.utterances[k];
    if (u.index != static_cast<int>(k))
      bad(where, "utterances: index " + std::to_string(u.index) +
                     " at position " + std::to_string(k) + " is not contiguous");
    if (u.tokens.empty())
      bad(where, "utterances: utterance " + std::to_string(k) + " has no tokens");
    if (u.speaker < 0 || u.speaker >= conv.num_speakers)
      bad(where, "speakers: speaker " + std::to_string(u.speaker) +
                     " of utterance " + std::to_string(k) + " not in [0," +
                     std::to_string(conv.num_speakers) + ")");
  }
  check_span(where, "predicate", conv, frame.predicate_utt,
             frame.predicate_start, frame.predicate_end);
  for (size_t a = 0; a < frame.arguments.size(); ++a) {
    const auto& arg = frame.arguments[a];
    const std::string field = "arguments[" + std::to_string(a) + "]";
    check_span(where, field, conv, arg.utt_index, arg.start, arg.end);
    if (inventory.find_role(arg.role) < 0)
      bad(where, field + ": role '" + arg.role + "' not in the dataset header");
    if (arg.utt_index == frame.predicate_utt &&
        overlaps(arg.start, arg.end, frame.predicate_start, frame.predicate_end))
      bad(where, field + ": overlaps the predicate span");
    for (size_t b = 0; b < a; ++b) {
      const auto& other = frame.arguments[b];
      if (other.utt_index == arg.utt_index &&
          overlaps(arg.start, arg.end, other.start, other.end))
        bad(where, field + ": overlaps arguments[" + std::to_string(b) + "]");
    }
  }
}

namespace {

Instance parse_instance(const json& j, const LabelInventory& inventory,
                        const std::string& where) {
  Instance inst;
  try {
    inst.conv.id = j.at("id").get<std::string>();
  } catch (const json::exception& e) {
    bad(where, std::string("id: ") + e.what());
  }
  const std::string where_id = where + " (id '" + inst.conv.id + "')";
  try {
    const auto& speakers = j.at("speakers");
    const auto& utterances = j.at("utterances");
    if (speakers.size() != utterances.size())
      bad(where_id, "speakers: length " + std::to_string(speakers.size()) +
                        " does not match " + std::to_string(utterances.size()) +
                        " utterances");
    int max_speaker = 0;
    for (size_t k = 0; k < utterances.size(); ++k) {
      Utterance u;
      u.index = static_cast<int>(k);
      u.speaker = speakers.at(k).get<int>();
      max_speaker = std::max(max_speaker, u.speaker);
      for (const auto& tok : utterances.at(k))
        u.tokens.push_back(tok.get<std::string>());
      inst.conv.utterances.push_back(std::move(u));
    }
    inst.conv.num_speakers = max_speaker + 1;
    const auto& pred = j.at("predicate");
    inst.frame.predicate_utt = pred.at("utt").get<int>();
    inst.frame.predicate_start = pred.at("start").get<int>();
    inst.frame.predicate_end = pred.at("end").get<int>();
    for (const auto& a : j.at("arguments")) {
      ArgumentSpan span;
      span.utt_index = a.at("utt").get<int>();
      span.start = a.at("start").get<int>();
      span.end = a.at("end").get<int>();
      span.role = a.at("role").get<std::string>();
      inst.frame.arguments.push_back(std::move(span));
    }
  } catch (const CorpusError&) {
    throw;
  } catch (const json::exception& e) {
    bad(where_id, e.what());
  }
  validate_instance(inst.conv, inst.frame, inventory, where_id);
  return inst;
}

}  // namespace

Dataset load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus file: " + path);
  Dataset dataset;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      bad(where, std::string("parse error: ") + e.what());
    }
    if (!have_header) {
      if (!j.contains("roles"))
        bad(where, "expected the dataset header {\"roles\": [...]}");
      std::vector<std::string> roles;
      try {
        for (const auto& r : j.at("roles")) roles.push_back(r.get<std::string>());
      } catch (const json::exception& e) {
        bad(where, std::string("roles: ") + e.what());
      }
      if (roles.empty()) bad(where, "roles: empty inventory");
      std::unordered_set<std::string> seen;
      for (const auto& r : roles)
        if (!seen.insert(r).second) bad(where, "roles: duplicate '" + r + "'");
      dataset.inventory = LabelInventory(std::move(roles));
      have_header = true;
      continue;
    }
    dataset.instances.push_back(parse_instance(j, dataset.inventory, where));
  }
  if (!have_header) throw CorpusError(path + ": missing dataset header line");
  return dataset;
}

void save_corpus(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write corpus file: " + path);
  save_corpus(out, dataset);
}

void save_corpus(std::ostream& out, const Dataset& dataset) {
  json header;
  header["roles"] = dataset.inventory.roles();
  out << header.dump() << "\n";
  for (const auto& inst : dataset.instances) {
    json j;
    j["id"] = inst.conv.id;
    json speakers = json::array(), utterances = json::array();
    for (const auto& u : inst.conv.utterances) {
      speakers.push_back(u.speaker);
      utterances.push_back(u.tokens);
    }
    j["speakers"] = std::move(speakers);
    j["utterances"] = std::move(utterances);
    j["predicate"] = {{"utt", inst.frame.predicate_utt},
                      {"start", inst.frame.predicate_start},
                      {"end", inst.frame.predicate_end}};
    json args = json::array();
    for (const auto& a : inst.frame.arguments)
      args.push_back({{"utt", a.utt_index},
                      {"start", a.start},
                      {"end", a.end},
                      {"role", a.role}});
    j["arguments"] = std::move(args);
    out << j.dump() << "\n";
  }
}

TagSequence derive_tags(const Conversation& conv, const Frame& frame,
                        const LabelInventory& inventory) {
  TagSequence tags;
  tags.labels.assign(conv.total_tokens(), LabelInventory::kOutside);
  for (const auto& arg : frame.arguments) {
    const int role = inventory.find_role(arg.role);
    if (role < 0)
      throw CorpusError("derive_tags: role '" + arg.role +
                        "' not in the inventory");
    const int base = conv.flat_offset(arg.utt_index);
    tags.labels[base + arg.start] = inventory.begin_id(role);
    for (int t = arg.start + 1; t < arg.end; ++t)
      tags.labels[base + t] = inventory.inside_id(role);
  }
  return tags;
}

std::vector<ArgumentSpan> bio_to_spans(const Conversation& conv,
                                       const TagSequence& tags,
                                       const LabelInventory& inventory) {
  if (tags.size() != conv.total_tokens())
    throw CorpusError("bio_to_spans: tag length " + std::to_string(tags.size()) +
                      " does not match " + std::to_string(conv.total_tokens()) +
                      " tokens");
  const std::vector<int> token_utt = conv.token_utterances();
  std::vector<ArgumentSpan> spans;
  int open_role = -1;   // role index of the span being built
  int open_start = -1;  // flat start
  auto close_span = [&](int flat_end) {
    if (open_role < 0) return;
    const int utt = token_utt[open_start];
    const int base = conv.flat_offset(utt);
    spans.push_back({utt, open_start - base, flat_end - base,
                     inventory.role_name(open_role)});
    open_role = -1;
  };
  for (int t = 0; t < tags.size(); ++t) {
    const int label = tags.labels[t];
    const bool boundary = t > 0 && token_utt[t] != token_utt[t - 1];
    if (label == LabelInventory::kOutside) {
      close_span(t);
      continue;
    }
    const int role = inventory.role_of(label);
    if (inventory.is_begin(label)) {
      close_span(t);
      open_role = role;
      open_start = t;
    } else {  // inside
      const bool continues = open_role == role && !boundary;
      if (!continues) {
        // stray I-X: repaired to B-X
        close_span(t);
        open_role = role;
        open_start = t;
      }
    }
  }
  close_span(tags.size());
  std::sort(spans.begin(), spans.end());
  return spans;
}

std::vector<UtteranceType> derive_utterance_types(const Conversation& conv,
                                                  const Frame& frame) {
  std::vector<UtteranceType> types(conv.num_utterances(),
                                   UtteranceType::kIrrelevant);
  for (const auto& arg : frame.arguments)
    types[arg.utt_index] = UtteranceType::kArgument;
  types[frame.predicate_utt] = UtteranceType::kPredicate;
  return types;
}

CorpusStats stats(const Dataset& dataset) {
  if (dataset.instances.empty()) throw CorpusError("stats: empty dataset");
  CorpusStats s;
  std::unordered_set<std::string> seen_ids;
  int64_t num_args = 0, num_cross = 0;
  for (const auto& inst : dataset.instances) {
    ++s.num_predicates;
    if (seen_ids.insert(inst.conv.id).second) {
      ++s.num_dialogs;
      s.num_utterances += inst.conv.num_utterances();
    }
    for (const auto& arg : inst.frame.arguments) {
      ++num_args;
      if (arg.utt_index != inst.frame.predicate_utt) ++num_cross;
    }
  }
  s.cross_ratio =
      num_args == 0 ? 0.0 : static_cast<double>(num_cross) / num_args;
  return s;
}

SplitResult split(const Dataset& dataset, double train_ratio, double dev_ratio,
                  double test_ratio, uint64_t seed) {
  if (train_ratio < 0 || dev_ratio < 0 || test_ratio < 0)
    throw CorpusError("split: negative ratio");
  if (std::abs(train_ratio + dev_ratio + test_ratio - 1.0) > 1e-9)
    throw CorpusError("split: ratios must sum to 1");
  // Group instances by dialogue id, keeping first-appearance order.
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::vector<size_t>> groups;
  for (size_t i = 0; i < dataset.instances.size(); ++i) {
    const auto& id = dataset.instances[i].conv.id;
    if (!groups.count(id)) ids.push_back(id);
    groups[id].push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto g = static_cast<int64_t>(ids.size());
  const auto n_train = static_cast<int64_t>(train_ratio * g);
  const auto n_dev = static_cast<int64_t>(dev_ratio * g);
  SplitResult result;
  result.train.inventory = dataset.inventory;
  result.dev.inventory = dataset.inventory;
  result.test.inventory = dataset.inventory;
  for (int64_t i = 0; i < g; ++i) {
    Dataset* target = i < n_train             ? &result.train
                      : i < n_train + n_dev   ? &result.dev
                                              : &result.test;
    for (size_t idx : groups[ids[i]])
      target->instances.push_back(dataset.instances[idx]);
  }
  return result;
}

}  // namespace convsrl
