#include "convsrl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace convsrl {

namespace {

constexpr const char* kCheckpointMagic = "convsrl-checkpoint";
constexpr int kCheckpointVersion = 1;

void finalize(PRF& prf) {
  const double p_den = double(prf.tp + prf.fp);
  const double r_den = double(prf.tp + prf.fn);
  prf.precision = p_den > 0.0 ? prf.tp / p_den : 0.0;
  prf.recall = r_den > 0.0 ? prf.tp / r_den : 0.0;
  prf.f1 = (prf.precision + prf.recall) > 0.0
               ? 2.0 * prf.precision * prf.recall / (prf.precision + prf.recall)
               : 0.0;
}

nlohmann::json prf_to_json(const PRF& prf) {
  return {{"precision", prf.precision}, {"recall", prf.recall},
          {"f1", prf.f1},             {"tp", prf.tp},
          {"fp", prf.fp},             {"fn", prf.fn}};
}

int max_speakers(const Dataset& dataset) {
  int m = 1;
  for (const auto& inst : dataset.instances)
    m = std::max(m, inst.conv.num_speakers);
  return m;
}

}  // namespace

int ModelConfig::num_relations() const {
  const int speaker_part =
      ablation.no_speaker_dep ? 1 : num_speakers * num_speakers;
  return speaker_part * (ablation.no_predicate_dep ? 1 : 2);
}

Model Model::init(const ModelConfig& config, const Vocabulary& vocab,
                  const LabelInventory& inventory, uint64_t seed) {
  if (config.num_speakers < 1)
    throw std::invalid_argument("model needs at least one speaker");
  if (inventory.num_roles() < 1)
    throw std::invalid_argument("model needs a nonempty role inventory");
  std::mt19937_64 rng(seed);
  Model model;
  model.config = config;
  model.vocab = vocab;
  model.inventory = inventory;
  model.encoder = EncoderParams::init(config.encoder, vocab.size(), rng);
  model.graph = GraphParams::init(config.encoder.d_graph,
                                  config.num_relations(),
                                  config.learnable_norm, rng);
  model.heads = HeadParams::init(config.encoder.d_enc, config.encoder.d_graph,
                                 inventory.size(), rng);
  return model;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out = encoder.parameters();
  for (const auto& t : graph.parameters()) out.push_back(t);
  for (const auto& t : heads.parameters()) out.push_back(t);
  return out;
}

LossWeights Model::effective_weights(const LossWeights& weights) const {
  LossWeights ew = weights;
  if (config.ablation.srl_only) ew = {1.0, 0.0, 0.0};
  if (config.ablation.no_intra_obj) ew.intra = 0.0;
  if (config.ablation.no_ut_obj) ew.ut = 0.0;
  return ew;
}

GraphStructure Model::instance_graph(const Conversation& conv,
                                     int predicate_utt) const {
  GraphStructure gs =
      build_graph(conv, predicate_utt, config.window, config.num_speakers);
  if (config.ablation.no_speaker_dep) gs = ablate(gs, "no_speaker_dep");
  if (config.ablation.no_predicate_dep) gs = ablate(gs, "no_predicate_dep");
  return gs;
}

Model::Forward Model::forward(const Instance& inst, const LossWeights& weights,
                              const LossOptions& options) const {
  Forward f;
  EncodeOptions eo;
  eo.full_attention = config.ablation.full_attention;
  eo.bypass_attention = config.ablation.no_predicate_rep;
  const EncoderOutput enc =
      encode(inst.conv, inst.frame, encoder, vocab, eo);
  f.e = enc.token_embed;
  f.p = enc.predicate_aware;
  f.g = enc.utterance_nodes;
  if (config.ablation.no_sagn) {
    f.h = f.g;
  } else {
    const GraphStructure gs =
        instance_graph(inst.conv, inst.frame.predicate_utt);
    f.h = run_graph(f.g, gs, graph).h;
  }

  const LossWeights ew = effective_weights(weights);
  const TagSequence tags = derive_tags(inst.conv, inst.frame, inventory);
  if (ew.srl > 0.0)
    f.l_srl = srl_loss(f.p, f.h, inst.conv, tags, heads, options);
  if (ew.intra > 0.0)
    f.l_intra = intra_loss(f.e, f.p, tags,
                           intra_argument_mask(inst.conv, inst.frame), heads,
                           options);
  if (ew.ut > 0.0)
    f.l_ut = utterance_type_loss(
        f.g, f.h, derive_utterance_types(inst.conv, inst.frame), heads);

  auto or_zero = [](const Tensor& t) {
    return t.defined() ? t : Tensor::scalar(0.0);
  };
  f.loss = total_loss(or_zero(f.l_srl), or_zero(f.l_intra), or_zero(f.l_ut), ew);
  return f;
}

std::vector<ArgumentSpan> Model::predict(const Instance& inst) const {
  EncodeOptions eo;
  eo.full_attention = config.ablation.full_attention;
  eo.bypass_attention = config.ablation.no_predicate_rep;
  const EncoderOutput enc = encode(inst.conv, inst.frame, encoder, vocab, eo);
  Tensor h = enc.utterance_nodes;
  if (!config.ablation.no_sagn) {
    const GraphStructure gs =
        instance_graph(inst.conv, inst.frame.predicate_utt);
    h = run_graph(enc.utterance_nodes, gs, graph).h;
  }
  const TagSequence tags = decode(enc.predicate_aware, h, inst.conv, heads);
  return bio_to_spans(inst.conv, tags, inventory);
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, double learning_rate,
                             double clip_norm, double beta1, double beta2,
                             double eps)
    : params_(std::move(params)),
      lr_(learning_rate),
      clip_(clip_norm),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void AdamOptimizer::step() {
  double norm_sq = 0.0;
  for (const auto& p : params_)
    for (double g : p.grad()) norm_sq += g * g;
  const double norm = std::sqrt(norm_sq);
  const double scale = (clip_ > 0.0 && norm > clip_) ? clip_ / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, double(t_));
  const double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& values = params_[i].values();
    const auto& grad = params_[i].grad();
    if (grad.empty()) continue;  // parameter untouched by this step's graph
    for (size_t j = 0; j < values.size(); ++j) {
      const double g = grad[j] * scale;
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
      const double m_hat = m_[i][j] / bc1;
      const double v_hat = v_[i][j] / bc2;
      values[j] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

void tally_spans(const std::vector<ArgumentSpan>& predicted,
                 const std::vector<ArgumentSpan>& gold, int predicate_utt,
                 Metrics& metrics) {
  auto dedupe = [](std::vector<ArgumentSpan> spans) {
    std::sort(spans.begin(), spans.end());
    spans.erase(std::unique(spans.begin(), spans.end()), spans.end());
    return spans;
  };
  const std::vector<ArgumentSpan> p = dedupe(predicted);
  const std::vector<ArgumentSpan> g = dedupe(gold);
  auto side_of = [&](const ArgumentSpan& span) -> PRF& {
    return span.utt_index == predicate_utt ? metrics.intra : metrics.cross;
  };
  for (const auto& span : p) {
    if (std::binary_search(g.begin(), g.end(), span)) {
      ++metrics.all.tp;
      ++side_of(span).tp;
    } else {
      ++metrics.all.fp;
      ++side_of(span).fp;
    }
  }
  for (const auto& span : g) {
    if (std::binary_search(p.begin(), p.end(), span)) continue;
    ++metrics.all.fn;
    ++side_of(span).fn;
  }
}

void finalize_metrics(Metrics& metrics) {
  finalize(metrics.all);
  finalize(metrics.intra);
  finalize(metrics.cross);
}

Metrics evaluate(const Model& model, const Dataset& dataset) {
  Metrics metrics;
  for (const auto& inst : dataset.instances)
    tally_spans(model.predict(inst), inst.frame.arguments,
                inst.frame.predicate_utt, metrics);
  finalize_metrics(metrics);
  return metrics;
}

std::string metrics_to_json(const Metrics& metrics) {
  const nlohmann::json doc = {{"all", prf_to_json(metrics.all)},
                              {"intra", prf_to_json(metrics.intra)},
                              {"cross", prf_to_json(metrics.cross)}};
  return doc.dump(2);
}

std::string predictions_to_jsonl(const Model& model, const Dataset& dataset) {
  std::string out;
  for (const auto& inst : dataset.instances) {
    nlohmann::json line;
    line["id"] = inst.conv.id;
    line["predicate"] = {{"utt", inst.frame.predicate_utt},
                         {"start", inst.frame.predicate_start},
                         {"end", inst.frame.predicate_end}};
    line["arguments"] = nlohmann::json::array();
    for (const auto& span : model.predict(inst))
      line["arguments"].push_back({{"utt", span.utt_index},
                                   {"start", span.start},
                                   {"end", span.end},
                                   {"role", span.role}});
    out += line.dump();
    out += '\n';
  }
  return out;
}

TrainResult train(const Dataset& train_set, const Dataset& dev_set,
                  const TrainConfig& config, std::ostream* log_stream) {
  if (train_set.instances.empty())
    throw std::invalid_argument("training requires a nonempty train set");
  if (config.batch_size < 1)
    throw std::invalid_argument("batch size must be >= 1");
  if (config.max_epochs < 0)
    throw std::invalid_argument("epoch count must be >= 0");

  ModelConfig mc = config.model;
  mc.num_speakers = std::max({mc.num_speakers, max_speakers(train_set),
                              max_speakers(dev_set)});
  const Vocabulary vocab = Vocabulary::from_dataset(train_set);

  TrainResult result;
  result.model = Model::init(mc, vocab, train_set.inventory, config.seed);
  Model& model = result.model;

  AdamOptimizer optimizer(model.parameters(), config.learning_rate,
                          config.clip_norm);
  std::mt19937_64 shuffle_rng(config.seed ^ 0x5eedf00dULL);
  const int n = static_cast<int>(train_set.instances.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  std::vector<std::vector<double>> best_values;
  std::vector<Tensor> params = model.parameters();
  auto snapshot = [&]() {
    best_values.clear();
    for (const auto& p : params) best_values.push_back(p.values());
  };
  auto restore = [&]() {
    for (size_t i = 0; i < params.size(); ++i)
      params[i].values() = best_values[i];
  };

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double sum_srl = 0.0, sum_intra = 0.0, sum_ut = 0.0;
    for (int start = 0; start < n; start += config.batch_size) {
      const int batch = std::min(config.batch_size, n - start);
      optimizer.zero_grad();
      for (int b = 0; b < batch; ++b) {
        const Instance& inst = train_set.instances[order[start + b]];
        const Model::Forward f =
            model.forward(inst, config.loss_weights, config.loss_options);
        const double value = f.loss.item();
        if (!std::isfinite(value))
          throw std::runtime_error(
              "training diverged at epoch " + std::to_string(epoch) +
              " on instance '" + inst.conv.id + "' (loss = " +
              std::to_string(value) + ")");
        if (f.l_srl.defined()) sum_srl += f.l_srl.item();
        if (f.l_intra.defined()) sum_intra += f.l_intra.item();
        if (f.l_ut.defined()) sum_ut += f.l_ut.item();
        backward(scalar_scale(f.loss, 1.0 / batch));
      }
      optimizer.step();
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.l_srl = sum_srl / n;
    entry.l_intra = sum_intra / n;
    entry.l_ut = sum_ut / n;
    if (!dev_set.instances.empty()) entry.dev = evaluate(model, dev_set);
    result.log.push_back(entry);

    if (log_stream) {
      const nlohmann::json line = {
          {"epoch", entry.epoch},
          {"l_srl", entry.l_srl},
          {"l_intra", entry.l_intra},
          {"l_ut", entry.l_ut},
          {"dev",
           {{"f1_all", entry.dev.all.f1},
            {"f1_intra", entry.dev.intra.f1},
            {"f1_cross", entry.dev.cross.f1}}}};
      (*log_stream) << line.dump() << '\n';
    }

    if (!dev_set.instances.empty()) {
      if (entry.dev.all.f1 > result.best_dev_f1 + 1e-12 ||
          result.best_epoch < 0) {
        result.best_dev_f1 = entry.dev.all.f1;
        result.best_epoch = epoch;
        snapshot();
      } else if (epoch - result.best_epoch >= config.patience) {
        break;
      }
    }
    if (config.stop_at_train_f1 >= 0.0 &&
        evaluate(model, train_set).all.f1 >= config.stop_at_train_f1)
      break;
  }

  if (!best_values.empty()) restore();
  return result;
}

const std::vector<std::string>& ablation_switch_names() {
  static const std::vector<std::string> names{
      "full_attention",  "no_sagn",     "no_predicate_rep",
      "no_speaker_dep",  "no_predicate_dep", "srl_only",
      "no_intra_obj",    "no_ut_obj"};
  return names;
}

TrainConfig apply_ablation_switch(TrainConfig config,
                                  const std::string& switch_name) {
  AblationSwitches& s = config.model.ablation;
  if (switch_name == "full_attention")
    s.full_attention = true;
  else if (switch_name == "no_sagn")
    s.no_sagn = true;
  else if (switch_name == "no_predicate_rep")
    s.no_predicate_rep = true;
  else if (switch_name == "no_speaker_dep")
    s.no_speaker_dep = true;
  else if (switch_name == "no_predicate_dep")
    s.no_predicate_dep = true;
  else if (switch_name == "srl_only")
    s.srl_only = true;
  else if (switch_name == "no_intra_obj")
    s.no_intra_obj = true;
  else if (switch_name == "no_ut_obj")
    s.no_ut_obj = true;
  else {
    std::string valid;
    for (const auto& name : ablation_switch_names())
      valid += (valid.empty() ? "" : ", ") + name;
    throw std::invalid_argument("unknown ablation switch '" + switch_name +
                                "' (one of: " + valid + ")");
  }
  return config;
}

AblationReport run_ablation(const Dataset& train_set, const Dataset& dev_set,
                            const TrainConfig& config,
                            const std::string& switch_name,
                            std::ostream* log_stream) {
  const TrainConfig switched = apply_ablation_switch(config, switch_name);
  AblationReport report;
  report.switch_name = switch_name;
  report.baseline = evaluate(train(train_set, dev_set, config, log_stream).model,
                             dev_set);
  report.ablated =
      evaluate(train(train_set, dev_set, switched, log_stream).model, dev_set);
  return report;
}

void save_checkpoint(const std::string& path, const Model& model) {
  nlohmann::json doc;
  doc["magic"] = kCheckpointMagic;
  doc["version"] = kCheckpointVersion;
  const ModelConfig& mc = model.config;
  doc["model"] = {{"d_enc", mc.encoder.d_enc},
                  {"n_blocks", mc.encoder.n_blocks},
                  {"n_heads", mc.encoder.n_heads},
                  {"d_ff", mc.encoder.d_ff},
                  {"d_graph", mc.encoder.d_graph},
                  {"max_len", mc.encoder.max_len},
                  {"window", mc.window},
                  {"num_speakers", mc.num_speakers},
                  {"learnable_norm", mc.learnable_norm},
                  {"ablation",
                   {{"full_attention", mc.ablation.full_attention},
                    {"no_sagn", mc.ablation.no_sagn},
                    {"no_predicate_rep", mc.ablation.no_predicate_rep},
                    {"no_speaker_dep", mc.ablation.no_speaker_dep},
                    {"no_predicate_dep", mc.ablation.no_predicate_dep},
                    {"srl_only", mc.ablation.srl_only},
                    {"no_intra_obj", mc.ablation.no_intra_obj},
                    {"no_ut_obj", mc.ablation.no_ut_obj}}}};
  doc["vocab"] = model.vocab.tokens();
  doc["roles"] = model.inventory.roles();
  doc["params"] = nlohmann::json::array();
  for (const auto& p : model.parameters())
    doc["params"].push_back(
        {{"name", p.name()}, {"shape", p.shape()}, {"values", p.values()}});

  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write checkpoint '" + path + "'");
  out << doc.dump();
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open checkpoint '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw CorpusError("checkpoint '" + path + "' is not valid JSON: " +
                      e.what());
  }
  if (!doc.contains("magic") || doc["magic"] != kCheckpointMagic)
    throw CorpusError("checkpoint '" + path + "' lacks the expected header");
  if (!doc.contains("version") || doc["version"] != kCheckpointVersion)
    throw CorpusError("checkpoint '" + path + "' has unsupported version");

  ModelConfig mc;
  const auto& m = doc.at("model");
  mc.encoder.d_enc = m.at("d_enc");
  mc.encoder.n_blocks = m.at("n_blocks");
  mc.encoder.n_heads = m.at("n_heads");
  mc.encoder.d_ff = m.at("d_ff");
  mc.encoder.d_graph = m.at("d_graph");
  mc.encoder.max_len = m.at("max_len");
  mc.window = m.at("window");
  mc.num_speakers = m.at("num_speakers");
  mc.learnable_norm = m.at("learnable_norm");
  const auto& ab = m.at("ablation");
  mc.ablation.full_attention = ab.at("full_attention");
  mc.ablation.no_sagn = ab.at("no_sagn");
  mc.ablation.no_predicate_rep = ab.at("no_predicate_rep");
  mc.ablation.no_speaker_dep = ab.at("no_speaker_dep");
  mc.ablation.no_predicate_dep = ab.at("no_predicate_dep");
  mc.ablation.srl_only = ab.at("srl_only");
  mc.ablation.no_intra_obj = ab.at("no_intra_obj");
  mc.ablation.no_ut_obj = ab.at("no_ut_obj");

  const Vocabulary vocab = Vocabulary::from_tokens(
      doc.at("vocab").get<std::vector<std::string>>());
  const LabelInventory inventory(
      doc.at("roles").get<std::vector<std::string>>());

  Model model = Model::init(mc, vocab, inventory, 0);
  std::vector<Tensor> params = model.parameters();
  size_t loaded = 0;
  for (const auto& entry : doc.at("params")) {
    const std::string name = entry.at("name");
    bool found = false;
    for (auto& p : params) {
      if (p.name() != name) continue;
      const Shape shape = entry.at("shape").get<Shape>();
      if (shape != p.shape())
        throw CorpusError("checkpoint parameter '" + name + "' has shape " +
                          shape_str(shape) + ", model expects " +
                          shape_str(p.shape()));
      p.values() = entry.at("values").get<std::vector<double>>();
      if (static_cast<int64_t>(p.values().size()) != p.numel())
        throw CorpusError("checkpoint parameter '" + name +
                          "' has the wrong element count");
      found = true;
      ++loaded;
      break;
    }
    if (!found)
      throw CorpusError("checkpoint parameter '" + name +
                        "' does not exist in the rebuilt model");
  }
  if (loaded != params.size())
    throw CorpusError("checkpoint '" + path + "' carries " +
                      std::to_string(loaded) + " of " +
                      std::to_string(params.size()) + " model parameters");
  return model;
}

}  // namespace convsrl
