// Command-line front end for the conversational SRL pipeline: corpus
// statistics, synthetic data generation, training, evaluation, ablations,
// gradient checking, and graph inspection.
//
// Exit codes: 0 success, 1 usage error (bad flags, bad config values),
// 2 data or validation error (unreadable corpus, bad checkpoint, failed
// gradient check, training divergence).

#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "convsrl/harness.hpp"
#include "convsrl/synthetic.hpp"
#include "json.hpp"

using namespace convsrl;

namespace {

// ---------------------------------------------------------------------
// Small parsing helpers shared by flags and the key=value config file.

double parse_double(const std::string& text, const std::string& what) {
  try {
    size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("cannot parse " + what + " value '" + text +
                                "' as a number");
  }
}

int64_t parse_int(const std::string& text, const std::string& what) {
  try {
    size_t pos = 0;
    const long long v = std::stoll(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("cannot parse " + what + " value '" + text +
                                "' as an integer");
  }
}

LossWeights parse_loss_weights(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    parts.push_back(parse_double(item, "loss weight"));
  if (parts.size() != 3)
    throw std::invalid_argument("--loss-weights wants exactly three "
                                "comma-separated numbers, got '" +
                                text + "'");
  for (double w : parts)
    if (w < 0.0)
      throw std::invalid_argument("loss weights must be nonnegative");
  return LossWeights{parts[0], parts[1], parts[2]};
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Flat key=value lines; '#' starts a comment, blank lines are skipped.
std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open config file '" + path + "'");
  std::map<std::string, std::string> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line.substr(0, line.find('#')));
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config file line " + std::to_string(lineno) +
                                  " is not key=value: '" + stripped + "'");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config file line " + std::to_string(lineno) +
                                  " has an empty key");
    if (!entries.emplace(key, value).second)
      throw std::invalid_argument("config file repeats key '" + key + "'");
  }
  return entries;
}

// ---------------------------------------------------------------------
// Training flags, resolved with precedence flags > config file > defaults.

struct TrainArgs {
  std::string data, config_path, out, checkpoint, switch_name;
  uint64_t seed = 0;
  int epochs = 0, batch_size = 0, window = 0, d_graph = 0;
  double lr = 0.0;
  std::string loss_weights;

  CLI::Option *seed_opt = nullptr, *epochs_opt = nullptr,
              *batch_opt = nullptr, *lr_opt = nullptr, *window_opt = nullptr,
              *d_graph_opt = nullptr, *weights_opt = nullptr;

  void add_common(CLI::App* cmd) {
    cmd->add_option("--data", data, "corpus file (JSON lines)")->required();
    cmd->add_option("--config", config_path, "flat key=value config file");
    cmd->add_option("--out", out, "output destination (default stdout)");
    seed_opt = cmd->add_option("--seed", seed, "RNG seed");
    epochs_opt = cmd->add_option("--epochs", epochs, "epoch cap");
    batch_opt = cmd->add_option("--batch-size", batch_size, "mini-batch size");
    lr_opt = cmd->add_option("--lr", lr, "learning rate");
    window_opt = cmd->add_option("--window", window, "graph window W");
    d_graph_opt = cmd->add_option("--d-graph", d_graph, "graph feature width");
    weights_opt = cmd->add_option("--loss-weights", loss_weights,
                                  "objective weights a,b,c");
  }

  TrainConfig resolve() const {
    TrainConfig tc;  // defaults
    if (!config_path.empty()) {
      for (const auto& [key, value] : read_config_file(config_path)) {
        if (key == "seed")
          tc.seed = uint64_t(parse_int(value, "seed"));
        else if (key == "epochs")
          tc.max_epochs = int(parse_int(value, "epochs"));
        else if (key == "batch-size")
          tc.batch_size = int(parse_int(value, "batch-size"));
        else if (key == "lr")
          tc.learning_rate = parse_double(value, "lr");
        else if (key == "window")
          tc.model.window = int(parse_int(value, "window"));
        else if (key == "d-graph")
          tc.model.encoder.d_graph = int(parse_int(value, "d-graph"));
        else if (key == "loss-weights")
          tc.loss_weights = parse_loss_weights(value);
        else
          throw std::invalid_argument("unknown config file key '" + key + "'");
      }
    }
    if (seed_opt->count()) tc.seed = seed;
    if (epochs_opt->count()) tc.max_epochs = epochs;
    if (batch_opt->count()) tc.batch_size = batch_size;
    if (lr_opt->count()) tc.learning_rate = lr;
    if (window_opt->count()) tc.model.window = window;
    if (d_graph_opt->count()) tc.model.encoder.d_graph = d_graph;
    if (weights_opt->count()) tc.loss_weights = parse_loss_weights(loss_weights);

    if (tc.max_epochs < 0)
      throw std::invalid_argument("--epochs must be >= 0");
    if (tc.batch_size < 1)
      throw std::invalid_argument("--batch-size must be >= 1");
    if (tc.model.window < 1)
      throw std::invalid_argument("--window must be >= 1");
    if (tc.model.encoder.d_graph < 1)
      throw std::invalid_argument("--d-graph must be >= 1");
    return tc;
  }
};

void with_output(const std::string& out_path,
                 const std::function<void(std::ostream&)>& fn) {
  if (out_path.empty()) {
    fn(std::cout);
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw CorpusError("cannot write output file '" + out_path + "'");
  fn(out);
}

nlohmann::json metrics_json(const Metrics& m) {
  return nlohmann::json::parse(metrics_to_json(m));
}

// Deterministic 80/10/10 split used by train and ablate.
SplitResult split_for_training(const Dataset& dataset, uint64_t seed) {
  SplitResult parts = split(dataset, 0.8, 0.1, 0.1, seed);
  if (parts.train.instances.empty())
    throw CorpusError("the 80% training split is empty; the corpus is too "
                      "small to train on");
  return parts;
}

// ---------------------------------------------------------------------
// Commands.

int cmd_stats(const std::string& data, const std::string& out) {
  const CorpusStats s = stats(load_corpus(data));
  const nlohmann::json doc = {{"num_dialogs", s.num_dialogs},
                              {"num_utterances", s.num_utterances},
                              {"num_predicates", s.num_predicates},
                              {"cross_ratio", s.cross_ratio}};
  with_output(out, [&](std::ostream& os) { os << doc.dump(2) << "\n"; });
  return 0;
}

int cmd_gen_synthetic(uint64_t seed, const std::string& out) {
  SyntheticConfig cfg;
  cfg.seed = seed;
  const Dataset ds = generate_synthetic(cfg);
  with_output(out, [&](std::ostream& os) { save_corpus(os, ds); });
  return 0;
}

int cmd_train(const TrainArgs& args) {
  const TrainConfig tc = args.resolve();
  const SplitResult parts = split_for_training(load_corpus(args.data), tc.seed);
  TrainResult result;
  with_output(args.out, [&](std::ostream& os) {
    result = train(parts.train, parts.dev, tc, &os);
  });
  if (!args.checkpoint.empty()) save_checkpoint(args.checkpoint, result.model);
  std::cerr << "trained " << result.log.size() << " epochs; best dev F1 "
            << result.best_dev_f1 << " at epoch " << result.best_epoch
            << (args.checkpoint.empty()
                    ? std::string()
                    : "; checkpoint written to " + args.checkpoint)
            << "\n";
  return 0;
}

int cmd_eval(const std::string& data, const std::string& checkpoint,
             const std::string& out) {
  const Model model = load_checkpoint(checkpoint);
  const Dataset ds = load_corpus(data);
  const Metrics m = evaluate(model, ds);
  with_output(out, [&](std::ostream& os) { os << metrics_to_json(m) << "\n"; });
  return 0;
}

int cmd_ablate(const TrainArgs& args) {
  const TrainConfig tc = args.resolve();
  if (args.switch_name.empty())
    throw std::invalid_argument("ablate needs --switch");
  const SplitResult parts = split_for_training(load_corpus(args.data), tc.seed);
  const AblationReport rep =
      run_ablation(parts.train, parts.dev, tc, args.switch_name);
  const nlohmann::json doc = {{"switch", rep.switch_name},
                              {"baseline", metrics_json(rep.baseline)},
                              {"ablated", metrics_json(rep.ablated)}};
  with_output(args.out, [&](std::ostream& os) { os << doc.dump(2) << "\n"; });
  return 0;
}

int cmd_grad_check(uint64_t seed, const std::string& out) {
  SyntheticConfig scfg;
  scfg.num_dialogs = 2;
  scfg.seed = seed;
  const Dataset ds = generate_synthetic(scfg);

  ModelConfig mc;
  mc.encoder.d_enc = 8;
  mc.encoder.n_blocks = 1;
  mc.encoder.n_heads = 2;
  mc.encoder.d_ff = 16;
  mc.encoder.d_graph = 6;
  const Model model =
      Model::init(mc, Vocabulary::from_dataset(ds), ds.inventory, seed);
  const Instance& inst = ds.instances[0];

  GradCheckOptions opts;
  opts.max_elements_per_param = 4;
  opts.subsample_seed = seed;
  const GradCheckReport report = grad_check(
      [&] { return model.forward(inst, LossWeights{}, LossOptions{}).loss; },
      model.parameters(), opts);

  nlohmann::json doc;
  doc["ok"] = report.ok;
  doc["max_rel_err"] = report.max_rel_err;
  doc["params"] = nlohmann::json::array();
  for (const auto& e : report.entries)
    doc["params"].push_back({{"name", e.name},
                             {"max_rel_err", e.max_rel_err},
                             {"checked", e.checked},
                             {"ok", e.ok}});
  with_output(out, [&](std::ostream& os) { os << doc.dump(2) << "\n"; });
  return report.ok ? 0 : 2;
}

int cmd_dump_graph(const std::string& data, int window,
                   const std::string& out) {
  if (window < 1) throw std::invalid_argument("--window must be >= 1");
  const Dataset ds = load_corpus(data);
  int num_speakers = 1;
  for (const auto& inst : ds.instances)
    num_speakers = std::max(num_speakers, inst.conv.num_speakers);
  with_output(out, [&](std::ostream& os) {
    for (const auto& inst : ds.instances) {
      const GraphStructure gs = build_graph(
          inst.conv, inst.frame.predicate_utt, window, num_speakers);
      nlohmann::json line;
      line["id"] = inst.conv.id;
      line["graph"] = nlohmann::json::parse(graph_to_json(gs));
      os << line.dump() << "\n";
    }
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conversational semantic role labeling pipeline"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train_cmd =
      app.add_subcommand("train", "train a model on a corpus (80/10/10 split); "
                                  "writes one JSON log line per epoch");
  train_args.add_common(train_cmd);
  train_cmd->add_option("--checkpoint", train_args.checkpoint,
                        "where to save the best-dev model");

  std::string eval_data, eval_checkpoint, eval_out;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "score a checkpoint on a corpus");
  eval_cmd->add_option("--data", eval_data, "corpus file")->required();
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "model checkpoint")
      ->required();
  eval_cmd->add_option("--out", eval_out, "output destination");

  std::string stats_data, stats_out;
  CLI::App* stats_cmd =
      app.add_subcommand("stats", "corpus statistics as JSON");
  stats_cmd->add_option("--data", stats_data, "corpus file")->required();
  stats_cmd->add_option("--out", stats_out, "output destination");

  TrainArgs ablate_args;
  CLI::App* ablate_cmd = app.add_subcommand(
      "ablate", "train baseline and ablated variants, report both");
  ablate_args.add_common(ablate_cmd);
  ablate_cmd->add_option("--switch", ablate_args.switch_name, "ablation switch")
      ->required();

  uint64_t gc_seed = 0;
  std::string gc_out;
  CLI::App* gc_cmd = app.add_subcommand(
      "grad-check", "finite-difference check of the full pipeline gradients");
  gc_cmd->add_option("--seed", gc_seed, "RNG seed");
  gc_cmd->add_option("--out", gc_out, "output destination");

  std::string dg_data, dg_out;
  int dg_window = 4;
  CLI::App* dg_cmd = app.add_subcommand(
      "dump-graph", "per-instance utterance graph structure as JSON lines");
  dg_cmd->add_option("--data", dg_data, "corpus file")->required();
  dg_cmd->add_option("--window", dg_window, "graph window W");
  dg_cmd->add_option("--out", dg_out, "output destination");

  uint64_t gs_seed = 0;
  std::string gs_out;
  CLI::App* gs_cmd = app.add_subcommand(
      "gen-synthetic", "emit a deterministic synthetic corpus");
  gs_cmd->add_option("--seed", gs_seed, "RNG seed");
  gs_cmd->add_option("--out", gs_out, "output destination");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // --help exits 0, anything else is usage
  }

  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*eval_cmd) return cmd_eval(eval_data, eval_checkpoint, eval_out);
    if (*stats_cmd) return cmd_stats(stats_data, stats_out);
    if (*ablate_cmd) return cmd_ablate(ablate_args);
    if (*gc_cmd) return cmd_grad_check(gc_seed, gc_out);
    if (*dg_cmd) return cmd_dump_graph(dg_data, dg_window, dg_out);
    if (*gs_cmd) return cmd_gen_synthetic(gs_seed, gs_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
