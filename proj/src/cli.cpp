#include <functional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "dncbm/error.hpp"
#include "dncbm/pipeline.hpp"

namespace dncbm::pipeline {

namespace {

using Command = std::function<void(const Options&, std::ostream&)>;

struct Subcommand {
  const char* name;
  const char* help;
  Command run;
  std::vector<std::string> flags;
};

void add_path(CLI::App* sub, const std::string& flag, std::optional<fs::path>& target, const char* help) {
  sub->add_option("--" + flag, target, help);
}

void emit_error(std::ostream& err, std::string_view kind, std::string_view message) {
  nlohmann::json j{{"error", kind}, {"message", message}};
  err << j.dump() << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse-autoencoder concept bottleneck toolkit"};
  app.name("dncbm");
  app.require_subcommand(1);

  Options opts;
  const std::vector<Subcommand> commands{
      {"train-sae", "Train a sparse autoencoder on image features", train_sae, {"config", "features", "out", "seed"}},
      {"name", "Name every concept against a vocabulary", name, {"config", "checkpoint", "vocab", "out", "seed"}},
      {"train-probe", "Train the linear probe on concept activations", train_probe,
       {"config", "checkpoint", "features", "classes", "out", "seed"}},
      {"explain", "Local and class-level concept explanations", explain,
       {"config", "checkpoint", "probe", "features", "vocab", "out", "seed"}},
      {"intervene", "Edit probe weights for a set of concepts", intervene,
       {"config", "probe", "spec", "checkpoint", "vocab", "features", "groups", "out", "seed"}},
      {"eval-accuracy", "Overall and per-group probe accuracy", eval_accuracy,
       {"config", "checkpoint", "probe", "features", "groups", "out", "seed"}},
      {"eval-jaccard", "Attribute-match Jaccard of named concepts", eval_jaccard,
       {"config", "checkpoint", "vocab", "features", "attributes", "split", "out", "seed"}},
      {"cluster", "k-means over concept activations", cluster,
       {"config", "checkpoint", "vocab", "features", "out", "seed"}},
      {"sweep", "Hyperparameter sweep with held-out selection", sweep,
       {"config", "features", "text-embeddings", "split", "out", "seed"}},
  };

  const std::map<std::string, std::pair<std::optional<fs::path>*, const char*>> paths{
      {"config", {&opts.config, "Run configuration file"}},
      {"features", {&opts.features, "Feature file"}},
      {"vocab", {&opts.vocab, "Vocabulary file"}},
      {"checkpoint", {&opts.checkpoint, "SAE checkpoint"}},
      {"probe", {&opts.probe, "Probe file"}},
      {"out", {&opts.out, "Output directory"}},
      {"text-embeddings", {&opts.text_embeddings, "Class text embeddings (feature file)"}},
      {"spec", {&opts.spec, "Intervention spec"}},
      {"split", {&opts.split, "Held-out sample indices"}},
      {"groups", {&opts.groups, "Per-sample group ids"}},
      {"attributes", {&opts.attributes, "Ground-truth attribute matrix (feature file)"}},
      {"classes", {&opts.classes, "Class names, one per line"}},
  };

  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    for (const auto& flag : c.flags) {
      if (flag == "seed") {
        sub->add_option("--seed", opts.seed, "Master seed (overrides the config)");
      } else {
        const auto& [target, help] = paths.at(flag);
        add_path(sub, flag, *target, help);
      }
    }
    subs.emplace_back(sub, &c.run);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    emit_error(err, "usage", e.what());
    return 2;
  }

  for (const auto& [sub, run] : subs) {
    if (!sub->parsed()) continue;
    try {
      (*run)(opts, out);
      return 0;
    } catch (const Error& e) {
      emit_error(err, to_string(e.kind()), e.what());
      return 1;
    } catch (const std::filesystem::filesystem_error& e) {
      emit_error(err, to_string(ErrorKind::Io), e.what());
      return 1;
    }
  }
  return 2;
}

}  // namespace dncbm::pipeline
