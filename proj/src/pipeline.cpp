#include "dncbm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "dncbm/error.hpp"
#include "dncbm/eval.hpp"
#include "dncbm/io.hpp"
#include "dncbm/numerics.hpp"
#include "dncbm/sae.hpp"

namespace dncbm::pipeline {

namespace {

const fs::path& require(const std::optional<fs::path>& p, std::string_view flag) {
  if (!p) throw Error(ErrorKind::InvalidArgument, fmt::format("missing required flag --{}", flag));
  return *p;
}

RunConfig load_config(const Options& opts) {
  RunConfig cfg = opts.config ? RunConfig::load(*opts.config) : RunConfig{};
  cfg.apply_seed(opts.seed ? RngSeed{*opts.seed} : cfg.seed);
  cfg.validate();
  return cfg;
}

fs::path output_dir(const Options& opts) {
  const fs::path& out = require(opts.out, "out");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorKind::Io, fmt::format("cannot create output directory '{}'", out.string()));
  return out;
}

void write_text(const fs::path& path, const std::string& text) { io::write_file_atomic(path, text); }

io::FeatureFile load_features(const Options& opts, const SaeModel* model) {
  io::FeatureFile f = io::read_features(require(opts.features, "features"));
  if (model && f.data.cols() != model->input_dim()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("feature width {} does not match checkpoint input dimension {}", f.data.cols(),
                            model->input_dim()));
  }
  return f;
}

const std::vector<std::size_t>& require_labels(const io::FeatureFile& f) {
  if (!f.labels) throw Error(ErrorKind::InvalidArgument, "feature file has no label block");
  return *f.labels;
}

Vocabulary load_vocab(const Options& opts, const RunConfig& cfg, const SaeModel& model) {
  fs::path path;
  if (opts.vocab) {
    path = *opts.vocab;
  } else if (!cfg.vocab.path.empty()) {
    path = cfg.vocab.path;
  } else {
    throw Error(ErrorKind::InvalidArgument, "missing vocabulary (--vocab or [vocab] path)");
  }
  Vocabulary v = io::read_vocabulary(path);
  if (v.dim() != model.input_dim()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("vocabulary width {} does not match checkpoint input dimension {}", v.dim(),
                            model.input_dim()));
  }
  return v;
}

void check_probe(const CbmProbe& probe, const SaeModel& model) {
  if (probe.concepts() != model.latent_dim()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("probe has {} concepts but the checkpoint has {}", probe.concepts(), model.latent_dim()));
  }
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> out;
  std::istringstream in(io::read_file(path));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::string g(double v) { return fmt::format("{:.6f}", v); }

std::string report_sparsity(const DecisionSparsity& s, double fraction) {
  return fmt::format("sparsity_of_decision({:.2f}) = {:.6f} over {} samples ({} excluded, non-positive logit)\n",
                     fraction, s.mean, s.counted, s.excluded);
}

std::size_t num_classes_for(const std::vector<std::size_t>& labels, const std::vector<std::string>& names) {
  const std::size_t from_labels = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  if (!names.empty()) {
    if (from_labels > names.size()) {
      throw Error(ErrorKind::InvalidArgument,
                  fmt::format("label {} has no entry in the class-name file ({} names)", from_labels - 1, names.size()));
    }
    return names.size();
  }
  return std::max<std::size_t>(from_labels, 2);
}

}  // namespace

Split seeded_split(std::size_t n, double heldout_fraction, RngSeed seed) {
  if (n < 2) throw Error(ErrorKind::InvalidArgument, "need at least two samples to split");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  auto k = static_cast<std::size_t>(std::llround(heldout_fraction * static_cast<double>(n)));
  k = std::clamp<std::size_t>(k, 1, n - 1);
  Split s{{idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k)},
          {idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end()}};
  std::sort(s.heldout.begin(), s.heldout.end());
  std::sort(s.evaluation.begin(), s.evaluation.end());
  return s;
}

Split split_from_indices(std::size_t n, std::vector<std::size_t> heldout) {
  std::vector<bool> in(n, false);
  for (std::size_t i : heldout) {
    if (i >= n) throw Error(ErrorKind::OutOfRange, fmt::format("split index {} out of range [0, {})", i, n));
    in[i] = true;
  }
  Split s;
  for (std::size_t i = 0; i < n; ++i) (in[i] ? s.heldout : s.evaluation).push_back(i);
  if (s.heldout.empty() || s.evaluation.empty()) {
    throw Error(ErrorKind::InvalidArgument, "split must leave both held-out and evaluation samples");
  }
  return s;
}

InterventionSpec parse_intervention_spec(std::string_view text, const NamedConceptSpace* space) {
  InterventionSpec spec;
  bool have_mode = false;
  std::istringstream in{std::string(text)};
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::InvalidConfig, fmt::format("intervention spec line {}: expected key = value", line_no));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "mode") {
      if (value == "keep-only") spec.mode = InterventionMode::KeepOnly;
      else if (value == "remove") spec.mode = InterventionMode::Remove;
      else throw Error(ErrorKind::InvalidConfig, fmt::format("intervention mode '{}' is not keep-only or remove", value));
      have_mode = true;
    } else if (key == "concepts") {
      std::istringstream items(value);
      for (std::string item; std::getline(items, item, ',');) {
        item = trim(item);
        if (item.empty()) continue;
        if (std::all_of(item.begin(), item.end(), [](char c) { return c >= '0' && c <= '9'; })) {
          spec.concepts.push_back(std::stoull(item));
          continue;
        }
        if (!space) {
          throw Error(ErrorKind::InvalidArgument,
                      fmt::format("concept name '{}' needs --checkpoint and --vocab to resolve", item));
        }
        bool found = false;
        for (std::size_t c = 0; c < space->size(); ++c) {
          if ((*space)[c].name == item) {
            spec.concepts.push_back(c);
            found = true;
          }
        }
        if (!found) throw Error(ErrorKind::InvalidArgument, fmt::format("no concept is named '{}'", item));
      }
    } else {
      throw Error(ErrorKind::InvalidConfig, fmt::format("intervention spec line {}: unknown key '{}'", line_no, key));
    }
  }
  if (!have_mode) throw Error(ErrorKind::InvalidConfig, "intervention spec has no mode");
  std::sort(spec.concepts.begin(), spec.concepts.end());
  spec.concepts.erase(std::unique(spec.concepts.begin(), spec.concepts.end()), spec.concepts.end());
  return spec;
}

void train_sae(const Options& opts, std::ostream& log) {
  const RunConfig cfg = load_config(opts);
  const io::FeatureFile f = load_features(opts, nullptr);
  const fs::path out = output_dir(opts);
  log << fmt::format("training SAE on {}x{} features, expansion {}, lambda1 {}\n", f.data.rows(), f.data.cols(),
                     cfg.sae.expansion_factor, cfg.sae.lambda1);
  const TrainResult res = dncbm::train_sae(f.data, cfg.sae_config());

  std::string hist = "epoch,recon_l2,sparsity_l1,total,mean_active\n";
  for (std::size_t e = 0; e < res.history.size(); ++e) {
    const auto& r = res.history[e];
    hist += fmt::format("{},{:.9e},{:.9e},{:.9e},{:.6f}\n", e + 1, r.recon_l2, r.sparsity_l1, r.total, r.mean_active);
  }
  io::write_checkpoint(out / "sae.ckpt", res.model);
  write_text(out / "history.csv", hist);
  const auto& last = res.history.back();
  write_text(out / "summary.txt",
             fmt::format("d = {}\nh = {}\nepochs = {}\nfinal recon_l2 = {:.9e}\nfinal mean_active = {:.6f}\n",
                         res.model.input_dim(), res.model.latent_dim(), res.history.size(), last.recon_l2,
                         last.mean_active));
}

void name(const Options& opts, std::ostream& log) {
  const RunConfig cfg = load_config(opts);
  const SaeModel model = io::read_checkpoint(require(opts.checkpoint, "checkpoint"));
  const Vocabulary vocab = load_vocab(opts, cfg, model);
  const fs::path out = output_dir(opts);
  const NamedConceptSpace space = assign_names(model, vocab);
  write_text(out / "names.csv", io::names_csv(space));
  log << fmt::format("named {} concepts against {} words\n", space.size(), vocab.size());
}

void train_probe(const Options& opts, std::ostream& log) {
  const RunConfig cfg = load_config(opts);
  const SaeModel model = io::read_checkpoint(require(opts.checkpoint, "checkpoint"));
  const io::FeatureFile f = load_features(opts, &model);
  const auto& labels = require_labels(f);
  const fs::path out = output_dir(opts);
  std::vector<std::string> class_names = opts.classes ? read_lines(*opts.classes) : std::vector<std::string>{};
  const std::size_t k = num_classes_for(labels, class_names);

  const LabeledActivations data{encode(model, f.data), labels};
  CbmProbe probe = dncbm::train_probe(data, k, cfg.probe_config(), class_names);
  if (cfg.probe.prune_topk > 0) probe = prune_topk(probe, cfg.probe.prune_topk);
  io::write_probe(out / "probe.bin", probe);

  const Prediction pred = predict(probe, data.activations);
  std::size_t nonzero = 0;
  for (double w : probe.weights.data()) nonzero += w != 0.0;
  const double frac = cfg.eval.sparsity_fraction;
  std::string summary = fmt::format("samples = {}\nconcepts = {}\nclasses = {}\nlambda2 = {}\nlr = {}\nepochs = {}\n",
                                    labels.size(), probe.concepts(), k, cfg.probe.train.lambda2, cfg.probe.train.lr,
                                    cfg.probe.train.epochs);
  summary += fmt::format("prune_topk = {}\nnonzero weights = {}\ntrain accuracy = {:.6f}\n", cfg.probe.prune_topk,
                         nonzero, accuracy(pred.classes, labels));
  summary += report_sparsity(sparsity_of_decision(probe, data.activations, frac), frac);
  write_text(out / "probe_summary.txt", summary);
  log << summary;
}

void explain(const Options& opts, std::ostream& log) {
  const RunConfig cfg = load_config(opts);
  const SaeModel model = io::read_checkpoint(require(opts.checkpoint, "checkpoint"));
  const CbmProbe probe = io::read_probe(require(opts.probe, "probe"));
  check_probe(probe, model);
  const io::FeatureFile f = load_features(opts, &model);
  const Vocabulary vocab = load_vocab(opts, cfg, model);
  const fs::path out = output_dir(opts);
  const NamedConceptSpace space = assign_names(model, vocab);
  const Matrix act = encode(model, f.data);
  const std::size_t top = cfg.eval.explain_top;

  std::string csv = "sample_id,rank,concept_index,name,contribution\n";
  std::string report;
  for (std::size_t i = 0; i < act.rows(); ++i) {
    const Explanation ex = explain_local(probe, space, act.row(i), top);
    report += fmt::format("sample {}: predicted {} (logit {:.6f})\n", i, probe.class_names[ex.prediction], ex.logit);
    for (std::size_t r = 0; r < ex.entries.size(); ++r) {
      const auto& e = ex.entries[r];
      csv += fmt::format("{},{},{},{},{}\n", i, r + 1, e.index, io::csv_field(e.name), g(e.contribution));
      report += fmt::format("  {:>2}. {} (#{}) {:+.6f}\n", r + 1, e.name, e.index, e.contribution);
    }
  }
  write_text(out / "explanations.csv", csv);
  write_text(out / "explanations.txt", report);

  if (f.labels) {
    const LabeledActivations data{act, *f.labels};
    std::string global = "class,rank,concept_index,name,mean_contribution\n";
    for (std::size_t k = 0; k < probe.classes(); ++k) {
      if (std::find(f.labels->begin(), f.labels->end(), k) == f.labels->end()) continue;
      const Explanation ex = explain_global(probe, space, data, k, top);
      for (std::size_t r = 0; r < ex.entries.size(); ++r) {
        const auto& e = ex.entries[r];
        global += fmt::format("{},{},{},{},{}\n", io::csv_field(probe.class_names[k]), r + 1, e.index,
                              io::csv_field(e.name), g(e.contribution));
      }
    }
    write_text(out / "global.csv", global);
  }
  log << fmt::format("explained {} samples\n", act.rows());
}

void intervene(const Options& opts, std::ostream& log) {
  const RunConfig cfg = load_config(opts);
  const CbmProbe probe = io::read_probe(require(opts.probe, "probe"));
  std::optional<SaeModel> model;
  std::optional<NamedConceptSpace> space;
  if (opts.checkpoint) {
    model = io::read_checkpoint(*opts.checkpoint);
    check_probe(probe, *model);
    if (opts.vocab || !cfg.vocab.path.empty()) space = assign_names(*model, load_vocab(opts, cfg, *model));
  }
  const InterventionSpec spec =
      parse_intervention_spec(io::read_file(require(opts.spec, "spec")), space ? &*space : nullptr);
  const fs::path out = output_dir(opts);
  const CbmProbe edited = dncbm::intervene(probe, spec);
  io::write_probe(out / "probe.bin", edited);

  std::string summary = fmt::format("mode = {}\nconcepts = {}\n",
                                    spec.mode == InterventionMode::KeepOnly ? "keep-only" : "remove",
                                    fmt::join(spec.concepts, ", "));
  if (opts.features) {
    if (!model) throw Error(ErrorKind::InvalidArgument, "--features needs --checkpoint to compute activations");
    const io::FeatureFile f = load_features(opts, &*model);
    const auto& labels = require_labels(f);
    const Matrix act = encode(*model, f.data);
    const auto before = predict(probe, act).classes;
    const auto after = predict(edited, act).classes;
    std::string csv = "scope,before,after\n";
    if (opts.groups) {
      const auto groups = io::read_index_file(*opts.groups);
      const std::size_t ng = groups.empty() ? 0 : *std::max_element(groups.begin(), groups.end()) + 1;
      const auto gb = group_accuracy(before, labels, groups, ng);
      const auto ga = group_accuracy(after, labels, groups, ng);
      csv += fmt::format("overall,{},{}\n", g(gb.overall), g(ga.overall));
      for (std::size_t i = 0; i < ng; ++i) csv += fmt::format("group_{},{},{}\n", i, g(gb.per_group[i]), g(ga.per_group[i]));
      csv += fmt::format("worst_group,{},{}\n", g(gb.worst()), g(ga.worst()));
    } else {
      csv += fmt::format("overall,{},{}\n", g(accuracy(before, labels)), g(accuracy(after, labels)));
    }
    write_text(out / "intervention_accuracy.csv", csv);
    summary += csv;
  }
  write_text(out / "intervention.txt", summary);
  log << summary;
}

void eval_accuracy(const Options& opts, std::ostream& log) {
  const RunConfig cfg = load_config(opts);
  const SaeModel model = io::read_checkpoint(require(opts.checkpoint, "checkpoint"));
  const CbmProbe probe = io::read_probe(require(opts.probe, "probe"));
  check_probe(probe, model);
  const io::FeatureFile f = load_features(opts, &model);
  const auto& labels = require_labels(f);
  const fs::path out = output_dir(opts);
  const Matrix act = encode(model, f.data);
  const Prediction pred = predict(probe, act);

  std::string csv = "scope,accuracy,count\n";
  if (opts.groups) {
    const auto groups = io::read_index_file(*opts.groups);
    const std::size_t ng = groups.empty() ? 0 : *std::max_element(groups.begin(), groups.end()) + 1;
    const auto ga = group_accuracy(pred.classes, labels, groups, ng);
    csv += fmt::format("overall,{},{}\n", g(ga.overall), labels.size());
    for (std::size_t i = 0; i < ng; ++i) csv += fmt::format("group_{},{},{}\n", i, g(ga.per_group[i]), ga.group_sizes[i]);
  } else {
    csv += fmt::format("overall,{},{}\n", g(accuracy(pred.classes, labels)), labels.size());
  }
  write_text(out / "accuracy.csv", csv);
  const double frac = cfg.eval.sparsity_fraction;
  const std::string summary = csv + report_sparsity(sparsity_of_decision(probe, act, frac), frac);
  write_text(out / "accuracy_summary.txt", summary);
  log << summary;
}

namespace {

Matrix attribute_strengths(const CompoundNodes& merged, const Vocabulary& vocab, std::size_t n) {
  Matrix s(n, vocab.size());
  for (std::size_t k = 0; k < merged.nodes.size(); ++k) {
    const std::size_t col = vocab.find(merged.nodes[k].name);
    for (std::size_t i = 0; i < n; ++i) s(i, col) = merged.strengths(i, k);
  }
  return s;
}

}  // namespace

void eval_jaccard(const Options& opts, std::ostream& log) {
  const RunConfig cfg = load_config(opts);
  const SaeModel model = io::read_checkpoint(require(opts.checkpoint, "checkpoint"));
  const Vocabulary vocab = load_vocab(opts, cfg, model);
  const io::FeatureFile f = load_features(opts, &model);
  const io::FeatureFile gt = io::read_features(require(opts.attributes, "attributes"));
  if (gt.data.rows() != f.data.rows() || gt.data.cols() != vocab.size()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("attribute matrix {} must be {} samples x {} vocabulary attributes", gt.data.shape_string(),
                            f.data.rows(), vocab.size()));
  }
  const fs::path out = output_dir(opts);
  const std::size_t n = f.data.rows();
  const Split split = opts.split ? split_from_indices(n, io::read_index_file(*opts.split))
                                 : seeded_split(n, cfg.eval.heldout_fraction, cfg.split_seed());
  const NamedConceptSpace space = assign_names(model, vocab);
  const Matrix act = encode(model, f.data);

  double min_alignment = -1.0;
  std::string selection = "configured";
  if (cfg.eval.min_alignment) {
    min_alignment = *cfg.eval.min_alignment;
  } else if (split.heldout.size() >= 2) {
    // Fit thresholds on one half of the held-out split, score on the other.
    const std::size_t half = split.heldout.size() / 2;
    std::span<const std::size_t> fit(split.heldout.data(), half);
    std::span<const std::size_t> score(split.heldout.data() + half, split.heldout.size() - half);
    double best = -1.0;
    for (int step = -20; step <= 20; ++step) {
      const double cand = step / 20.0;
      const auto merged = merge_compound_nodes(space, act, cand);
      const Matrix s = attribute_strengths(merged, vocab, n);
      const double j = attribute_match_eval(s, gt.data, fit, score).mean_jaccard;
      if (j > best) {
        best = j;
        min_alignment = cand;
      }
    }
    selection = fmt::format("selected on held-out (score {:.6f})", best);
  }

  const auto merged = merge_compound_nodes(space, act, min_alignment);
  const Matrix strengths = attribute_strengths(merged, vocab, n);
  const auto rep = attribute_match_eval(strengths, gt.data, split.heldout, split.evaluation);

  std::string csv = "attribute_index,name,members,threshold\n";
  for (std::size_t c = 0; c < vocab.size(); ++c) {
    std::size_t members = 0;
    for (const auto& node : merged.nodes)
      if (node.name == vocab.word(c)) members = node.members.size();
    const double t = rep.thresholds[c];
    csv += fmt::format("{},{},{},{}\n", c, io::csv_field(vocab.word(c)), members,
                       std::isinf(t) ? std::string("inf") : g(t));
  }
  write_text(out / "jaccard.csv", csv);
  const std::string summary = fmt::format(
      "mean_jaccard = {:.6f}\nmin_alignment = {:.2f} ({})\ncompound_nodes = {}\nheldout = {}\nevaluation = {}\n"
      "never_positive_attributes = {}\n",
      rep.mean_jaccard, min_alignment, selection, merged.nodes.size(), split.heldout.size(), split.evaluation.size(),
      rep.never_positive.size());
  write_text(out / "jaccard_summary.txt", summary);
  log << summary;
}

void cluster(const Options& opts, std::ostream& log) {
  const RunConfig cfg = load_config(opts);
  const SaeModel model = io::read_checkpoint(require(opts.checkpoint, "checkpoint"));
  const Vocabulary vocab = load_vocab(opts, cfg, model);
  const io::FeatureFile f = load_features(opts, &model);
  const fs::path out = output_dir(opts);
  const NamedConceptSpace space = assign_names(model, vocab);
  const Matrix act = encode(model, f.data);
  const ClusterReport rep =
      cluster_concepts(act, space, cfg.eval.clusters, cfg.cluster_seed(), cfg.eval.cluster_top, cfg.eval.kmeans_max_iters);

  std::string csv = "cluster,size,rank,concept_index,name,strength\n";
  std::string text;
  for (std::size_t c = 0; c < rep.k; ++c) {
    text += fmt::format("cluster {} ({} samples):", c, rep.members[c].size());
    for (std::size_t r = 0; r < rep.top_concepts[c].size(); ++r) {
      const auto& t = rep.top_concepts[c][r];
      csv += fmt::format("{},{},{},{},{},{}\n", c, rep.members[c].size(), r + 1, t.index, io::csv_field(t.name),
                         g(t.strength));
      text += fmt::format(" {}", t.name);
    }
    text += "\n";
  }
  std::string members = "sample_id,cluster\n";
  std::vector<std::size_t> assignment(act.rows());
  for (std::size_t c = 0; c < rep.k; ++c)
    for (std::size_t i : rep.members[c]) assignment[i] = c;
  for (std::size_t i = 0; i < assignment.size(); ++i) members += fmt::format("{},{}\n", i, assignment[i]);
  write_text(out / "clusters.csv", csv);
  write_text(out / "cluster_members.csv", members);
  write_text(out / "clusters.txt", text);
  log << text;
}

void sweep(const Options& opts, std::ostream& log) {
  const RunConfig cfg = load_config(opts);
  const io::FeatureFile f = load_features(opts, nullptr);
  const fs::path out = output_dir(opts);
  const std::size_t n = f.data.rows();
  const Split split = opts.split ? split_from_indices(n, io::read_index_file(*opts.split))
                                 : seeded_split(n, cfg.sweep.heldout_fraction, cfg.split_seed());
  const Matrix train = f.data.select_rows(split.evaluation);
  const Matrix heldout = f.data.select_rows(split.heldout);

  std::optional<Matrix> class_emb;
  std::vector<std::size_t> heldout_labels;
  if (opts.text_embeddings) {
    const io::FeatureFile t = io::read_features(*opts.text_embeddings);
    if (t.data.cols() != f.data.cols()) {
      throw Error(ErrorKind::DimensionMismatch,
                  fmt::format("text embeddings width {} does not match feature width {}", t.data.cols(), f.data.cols()));
    }
    const auto& labels = require_labels(f);
    for (std::size_t i : split.heldout) {
      if (labels[i] >= t.data.rows()) {
        throw Error(ErrorKind::OutOfRange,
                    fmt::format("label {} has no class embedding ({} provided)", labels[i], t.data.rows()));
      }
      heldout_labels.push_back(labels[i]);
    }
    class_emb = t.data;
  }

  struct Run {
    double lr, lambda1;
    std::size_t expansion;
    std::string dir;
    SaeLossReport heldout;
    double zero_shot = 0.0;
  };
  std::vector<Run> runs;
  std::size_t index = 0;
  for (double lr : cfg.sweep.lr) {
    for (double l1 : cfg.sweep.lambda1) {
      for (std::size_t ef : cfg.sweep.expansion) {
        SaeConfig sc = cfg.sae_config();
        sc.lr = lr;
        sc.lambda1 = l1;
        sc.expansion_factor = ef;
        Run run{lr, l1, ef, fmt::format("run_{:03d}", index++), {}, 0.0};
        log << fmt::format("{}: lr {} lambda1 {} expansion {}\n", run.dir, lr, l1, ef);
        const TrainResult res = dncbm::train_sae(train, sc);
        // Score the model exactly as it will be reloaded from disk.
        const SaeModel stored = io::decode_checkpoint(io::encode_checkpoint(res.model));
        run.heldout = sae_loss(stored, heldout, l1);
        if (class_emb) {
          const Matrix recon = matmul(encode(stored, heldout), stored.decoder);
          std::size_t hits = 0;
          for (std::size_t i = 0; i < recon.rows(); ++i) {
            if (norm2(recon.row(i)) == 0.0) continue;
            std::size_t best = 0;
            double best_cos = -2.0;
            for (std::size_t k = 0; k < class_emb->rows(); ++k) {
              const double cs = cosine_sim(recon.row(i), class_emb->row(k));
              if (cs > best_cos) {
                best_cos = cs;
                best = k;
              }
            }
            hits += best == heldout_labels[i];
          }
          run.zero_shot = static_cast<double>(hits) / static_cast<double>(recon.rows());
        }
        fs::create_directories(out / run.dir);
        io::write_checkpoint(out / run.dir / "sae.ckpt", stored);
        runs.push_back(std::move(run));
      }
    }
  }

  std::size_t winner = 0;
  std::string criterion;
  double budget = 0.0;
  if (class_emb) {
    criterion = "heldout_zero_shot_accuracy";
    for (std::size_t i = 1; i < runs.size(); ++i)
      if (runs[i].zero_shot > runs[winner].zero_shot) winner = i;
  } else {
    // Lowest held-out reconstruction among runs no denser than the median.
    criterion = "heldout_recon_l2_at_median_mean_active";
    std::vector<double> active;
    for (const auto& r : runs) active.push_back(r.heldout.mean_active);
    std::sort(active.begin(), active.end());
    budget = active[(active.size() - 1) / 2];
    bool found = false;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      if (runs[i].heldout.mean_active > budget) continue;
      if (!found || runs[i].heldout.recon_l2 < runs[winner].heldout.recon_l2) winner = i;
      found = true;
    }
  }

  nlohmann::ordered_json manifest;
  manifest["criterion"] = criterion;
  if (!class_emb) manifest["mean_active_budget"] = budget;
  manifest["heldout_samples"] = split.heldout.size();
  manifest["train_samples"] = split.evaluation.size();
  auto& list = manifest["runs"] = nlohmann::ordered_json::array();
  for (const auto& r : runs) {
    nlohmann::ordered_json j;
    j["dir"] = r.dir;
    j["lr"] = r.lr;
    j["lambda1"] = r.lambda1;
    j["expansion_factor"] = r.expansion;
    j["heldout_recon_l2"] = r.heldout.recon_l2;
    j["heldout_mean_active"] = r.heldout.mean_active;
    if (class_emb) j["heldout_zero_shot_accuracy"] = r.zero_shot;
    list.push_back(std::move(j));
  }
  const Run& w = runs[winner];
  manifest["winner"] = {{"dir", w.dir},
                        {"checkpoint", w.dir + "/sae.ckpt"},
                        {"score", class_emb ? w.zero_shot : w.heldout.recon_l2}};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  log << fmt::format("winner: {} ({})\n", w.dir, criterion);
}

}  // namespace dncbm::pipeline
