#include <doctest.h>

#include <fstream>
#include <json.hpp>

#include "dncbm/error.hpp"
#include "dncbm/io.hpp"
#include "dncbm/pipeline.hpp"
#include "support/fixtures.hpp"

using namespace dncbm;
using testing::run;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) { return io::read_file(p); }

nlohmann::json error_line(const testing::CliRun& r) {
  REQUIRE(r.code != 0);
  return nlohmann::json::parse(r.err.substr(0, r.err.find('\n')));
}

}  // namespace

TEST_CASE("name writes the assignment CSV") {
  const fs::path dir = testing::fresh_dir("cli_name");
  io::write_checkpoint(dir / "m.ckpt", SaeModel(Matrix(2, 2), Matrix{{0.9, 0.1}, {0.0, 1.0}}));
  io::write_vocabulary(dir / "v.vocab", Vocabulary({"red", "dog"}, Matrix{{1, 0}, {0, 1}}));
  const auto r = run({"name", "--checkpoint", (dir / "m.ckpt").string(), "--vocab", (dir / "v.vocab").string(), "--out",
                      (dir / "out").string()});
  REQUIRE(r.code == 0);
  // The checkpoint stores 0.9 and 0.1 as f32.
  CHECK(slurp(dir / "out" / "names.csv") == "concept_index,name,alignment\n0,red,0.993884\n1,dog,1.000000\n");
}

TEST_CASE("full pipeline") {
  const fs::path dir = testing::fresh_dir("cli_pipeline");
  const auto p = testing::make_project(dir);
  const std::string cfg = p.config.string(), feat = p.features.string(), vocab = p.vocab.string();
  const fs::path sae = dir / "sae", ck = sae / "sae.ckpt";

  REQUIRE(run({"train-sae", "--config", cfg, "--features", feat, "--out", sae.string()}).code == 0);
  CHECK(io::read_checkpoint(ck).latent_dim() == 16);
  const std::string history = slurp(sae / "history.csv");
  CHECK(std::count(history.begin(), history.end(), '\n') == 16);

  REQUIRE(run({"name", "--config", cfg, "--checkpoint", ck.string(), "--vocab", vocab, "--out", (dir / "names").string()})
              .code == 0);
  const std::string names = slurp(dir / "names" / "names.csv");
  CHECK(std::count(names.begin(), names.end(), '\n') == 17);

  const fs::path probe_dir = dir / "probe";
  REQUIRE(run({"train-probe", "--config", cfg, "--checkpoint", ck.string(), "--features", feat, "--out",
               probe_dir.string()})
              .code == 0);
  const fs::path probe = probe_dir / "probe.bin";
  CHECK(io::read_probe(probe).classes() == 2);
  CHECK(slurp(probe_dir / "probe_summary.txt").find("sparsity_of_decision") != std::string::npos);

  REQUIRE(run({"explain", "--config", cfg, "--checkpoint", ck.string(), "--probe", probe.string(), "--features", feat,
               "--vocab", vocab, "--out", (dir / "explain").string()})
              .code == 0);
  const std::string ex = slurp(dir / "explain" / "explanations.csv");
  CHECK(ex.rfind("sample_id,rank,concept_index,name,contribution\n", 0) == 0);
  CHECK(std::count(ex.begin(), ex.end(), '\n') == 1 + 400 * 5);
  CHECK(fs::exists(dir / "explain" / "global.csv"));
  CHECK(fs::exists(dir / "explain" / "explanations.txt"));

  {
    std::ofstream(dir / "groups.txt") << [] {
      std::string s;
      for (int i = 0; i < 400; ++i) s += std::to_string(i % 4) + "\n";
      return s;
    }();
    std::ofstream(dir / "keep.spec") << "mode = keep-only\nconcepts = 0, 1, atom3\n";
  }
  const auto iv = run({"intervene", "--config", cfg, "--probe", probe.string(), "--spec", (dir / "keep.spec").string(),
                       "--checkpoint", ck.string(), "--vocab", vocab, "--features", feat, "--groups",
                       (dir / "groups.txt").string(), "--out", (dir / "iv").string()});
  REQUIRE(iv.code == 0);
  const CbmProbe edited = io::read_probe(dir / "iv" / "probe.bin");
  std::size_t live_rows = 0;
  for (std::size_t c = 0; c < edited.concepts(); ++c)
    live_rows += edited.weights(c, 0) != 0.0 || edited.weights(c, 1) != 0.0;
  CHECK(live_rows >= 2);
  CHECK(slurp(dir / "iv" / "intervention_accuracy.csv").find("worst_group") != std::string::npos);

  REQUIRE(run({"eval-accuracy", "--config", cfg, "--checkpoint", ck.string(), "--probe", probe.string(), "--features",
               feat, "--groups", (dir / "groups.txt").string(), "--out", (dir / "acc").string()})
              .code == 0);
  CHECK(slurp(dir / "acc" / "accuracy.csv").find("group_3") != std::string::npos);

  REQUIRE(run({"eval-jaccard", "--config", cfg, "--checkpoint", ck.string(), "--vocab", vocab, "--features", feat,
               "--attributes", p.attributes.string(), "--out", (dir / "jac").string()})
              .code == 0);
  CHECK(slurp(dir / "jac" / "jaccard_summary.txt").find("mean_jaccard") != std::string::npos);

  REQUIRE(run({"cluster", "--config", cfg, "--checkpoint", ck.string(), "--vocab", vocab, "--features", feat, "--out",
               (dir / "clu").string()})
              .code == 0);
  const std::string members = slurp(dir / "clu" / "cluster_members.csv");
  CHECK(std::count(members.begin(), members.end(), '\n') == 401);
}

TEST_CASE("train-sae is byte-for-byte reproducible") {
  const fs::path a = testing::fresh_dir("cli_det_a"), b = testing::fresh_dir("cli_det_b");
  const auto pa = testing::make_project(a), pb = testing::make_project(b);
  REQUIRE(run({"train-sae", "--config", pa.config.string(), "--features", pa.features.string(), "--out", (a / "o").string()})
              .code == 0);
  REQUIRE(run({"train-sae", "--config", pb.config.string(), "--features", pb.features.string(), "--out", (b / "o").string()})
              .code == 0);
  CHECK(slurp(a / "o" / "sae.ckpt") == slurp(b / "o" / "sae.ckpt"));
  CHECK(slurp(a / "o" / "history.csv") == slurp(b / "o" / "history.csv"));

  REQUIRE(run({"train-sae", "--config", pa.config.string(), "--features", pa.features.string(), "--seed", "99", "--out",
               (a / "other").string()})
              .code == 0);
  CHECK(slurp(a / "o" / "sae.ckpt") != slurp(a / "other" / "sae.ckpt"));
}

TEST_CASE("sweep over a 2x2 grid") {
  const fs::path dir = testing::fresh_dir("cli_sweep");
  const auto p = testing::make_project(dir);
  const fs::path out = dir / "sweep";
  REQUIRE(run({"sweep", "--config", p.config.string(), "--features", p.features.string(), "--out", out.string()}).code == 0);
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  REQUIRE(manifest["runs"].size() == 4);
  std::size_t checkpoints = 0;
  for (const auto& e : fs::recursive_directory_iterator(out)) checkpoints += e.path().extension() == ".ckpt";
  CHECK(checkpoints == 4);
  const std::string winner = manifest["winner"]["dir"];
  CHECK(fs::exists(out / winner / "sae.ckpt"));
  CHECK(manifest["winner"]["score"].is_number());
  CHECK(manifest["criterion"] == "heldout_recon_l2_at_median_mean_active");

  // Class embeddings switch the criterion to zero-shot accuracy.
  Matrix classes(2, 8);
  classes(0, 0) = 1.0;
  classes(1, 1) = 1.0;
  io::write_features(dir / "classes.bin", {io::FeatureKind::Text, classes, {}});
  REQUIRE(run({"sweep", "--config", p.config.string(), "--features", p.features.string(), "--text-embeddings",
               (dir / "classes.bin").string(), "--out", (dir / "zs").string()})
              .code == 0);
  const auto zs = nlohmann::json::parse(slurp(dir / "zs" / "manifest.json"));
  CHECK(zs["criterion"] == "heldout_zero_shot_accuracy");
  const double score = zs["winner"]["score"];
  for (const auto& r : zs["runs"]) CHECK(r["heldout_zero_shot_accuracy"].get<double>() <= score);
}

TEST_CASE("errors are one JSON line with a nonzero exit") {
  const fs::path dir = testing::fresh_dir("cli_errors");
  const auto p = testing::make_project(dir);

  auto e = error_line(run({"name", "--checkpoint", (dir / "none.ckpt").string(), "--out", dir.string()}));
  CHECK(e["error"] == "io");

  io::write_checkpoint(dir / "wide.ckpt", SaeModel(Matrix(5, 10, 0.1), Matrix(10, 5, 0.1)));
  e = error_line(run({"train-probe", "--checkpoint", (dir / "wide.ckpt").string(), "--features", p.features.string(),
                      "--out", dir.string()}));
  CHECK(e["error"] == "dimension_mismatch");

  io::write_checkpoint(dir / "ok.ckpt", SaeModel(Matrix(8, 4, 0.1), Matrix(4, 8, 0.1)));
  e = error_line(run({"name", "--checkpoint", (dir / "ok.ckpt").string(), "--out", dir.string()}));
  CHECK(e["error"] == "invalid_argument");
  CHECK(e["message"].get<std::string>().find("vocabulary") != std::string::npos);

  io::write_file_atomic(dir / "bad.ini", "[sae]\nbogus = 1\n");
  e = error_line(run({"train-sae", "--config", (dir / "bad.ini").string(), "--features", p.features.string(), "--out",
                      dir.string()}));
  CHECK(e["error"] == "invalid_config");

  e = error_line(run({"train-sae", "--features"}));
  CHECK(e["error"] == "usage");
  e = error_line(run({"frobnicate"}));
  CHECK(e["error"] == "usage");
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("intervention specs") {
  NamedConceptSpace s;
  s.concepts = {{"sky", 0, 1, {}}, {"bird", 1, 1, {}}, {"sky", 2, 1, {}}};
  auto spec = pipeline::parse_intervention_spec("mode = remove\nconcepts = sky, 1  # comment\n", &s);
  CHECK(spec.mode == InterventionMode::Remove);
  CHECK(spec.concepts == std::vector<std::size_t>{0, 1, 2});
  spec = pipeline::parse_intervention_spec("mode = keep-only\nconcepts = 2, 2\n", nullptr);
  CHECK(spec.mode == InterventionMode::KeepOnly);
  CHECK(spec.concepts == std::vector<std::size_t>{2});
  CHECK_THROWS_AS(pipeline::parse_intervention_spec("concepts = 1\n", nullptr), Error);
  CHECK_THROWS_AS(pipeline::parse_intervention_spec("mode = drop\n", nullptr), Error);
  CHECK_THROWS_AS(pipeline::parse_intervention_spec("mode = remove\nconcepts = tree\n", &s), Error);
  CHECK_THROWS_AS(pipeline::parse_intervention_spec("mode = remove\nconcepts = sky\n", nullptr), Error);
  CHECK_THROWS_AS(pipeline::parse_intervention_spec("mode = remove\nweights = 1\n", nullptr), Error);
}

TEST_CASE("splits") {
  const auto s = pipeline::seeded_split(10, 0.3, RngSeed{1});
  CHECK(s.heldout.size() == 3);
  CHECK(s.evaluation.size() == 7);
  const auto again = pipeline::seeded_split(10, 0.3, RngSeed{1});
  CHECK(again.heldout == s.heldout);
  const auto f = pipeline::split_from_indices(5, {4, 0});
  CHECK(f.heldout == std::vector<std::size_t>{0, 4});
  CHECK(f.evaluation == std::vector<std::size_t>{1, 2, 3});
  CHECK_THROWS_AS(pipeline::split_from_indices(5, {5}), Error);
  CHECK_THROWS_AS(pipeline::split_from_indices(2, {0, 1}), Error);
  CHECK_THROWS_AS(pipeline::seeded_split(1, 0.5, RngSeed{1}), Error);
}
