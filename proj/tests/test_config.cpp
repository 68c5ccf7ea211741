#include <doctest.h>

#include "dncbm/config.hpp"
#include "dncbm/error.hpp"

using namespace dncbm;

namespace {

bool rejected(std::string_view text) {
  try {
    (void)RunConfig::parse(text);
    return false;
  } catch (const Error& e) {
    return e.kind() == ErrorKind::InvalidConfig;
  }
}

}  // namespace

TEST_CASE("defaults") {
  const RunConfig c = RunConfig::parse("");
  CHECK(c.sae.expansion_factor == 8);
  CHECK(c.sae.lambda1 == 3e-5);
  CHECK(c.sae.lr == 5e-4);
  CHECK(c.sae.epochs == 200);
  CHECK(c.sae.resample_every == 10);
  CHECK(c.sae.batch_size == 4096);
  CHECK(c.probe.train.lambda2 == 0.0);
  CHECK(c.probe.prune_topk == 0);
  CHECK(!c.eval.min_alignment);
  CHECK(c.eval.sparsity_fraction == 0.9);
  CHECK(c.sweep.lr == std::vector<double>{1e-5, 5e-5, 1e-4, 5e-4, 1e-3});
  CHECK(c.sweep.lambda1 == std::vector<double>{3e-5, 1.5e-4, 3e-4, 1.5e-3, 3e-3});
  CHECK(c.sweep.expansion == std::vector<std::size_t>{2, 4, 8});
}

TEST_CASE("parsing every section") {
  const RunConfig c = RunConfig::parse(R"(
seed = 77   # master seed
[sae]
expansion_factor = 4
lambda1 = 3e-4
epochs = 12
unit_norm_decoder = false
; alternate comment
[probe]
lambda2 = 0.1
prune_topk = 5
[vocab]
path = words.vocab
[eval]
min_alignment = 0.25
clusters = 3
[sweep]
lr = 1e-4, 5e-4
expansion = 2,4
)");
  CHECK(c.seed.value == 77);
  CHECK(c.sae.expansion_factor == 4);
  CHECK(c.sae.lambda1 == 3e-4);
  CHECK(c.sae.epochs == 12);
  CHECK(!c.sae.unit_norm_decoder);
  CHECK(c.probe.train.lambda2 == 0.1);
  CHECK(c.probe.prune_topk == 5);
  CHECK(c.vocab.path == "words.vocab");
  CHECK(*c.eval.min_alignment == 0.25);
  CHECK(c.eval.clusters == 3);
  CHECK(c.sweep.lr == std::vector<double>{1e-4, 5e-4});
  CHECK(c.sweep.expansion == std::vector<std::size_t>{2, 4});
}

TEST_CASE("seeds derive from the master seed") {
  const RunConfig a = RunConfig::parse("seed = 5"), b = RunConfig::parse("seed = 5"), c = RunConfig::parse("seed = 6");
  CHECK(a.sae.seed == b.sae.seed);
  CHECK(a.probe.train.seed == b.probe.train.seed);
  CHECK(!(a.sae.seed == c.sae.seed));
  CHECK(!(a.sae.seed == a.probe.train.seed));
  CHECK(!(a.split_seed() == a.cluster_seed()));
}

TEST_CASE("rejections") {
  CHECK(rejected("[model]\nx = 1"));
  CHECK(rejected("[sae]\nlearning_rate = 1"));
  CHECK(rejected("unknown = 1"));
  CHECK(rejected("[sae\nlr = 1"));
  CHECK(rejected("[sae]\nlr"));
  CHECK(rejected("[sae]\nlr = abc"));
  CHECK(rejected("[sae]\nlr = 0"));
  CHECK(rejected("[sae]\nlr = nan"));
  CHECK(rejected("[sae]\nepochs = -1"));
  CHECK(rejected("[sae]\nepochs = 0"));
  CHECK(rejected("[sae]\nexpansion_factor = 0"));
  CHECK(rejected("[sae]\nlambda1 = -1e-5"));
  CHECK(rejected("[sae]\nadam_beta2 = 1"));
  CHECK(rejected("[sae]\nunit_norm_decoder = maybe"));
  CHECK(rejected("[probe]\nlambda2 = -0.1"));
  CHECK(rejected("[eval]\nmin_alignment = 1.5"));
  CHECK(rejected("[eval]\nheldout_fraction = 1"));
  CHECK(rejected("[eval]\nsparsity_fraction = 0"));
  CHECK(rejected("[sweep]\nlr = 1e-4,,2e-4"));
  CHECK(rejected("[sweep]\nexpansion = 0"));
  CHECK(rejected("seed = x"));
}

TEST_CASE("load reports missing files as io errors") {
  try {
    (void)RunConfig::load("/nonexistent/config.ini");
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Io);
  }
}
