#pragma once

// A small on-disk project: features with labels, a vocabulary built from the
// generating atoms, attribute ground truth and a fast config.

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "dncbm/io.hpp"
#include "dncbm/pipeline.hpp"
#include "support/synthetic.hpp"

namespace dncbm::testing {

namespace fs = std::filesystem;

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

inline CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "dncbm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = pipeline::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

inline fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dncbm_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Project {
  fs::path dir;
  fs::path features, vocab, attributes, config;
};

inline Project make_project(const fs::path& dir) {
  const std::size_t d = 8, atoms = 16;
  const auto data = make_sparse_dictionary(d, atoms, 2, 400, 1.0, RngSeed{31});
  std::vector<std::size_t> labels;
  Matrix attrs(400, atoms);
  for (std::size_t i = 0; i < 400; ++i) {
    std::size_t top = 0;
    for (std::size_t a = 0; a < atoms; ++a) {
      if (data.codes(i, a) > data.codes(i, top)) top = a;
      attrs(i, a) = data.codes(i, a) > 0.0 ? 1.0 : 0.0;
    }
    labels.push_back(top % 2);
  }
  std::vector<std::string> words;
  for (std::size_t a = 0; a < atoms; ++a) words.push_back("atom" + std::to_string(a));

  Project p{dir, dir / "features.bin", dir / "words.vocab", dir / "attributes.bin", dir / "run.ini"};
  io::write_features(p.features, {io::FeatureKind::Image, data.features, labels});
  io::write_vocabulary(p.vocab, Vocabulary(words, data.atoms));
  io::write_features(p.attributes, {io::FeatureKind::Activations, attrs, {}});
  io::write_file_atomic(p.config, R"(seed = 3
[sae]
expansion_factor = 2
lr = 1e-2
epochs = 15
batch_size = 64
resample_every = 5
[probe]
lr = 1e-2
epochs = 60
[eval]
clusters = 3
[sweep]
lr = 1e-2, 5e-3
lambda1 = 3e-5, 3e-2
expansion = 2
)");
  return p;
}

}  // namespace dncbm::testing
