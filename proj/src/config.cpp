#include "dncbm/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <map>

#include <fmt/format.h>

#include "dncbm/error.hpp"
#include "dncbm/io.hpp"

namespace dncbm {

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(std::string_view key, std::string_view value, std::string_view why) {
  throw Error(ErrorKind::InvalidConfig, fmt::format("config key '{}' = '{}': {}", key, value, why));
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) bad(key, v, "expected a finite number");
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "expected a non-negative integer");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(key, v, "expected true or false");
}

template <typename T, typename F>
std::vector<T> to_list(std::string_view key, std::string_view v, F convert) {
  std::vector<T> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    const auto item = trim(v.substr(0, comma));
    if (item.empty()) bad(key, v, "empty list element");
    out.push_back(static_cast<T>(convert(key, item)));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (out.empty()) bad(key, v, "expected a non-empty list");
  return out;
}

using Setter = std::function<void(RunConfig&, std::string_view key, std::string_view value)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"seed", [](RunConfig& c, auto k, auto v) { c.seed = RngSeed{to_u64(k, v)}; }},
      {"sae.expansion_factor", [](RunConfig& c, auto k, auto v) { c.sae.expansion_factor = to_u64(k, v); }},
      {"sae.lambda1", [](RunConfig& c, auto k, auto v) { c.sae.lambda1 = to_double(k, v); }},
      {"sae.lr", [](RunConfig& c, auto k, auto v) { c.sae.lr = to_double(k, v); }},
      {"sae.epochs", [](RunConfig& c, auto k, auto v) { c.sae.epochs = to_u64(k, v); }},
      {"sae.batch_size", [](RunConfig& c, auto k, auto v) { c.sae.batch_size = to_u64(k, v); }},
      {"sae.resample_every", [](RunConfig& c, auto k, auto v) { c.sae.resample_every = to_u64(k, v); }},
      {"sae.unit_norm_decoder", [](RunConfig& c, auto k, auto v) { c.sae.unit_norm_decoder = to_bool(k, v); }},
      {"sae.adam_beta1", [](RunConfig& c, auto k, auto v) { c.sae.adam_beta1 = to_double(k, v); }},
      {"sae.adam_beta2", [](RunConfig& c, auto k, auto v) { c.sae.adam_beta2 = to_double(k, v); }},
      {"sae.adam_eps", [](RunConfig& c, auto k, auto v) { c.sae.adam_eps = to_double(k, v); }},
      {"probe.lambda2", [](RunConfig& c, auto k, auto v) { c.probe.train.lambda2 = to_double(k, v); }},
      {"probe.lr", [](RunConfig& c, auto k, auto v) { c.probe.train.lr = to_double(k, v); }},
      {"probe.epochs", [](RunConfig& c, auto k, auto v) { c.probe.train.epochs = to_u64(k, v); }},
      {"probe.prune_topk", [](RunConfig& c, auto k, auto v) { c.probe.prune_topk = to_u64(k, v); }},
      {"probe.full_batch_limit", [](RunConfig& c, auto k, auto v) { c.probe.train.full_batch_limit = to_u64(k, v); }},
      {"probe.batch_size", [](RunConfig& c, auto k, auto v) { c.probe.train.batch_size = to_u64(k, v); }},
      {"vocab.path", [](RunConfig& c, auto, auto v) { c.vocab.path = std::string(v); }},
      {"eval.min_alignment", [](RunConfig& c, auto k, auto v) { c.eval.min_alignment = to_double(k, v); }},
      {"eval.heldout_fraction", [](RunConfig& c, auto k, auto v) { c.eval.heldout_fraction = to_double(k, v); }},
      {"eval.explain_top", [](RunConfig& c, auto k, auto v) { c.eval.explain_top = to_u64(k, v); }},
      {"eval.clusters", [](RunConfig& c, auto k, auto v) { c.eval.clusters = to_u64(k, v); }},
      {"eval.cluster_top", [](RunConfig& c, auto k, auto v) { c.eval.cluster_top = to_u64(k, v); }},
      {"eval.kmeans_max_iters", [](RunConfig& c, auto k, auto v) { c.eval.kmeans_max_iters = to_u64(k, v); }},
      {"eval.sparsity_fraction", [](RunConfig& c, auto k, auto v) { c.eval.sparsity_fraction = to_double(k, v); }},
      {"sweep.lr", [](RunConfig& c, auto k, auto v) { c.sweep.lr = to_list<double>(k, v, to_double); }},
      {"sweep.lambda1", [](RunConfig& c, auto k, auto v) { c.sweep.lambda1 = to_list<double>(k, v, to_double); }},
      {"sweep.expansion",
       [](RunConfig& c, auto k, auto v) { c.sweep.expansion = to_list<std::size_t>(k, v, to_u64); }},
      {"sweep.heldout_fraction", [](RunConfig& c, auto k, auto v) { c.sweep.heldout_fraction = to_double(k, v); }},
  };
  return table;
}

}  // namespace

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  std::string section;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find_first_of("#;"); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw Error(ErrorKind::InvalidConfig, fmt::format("config line {}: malformed section header", line_no));
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section != "sae" && section != "probe" && section != "vocab" && section != "eval" && section != "sweep") {
        throw Error(ErrorKind::InvalidConfig, fmt::format("config line {}: unknown section [{}]", line_no, section));
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::InvalidConfig, fmt::format("config line {}: expected key = value", line_no));
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const std::string full = section.empty() ? std::string(key) : fmt::format("{}.{}", section, key);
    const auto it = setters().find(full);
    if (it == setters().end()) {
      throw Error(ErrorKind::InvalidConfig, fmt::format("config line {}: unknown key '{}'", line_no, full));
    }
    it->second(cfg, full, value);
  }
  cfg.apply_seed(cfg.seed);
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return parse(io::read_file(path)); }

void RunConfig::apply_seed(RngSeed s) {
  seed = s;
  sae.seed = derive_seed(s, "sae");
  probe.train.seed = derive_seed(s, "probe");
}

void RunConfig::validate() const {
  sae.validate();
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); };
  const auto& p = probe.train;
  if (!(p.lambda2 >= 0.0)) fail("probe.lambda2 must be >= 0");
  if (!(p.lr > 0.0)) fail("probe.lr must be > 0");
  if (p.epochs < 1) fail("probe.epochs must be >= 1");
  if (p.batch_size < 1) fail("probe.batch_size must be >= 1");
  if (eval.min_alignment && (*eval.min_alignment < -1.0 || *eval.min_alignment > 1.0)) {
    fail("eval.min_alignment must lie in [-1, 1]");
  }
  if (!(eval.heldout_fraction > 0.0 && eval.heldout_fraction < 1.0)) fail("eval.heldout_fraction must lie in (0, 1)");
  if (eval.clusters < 1) fail("eval.clusters must be >= 1");
  if (eval.kmeans_max_iters < 1) fail("eval.kmeans_max_iters must be >= 1");
  if (!(eval.sparsity_fraction > 0.0 && eval.sparsity_fraction <= 1.0)) {
    fail("eval.sparsity_fraction must lie in (0, 1]");
  }
  for (double v : sweep.lr)
    if (!(v > 0.0)) fail("sweep.lr entries must be > 0");
  for (double v : sweep.lambda1)
    if (!(v >= 0.0)) fail("sweep.lambda1 entries must be >= 0");
  for (std::size_t v : sweep.expansion)
    if (v < 1) fail("sweep.expansion entries must be >= 1");
  if (!(sweep.heldout_fraction > 0.0 && sweep.heldout_fraction < 1.0)) {
    fail("sweep.heldout_fraction must lie in (0, 1)");
  }
}

SaeConfig RunConfig::sae_config() const { return sae; }
ProbeConfig RunConfig::probe_config() const { return probe.train; }

}  // namespace dncbm
