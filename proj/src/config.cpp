#include "pubflow/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "pubflow/csv.hpp"

namespace pubflow {

namespace {

std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw std::runtime_error("config: malformed integer for " + key + ": '" + v + "'");
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw std::runtime_error("config: malformed seed for " + key + ": '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw std::runtime_error("config: malformed number for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::runtime_error("config: malformed boolean for " + key + ": '" + v + "'");
}

std::vector<std::string> parse_list(std::string v) {
  if (!v.empty() && v.front() == '[') {
    if (v.back() != ']') throw std::runtime_error("config: unbalanced brackets in '" + v + "'");
    v = v.substr(1, v.size() - 2);
  }
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      const std::string item = trim(cur);
      if (!item.empty()) out.push_back(item);
      cur.clear();
    } else {
      cur += c;
    }
  }
  const std::string item = trim(cur);
  if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                               ": expected key = value, got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key");
    if (kv.count(key))
      throw std::runtime_error(origin + ": duplicate key '" + key + "'");
    kv[key] = value;
  }

  RunConfig c;
  std::set<std::string> seen;
  auto take = [&](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    seen.insert(key);
    return it->second;
  };
  auto require = [&](const std::string& key) -> std::string {
    auto v = take(key);
    if (!v) throw std::runtime_error("config: missing required key '" + key + "'");
    return *v;
  };

  c.paths.attributes = require("data.attributes");
  if (auto v = take("data.embeddings")) c.paths.embeddings = *v;
  if (auto v = take("data.pixels_dir")) c.paths.pixels_dir = *v;
  if (c.paths.embeddings.empty() && c.paths.pixels_dir.empty())
    throw std::runtime_error("config: need data.embeddings or data.pixels_dir");
  c.paths.forcings_dir = require("data.forcings_dir");
  c.paths.flow_dir = require("data.flow_dir");
  if (auto v = take("data.basin_list")) c.paths.basin_list = *v;
  if (auto v = take("data.areas")) c.paths.areas = *v;

  c.train_period = parse_period(require("period.train"));
  c.test_period = parse_period(require("period.test"));

  if (auto v = take("run.master_seed")) c.master_seed = parse_u64("run.master_seed", *v);
  if (auto v = take("run.output_dir")) c.output_dir = *v;
  if (auto v = take("run.jobs")) c.jobs = parse_int("run.jobs", *v);
  if (c.jobs < 1) throw std::runtime_error("config: run.jobs must be >= 1");

  if (auto v = take("model.hidden_size")) c.model.hidden_size = parse_int("model.hidden_size", *v);
  if (auto v = take("model.frontend_width"))
    c.model.frontend_width = parse_int("model.frontend_width", *v);
  if (auto v = take("model.dropout")) c.model.dropout = parse_real("model.dropout", *v);
  if (auto v = take("model.batch_size")) c.model.batch_size = parse_int("model.batch_size", *v);
  if (auto v = take("model.sequence_length"))
    c.model.sequence_length = parse_int("model.sequence_length", *v);
  if (auto v = take("model.learning_rate"))
    c.model.learning_rate = parse_real("model.learning_rate", *v);
  if (auto v = take("model.epochs")) c.model.epochs = parse_int("model.epochs", *v);
  if (auto v = take("model.max_windows_per_epoch"))
    c.model.max_windows_per_epoch = parse_int("model.max_windows_per_epoch", *v);
  c.model.validate();

  if (auto v = take("expa.seeds")) c.expa_seeds = parse_int("expa.seeds", *v);
  if (auto v = take("expa.folds")) c.expa_folds = parse_int("expa.folds", *v);
  if (c.expa_seeds < 1 || c.expa_folds < 2)
    throw std::runtime_error("config: expa.seeds must be >= 1 and expa.folds >= 2");

  if (auto v = take("bootstrap.replicates"))
    c.bootstrap_replicates = parse_int("bootstrap.replicates", *v);
  if (auto v = take("bootstrap.fraction"))
    c.bootstrap_fraction = parse_real("bootstrap.fraction", *v);
  if (c.bootstrap_replicates < 1 ||
      !(c.bootstrap_fraction > 0.0 && c.bootstrap_fraction <= 1.0))
    throw std::runtime_error("config: bad bootstrap.replicates/fraction");

  if (auto v = take("ks.samples")) {
    if (*v == "medians")
      c.ks_on_replicates = false;
    else if (*v == "replicates")
      c.ks_on_replicates = true;
    else
      throw std::runtime_error("config: ks.samples must be 'medians' or 'replicates'");
  }
  if (auto v = take("ks.exact_small")) c.ks_exact_small = parse_bool("ks.exact_small", *v);

  if (auto v = take("expb.targets")) {
    for (auto& id : parse_list(*v)) c.expb_targets.push_back(id);
  }
  if (auto v = take("expb.k_ladder")) {
    c.expb_k_ladder.clear();
    c.expb_k_ladder_all = false;
    const auto items = parse_list(*v);
    if (items.empty()) throw std::runtime_error("config: empty expb.k_ladder");
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i] == "all") {
        if (i + 1 != items.size())
          throw std::runtime_error("config: 'all' must be the last k_ladder entry");
        c.expb_k_ladder_all = true;
        break;
      }
      const int k = parse_int("expb.k_ladder", items[i]);
      if (k < 1) throw std::runtime_error("config: k ladder entries must be >= 1");
      if (!c.expb_k_ladder.empty() && k <= c.expb_k_ladder.back())
        throw std::runtime_error("config: k ladder not increasing");
      c.expb_k_ladder.push_back(k);
    }
    if (c.expb_k_ladder.empty() && !c.expb_k_ladder_all)
      throw std::runtime_error("config: empty expb.k_ladder");
  }
  if (auto v = take("expb.seeds_per_cell"))
    c.expb_seeds_per_cell = parse_int("expb.seeds_per_cell", *v);
  if (c.expb_seeds_per_cell < 1)
    throw std::runtime_error("config: expb.seeds_per_cell must be >= 1");
  if (auto v = take("expb.include_random"))
    c.expb_include_random = parse_bool("expb.include_random", *v);
  if (auto v = take("expb.model_variant")) {
    if (*v != "attributes" && *v != "aef")
      throw std::runtime_error("config: expb.model_variant must be 'attributes' or 'aef'");
    c.expb_model_variant = *v;
  }

  if (auto v = take("mi.bins")) c.mi_bins = parse_int("mi.bins", *v);
  if (c.mi_bins < 2) throw std::runtime_error("config: mi.bins must be >= 2");

  if (auto v = take("cluster.k_min")) c.cluster_k_min = parse_int("cluster.k_min", *v);
  if (auto v = take("cluster.k_max")) c.cluster_k_max = parse_int("cluster.k_max", *v);
  if (c.cluster_k_min < 2 || c.cluster_k_max < c.cluster_k_min)
    throw std::runtime_error("config: bad cluster.k_min/k_max");

  for (const auto& [key, value] : kv)
    if (!seen.count(key)) throw std::runtime_error("config: unknown key '" + key + "'");

  if (const char* env = std::getenv("PUBFLOW_OUTPUT_DIR"); env && *env) c.output_dir = env;
  return c;
}

RunConfig parse_config(const std::string& path) {
  return parse_config_text(csv::read_text_file(path), path);
}

}  // namespace pubflow
