#include "langtail/config.hpp"

#include "langtail/errors.hpp"
#include "langtail/io.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace langtail::config {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("'" + key + "' expects a number, got '" + text + "'");
  }
  return v;
}

}  // namespace

RunConfig::RunConfig(std::vector<KeySpec> schema) : schema_(std::move(schema)) {
  for (const auto& k : schema_) values_[k.name] = k.default_value;
}

const KeySpec& RunConfig::spec(const std::string& key) const {
  const auto it = std::find_if(schema_.begin(), schema_.end(), [&](const KeySpec& k) { return k.name == key; });
  if (it == schema_.end()) throw ConfigError("unknown key '" + key + "'");
  return *it;
}

void RunConfig::set(const std::string& key, const std::string& value, const fs::path& base_dir) {
  const auto& k = spec(key);
  if (k.kind == KeyKind::path && !value.empty()) {
    values_[key] = fs::absolute(base_dir / value).lexically_normal().string();
  } else {
    values_[key] = value;
  }
}

void RunConfig::load_text(const std::string& text, const fs::path& base_dir, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    try {
      set(key, trim(line.substr(eq + 1)), base_dir);
    } catch (const ConfigError& e) {
      std::string what = e.what();
      what.erase(0, what.find(": ") + 2);
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + what);
    }
  }
}

void RunConfig::load_file(const fs::path& path) {
  load_text(io::read_text_file(path), fs::absolute(path).parent_path(), path.string());
}

bool RunConfig::has(const std::string& key) const { return !get(key).empty(); }

const std::string& RunConfig::get(const std::string& key) const {
  spec(key);
  return values_.at(key);
}

fs::path RunConfig::path(const std::string& key) const { return fs::path(get(key)); }

fs::path RunConfig::required_path(const std::string& key) const {
  if (!has(key)) throw ConfigError("missing required setting '" + key + "'");
  return path(key);
}

double RunConfig::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }
long RunConfig::get_long(const std::string& key) const { return parse_number<long>(key, get(key)); }
std::size_t RunConfig::get_size(const std::string& key) const { return parse_number<std::size_t>(key, get(key)); }
std::uint64_t RunConfig::get_u64(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

std::vector<std::size_t> RunConfig::get_sizes(const std::string& key) const {
  std::vector<std::size_t> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_number<std::size_t>(key, item));
  }
  return out;
}

std::string RunConfig::resolved() const {
  std::ostringstream ss;
  for (const auto& k : schema_) ss << k.name << " = " << values_.at(k.name) << '\n';
  return ss.str();
}

std::vector<KeySpec> synth_schema() {
  return {
      {"out", "", KeyKind::path},
      {"n_classes", "8"},
      {"points_per_scene", "2000"},
      {"n_scenes", "10"},
      {"zipf_exponent", "1.2"},
      {"input_dim", "6"},
      {"class_separation", "2.0"},
      {"noise_sigma", "0.3"},
      {"entity_alias_rate", "0.25"},
      {"seed", "0"},
      {"spatial_dims", "3"},
      {"spatial_extent", "4.0"},
      {"instance_points", "100"},
      {"distill_dim", "0"},
      {"embedding_dim", "512"},
      {"alias_perturbation", "0.05"},
  };
}

std::vector<KeySpec> train_schema() {
  return {
      {"corpus", "", KeyKind::path},
      {"bank", "", KeyKind::path},
      {"out", "", KeyKind::path},
      {"checkpoint", "", KeyKind::path},
      {"lambda", "0.9"},
      {"granularities", "120,80,20"},
      {"epochs", "200"},
      {"batch_scenes", "8"},
      {"lr0", "1e-4"},
      {"lr_min", "1e-8"},
      {"poly_power", "0.9"},
      {"recluster_every", "10"},
      {"tau", "0.07"},
      {"seed", "0"},
      {"hidden", "256"},
      {"feature_dim", "384"},
      {"warmup_epochs", "5"},
      {"global_branch", "true", KeyKind::flag},
      {"freeze_spectral", "false", KeyKind::flag},
      {"s_prime", "64"},
      {"normalize_frequency", "false", KeyKind::flag},
      {"entity_batch", "64"},
      {"align_steps", "500"},
      {"align_lr", "1e-2"},
      {"class_hint", "false", KeyKind::flag},
      {"sample_cap", std::to_string(cluster::kDefaultSampleCap)},
      {"beta1", "0.9"},
      {"beta2", "0.999"},
      {"eps", "1e-8"},
      {"weight_decay", "1e-4"},
      {"threads", "1"},
      {"unmatched", "merge"},
      {"dump_spectral", "false", KeyKind::flag},
  };
}

synth::SynthConfig synth_config(const RunConfig& rc) {
  synth::SynthConfig c;
  c.n_classes = rc.get_size("n_classes");
  c.points_per_scene = rc.get_size("points_per_scene");
  c.n_scenes = rc.get_size("n_scenes");
  c.zipf_exponent = rc.get_double("zipf_exponent");
  c.input_dim = rc.get_size("input_dim");
  c.class_separation = rc.get_double("class_separation");
  c.noise_sigma = rc.get_double("noise_sigma");
  c.entity_alias_rate = rc.get_double("entity_alias_rate");
  c.seed = rc.get_u64("seed");
  c.spatial_dims = rc.get_size("spatial_dims");
  c.spatial_extent = rc.get_double("spatial_extent");
  c.instance_points = rc.get_size("instance_points");
  c.distill_dim = rc.get_size("distill_dim");
  c.embedding_dim = rc.get_size("embedding_dim");
  c.alias_perturbation = rc.get_double("alias_perturbation");
  c.validate();
  return c;
}

train::TrainConfig train_config(const RunConfig& rc) {
  train::TrainConfig c;
  c.lambda = rc.get_double("lambda");
  c.granularities = cluster::GranularitySet(rc.get_sizes("granularities"));
  c.epochs = static_cast<int>(rc.get_long("epochs"));
  c.batch_scenes = rc.get_size("batch_scenes");
  c.lr0 = rc.get_double("lr0");
  c.lr_min = rc.get_double("lr_min");
  c.poly_power = rc.get_double("poly_power");
  c.recluster_every = static_cast<int>(rc.get_long("recluster_every"));
  c.tau = rc.get_double("tau");
  c.seed = rc.get_u64("seed");
  c.hidden = rc.get_sizes("hidden");
  c.feature_dim = rc.get_size("feature_dim");
  c.warmup_epochs = static_cast<int>(rc.get_long("warmup_epochs"));
  c.global_branch = rc.get_bool("global_branch");
  c.freeze_spectral = rc.get_bool("freeze_spectral");
  c.s_prime = rc.get_size("s_prime");
  c.normalize_frequency = rc.get_bool("normalize_frequency");
  c.entity_batch = rc.get_size("entity_batch");
  c.align_steps = static_cast<int>(rc.get_long("align_steps"));
  c.align_lr = rc.get_double("align_lr");
  c.class_hint = rc.get_bool("class_hint");
  c.sample_cap = rc.get_size("sample_cap");
  c.adamw.beta1 = rc.get_double("beta1");
  c.adamw.beta2 = rc.get_double("beta2");
  c.adamw.eps = rc.get_double("eps");
  c.adamw.weight_decay = rc.get_double("weight_decay");
  c.threads = rc.get_size("threads");
  const auto& u = rc.get("unmatched");
  if (u == "merge") {
    c.unmatched = eval::UnmatchedPolicy::merge;
  } else if (u == "drop") {
    c.unmatched = eval::UnmatchedPolicy::drop;
  } else {
    throw ConfigError("'unmatched' must be merge or drop, got '" + u + "'");
  }
  c.dump_spectral = rc.get_bool("dump_spectral");
  c.validate();
  return c;
}

}  // namespace langtail::config
