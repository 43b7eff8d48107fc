#pragma once

#include "langtail/synth.hpp"
#include "langtail/train.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace langtail::config {

enum class KeyKind { value, path, flag };

struct KeySpec {
  std::string name;
  std::string default_value;
  KeyKind kind = KeyKind::value;
};

/// Flat `key = value` settings over a fixed schema. Unknown keys are
/// rejected; path values are stored resolved against the directory they
/// were given relative to.
class RunConfig {
 public:
  explicit RunConfig(std::vector<KeySpec> schema);

  /// Parses `key = value` lines. `#` starts a comment.
  void load_text(const std::string& text, const std::filesystem::path& base_dir, const std::string& origin);
  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value, const std::filesystem::path& base_dir);

  const std::vector<KeySpec>& schema() const { return schema_; }
  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::filesystem::path path(const std::string& key) const;
  /// Like path() but ConfigError when unset.
  std::filesystem::path required_path(const std::string& key) const;

  double get_double(const std::string& key) const;
  long get_long(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;

  /// Every key with its effective value, one `key = value` per line.
  std::string resolved() const;

 private:
  const KeySpec& spec(const std::string& key) const;
  std::vector<KeySpec> schema_;
  std::map<std::string, std::string> values_;
};

std::vector<KeySpec> synth_schema();
std::vector<KeySpec> train_schema();

synth::SynthConfig synth_config(const RunConfig& rc);
train::TrainConfig train_config(const RunConfig& rc);

}  // namespace langtail::config
