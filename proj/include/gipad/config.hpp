#pragma once

// Flat key = value run configuration. Precedence: flag > file > default.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gipad/data.hpp"
#include "gipad/model.hpp"
#include "gipad/trainer.hpp"

namespace gipad {

enum class Provenance { Default, File, Flag };

std::string_view provenance_name(Provenance p);

class RunConfig {
 public:
  RunConfig();

  // Applies a config file; unknown keys and malformed lines are errors.
  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value, Provenance from);

  const std::string& get(const std::string& key) const;
  Provenance provenance(const std::string& key) const;
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  ModelConfig model() const;
  TrainConfig train() const;
  SynthSpec synth() const;

  // Every key with its value and provenance, in a format load_file accepts.
  std::string resolved() const;
  void write_resolved(const std::filesystem::path& outdir) const;

  static const std::vector<std::pair<std::string, std::string>>& defaults();

 private:
  struct Entry {
    std::string value;
    Provenance from = Provenance::Default;
  };
  std::map<std::string, Entry> values_;
};

}  // namespace gipad
