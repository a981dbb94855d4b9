#include "gipad/config.hpp"

#include <fstream>
#include <sstream>

#include "gipad/error.hpp"

namespace gipad {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Default: return "default";
    case Provenance::File: return "file";
    case Provenance::Flag: return "flag";
  }
  return "default";
}

const std::vector<std::pair<std::string, std::string>>& RunConfig::defaults() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"seed", "7"},
      {"threads", "0"},
      {"outdir", ""},
      // model
      {"groups", "120"},
      {"reduce", "4"},
      {"gi_kernel", "5"},
      {"placement", "end"},
      {"width_multiplier", "1"},
      {"input_size", "256"},
      {"label_smoothing", "0.05"},
      // training
      {"lr", "0.0001"},
      {"beta1", "0.9"},
      {"beta2", "0.999"},
      {"adam_eps", "1e-08"},
      {"batch_size", "32"},
      {"max_epochs", "100"},
      {"patience", "5"},
      {"hflip", "true"},
      // data
      {"manifest", ""},
      {"subject_disjoint", "true"},
      {"synth_train", "512"},
      {"synth_dev", "128"},
      {"synth_test", "128"},
      {"synth_size", "64"},
      // eval / audit / gradcam
      {"checkpoint", ""},
      {"threshold", "dev_eer"},
      {"fixed_threshold", "0.5"},
      {"audit_split", "test"},
      {"max_samples", "1000"},
      {"export_fields", "false"},
      {"image", ""},
      {"class_index", "1"},
      // flops grid
      {"grid_groups", "16,30,60,120,240"},
      {"grid_reduce", "4"},
      {"grid_placement", "end"},
      {"grid_input_size", "256"},
  };
  return table;
}

RunConfig::RunConfig() {
  for (const auto& [k, v] : defaults()) values_[k] = {v, Provenance::Default};
}

void RunConfig::set(const std::string& key, const std::string& value, Provenance from) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = {value, from};
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    try {
      set(key, trim(line.substr(eq + 1)), Provenance::File);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.value;
}

Provenance RunConfig::provenance(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.from;
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const unsigned long long x = std::stoull(v, &used);
      if (used == v.size()) return x;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

ModelConfig RunConfig::model() const {
  ModelConfig c;
  c.groups = get_int("groups");
  c.reduce = get_int("reduce");
  c.gi_kernel = get_int("gi_kernel");
  c.placement = parse_placement(get("placement"));
  c.width_multiplier = get_double("width_multiplier");
  c.input_size = get_int("input_size");
  c.label_smoothing = get_double("label_smoothing");
  return c;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.lr = get_double("lr");
  t.beta1 = get_double("beta1");
  t.beta2 = get_double("beta2");
  t.adam_eps = get_double("adam_eps");
  t.batch_size = get_int("batch_size");
  t.max_epochs = get_int("max_epochs");
  t.patience = get_int("patience");
  t.label_smoothing = get_double("label_smoothing");
  t.seed = get_u64("seed");
  t.hflip = get_bool("hflip");
  t.validate();
  return t;
}

SynthSpec RunConfig::synth() const {
  SynthSpec s;
  s.seed = get_u64("seed");
  s.train = get_int("synth_train");
  s.dev = get_int("synth_dev");
  s.test = get_int("synth_test");
  s.size = get_int("synth_size");
  return s;
}

std::string RunConfig::resolved() const {
  std::ostringstream out;
  for (const auto& [k, e] : values_) {
    out << k << " = " << e.value << "  # " << provenance_name(e.from) << '\n';
  }
  return out.str();
}

void RunConfig::write_resolved(const std::filesystem::path& outdir) const {
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw DataError("cannot create " + outdir.string() + ": " + ec.message());
  std::ofstream out(outdir / "config.resolved");
  if (!out) throw DataError("cannot write " + (outdir / "config.resolved").string());
  out << resolved();
}

}  // namespace gipad
