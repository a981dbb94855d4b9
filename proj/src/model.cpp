#include "gipad/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gipad/error.hpp"

namespace gipad {

namespace {

struct BneckSpec {
  int k;
  int expand;
  int out;
  bool se;
  Activation act;
  int stride;
};

constexpr Activation RE = Activation::Relu;
constexpr Activation HS = Activation::Hardswish;

// MobileNetV3-Large inverted-residual stages, widths before scaling.
constexpr std::array<BneckSpec, 15> kLargeStages{{
    {3, 16, 16, false, RE, 1},
    {3, 64, 24, false, RE, 2},
    {3, 72, 24, false, RE, 1},
    {5, 72, 40, true, RE, 2},
    {5, 120, 40, true, RE, 1},
    {5, 120, 40, true, RE, 1},
    {3, 240, 80, false, HS, 2},
    {3, 200, 80, false, HS, 1},
    {3, 184, 80, false, HS, 1},
    {3, 184, 80, false, HS, 1},
    {3, 480, 112, true, HS, 1},
    {3, 672, 112, true, HS, 1},
    {5, 672, 160, true, HS, 2},
    {5, 960, 160, true, HS, 1},
    {5, 960, 160, true, HS, 1},
}};

constexpr int kStemWidth = 16;
constexpr int kLastWidth = 960;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int parse_int(const std::map<std::string, std::string>& kv, const std::string& key, int fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const int v = std::stoi(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + it->second + "'");
  }
}

double parse_double(const std::map<std::string, std::string>& kv, const std::string& key,
                    double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + it->second + "'");
  }
}

void validate(const ModelConfig& cfg) {
  if (cfg.groups < 1) throw ConfigError("groups must be >= 1");
  if (cfg.reduce < 1) throw ConfigError("reduce must be >= 1");
  if (cfg.gi_kernel < 1 || cfg.gi_kernel % 2 == 0) {
    throw ConfigError("gi_kernel must be a positive odd integer, got " +
                      std::to_string(cfg.gi_kernel));
  }
  if (!(cfg.width_multiplier > 0.0)) throw ConfigError("width_multiplier must be positive");
  if (cfg.input_size < 32) {
    throw ConfigError("input_size must be >= 32, got " + std::to_string(cfg.input_size));
  }
  if (cfg.num_classes != 2) throw ConfigError("num_classes must be 2");
  if (cfg.label_smoothing < 0.0 || cfg.label_smoothing >= 1.0) {
    throw ConfigError("label_smoothing must be in [0, 1)");
  }
  const auto check = [&](int channels, int groups, const char* site) {
    if (channels % groups != 0) {
      throw ConfigError(std::string(site) + " GI: channel count " + std::to_string(channels) +
                        " is not divisible by group count " + std::to_string(groups));
    }
    if (channels % cfg.reduce != 0) {
      throw ConfigError(std::string(site) + " GI: channel count " + std::to_string(channels) +
                        " is not divisible by reduce " + std::to_string(cfg.reduce));
    }
  };
  if (cfg.has_begin()) check(stem_channels(cfg), begin_groups(cfg), "begin");
  if (cfg.has_end()) check(last_channels(cfg), cfg.groups, "end");
}

}  // namespace

Placement parse_placement(std::string_view name) {
  if (name == "none") return Placement::None;
  if (name == "begin") return Placement::Begin;
  if (name == "end") return Placement::End;
  if (name == "both") return Placement::Both;
  throw ConfigError("unknown placement '" + std::string(name) + "' (none|begin|end|both)");
}

std::string_view placement_name(Placement p) {
  switch (p) {
    case Placement::None: return "none";
    case Placement::Begin: return "begin";
    case Placement::End: return "end";
    case Placement::Both: return "both";
  }
  return "none";
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"groups", std::to_string(groups)},
      {"reduce", std::to_string(reduce)},
      {"gi_kernel", std::to_string(gi_kernel)},
      {"placement", std::string(placement_name(placement))},
      {"width_multiplier", format_double(width_multiplier)},
      {"input_size", std::to_string(input_size)},
      {"num_classes", std::to_string(num_classes)},
      {"label_smoothing", format_double(label_smoothing)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  c.groups = parse_int(kv, "groups", c.groups);
  c.reduce = parse_int(kv, "reduce", c.reduce);
  c.gi_kernel = parse_int(kv, "gi_kernel", c.gi_kernel);
  if (auto it = kv.find("placement"); it != kv.end()) c.placement = parse_placement(it->second);
  c.width_multiplier = parse_double(kv, "width_multiplier", c.width_multiplier);
  c.input_size = parse_int(kv, "input_size", c.input_size);
  c.num_classes = parse_int(kv, "num_classes", c.num_classes);
  c.label_smoothing = parse_double(kv, "label_smoothing", c.label_smoothing);
  return c;
}

int make_divisible(double value, int divisor) {
  int v = std::max(divisor, static_cast<int>(value + divisor / 2.0) / divisor * divisor);
  if (v < 0.9 * value) v += divisor;
  return v;
}

int stem_channels(const ModelConfig& cfg) {
  return make_divisible(kStemWidth * cfg.width_multiplier);
}

int last_channels(const ModelConfig& cfg) {
  return make_divisible(kLastWidth * cfg.width_multiplier);
}

int begin_groups(const ModelConfig& cfg) { return std::min(cfg.groups, stem_channels(cfg)); }

std::int64_t gi_block_params(int channels, int reduce, int groups, int k) {
  const std::int64_t c = channels;
  const std::int64_t hidden = c / reduce;
  const std::int64_t out = static_cast<std::int64_t>(groups) * k * k;
  return c * hidden + 2 * hidden + hidden * out + out + 2 * c;
}

Model::Model(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  validate(cfg_);
  const double w = cfg_.width_multiplier;
  int c = stem_channels(cfg_);
  trunk_.add(std::make_unique<Conv2d>("stem.conv", 3, c, 3, 2, 1, false, rng));
  trunk_.add(std::make_unique<BatchNorm2d>("stem.bn", c));
  trunk_.add(std::make_unique<Act>(Activation::Hardswish));
  if (cfg_.has_begin()) {
    auto gi = std::make_unique<GroupInvolutionBlock>("gi_begin", c, begin_groups(cfg_),
                                                     cfg_.reduce, cfg_.gi_kernel, rng);
    gi_blocks_.push_back(gi.get());
    trunk_.add(std::move(gi));
  }
  for (std::size_t i = 0; i < kLargeStages.size(); ++i) {
    const BneckSpec& s = kLargeStages[i];
    const int expand = make_divisible(s.expand * w);
    const int out = make_divisible(s.out * w);
    trunk_.add(std::make_unique<InvertedResidual>("blocks." + std::to_string(i), c, expand, out,
                                                  s.k, s.stride, s.se, s.act, rng));
    c = out;
  }
  const int last = last_channels(cfg_);
  trunk_.add(std::make_unique<Conv2d>("last.conv", c, last, 1, 1, 1, false, rng));
  trunk_.add(std::make_unique<BatchNorm2d>("last.bn", last));
  trunk_.add(std::make_unique<Act>(Activation::Hardswish));
  if (cfg_.has_end()) {
    auto gi = std::make_unique<GroupInvolutionBlock>("gi_end", last, cfg_.groups, cfg_.reduce,
                                                     cfg_.gi_kernel, rng);
    gi_blocks_.push_back(gi.get());
    trunk_.add(std::move(gi));
  }
  classifier_.add(std::make_unique<GlobalAvgPool>());
  auto head = std::make_unique<Linear>("head", last, cfg_.num_classes, rng);
  head_ = head.get();
  classifier_.add(std::move(head));
}

void Model::check_input(const Tensor4& x) const {
  if (x.c() != 3 || x.h() != cfg_.input_size || x.w() != cfg_.input_size) {
    throw ConfigError("model expects (N, 3, " + std::to_string(cfg_.input_size) + ", " +
                      std::to_string(cfg_.input_size) + ") input, got " + to_string(x.shape()));
  }
}

Tensor4 Model::forward(const Tensor4& x, Mode mode) {
  check_input(x);
  return classifier_.forward(trunk_.forward(x, mode), mode);
}

Tensor4 Model::backward(const Tensor4& grad_logits) {
  return trunk_.backward(classifier_.backward(grad_logits));
}

Tensor4 Model::infer(const Tensor4& x, FieldSink* sink) const {
  check_input(x);
  return classifier_.infer(trunk_.infer(x, sink), sink);
}

std::vector<Param*> Model::params() {
  std::vector<Param*> out;
  trunk_.collect_params(out);
  classifier_.collect_params(out);
  return out;
}

std::vector<NamedBuffer> Model::buffers() {
  std::vector<NamedBuffer> out;
  trunk_.collect_buffers(out);
  classifier_.collect_buffers(out);
  return out;
}

void Model::zero_grad() {
  for (Param* p : params()) p->zero_grad();
}

std::int64_t Model::param_count() {
  std::int64_t total = 0;
  for (Param* p : params()) total += static_cast<std::int64_t>(p->value.size());
  return total;
}

std::vector<CostEntry> Model::cost_entries(int input_size) const {
  std::vector<CostEntry> out;
  const Shape4 in{1, 3, input_size, input_size};
  trunk_.describe(in, out);
  classifier_.describe(trunk_.output_shape(in), out);
  return out;
}

Model build_model(const ModelConfig& cfg, Rng& rng) { return Model(cfg, rng); }

std::int64_t param_count(Model& model) { return model.param_count(); }

std::int64_t model_flops(const Model& model, int input_size) {
  std::int64_t total = 0;
  for (const CostEntry& e : model.cost_entries(input_size)) total += layer_flops(e.desc, e.input);
  return total;
}

std::int64_t linear_flops(const Model& model, int input_size) {
  std::int64_t total = 0;
  for (const CostEntry& e : model.cost_entries(input_size)) {
    if (e.desc.kind == LayerKind::Linear) total += layer_flops(e.desc, e.input);
  }
  return total;
}

std::vector<double> live_probability(const Tensor4& logits) {
  if (logits.c() != 2) throw ConfigError("live_probability: expected 2 logits per sample");
  std::vector<double> p(logits.n());
  for (int n = 0; n < logits.n(); ++n) {
    // softmax over two logits == sigmoid of their difference
    const double d = logits(n, 1, 0, 0) - logits(n, 0, 0, 0);
    p[n] = d >= 0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
  }
  return p;
}

// --- Grad-CAM ------------------------------------------------------------------

Tensor4 gradcam_map(const Tensor4& features, const Tensor4& grad_features) {
  const int hw = features.h() * features.w();
  Tensor4 cam(1, 1, features.h(), features.w());
  double* m = cam.plane(0, 0);
  for (int c = 0; c < features.c(); ++c) {
    const double* g = grad_features.plane(0, c);
    double wc = 0.0;
    for (int i = 0; i < hw; ++i) wc += g[i];
    wc /= hw;
    const double* a = features.plane(0, c);
    for (int i = 0; i < hw; ++i) m[i] += wc * a[i];
  }
  double peak = 0.0;
  for (int i = 0; i < hw; ++i) {
    m[i] = std::max(0.0, m[i]);
    peak = std::max(peak, m[i]);
  }
  if (peak > 0.0) {
    for (int i = 0; i < hw; ++i) m[i] /= peak;
  }
  return cam;
}

Tensor4 gradcam(Layer& features, Layer& classifier, const Tensor4& input, int class_index) {
  if (input.n() != 1) throw ConfigError("gradcam: expects a single sample");
  Tensor4 a = features.forward(input, Mode::Infer);
  Tensor4 logits = classifier.forward(a, Mode::Infer);
  if (class_index < 0 || class_index >= logits.c()) {
    throw ConfigError("gradcam: class index " + std::to_string(class_index) + " out of range");
  }
  Tensor4 onehot(logits.shape());
  onehot(0, class_index, 0, 0) = 1.0;
  Tensor4 grad_a = classifier.backward(onehot);
  Tensor4 cam = gradcam_map(a, grad_a);
  return resize_bilinear(cam, input.h(), input.w());
}

Tensor4 gradcam(Model& model, const Tensor4& input, int class_index) {
  if (input.c() != 3 || input.h() != model.config().input_size ||
      input.w() != model.config().input_size) {
    throw ConfigError("gradcam: input shape " + to_string(input.shape()) +
                      " does not match the model");
  }
  return gradcam(model.trunk(), model.classifier(), input, class_index);
}

// --- Checkpoints ---------------------------------------------------------------

namespace {

constexpr std::string_view kCheckpointMagic = "GIPAD-CHECKPOINT 1";

struct ManifestRow {
  std::string name;
  std::size_t offset;
  Shape4 shape;
};

std::vector<std::pair<std::string, Tensor4*>> named_tensors(Model& model) {
  std::vector<std::pair<std::string, Tensor4*>> out;
  for (Param* p : model.params()) out.emplace_back(p->name, &p->value);
  for (NamedBuffer& b : model.buffers()) out.emplace_back(b.name, b.tensor);
  return out;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void save_checkpoint(const std::filesystem::path& path, Model& model) {
  std::ostringstream head;
  head << kCheckpointMagic << '\n' << "[config]\n";
  for (const auto& [k, v] : model.config().to_map()) head << k << " = " << v << '\n';
  head << "[manifest]\n";
  std::string blobs;
  for (const auto& [name, t] : named_tensors(model)) {
    const Shape4& s = t->shape();
    head << name << ' ' << blobs.size() << ' ' << s.n << ' ' << s.c << ' ' << s.h << ' ' << s.w
         << '\n';
    blobs += encode_tensor(*t);
  }
  head << "[data]\n";
  std::string bytes = head.str() + blobs;
  const std::uint64_t sum = fnv1a64(bytes);
  for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((sum >> (8 * i)) & 0xff));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string();
  if (bytes.size() < 8) throw DataError(where + ": truncated");
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) {
    stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[bytes.size() - 8 + i]))
              << (8 * i);
  }
  bytes.resize(bytes.size() - 8);
  if (fnv1a64(bytes) != stored) throw DataError(where + ": checksum mismatch");

  const std::string marker = "\n[data]\n";
  const std::size_t data_at = bytes.find(marker);
  if (data_at == std::string::npos) throw DataError(where + ": missing [data] section");
  std::istringstream text(bytes.substr(0, data_at + 1));
  const std::string_view blobs = std::string_view(bytes).substr(data_at + marker.size());

  std::string line;
  std::getline(text, line);
  if (line != kCheckpointMagic) throw DataError(where + ": bad magic line");
  std::map<std::string, std::string> kv;
  std::vector<ManifestRow> rows;
  enum { None, Config, Manifest } section = None;
  while (std::getline(text, line)) {
    if (line == "[config]") {
      section = Config;
    } else if (line == "[manifest]") {
      section = Manifest;
    } else if (section == Config) {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw DataError(where + ": bad config line '" + line + "'");
      kv[line.substr(0, eq)] = line.substr(eq + 3);
    } else if (section == Manifest) {
      std::istringstream ls(line);
      ManifestRow r;
      if (!(ls >> r.name >> r.offset >> r.shape.n >> r.shape.c >> r.shape.h >> r.shape.w)) {
        throw DataError(where + ": bad manifest line '" + line + "'");
      }
      rows.push_back(r);
    } else {
      throw DataError(where + ": unexpected line '" + line + "'");
    }
  }

  Rng rng(0);
  Model model(ModelConfig::from_map(kv), rng);
  auto tensors = named_tensors(model);
  if (tensors.size() != rows.size()) {
    throw DataError(where + ": holds " + std::to_string(rows.size()) + " tensors, model needs " +
                    std::to_string(tensors.size()));
  }
  std::map<std::string, Tensor4*> by_name(tensors.begin(), tensors.end());
  for (const ManifestRow& r : rows) {
    auto it = by_name.find(r.name);
    if (it == by_name.end()) throw DataError(where + ": unknown tensor '" + r.name + "'");
    if (it->second->shape() != r.shape) {
      throw DataError(where + ": tensor '" + r.name + "' has shape " + to_string(r.shape) +
                      ", model expects " + to_string(it->second->shape()));
    }
    const std::size_t len = kTensorHeaderBytes + r.shape.size() * sizeof(double);
    if (r.offset + len > blobs.size()) throw DataError(where + ": tensor '" + r.name + "' truncated");
    std::istringstream blob(std::string(blobs.substr(r.offset, len)));
    *it->second = read_tensor(blob);
  }
  return model;
}

}  // namespace gipad
