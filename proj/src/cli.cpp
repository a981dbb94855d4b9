#include "gipad/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "gipad/audit.hpp"
#include "gipad/config.hpp"
#include "gipad/error.hpp"
#include "gipad/metrics.hpp"
#include "gipad/parallel.hpp"

namespace gipad {

namespace fs = std::filesystem;

namespace {

struct FlagSpec {
  const char* flag;
  const char* key;
  const char* help;
};

const std::vector<FlagSpec> kShared = {
    {"--seed", "seed", "random seed"},
    {"--outdir", "outdir", "output directory"},
    {"--threads", "threads", "worker threads (0 = all cores)"},
};

const std::vector<FlagSpec> kModelFlags = {
    {"--groups", "groups", "GI group count"},
    {"--reduce", "reduce", "generator reduction ratio"},
    {"--kernel", "gi_kernel", "GI kernel size"},
    {"--placement", "placement", "none|begin|end|both"},
    {"--width", "width_multiplier", "width multiplier"},
    {"--input-size", "input_size", "input resolution"},
};

const std::map<std::string, std::vector<FlagSpec>> kCommandFlags = {
    {"synth",
     {{"--train", "synth_train", "train patches"},
      {"--dev", "synth_dev", "dev patches"},
      {"--test", "synth_test", "test patches"},
      {"--size", "synth_size", "patch size"}}},
    {"train",
     {{"--manifest", "manifest", "manifest CSV"},
      {"--lr", "lr", "Adam learning rate"},
      {"--batch-size", "batch_size", "mini-batch size"},
      {"--epochs", "max_epochs", "maximum epochs"},
      {"--patience", "patience", "early-stopping patience"},
      {"--smoothing", "label_smoothing", "label smoothing"},
      {"--hflip", "hflip", "random horizontal flips (true|false)"},
      {"--subject-disjoint", "subject_disjoint", "reject subjects shared across splits"}}},
    {"eval",
     {{"--checkpoint", "checkpoint", "model checkpoint"},
      {"--manifest", "manifest", "manifest CSV"},
      {"--threshold", "threshold", "dev_eer|fixed"},
      {"--fixed-threshold", "fixed_threshold", "threshold used with --threshold fixed"},
      {"--subject-disjoint", "subject_disjoint", "reject subjects shared across splits"}}},
    {"audit",
     {{"--checkpoint", "checkpoint", "model checkpoint"},
      {"--manifest", "manifest", "manifest CSV"},
      {"--split", "audit_split", "split to audit"},
      {"--max-samples", "max_samples", "sample cap"},
      {"--export-fields", "export_fields", "also write raw kernel fields"},
      {"--subject-disjoint", "subject_disjoint", "reject subjects shared across splits"}}},
    {"flops",
     {{"--groups", "grid_groups", "comma-separated group counts"},
      {"--reduce", "grid_reduce", "comma-separated reduction ratios"},
      {"--placement", "grid_placement", "comma-separated placements"},
      {"--input-size", "grid_input_size", "comma-separated input sizes"},
      {"--width", "width_multiplier", "width multiplier"},
      {"--kernel", "gi_kernel", "GI kernel size"}}},
    {"gradcam",
     {{"--checkpoint", "checkpoint", "model checkpoint"},
      {"--image", "image", "PPM/PGM image"},
      {"--class", "class_index", "class index (1 = bonafide)"}}},
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path resolve_outdir(RunConfig& cfg) {
  if (cfg.get("outdir").empty()) {
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", std::localtime(&now));
    cfg.set("outdir", "runs/" + std::string(stamp) + "_seed" + cfg.get("seed"), Provenance::Default);
  }
  return cfg.get("outdir");
}

const std::string& required(const RunConfig& cfg, const std::string& key) {
  const std::string& v = cfg.get(key);
  if (v.empty()) throw ConfigError("missing required setting '" + key + "'");
  return v;
}

FrameManifest manifest_of(const RunConfig& cfg) {
  return load_manifest(required(cfg, "manifest"), cfg.get_bool("subject_disjoint"));
}

void require_split(const FrameManifest& m, Split s, const std::string& why) {
  if (!m.has_split(s)) {
    throw DataError("manifest has no " + std::string(split_name(s)) + " split (" + why + ")");
  }
}

ScoreSet score_set(const std::vector<double>& p, const std::vector<int>& labels) {
  ScoreSet s;
  for (std::size_t i = 0; i < p.size(); ++i) s.add(p[i], labels[i]);
  return s;
}

// --- subcommands ---------------------------------------------------------------

int cmd_synth(const RunConfig& cfg, const fs::path& outdir) {
  const SynthSpec spec = cfg.synth();
  const FrameManifest m = generate_synth(spec, outdir);
  std::cout << "wrote " << m.rows.size() << " patches and " << (outdir / "manifest.csv").string()
            << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const fs::path& outdir) {
  const ModelConfig mc = cfg.model();
  const TrainConfig tc = cfg.train();
  const FrameManifest m = manifest_of(cfg);
  require_split(m, Split::Train, "training");
  require_split(m, Split::Dev, "early stopping");
  Rng rng(mix_seed(tc.seed, 0));
  Model model = build_model(mc, rng);
  std::cout << "params " << model.param_count() << "  GFLOPs "
            << fmt("%.4f", model_flops(model, mc.input_size) / 1e9) << '\n';
  const Batch train_set = load_split(m, Split::Train, mc.input_size);
  const Batch dev_set = load_split(m, Split::Dev, mc.input_size);

  TrainOptions opts;
  opts.checkpoint = outdir / "model.ckpt";
  opts.on_epoch = [](const EpochRecord& e) {
    std::cout << "epoch " << e.epoch << "  train_loss " << fmt("%.5f", e.train_loss)
              << "  dev_loss " << fmt("%.5f", e.dev_loss) << "  dev_acc "
              << fmt("%.4f", e.dev_acc) << std::endl;
  };
  const TrainHistory h = train(model, train_set, dev_set, tc, opts);
  write_history(outdir / "history.csv", h);
  std::cout << "stopped: " << stop_reason_name(h.stop_reason) << "  best epoch " << h.best_epoch
            << "  checkpoint " << (outdir / "model.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const fs::path& outdir) {
  const Model model = load_checkpoint(required(cfg, "checkpoint"));
  const int size = model.config().input_size;
  const FrameManifest m = manifest_of(cfg);
  require_split(m, Split::Test, "evaluation");

  OperatingPoint op;
  const std::string mode = cfg.get("threshold");
  std::vector<ScoreRecord> dev_records;
  if (mode == "dev_eer") {
    require_split(m, Split::Dev, "--threshold dev_eer");
    const Batch dev = load_split(m, Split::Dev, size);
    const std::vector<double> p = score_images(model, dev.images);
    for (std::size_t i = 0; i < p.size(); ++i) dev_records.push_back({p[i], dev.labels[i], Split::Dev});
    op = dev_eer_operating_point(score_set(p, dev.labels));
  } else if (mode == "fixed") {
    op = {cfg.get_double("fixed_threshold"), ThresholdSource::Fixed};
  } else {
    throw ConfigError("threshold must be dev_eer or fixed, got '" + mode + "'");
  }

  const Batch test = load_split(m, Split::Test, size);
  const std::vector<double> p = score_images(model, test.images);
  std::vector<ScoreRecord> records;
  for (std::size_t i = 0; i < p.size(); ++i) records.push_back({p[i], test.labels[i], Split::Test});
  const ScoreSet ts = score_set(p, test.labels);
  const MetricReport rep = evaluate(ts, op);

  write_scores(outdir / "scores.csv", records);
  if (!dev_records.empty()) write_scores(outdir / "dev_scores.csv", dev_records);
  write_sweep(outdir / "sweep.csv", ts);
  std::ofstream(outdir / "metrics.json") << report_json(rep) << '\n';
  std::cout << "accuracy " << fmt("%.2f", 100 * rep.accuracy) << "%  HTER "
            << fmt("%.2f", 100 * rep.hter) << "%  EER " << fmt("%.2f", 100 * rep.eer)
            << "%  AUC " << fmt("%.4f", rep.auc) << "  threshold " << fmt("%.6g", rep.threshold)
            << '\n';
  return kExitOk;
}

int cmd_audit(const RunConfig& cfg, const fs::path& outdir) {
  const Model model = load_checkpoint(required(cfg, "checkpoint"));
  if (model.gi_blocks().empty()) throw ConfigError("audit: checkpoint has placement=none");
  const FrameManifest m = manifest_of(cfg);
  const Split split = parse_split(cfg.get("audit_split"));
  require_split(m, split, "audit");
  const Batch data = load_split(m, split, model.config().input_size);
  const AuditReport r = audit_run(model, data, cfg.get_int("max_samples"));
  write_audit(outdir, r);
  if (cfg.get_bool("export_fields")) {
    FieldSink sink;
    const int n = std::min(data.images.n(), cfg.get_int("max_samples"));
    const Shape4 s = data.images.shape();
    auto src = data.images.data().subspan(0, static_cast<std::size_t>(n) * s.c * s.h * s.w);
    model.infer(Tensor4({n, s.c, s.h, s.w}, std::vector<double>(src.begin(), src.end())), &sink);
    export_field(outdir / "fields.t4d", sink.back());
  }
  std::cout << "audited " << r.samples.size() << " samples (" << r.bonafide.n << " bonafide, "
            << r.attack.n << " attack); report " << (outdir / "audit.json").string() << '\n';
  for (std::size_t i = 0; i < 4; ++i) {
    std::cout << "  cohens_d " << kIndicators[i] << " = " << fmt("%.4f", r.cohens_d[i]) << '\n';
  }
  return kExitOk;
}

struct PublishedRow {
  int groups;
  int reduce;
  Placement placement;
  int input_size;
  double params_m;
  double gflops;
};

// Published complexity figures at width 1.0 and k = 5.
const PublishedRow kPublishedRows[] = {
    {16, 4, Placement::End, 256, 3.476, 0.623},   {30, 4, Placement::End, 256, 3.497, 0.626},
    {60, 4, Placement::End, 256, 3.543, 0.631},   {120, 4, Placement::End, 256, 3.635, 0.643},
    {240, 4, Placement::End, 256, 3.818, 0.666},  {120, 4, Placement::Begin, 256, 2.975, 0.645},
    {120, 4, Placement::End, 512, 3.635, 2.563},  {120, 4, Placement::End, 128, 3.635, 0.163},
    {120, 4, Placement::End, 64, 3.635, 0.043},   {120, 1, Placement::End, 256, 5.775, 0.919},
    {120, 8, Placement::End, 256, 3.303, 0.600},
};

std::optional<PublishedRow> published_row(const ModelConfig& c) {
  if (c.width_multiplier != 1.0 || c.gi_kernel != 5) return std::nullopt;
  for (const PublishedRow& r : kPublishedRows) {
    if (r.groups == c.groups && r.reduce == c.reduce && r.placement == c.placement &&
        r.input_size == c.input_size) {
      return r;
    }
  }
  return std::nullopt;
}

int to_int(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(std::string(what) + ": expected an integer, got '" + s + "'");
}

int cmd_flops(const RunConfig& cfg, const fs::path& outdir) {
  std::ofstream out(outdir / "flops.csv");
  if (!out) throw DataError("cannot write " + (outdir / "flops.csv").string());
  const std::string header =
      "groups,reduce,placement,input_size,params,gflops,flops_ratio_vs_half_size,"
      "published_params_m,published_gflops,params_dev_pct,gflops_dev_pct,status";
  out << header << '\n';
  std::cout << header << '\n';
  const ModelConfig base = cfg.model();
  for (const std::string& g : cfg.get_list("grid_groups"))
    for (const std::string& r : cfg.get_list("grid_reduce"))
      for (const std::string& p : cfg.get_list("grid_placement"))
        for (const std::string& s : cfg.get_list("grid_input_size")) {
          std::string row = g + "," + r + "," + p + "," + s + ",";
          try {
            ModelConfig c = base;
            c.groups = to_int(g, "grid_groups");
            c.reduce = to_int(r, "grid_reduce");
            c.placement = parse_placement(p);
            c.input_size = to_int(s, "grid_input_size");
            Rng rng(0);
            Model model = build_model(c, rng);
            const std::int64_t params = model.param_count();
            const double flops = static_cast<double>(model_flops(model, c.input_size));
            const double half = static_cast<double>(model_flops(model, c.input_size / 2));
            row += std::to_string(params) + "," + fmt("%.6f", flops / 1e9) + "," +
                   fmt("%.4f", flops / half) + ",";
            if (const auto ref = published_row(c)) {
              row += fmt("%.3f", ref->params_m) + "," + fmt("%.3f", ref->gflops) + "," +
                     fmt("%+.2f", 100.0 * (params / 1e6 - ref->params_m) / ref->params_m) + "," +
                     fmt("%+.2f", 100.0 * (flops / 1e9 - ref->gflops) / ref->gflops) + ",ok";
            } else {
              row += ",,,,ok";
            }
          } catch (const ConfigError& e) {
            row += ",,,,,,,error: " + std::string(e.what());
            for (char& ch : row)
              if (ch == '\n') ch = ' ';
          }
          out << row << '\n';
          std::cout << row << '\n';
        }
  return kExitOk;
}

int cmd_gradcam(const RunConfig& cfg, const fs::path& outdir) {
  Model model = load_checkpoint(required(cfg, "checkpoint"));
  const Image img = read_pnm(required(cfg, "image"));
  const Tensor4 x = preprocess(img, model.config().input_size);
  const Tensor4 cam = gradcam(model, x, cfg.get_int("class_index"));

  Image heat(cam.h(), cam.w(), 1);
  Image overlay = denormalize(x);
  for (int r = 0; r < cam.h(); ++r)
    for (int c = 0; c < cam.w(); ++c) {
      const double h = cam(0, 0, r, c);
      heat.at(r, c, 0) = 255.0 * h;
      const double color[3] = {255.0 * h, 255.0 * (1.0 - std::abs(2.0 * h - 1.0)), 255.0 * (1.0 - h)};
      for (int ch = 0; ch < 3; ++ch) overlay.at(r, c, ch) = 0.5 * overlay.at(r, c, ch) + 0.5 * color[ch];
    }
  write_pnm(outdir / "heatmap.pgm", heat);
  write_pnm(outdir / "overlay.ppm", overlay);
  save_tensor(outdir / "heatmap.t4d", cam);
  std::cout << "wrote " << (outdir / "heatmap.pgm").string() << " and "
            << (outdir / "overlay.ppm").string() << '\n';
  return kExitOk;
}

using Command = int (*)(const RunConfig&, const fs::path&);

const std::map<std::string, std::pair<Command, const char*>> kCommands = {
    {"synth", {cmd_synth, "generate the synthetic bonafide/attack benchmark"}},
    {"train", {cmd_train, "train a model on a manifest"}},
    {"eval", {cmd_eval, "score the test split and write the metric report"}},
    {"audit", {cmd_audit, "audit generated GI kernels"}},
    {"flops", {cmd_flops, "tabulate parameters and FLOPs over a config grid"}},
    {"gradcam", {cmd_gradcam, "write a Grad-CAM heatmap for one image"}},
};

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Group-involution presentation attack detection toolkit", "gipad"};
  app.require_subcommand(1);

  struct Bound {
    std::string key;
    std::string value;
    CLI::Option* option = nullptr;
  };
  std::map<std::string, std::vector<Bound>> bound;
  std::map<std::string, std::string> config_path;
  for (const auto& [name, entry] : kCommands) {
    CLI::App* sub = app.add_subcommand(name, entry.second);
    sub->add_option("--config", config_path[name], "key = value config file");
    std::vector<FlagSpec> flags = kShared;
    if (name == "train") flags.insert(flags.end(), kModelFlags.begin(), kModelFlags.end());
    const auto& own = kCommandFlags.at(name);
    flags.insert(flags.end(), own.begin(), own.end());
    auto& slots = bound[name];
    slots.resize(flags.size());
    for (std::size_t i = 0; i < flags.size(); ++i) {
      slots[i].key = flags[i].key;
      slots[i].option = sub->add_option(flags[i].flag, slots[i].value, flags[i].help);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    RunConfig cfg;
    if (!config_path[name].empty()) cfg.load_file(config_path[name]);
    for (const Bound& b : bound[name]) {
      if (b.option->count() > 0) cfg.set(b.key, b.value, Provenance::Flag);
    }
    set_num_threads(cfg.get_int("threads"));
    const fs::path outdir = resolve_outdir(cfg);
    cfg.write_resolved(outdir);
    return kCommands.at(name).first(cfg, outdir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const UndefinedMetricError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const InternalError& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace gipad
