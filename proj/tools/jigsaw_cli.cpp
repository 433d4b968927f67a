// jigsaw: command-line driver for the tailings change-mapping pipeline.
//
//   jigsaw synth      synthetic before/after band files, mask and truth maps
//   jigsaw resample   band headers -> normalized 10 m scene (+ indices)
//   jigsaw sample     mask -> plan.txt, split.txt
//   jigsaw train      scene + mask -> weights.jigw, history.csv
//   jigsaw eval       weights + scene + split -> confusion report
//   jigsaw classify   weights + scene -> class map + rendering
//   jigsaw changemap  two class maps -> mask, impact table, rendering
//   jigsaw gradcheck  64-bit gradient checks
//
// Settings come from built-in defaults, then --config (key=value lines, '#'
// comments), then JIGSAW_OUT_DIR for the output directory, then flags.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "jigsaw/jigsaw.hpp"

namespace fs = std::filesystem;
using namespace jigsaw;

namespace {

struct KeyInfo {
  const char* name;
  const char* fallback;
  const char* help;
};

// Every key a config file may set. Flags use the same names (with '-' or '_').
const std::vector<KeyInfo>& known_keys() {
  static const std::vector<KeyInfo> keys{
      {"out", ".", "output directory"},
      {"seed", "0", "master seed; stages use seed+1 (sampling), +2 (split), +3 (init), +4 (shuffle)"},
      {"workers", "1", "threads per stage; 1 is fully deterministic"},
      {"bands", "", "comma-separated single-band headers, in stacking order"},
      {"scale", "10000", "reflectance scale divisor"},
      {"clamp_max", "1.5", "upper clamp after scaling"},
      {"index", "", "normalized-difference indices name:a:b, comma-separated (0-based bands)"},
      {"raster", "", "normalized scene header"},
      {"mask", "", "annotation mask header"},
      {"plan", "", "sample plan file (instead of sampling the mask)"},
      {"split", "", "split file (instead of splitting the plan)"},
      {"per_class", "1200", "labeled pixels drawn per class"},
      {"fraction", "0.5", "training share of each class"},
      {"weights", "", "weight file"},
      {"tile_size", "17", "tile edge in pixels (odd)"},
      {"conv_channels", "8,8,8,8", "channels of the 3x3, 5x5, 7x7 and pool branches"},
      {"dense_widths", "32,32", "pixel branch widths"},
      {"fusion_width", "128", "fusion layer width"},
      {"epochs", "30", "training epochs"},
      {"batch_size", "32", "samples per optimizer step"},
      {"optimizer", "adam", "adam or sgd"},
      {"learning_rate", "0.001", "step size"},
      {"beta1", "0.9", "Adam first-moment decay"},
      {"beta2", "0.999", "Adam second-moment decay"},
      {"epsilon", "1e-8", "Adam denominator offset"},
      {"augment", "true", "train on all eight dihedral variants"},
      {"precision", "f32", "f32 or f64 training arithmetic"},
      {"before", "", "class map before the event"},
      {"after", "", "class map after the event"},
      {"target", "1", "class whose appearance is mapped"},
      {"width", "120", "synthetic scene width (multiple of 6)"},
      {"height", "120", "synthetic scene height (multiple of 6)"},
      {"noise", "0.05", "synthetic relative noise"},
      {"blob", "137", "synthetic pixels flipped to the target class"},
  };
  return keys;
}

const KeyInfo* find_key(const std::string& name) {
  for (const auto& k : known_keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

[[noreturn]] void config_error(const std::string& key, const std::string& message) {
  throw Error(ErrorCode::ConfigError, key + ": " + message);
}

std::map<std::string, std::string> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config " + path.string());
  std::map<std::string, std::string> values;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string text(jigsaw::detail::trim(line));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ConfigError, path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key(jigsaw::detail::trim(text.substr(0, eq)));
    if (!find_key(key)) config_error(key, "unknown key (" + path.string() + ":" + std::to_string(line_no) + ")");
    values[key] = std::string(jigsaw::detail::trim(text.substr(eq + 1)));
  }
  return values;
}

// Resolved settings of one subcommand.
class Settings {
 public:
  std::vector<std::string> keys;  // those the subcommand reads, for the run log
  std::map<std::string, std::string> values;

  const std::string& str(const std::string& key) const {
    const auto it = values.find(key);
    if (it == values.end()) config_error(key, "not available for this subcommand");
    return it->second;
  }

  std::string required(const std::string& key) const {
    const auto& v = str(key);
    if (v.empty()) config_error(key, "required");
    return v;
  }

  template <typename T>
  T number(const std::string& key) const {
    const auto& v = str(key);
    const auto parsed = jigsaw::detail::parse_number<T>(v);
    if (!parsed) config_error(key, "not a number: '" + v + "'");
    return *parsed;
  }

  std::size_t count(const std::string& key) const {
    const auto v = number<long long>(key);
    if (v < 0) config_error(key, "must not be negative");
    return static_cast<std::size_t>(v);
  }

  bool flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    config_error(key, "expected true or false, got '" + v + "'");
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    for (auto& part : jigsaw::detail::split(str(key), ',')) {
      const auto t = jigsaw::detail::trim(part);
      if (!t.empty()) out.emplace_back(t);
    }
    return out;
  }

  std::vector<std::size_t> counts(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& part : list(key)) {
      const auto v = jigsaw::detail::parse_number<std::size_t>(part);
      if (!v) config_error(key, "not a count: '" + part + "'");
      out.push_back(*v);
    }
    return out;
  }

  fs::path out_dir() const { return fs::path(str("out")); }

  std::uint64_t seed() const { return number<std::uint64_t>("seed"); }
};

// Binds a subcommand to its keys: each becomes a flag, and after parsing the
// layers are merged into Settings.
class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& description,
          std::vector<std::string> keys)
      : app_(parent.add_subcommand(name, description)) {
    keys.insert(keys.begin(), "out");
    app_->add_option("--config", config_path_, "key=value settings file");
    for (const auto& key : keys) {
      const auto* info = find_key(key);
      settings_.keys.push_back(key);
      std::string names = "--" + key;
      if (key.find('_') != std::string::npos) {
        auto dashed = key;
        std::replace(dashed.begin(), dashed.end(), '_', '-');
        names += ",--" + dashed;
      }
      if (key == "bands" || key == "index") {
        // Repeatable flag; joined with commas like the config form.
        auto& list = lists_[key];
        app_->add_option(key == "bands" ? "--band,--bands" : "--index", list,
                         std::string(info->help) + " (repeatable)");
      } else {
        app_->add_option(names, flags_[key], info->help);
      }
    }
  }

  CLI::App* app() const { return app_; }

  Settings resolve() const {
    Settings s = settings_;
    for (const auto& key : s.keys) s.values[key] = find_key(key)->fallback;
    if (!config_path_.empty()) {
      for (const auto& [key, value] : read_config_file(config_path_)) {
        if (s.values.count(key)) s.values[key] = value;
      }
    }
    if (const char* env = std::getenv("JIGSAW_OUT_DIR"); env && *env) s.values["out"] = env;
    for (const auto& [key, value] : flags_) {
      if (!value.empty()) s.values[key] = value;
    }
    for (const auto& [key, list] : lists_) {
      if (list.empty()) continue;
      std::string joined;
      for (const auto& item : list) joined += (joined.empty() ? "" : ",") + item;
      s.values[key] = joined;
    }
    return s;
  }

 private:
  CLI::App* app_;
  std::string config_path_;
  Settings settings_;
  std::map<std::string, std::string> flags_;
  std::map<std::string, std::vector<std::string>> lists_;
};

fs::path prepare_out_dir(const Settings& s, const std::string& command) {
  const auto dir = s.out_dir();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  std::ostringstream log;
  log << "# jigsaw " << command << "\n";
  log << "command=" << command << "\n";
  for (const auto& key : s.keys) log << key << "=" << s.values.at(key) << "\n";
  jigsaw::detail::write_text(dir / "run.log", log.str());
  return dir;
}

void append_log(const fs::path& dir, const std::string& text) {
  std::ofstream out(dir / "run.log", std::ios::app);
  out << text;
}

JigsawConfig model_config(const Settings& s, std::size_t bands) {
  JigsawConfig c;
  c.tile_size = s.count("tile_size");
  c.input_bands = bands;
  const auto conv = s.counts("conv_channels");
  if (conv.size() != 4) config_error("conv_channels", "expected 4 values");
  std::copy(conv.begin(), conv.end(), c.conv_channels.begin());
  const auto dense = s.counts("dense_widths");
  if (dense.size() != 2) config_error("dense_widths", "expected 2 values");
  std::copy(dense.begin(), dense.end(), c.dense_widths.begin());
  c.fusion_width = s.count("fusion_width");
  c.seed = s.seed() + seed_offset::kInit;
  c.validate();
  return c;
}

TrainConfig train_config(const Settings& s) {
  TrainConfig t;
  t.epochs = s.count("epochs");
  t.batch_size = s.count("batch_size");
  const auto& opt = s.str("optimizer");
  if (opt == "adam") t.optimizer.kind = nn::OptimizerKind::adam;
  else if (opt == "sgd") t.optimizer.kind = nn::OptimizerKind::sgd;
  else config_error("optimizer", "expected adam or sgd, got '" + opt + "'");
  t.optimizer.learning_rate = s.number<double>("learning_rate");
  t.optimizer.beta1 = s.number<double>("beta1");
  t.optimizer.beta2 = s.number<double>("beta2");
  t.optimizer.epsilon = s.number<double>("epsilon");
  t.augment = s.flag("augment");
  const auto& p = s.str("precision");
  if (p == "f32") t.precision = Precision::f32;
  else if (p == "f64") t.precision = Precision::f64;
  else config_error("precision", "expected f32 or f64, got '" + p + "'");
  t.seed = s.seed() + seed_offset::kShuffle;
  t.workers = std::max<std::size_t>(1, s.count("workers"));
  return t;
}

std::uint8_t target_class(const Settings& s) {
  const auto t = s.number<int>("target");
  if (t < 1 || t > kNumClasses) config_error("target", "class id must be 1..7");
  return static_cast<std::uint8_t>(t);
}

// The plan and split a run uses: from files when given, otherwise drawn from
// the mask with the seed's sampling and split offsets.
Split resolve_split(const Settings& s, SamplePlan* plan_out = nullptr) {
  if (s.values.count("split") && !s.str("split").empty()) return load_split(s.str("split"));
  SamplePlan plan;
  if (!s.str("plan").empty()) {
    plan = load_sample_plan(s.str("plan"));
  } else {
    plan = sample_training_set(load_mask(s.required("mask")), s.count("per_class"), s.seed() + seed_offset::kSampling);
  }
  if (plan_out) *plan_out = plan;
  return split_samples(plan, s.number<double>("fraction"), s.seed() + seed_offset::kSplit);
}

ClassMap as_class_map(const LabelGrid& grid) {
  ClassMap map;
  static_cast<LabelGrid&>(map) = grid;
  return map;
}

int cmd_synth(const Settings& s) {
  const auto dir = prepare_out_dir(s, "synth");
  SyntheticOptions o;
  o.width = s.count("width");
  o.height = s.count("height");
  o.relative_noise = s.number<double>("noise");
  o.scale = s.number<double>("scale");
  o.seed = s.seed();
  o.min_pixels_per_class = s.count("per_class");
  const auto scene = make_synthetic_scene(o);
  std::vector<Coord> blob;
  const auto after_truth = flip_blob(scene.truth, s.count("blob"), target_class(s), s.seed() + 5, &blob);
  Rng rng(s.seed() + 6);
  const auto after = render_scene(after_truth, scene.signatures, o.relative_noise, o.scale, rng);
  for (const auto& sub : {"before", "after"}) fs::create_directories(dir / sub);
  const auto before_paths = save_bands(to_sentinel_bands(scene.raster), dir / "before");
  save_bands(to_sentinel_bands(after), dir / "after");
  save_mask(scene.truth, dir / "mask.hdr");
  save_class_map(as_class_map(scene.truth), dir / "truth_before.hdr");
  save_class_map(as_class_map(after_truth), dir / "truth_after.hdr");
  std::cout << "synthetic " << o.width << "x" << o.height << " scene in " << dir.string() << ", " << blob.size()
            << " pixels flipped to class " << s.str("target") << "\n";
  return 0;
}

int cmd_resample(const Settings& s) {
  const auto paths = s.list("bands");
  if (paths.empty()) config_error("bands", "required");
  const auto dir = prepare_out_dir(s, "resample");
  std::vector<BandInput> inputs;
  for (const auto& p : paths) inputs.push_back(load_band(p));
  auto scene = normalize(assemble_scene(inputs), {s.number<double>("scale"), s.number<double>("clamp_max")});
  std::vector<IndexSpec> specs;
  for (const auto& text : s.list("index")) specs.push_back(parse_index_spec(text));
  if (!specs.empty()) scene = append_indices(scene, specs);
  save_raster(scene, dir / "scene.hdr");
  std::cout << "scene " << scene.width << "x" << scene.height << "x" << scene.bands << " -> "
            << (dir / "scene.hdr").string() << "\n";
  return 0;
}

int cmd_sample(const Settings& s) {
  const auto dir = prepare_out_dir(s, "sample");
  SamplePlan plan;
  const auto split = resolve_split(s, &plan);
  save_sample_plan(plan, dir / "plan.txt");
  save_split(split, dir / "split.txt");
  std::cout << plan.size() << " samples, " << split.train.size() << " train / " << split.test.size() << " test\n";
  return 0;
}

int cmd_train(const Settings& s) {
  const auto dir = prepare_out_dir(s, "train");
  const auto raster = load_raster(s.required("raster"));
  SamplePlan plan;
  const auto split = resolve_split(s, &plan);
  if (plan.size() > 0) save_sample_plan(plan, dir / "plan.txt");
  save_split(split, dir / "split.txt");
  const auto config = model_config(s, raster.bands);
  const auto tc = train_config(s);
  auto model = build<float>(config);
  const auto tiles = make_tiles(raster, split.train);
  const auto history = train(model, tiles, tc, [](const EpochStats& e) {
    std::cout << "epoch " << e.epoch << "  loss " << jigsaw::detail::format_fixed(e.loss, 4) << "  accuracy "
              << jigsaw::detail::format_fixed(100.0 * e.accuracy, 2) << "%\n"
              << std::flush;
  });
  save_weights(model, dir / "weights.jigw");
  jigsaw::detail::write_text(dir / "history.csv", history_to_text(history));
  append_log(dir, "parameters=" + std::to_string(model.parameter_count()) + "\n");
  return 0;
}

int cmd_eval(const Settings& s) {
  const auto dir = prepare_out_dir(s, "eval");
  const auto model = load_weights(s.required("weights"));
  const auto raster = load_raster(s.required("raster"));
  const auto split = resolve_split(s);
  const auto matrix = evaluate(model, make_tiles(raster, split.test), std::max<std::size_t>(1, s.count("workers")));
  const auto text = report(matrix, ClassScheme::standard());
  jigsaw::detail::write_text(dir / "confusion.txt", text);
  jigsaw::detail::write_text(dir / "confusion.csv", confusion_to_csv(matrix));
  std::cout << text;
  return 0;
}

int cmd_classify(const Settings& s) {
  const auto dir = prepare_out_dir(s, "classify");
  const auto model = load_weights(s.required("weights"));
  const auto raster = load_raster(s.required("raster"));
  const auto map = classify_image(model, raster, std::max<std::size_t>(1, s.count("workers")));
  save_class_map(map, dir / "classmap.hdr");
  render_map(map, ClassScheme::standard(), dir / "classmap.ppm");
  std::cout << "class map " << map.width << "x" << map.height << " -> " << (dir / "classmap.hdr").string() << "\n";
  return 0;
}

int cmd_changemap(const Settings& s) {
  const auto dir = prepare_out_dir(s, "changemap");
  const auto before = load_class_map(s.required("before"));
  const auto after = load_class_map(s.required("after"));
  const auto target = target_class(s);
  const auto mask = change_mask(before, after, target);
  const auto impact = impact_report(before, mask);
  write_change_outputs(mask, impact, before, after, dir);
  std::cout << impact_to_text(impact, ClassScheme::standard());
  return 0;
}

int cmd_gradcheck(const Settings& s) {
  prepare_out_dir(s, "gradcheck");
  const auto results = run_gradcheck_suite(s.seed());
  bool ok = true;
  double worst_layer = 0.0, worst_model = 0.0;
  for (const auto& r : results) {
    std::cout << jigsaw::detail::pad_right(r.name, 28) << " max rel error " << jigsaw::detail::format_double(r.max_error)
              << " (tol " << jigsaw::detail::format_double(r.tolerance) << ") " << (r.passed() ? "ok" : "FAIL") << "\n";
    ok = ok && r.passed();
    auto& worst = r.tolerance == kModelGradTolerance ? worst_model : worst_layer;
    worst = std::max(worst, r.max_error);
  }
  std::cout << "worst layer error " << jigsaw::detail::format_double(worst_layer) << ", worst model error "
            << jigsaw::detail::format_double(worst_model) << "\n";
  return ok ? 0 : 3;
}

int exit_code(ErrorCode code) {
  if (is_usage(code)) return 1;
  if (is_numeric(code)) return 3;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Jigsaw land-cover classification and tailings change mapping"};
  app.require_subcommand(1);
  app.fallthrough(false);

  const std::vector<std::pair<std::string, std::string>> summaries{
      {"synth", "write a synthetic before/after scene"},
      {"resample", "stack bands at 10 m, normalize, append indices"},
      {"sample", "draw the per-class sample plan and train/test split"},
      {"train", "train a Jigsaw network"},
      {"eval", "confusion matrix on the test split"},
      {"classify", "classify every pixel of a scene"},
      {"changemap", "map pixels that became the target class"},
      {"gradcheck", "check analytic gradients in 64-bit arithmetic"},
  };
  const std::map<std::string, std::vector<std::string>> keys{
      {"synth", {"seed", "width", "height", "noise", "scale", "per_class", "blob", "target"}},
      {"resample", {"bands", "scale", "clamp_max", "index"}},
      {"sample", {"mask", "plan", "per_class", "fraction", "seed"}},
      {"train",
       {"raster", "mask", "plan", "split", "per_class", "fraction", "seed", "workers", "tile_size", "conv_channels",
        "dense_widths", "fusion_width", "epochs", "batch_size", "optimizer", "learning_rate", "beta1", "beta2", "epsilon",
        "augment", "precision"}},
      {"eval", {"weights", "raster", "mask", "plan", "split", "per_class", "fraction", "seed", "workers"}},
      {"classify", {"weights", "raster", "workers"}},
      {"changemap", {"before", "after", "target"}},
      {"gradcheck", {"seed"}},
  };

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    const bool known = std::any_of(summaries.begin(), summaries.end(), [&](const auto& p) { return p.first == name; });
    if (!known) {
      std::cerr << "error: " << Error(ErrorCode::UnknownSubcommand, "'" + name + "'").what() << "\n"
                << "run 'jigsaw --help' for the list of subcommands\n";
      return 1;
    }
  }

  std::map<std::string, std::unique_ptr<Command>> commands;
  for (const auto& [name, summary] : summaries) {
    commands[name] = std::make_unique<Command>(app, name, summary, keys.at(name));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::map<std::string, int (*)(const Settings&)> handlers{
      {"synth", cmd_synth},       {"resample", cmd_resample},   {"sample", cmd_sample},
      {"train", cmd_train},       {"eval", cmd_eval},           {"classify", cmd_classify},
      {"changemap", cmd_changemap}, {"gradcheck", cmd_gradcheck},
  };
  for (const auto& [name, command] : commands) {
    if (!command->app()->parsed()) continue;
    try {
      return handlers.at(name)(command->resolve());
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return exit_code(e.code());
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    }
  }
  return 1;
}
