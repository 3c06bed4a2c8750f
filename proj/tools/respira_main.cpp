// Copyright 2026 The Respira Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// respira: command-line front end.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <sstream>

#include "respira/attribution.hpp"
#include "respira/data.hpp"
#include "respira/error.hpp"
#include "respira/fbs.hpp"
#include "respira/model.hpp"
#include "respira/random.hpp"
#include "respira/spectrogram_cache.hpp"
#include "respira/train.hpp"

#ifndef RESPIRA_VERSION
#define RESPIRA_VERSION "dev"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace respira;

namespace {

fs::path g_workdir = ".";

std::string resolve(const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  return path.is_absolute() ? p : (g_workdir / path).lexically_normal().string();
}

std::string ensure_dir(const std::string& p) {
  const auto dir = resolve(p);
  fs::create_directories(dir);
  return dir;
}

std::string file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<char> buf(1 << 16);
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a64(std::string_view(buf.data(), static_cast<std::size_t>(is.gcount())), h);
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// Exclusive advisory lock held for the lifetime of the object.
class FileLock {
 public:
  explicit FileLock(const std::string& path) : fd_(::open(path.c_str(), O_CREAT | O_RDWR, 0644)) {
    if (fd_ < 0) throw DataError("cannot open lock file " + path);
    ::flock(fd_, LOCK_EX);
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_;
};

struct Manifest {
  std::string command;
  std::string config;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write() const {
    json j;
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    json in = json::object();
    for (const auto& p : inputs) in[p] = fs::exists(p) && fs::is_regular_file(p) ? file_hash(p) : "";
    j["input_hash"] = in;
    j["code_version"] = RESPIRA_VERSION;
    j["outputs"] = outputs;
    j["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    j["finished_at"] = stamp;
    fs::create_directories(g_workdir);
    const auto path = (g_workdir / "manifests.jsonl").string();
    FileLock lock(path + ".lock");
    std::ofstream os(path, std::ios::app);
    os << j.dump() << '\n';
  }
};

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ConfigError("expected a comma-separated integer list, got '" + s + "'");
    }
  }
  return out;
}

std::vector<std::string> parse_str_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

// ---------------------------------------------------------------- options

struct ModelOpts {
  std::string preset = "icbhi";
  std::string channels;
  int kernel = 0;
  int classes = 0;
  std::string placement;

  void add(CLI::App* app) {
    app->add_option("--preset", preset, "Model preset: icbhi (4 blocks, d=512) or sprsound (3 blocks, d=256)")
        ->check(CLI::IsMember({"icbhi", "sprsound"}))
        ->capture_default_str();
    app->add_option("--channels", channels, "Comma-separated conv widths; overrides the preset");
    app->add_option("--kernel", kernel, "Conv kernel size (preset default 5)");
    app->add_option("--classes", classes, "Number of output classes");
    app->add_option("--placement", placement,
                    "Attention placement: none, input, after_block_<k>, after_last, after_aggregation");
  }

  ModelConfig resolve(int bands, Task task) const {
    ModelConfig cfg = preset == "sprsound" ? ModelConfig::sprsound() : ModelConfig::icbhi();
    if (task == Task::kBinary) cfg.n_classes = 2;
    if (!channels.empty()) cfg.channels = parse_int_list(channels);
    if (kernel > 0) cfg.kernel_size = kernel;
    if (classes > 0) cfg.n_classes = classes;
    if (!placement.empty()) cfg.set_placement(placement);
    cfg.n_mels_in = bands;
    if (channels.empty()) cfg.validate_paper();
    else cfg.validate();
    return cfg;
  }
};

struct TrainOpts {
  TrainConfig cfg;
  std::string task = "multiclass";
  bool no_augment = false;

  void add(CLI::App* app) {
    app->add_option("--task", task, "binary or multiclass")->check(CLI::IsMember({"binary", "multiclass"}))->capture_default_str();
    app->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    app->add_option("--batch", cfg.batch_size, "Batch size")->capture_default_str();
    app->add_option("--lr", cfg.lr0, "Initial learning rate (cosine decay to 0)")->capture_default_str();
    app->add_option("--wd", cfg.weight_decay, "Weight decay")->capture_default_str();
    app->add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
    app->add_flag("--no-augment", no_augment, "Disable SpecAugment");
  }

  TrainConfig resolve() const {
    TrainConfig c = cfg;
    c.task = parse_task(task);
    c.augment = !no_augment;
    c.validate();
    return c;
  }
};

struct DataOpts {
  std::string cache;
  std::string split;

  void add(CLI::App* app, const std::string& default_split) {
    split = default_split;
    app->add_option("--cache", cache, "Spectrogram cache written by preprocess")->required();
    app->add_option("--split", split, "Split to use: all, or a split name (prefix match, e.g. test)")->capture_default_str();
  }

  std::vector<Spectrogram> load() const {
    auto c = load_spectrogram_cache(resolve(cache));
    std::vector<Spectrogram> out;
    for (auto& s : c.items) {
      if (split == "all" || s.split == split || s.split.rfind(split + "_", 0) == 0) out.push_back(std::move(s));
    }
    if (out.empty()) throw DataError("no records with split '" + split + "' in " + resolve(cache));
    return out;
  }
};

std::optional<FrequencyMask> load_optional_mask(const std::string& path) {
  if (path.empty()) return std::nullopt;
  auto m = load_mask(resolve(path));
  m.validate();
  return m;
}

void print_counts(const std::vector<Spectrogram>& items, const std::vector<std::string>& names) {
  std::map<int, std::int64_t> counts;
  for (const auto& s : items) ++counts[s.label];
  for (const auto& [label, n] : counts) {
    const auto name = label >= 0 && label < static_cast<int>(names.size()) ? names[label] : "class " + std::to_string(label);
    std::cout << "  " << name << ": " << n << "\n";
  }
}

std::string resolved_config(const CLI::App* app) { return app->config_to_str(true, false); }

// --------------------------------------------------------------- commands

struct PreprocessOpts {
  std::string dataset = "synth";
  std::string root;
  std::string cache;
  bool force = false;
  FrontendConfig frontend;
  std::string pad_mode = "circular";
  SynthSpec synth;
  double snr = 10.0;
};

void cmd_preprocess(const PreprocessOpts& o, const CLI::App* app) {
  Manifest man{"preprocess", resolved_config(app)};
  man.seed = o.synth.seed;
  const auto cache_path = resolve(o.cache);
  FrontendConfig fe = o.frontend;
  fe.pad_mode = parse_pad_mode(o.pad_mode);
  SynthSpec spec = o.synth;
  spec.snr_db = o.snr;
  std::string source;
  std::vector<std::string> names;
  if (o.dataset == "synth") {
    std::ostringstream os;
    os << "synth;classes=" << spec.n_classes << ";per_class=" << spec.n_per_class << ";frames=" << spec.frames
       << ";bands=" << spec.bands << ";snr=" << spec.snr_db << ";patients=" << spec.n_patients << ";seed=" << spec.seed;
    source = os.str();
    for (int c = 0; c < spec.n_classes; ++c) names.push_back(c == 0 ? "background" : "signal " + std::to_string(c));
  } else {
    if (o.root.empty()) throw ConfigError("--data-root is required for dataset " + o.dataset);
    source = o.dataset + ";root=" + fs::absolute(resolve(o.root)).string() + ";" + fe.canonical();
    names = o.dataset == "icbhi" ? icbhi_classes() : sprsound_classes();
    man.inputs.push_back(resolve(o.root));
  }
  const auto key = hex64(fnv1a64(source));

  fs::create_directories(fs::path(cache_path).parent_path().empty() ? fs::path(".") : fs::path(cache_path).parent_path());
  FileLock lock(cache_path + ".lock");
  if (!o.force && peek_cache_hash(cache_path) == key) {
    auto cache = load_spectrogram_cache(cache_path);
    std::cout << "cache hit: " << cache_path << " (" << cache.items.size() << " spectrograms)\n";
    print_counts(cache.items, names);
    man.outputs.push_back(cache_path);
    man.write();
    return;
  }
  SpectrogramCache cache;
  cache.config_hash = key;
  if (o.dataset == "synth") {
    auto corpus = synth_corpus(spec);
    std::cout << "synthetic corpus: oracle accuracy " << corpus.oracle_accuracy << ", planted bands";
    for (int f : spec.all_planted()) std::cout << ' ' << f;
    std::cout << "\n";
    cache.items = std::move(corpus.items);
  } else {
    ParseResult parsed = o.dataset == "icbhi" ? parse_icbhi(resolve(o.root))
                                              : parse_sprsound(resolve(o.root), o.dataset == "sprsound2023"
                                                                                    ? SprEdition::k2023
                                                                                    : SprEdition::k2022);
    for (const auto& w : parsed.warnings) std::cerr << "warning: " << w << "\n";
    const auto records_csv = (fs::path(cache_path).parent_path() / "records.csv").string();
    write_records_csv(records_csv, parsed.records);
    man.outputs.push_back(records_csv);
    cache.items = records_to_spectrograms(parsed.records, fe);
  }
  save_spectrogram_cache(cache_path, cache);
  std::cout << "wrote " << cache_path << " (" << cache.items.size() << " spectrograms)\n";
  print_counts(cache.items, names);
  man.outputs.push_back(cache_path);
  man.write();
}

struct TrainCmdOpts {
  DataOpts data;
  ModelOpts model;
  TrainOpts train;
  std::string mask;
  std::string out = "run";
  bool age_specific = false;
  double age_threshold = 18.0;
  int age_batch = 64;
  std::string eval_split = "test";
};

void cmd_train(const TrainCmdOpts& o, const CLI::App* app) {
  Manifest man{"train", resolved_config(app)};
  auto tcfg = o.train.resolve();
  tcfg.age_threshold = o.age_threshold;
  tcfg.age_batch_size = o.age_batch;
  man.seed = tcfg.seed;
  man.inputs.push_back(resolve(o.data.cache));
  const auto mask = load_optional_mask(o.mask);
  if (mask) man.inputs.push_back(resolve(o.mask));
  auto data = o.data.load();
  const int bands = mask ? mask->kept() : static_cast<int>(data[0].bands);
  const auto mcfg = o.model.resolve(bands, tcfg.task);
  const auto dir = ensure_dir(o.out);
  const FrequencyMask* mp = mask ? &*mask : nullptr;
  if (!o.age_specific) {
    auto res = train(data, mcfg, tcfg, mp);
    const auto ckpt = (fs::path(dir) / "model.ckpt").string();
    const auto hist = (fs::path(dir) / "history.csv").string();
    res.model.save(ckpt);
    write_history_csv(hist, res.history);
    const auto& last = res.history.back();
    std::cout << "trained " << res.history.size() << " epochs: final loss " << last.loss << ", train AS " << last.train.as
              << "\n";
    man.outputs = {ckpt, hist};
  } else {
    DataOpts eval_opts = o.data;
    eval_opts.split = o.eval_split;
    auto eval = eval_opts.load();
    auto res = train_age_specific(data, eval, mcfg, tcfg, mp);
    const auto child = (fs::path(dir) / "child.ckpt").string();
    const auto adult = (fs::path(dir) / "adult.ckpt").string();
    const auto report = (fs::path(dir) / "age_report.json").string();
    res.child.model.save(child);
    res.adult.model.save(adult);
    write_history_csv((fs::path(dir) / "child_history.csv").string(), res.child.history);
    write_history_csv((fs::path(dir) / "adult_history.csv").string(), res.adult.history);
    std::ofstream os(report);
    os << "{\"child\": " << res.child_report.to_json() << ", \"adult\": " << res.adult_report.to_json()
       << ", \"combined\": " << res.combined.to_json() << "}\n";
    std::cout << "child AS " << res.child_report.as << ", adult AS " << res.adult_report.as << ", combined AS "
              << res.combined.as << "\n";
    man.outputs = {child, adult, report};
  }
  man.write();
}

struct FbsCmdOpts {
  DataOpts data;
  ModelOpts model;
  TrainOpts train;
  FbsConfig fbs;
  std::string method = "importance";
  std::string out = "fbs";
};

void cmd_fbs(const FbsCmdOpts& o, const CLI::App* app) {
  Manifest man{"fbs", resolved_config(app)};
  const auto tcfg = o.train.resolve();
  man.seed = tcfg.seed;
  man.inputs.push_back(resolve(o.data.cache));
  auto data = o.data.load();
  const auto total = static_cast<int>(data[0].bands);
  const auto mcfg = o.model.resolve(total, tcfg.task);
  const auto dir = ensure_dir(o.out);
  auto progress = [&](const FbsIteration& it) {
    std::cout << "iteration " << it.index << ": " << it.mask.kept() << " bands, mean CV AS " << std::fixed
              << std::setprecision(2) << it.mean_as << std::defaultfloat;
    if (!it.candidates.empty()) std::cout << " (" << it.candidates.size() << " candidates)";
    std::cout << std::endl;
    const auto stem = fs::path(dir) / ("iter_" + std::to_string(it.index));
    if (it.table) write_importance_csv(stem.string() + "_importance.csv", *it.table, it.mask);
    std::ofstream os(stem.string() + "_cv.csv");
    os << std::setprecision(9);
    if (!it.candidates.empty()) {
      os << "window,mean_as,mean_loss\n";
      for (const auto& c : it.candidates) {
        for (std::size_t i = 0; i < c.window.size(); ++i) os << (i ? " " : "") << c.window[i];
        os << ',' << c.mean_as << ',' << c.mean_loss << '\n';
      }
    } else {
      os << "fold,as\n";
      for (std::size_t k = 0; k < it.fold_as.size(); ++k) os << k << ',' << it.fold_as[k] << '\n';
    }
  };
  auto res = o.method == "importance" ? fbs_importance(data, mcfg, tcfg, o.fbs, progress)
                                      : fbs_backward(data, mcfg, tcfg, o.fbs, progress);
  res.best.config_hash = hex64(fnv1a64(mcfg.canonical() + "|" + tcfg.canonical()));
  const auto mask_path = (fs::path(dir) / "mask.txt").string();
  const auto curve_csv = (fs::path(dir) / "curve.csv").string();
  const auto curve_svg = (fs::path(dir) / "curve.svg").string();
  save_mask(mask_path, res.best);
  write_fbs_curve_csv(curve_csv, res);
  std::ofstream(curve_svg) << fbs_curve_svg(res, total);
  std::cout << "best mask keeps " << res.best.kept() << "/" << total << " bands, mean CV AS " << res.best_as << " ("
            << res.stop_reason << "); " << res.cv_runs << " CV runs, " << res.trainings << " trainings\n";
  man.outputs = {mask_path, curve_csv, curve_svg};
  man.write();
}

struct EvalCmdOpts {
  DataOpts data;
  std::string checkpoint;
  std::string task = "multiclass";
  std::string mask;
  std::string expect_hash;
  std::string out = "eval";
};

CnnTsa load_checked(const std::string& path, const std::string& expect_hash) {
  try {
    return CnnTsa::load(resolve(path), expect_hash);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(e.what()) +
                      "; the checkpoint was trained with a different model configuration, refusing to use it");
  }
}

void check_bands(const CnnTsa& model, const std::vector<Spectrogram>& data, const std::optional<FrequencyMask>& mask) {
  const auto bands = mask ? mask->kept() : static_cast<int>(data[0].bands);
  if (bands != model.config().n_mels_in) {
    throw ConfigError("checkpoint expects " + std::to_string(model.config().n_mels_in) + " Mel bands but the " +
                      (mask ? "masked " : "") + "data has " + std::to_string(bands) +
                      (mask ? "" : "; pass the --mask used for training"));
  }
}

void cmd_evaluate(const EvalCmdOpts& o, const CLI::App* app) {
  Manifest man{"evaluate", resolved_config(app)};
  man.inputs = {resolve(o.checkpoint), resolve(o.data.cache)};
  auto model = load_checked(o.checkpoint, o.expect_hash);
  const auto mask = load_optional_mask(o.mask);
  auto data = o.data.load();
  check_bands(model, data, mask);
  const auto rep = evaluate(model, data, parse_task(o.task), mask ? &*mask : nullptr);
  const auto dir = ensure_dir(o.out);
  const auto report = (fs::path(dir) / "report.json").string();
  const auto confusion = (fs::path(dir) / "confusion.csv").string();
  std::ofstream(report) << rep.to_json() << "\n";
  std::ofstream cs(confusion);
  cs << "true\\pred";
  for (std::size_t j = 0; j < rep.confusion.size(); ++j) cs << ',' << j;
  cs << '\n';
  for (std::size_t i = 0; i < rep.confusion.size(); ++i) {
    cs << i;
    for (auto v : rep.confusion[i]) cs << ',' << v;
    cs << '\n';
  }
  std::cout << rep.to_json() << "\n";
  man.outputs = {report, confusion};
  man.write();
}

struct AttrCmdOpts {
  DataOpts data;
  std::string checkpoint;
  std::string method = "gradcam";
  int class_id = -1;
  std::string samples;
  int limit = 4;
  int steps = 50;
  std::string mask;
  std::string out = "attr";
};

void cmd_attribute(const AttrCmdOpts& o, const CLI::App* app) {
  Manifest man{"attribute", resolved_config(app)};
  man.inputs = {resolve(o.checkpoint), resolve(o.data.cache)};
  auto model = load_checked(o.checkpoint, "");
  const auto mask = load_optional_mask(o.mask);
  auto data = o.data.load();
  check_bands(model, data, mask);
  if (mask) data = apply_mask(data, *mask);
  std::vector<const Spectrogram*> chosen;
  if (!o.samples.empty()) {
    for (const auto& id : parse_str_list(o.samples)) {
      auto it = std::find_if(data.begin(), data.end(), [&](const Spectrogram& s) { return s.id == id; });
      if (it == data.end()) throw DataError("sample '" + id + "' not found in the selected split");
      chosen.push_back(&*it);
    }
  } else {
    for (std::size_t i = 0; i < data.size() && static_cast<int>(chosen.size()) < o.limit; ++i) chosen.push_back(&data[i]);
  }
  const auto method = parse_attribution_method(o.method);
  if (o.class_id >= model.config().n_classes) throw ConfigError("--class is out of range for this model");
  IgConfig ig;
  ig.steps = o.steps;
  const auto dir = ensure_dir(o.out);
  std::vector<AttributionMap> maps;
  const auto profiles = (fs::path(dir) / "band_profiles.csv").string();
  std::ofstream pc(profiles);
  pc << "sample,class,band,value\n" << std::setprecision(9);
  const auto scorer = model_scorer(model);
  for (const auto* s : chosen) {
    const int c = o.class_id >= 0 ? o.class_id : std::max(0, s->label);
    auto m = attribute(model, *s, c, method, ig);
    if (method == AttributionMethod::kIntegratedGradients) {
      Spectrogram base = *s;
      std::fill(base.values.begin(), base.values.end(), ig.baseline);
      double total = 0.0;
      for (float v : m.values) total += v;
      const double delta = class_score(scorer, *s, c) - class_score(scorer, base, c);
      std::cout << s->id << ": IG sum " << total << ", score difference " << delta << ", completeness error "
                << (delta != 0.0 ? std::abs(total - delta) / std::abs(delta) * 100.0 : 0.0) << "%\n";
    } else {
      std::cout << s->id << ": class " << c << "\n";
    }
    const auto prof = band_profile(m);
    for (std::size_t f = 0; f < prof.size(); ++f) pc << s->id << ',' << c << ',' << f << ',' << prof[f] << '\n';
    const auto svg = (fs::path(dir) / (s->id + "_" + o.method + ".svg")).string();
    std::ofstream(svg) << heatmap_svg(m);
    man.outputs.push_back(svg);
    maps.push_back(std::move(m));
  }
  const auto dump = (fs::path(dir) / "attributions.bin").string();
  save_attributions(dump, maps);
  man.outputs.push_back(dump);
  man.outputs.push_back(profiles);
  man.write();
}

struct FlopsCmdOpts {
  ModelOpts model;
  int bands = 64;
  int frames = 249;
  std::string mask;
  int keep = 0;
  std::string out;
};

void cmd_flops(const FlopsCmdOpts& o, const CLI::App* app) {
  Manifest man{"flops", resolved_config(app)};
  const auto full_cfg = o.model.resolve(o.bands, Task::kMulticlass);
  int kept = o.bands;
  if (!o.mask.empty()) {
    const auto m = load_optional_mask(o.mask);
    if (m->bands() != o.bands) throw ConfigError("mask has " + std::to_string(m->bands()) + " bands, --bands is " + std::to_string(o.bands));
    kept = m->kept();
    man.inputs.push_back(resolve(o.mask));
  } else if (o.keep > 0) {
    kept = o.keep;
  }
  auto masked_cfg = full_cfg;
  masked_cfg.n_mels_in = kept;
  masked_cfg.validate();
  const auto full = count_flops(full_cfg, o.frames);
  const auto masked = count_flops(masked_cfg, o.frames);
  std::ostringstream csv;
  csv << "layer,flops_full,flops_masked\n" << std::setprecision(12);
  for (std::size_t i = 0; i < full.layers.size(); ++i) {
    csv << full.layers[i].name << ',' << full.layers[i].flops << ',' << masked.layers[i].flops << '\n';
  }
  csv << "total," << full.total() << ',' << masked.total() << '\n';
  std::cout << csv.str();
  std::cout << "parameters " << parameter_count(full_cfg) << "\n";
  std::cout << "GFLOPs full " << full.total() / 1e9 << ", with " << kept << "/" << o.bands << " bands "
            << masked.total() / 1e9 << ", ratio " << masked.total() / full.total() << "\n";
  if (!o.out.empty()) {
    const auto path = resolve(o.out);
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    std::ofstream(path) << csv.str();
    man.outputs.push_back(path);
  }
  man.write();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"respira: respiratory-sound classification with attribution-driven frequency band selection"};
  app.set_config("--config", "", "Key-value config file; command-line flags take precedence");
  std::string workdir = ".";
  app.add_option("--workdir", workdir, "Root for every relative path and for manifests.jsonl")->capture_default_str();
  app.require_subcommand(1);

  PreprocessOpts pre;
  auto* p = app.add_subcommand("preprocess", "Parse a dataset into a spectrogram cache");
  p->add_option("--dataset", pre.dataset, "icbhi, sprsound2022, sprsound2023 or synth")
      ->check(CLI::IsMember({"icbhi", "sprsound2022", "sprsound2023", "synth"}))
      ->capture_default_str();
  p->add_option("--data-root", pre.root, "Dataset root directory");
  p->add_option("--cache", pre.cache, "Output cache file")->required();
  p->add_flag("--force", pre.force, "Recompute even when the cache is current");
  p->add_option("--sample-rate", pre.frontend.sample_rate)->capture_default_str();
  p->add_option("--seconds", pre.frontend.target_seconds, "Clip length after padding/cropping")->capture_default_str();
  p->add_option("--pad-mode", pre.pad_mode, "circular or repeat_fade")->capture_default_str();
  p->add_option("--fade", pre.frontend.fade_seconds, "Fade length at splice points (s)")->capture_default_str();
  p->add_option("--n-mels", pre.frontend.n_mels)->capture_default_str();
  p->add_option("--win", pre.frontend.win)->capture_default_str();
  p->add_option("--hop", pre.frontend.hop)->capture_default_str();
  p->add_option("--fmin", pre.frontend.f_min)->capture_default_str();
  p->add_option("--fmax", pre.frontend.f_max)->capture_default_str();
  p->add_option("--synth-classes", pre.synth.n_classes)->capture_default_str();
  p->add_option("--synth-per-class", pre.synth.n_per_class)->capture_default_str();
  p->add_option("--synth-frames", pre.synth.frames)->capture_default_str();
  p->add_option("--synth-bands", pre.synth.bands)->capture_default_str();
  p->add_option("--synth-snr", pre.snr, "Background SNR in dB")->capture_default_str();
  p->add_option("--synth-patients", pre.synth.n_patients)->capture_default_str();
  p->add_option("--synth-seed", pre.synth.seed)->capture_default_str();

  TrainCmdOpts tr;
  auto* t = app.add_subcommand("train", "Train a CNN-TSA model");
  tr.data.add(t, "train");
  tr.model.add(t);
  tr.train.add(t);
  t->add_option("--mask", tr.mask, "Frequency mask file from fbs");
  t->add_option("--out", tr.out, "Output directory")->capture_default_str();
  t->add_flag("--age-specific", tr.age_specific, "Train separate child and adult models");
  t->add_option("--age-threshold", tr.age_threshold, "Child/adult boundary in years")->capture_default_str();
  t->add_option("--age-batch", tr.age_batch, "Batch size for the age-specific models")->capture_default_str();
  t->add_option("--eval-split", tr.eval_split, "Split scored by --age-specific")->capture_default_str();

  FbsCmdOpts fb;
  auto* f = app.add_subcommand("fbs", "Frequency band selection");
  fb.data.add(f, "train");
  fb.model.add(f);
  fb.train.add(f);
  f->add_option("--method", fb.method, "importance or backward")
      ->check(CLI::IsMember({"importance", "backward"}))
      ->capture_default_str();
  f->add_option("--lambda", fb.fbs.lambda, "MaxDiff penalty weight in [0,1]")->capture_default_str();
  f->add_option("--r", fb.fbs.r, "Bands removed per importance iteration")->capture_default_str();
  f->add_option("--window", fb.fbs.window, "Adjacent bands per backward candidate")->capture_default_str();
  f->add_option("--folds", fb.fbs.folds, "Cross-validation folds")->capture_default_str();
  f->add_option("--stop-epsilon", fb.fbs.stop_epsilon, "Stop when mean CV AS drops this far below the best")
      ->capture_default_str();
  f->add_option("--min-bands", fb.fbs.min_bands, "Never keep fewer bands")->capture_default_str();
  f->add_option("--out", fb.out, "Output directory")->capture_default_str();

  EvalCmdOpts ev;
  auto* e = app.add_subcommand("evaluate", "Score a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  ev.data.add(e, "test");
  e->add_option("--task", ev.task)->check(CLI::IsMember({"binary", "multiclass"}))->capture_default_str();
  e->add_option("--mask", ev.mask, "Frequency mask used for training");
  e->add_option("--expect-config-hash", ev.expect_hash, "Refuse checkpoints with another model config hash");
  e->add_option("--out", ev.out, "Output directory")->capture_default_str();

  AttrCmdOpts at;
  auto* a = app.add_subcommand("attribute", "Grad-CAM or Integrated Gradients maps");
  a->add_option("--checkpoint", at.checkpoint)->required();
  at.data.add(a, "all");
  a->add_option("--method", at.method)->check(CLI::IsMember({"gradcam", "ig"}))->capture_default_str();
  a->add_option("--class", at.class_id, "Target class (default: each sample's label)");
  a->add_option("--samples", at.samples, "Comma-separated sample ids");
  a->add_option("--limit", at.limit, "Samples to use when --samples is not given")->capture_default_str();
  a->add_option("--steps", at.steps, "Integrated Gradients steps")->capture_default_str();
  a->add_option("--mask", at.mask, "Frequency mask used for training");
  a->add_option("--out", at.out, "Output directory")->capture_default_str();

  FlopsCmdOpts fl;
  auto* fo = app.add_subcommand("flops", "Per-layer FLOPs with and without a mask");
  fl.model.add(fo);
  fo->add_option("--bands", fl.bands, "Mel bands before masking")->capture_default_str();
  fo->add_option("--frames", fl.frames, "Input frames")->capture_default_str();
  fo->add_option("--mask", fl.mask, "Mask file");
  fo->add_option("--keep", fl.keep, "Kept band count when no mask file is given");
  fo->add_option("--out", fl.out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }
  try {
    g_workdir = workdir;
    worker_threads();
    if (*p) cmd_preprocess(pre, p);
    else if (*t) cmd_train(tr, t);
    else if (*f) cmd_fbs(fb, f);
    else if (*e) cmd_evaluate(ev, e);
    else if (*a) cmd_attribute(at, a);
    else if (*fo) cmd_flops(fl, fo);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 2;
  } catch (const ShapeError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 2;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return 3;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << "\n";
    return 4;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  }
  return 0;
}
