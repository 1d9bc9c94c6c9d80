#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "matchinggan/ablation.hpp"
#include "matchinggan/config.hpp"
#include "matchinggan/data.hpp"
#include "matchinggan/evaluation.hpp"
#include "matchinggan/toy_glyphs.hpp"
#include "matchinggan/training.hpp"

#ifndef MATCHINGGAN_VERSION
#define MATCHINGGAN_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mgan;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw UsageError(what + ": '" + item + "' is not an integer");
    }
  }
  if (out.empty()) throw UsageError(what + ": empty list");
  return out;
}

std::string dashed(std::string s) {
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

// The manifest is written before any work and rewritten when the command
// finishes, so an interrupted run still leaves a reproducible record.
class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv, const fs::path& out) : path_(out / "run_manifest.json") {
    doc_ = {{"command", std::move(command)},
            {"argv", std::move(argv)},
            {"cwd", fs::current_path().string()},
            {"version", MATCHINGGAN_VERSION},
            {"started_at", utc_now()},
            {"finished_at", nullptr},
            {"status", "running"},
            {"arguments", json::object()},
            {"config", nullptr},
            {"seed", nullptr},
            {"artifacts", json::object()}};
  }

  json& doc() { return doc_; }
  void argument(const std::string& k, json v) { doc_["arguments"][k] = std::move(v); }
  void artifact(const std::string& k, const fs::path& p) { doc_["artifacts"][k] = p.string(); }

  void write() {
    fs::create_directories(path_.parent_path());
    write_json_file(path_, doc_);
  }
  void finish() {
    doc_["status"] = "completed";
    doc_["finished_at"] = utc_now();
    write();
  }

 private:
  fs::path path_;
  json doc_;
};

// Subcommand arguments. Strings default to empty meaning "not given".
struct Args {
  std::vector<std::string> argv;
  std::string replay_of;

  // shared
  std::string out;
  std::uint64_t seed = 0;
  std::string manifest_override;

  // synth
  int synth_categories = 35, synth_per_category = 30, synth_resolution = 32;

  // prepare-data
  std::string root;
  std::string split_counts;
  int cap = 0, channels = 1, resolution = 32;

  // train / ablate config
  std::string config;
  std::map<std::string, std::string> overrides;
  std::map<std::string, std::vector<CLI::Option*>> override_opts;  // one per subcommand
  bool resume = false;

  // generate / eval
  std::string checkpoint;
  std::string categories = "unseen";
  int count = -1;
  int k2 = 0;
  int per_row = 8;

  // eval
  std::string protocol;
  std::string shots = "10";
  std::string mode = "augmented";
  int ways = 5, episodes = 10;
  std::string backbone;
  int backbone_epochs = 8;
  std::string backbone_channels = "16,32,64";
  int head_steps = 300;

  // ablate
  std::string spec;

  // replay
  std::string replay_manifest;
};

const std::vector<std::string> kProtocols{"fid-is", "lowdata", "fewshot"};

std::vector<int> resolve_categories(const std::string& text, const CategorySplit& split, const DatasetManifest& m) {
  if (text == "unseen") return split.unseen;
  if (text == "seen") return split.seen;
  if (text == "validation_seen" || text == "validation-seen") return split.validation_seen;
  if (text == "all") {
    std::vector<int> all;
    for (const auto& c : m.categories) all.push_back(c.id);
    return all;
  }
  auto ids = parse_int_list(text, "--categories");
  for (int id : ids)
    if (id < 0 || id >= static_cast<int>(m.category_count()))
      throw UsageError("--categories: unknown category id " + std::to_string(id) + " (manifest has " +
                       std::to_string(m.category_count()) + " categories)");
  return ids;
}

DatasetManifest load_manifest(const std::string& path) {
  if (path.empty()) throw ConfigError("no dataset manifest given (set 'manifest' in the config or pass --manifest)");
  return manifest_from_json(read_json_file(path));
}

std::map<std::string, std::string> given_overrides(const Args& a) {
  std::map<std::string, std::string> out;
  for (const auto& [field, opts] : a.override_opts)
    for (const auto* opt : opts)
      if (opt->count() > 0) out[field] = a.overrides.at(field);
  return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Args& a) {
  RunManifest rm("synth", a.argv, a.out);
  rm.argument("categories", a.synth_categories);
  rm.argument("per_category", a.synth_per_category);
  rm.argument("resolution", a.synth_resolution);
  rm.doc()["seed"] = a.seed;
  rm.artifact("root", a.out);
  rm.write();
  toy::write_dataset(a.out, a.synth_categories, a.synth_per_category, a.synth_resolution, a.seed);
  std::cout << "wrote " << a.synth_categories << " categories x " << a.synth_per_category << " images to " << a.out
            << "\n";
  rm.finish();
  return 0;
}

int cmd_prepare(const Args& a) {
  const auto counts = parse_int_list(a.split_counts, "--split");
  if (counts.size() != 3) throw UsageError("--split expects three counts: seen,validation_seen,unseen");
  RunManifest rm("prepare-data", a.argv, a.out);
  rm.argument("root", a.root);
  rm.argument("split", counts);
  rm.argument("cap", a.cap);
  rm.argument("channels", a.channels);
  rm.argument("resolution", a.resolution);
  rm.doc()["seed"] = a.seed;
  rm.artifact("manifest", fs::path(a.out) / "manifest.json");
  rm.artifact("split", fs::path(a.out) / "split.json");
  rm.write();

  const auto m = build_manifest(a.root, a.channels, a.resolution, a.cap, a.seed);
  const auto split = split_categories(m, {counts[0], counts[1], counts[2]}, a.seed);
  write_json_file(fs::path(a.out) / "manifest.json", to_json(m));
  write_json_file(fs::path(a.out) / "split.json", to_json(split));
  std::size_t images = 0, largest = 0;
  for (const auto& c : m.categories) {
    images += c.files.size();
    largest = std::max(largest, c.files.size());
  }
  std::cout << "categories: " << m.category_count() << "\nimages: " << images << " (max " << largest
            << " per category)\nsplit: seen " << split.seen.size() << ", validation_seen "
            << split.validation_seen.size() << ", unseen " << split.unseen.size() << "\n";
  rm.finish();
  return 0;
}

int cmd_train(const Args& a) {
  auto ov = given_overrides(a);
  if (!a.manifest_override.empty()) ov["manifest"] = a.manifest_override;
  const TrainConfig cfg = resolve_config(a.config, ov);
  const fs::path out(a.out);
  RunManifest rm("train", a.argv, out);
  rm.doc()["config"] = cfg;
  rm.doc()["seed"] = cfg.seed;
  rm.argument("config_file", a.config);
  rm.argument("resume", a.resume);
  rm.artifact("metrics", out / "metrics.jsonl");
  rm.artifact("checkpoint", out / "checkpoints" / "last.ckpt");
  rm.write();

  if (cfg.split.empty()) throw ConfigError("no category split given (set 'split' in the config)");
  const auto m = load_manifest(cfg.manifest);
  const auto split = split_from_json(read_json_file(cfg.split));
  ImageStore store(m);
  Trainer trainer(cfg, store, split);
  if (a.resume) {
    const auto last = out / "checkpoints" / "last.ckpt";
    if (!fs::exists(last)) throw UsageError("--resume: no checkpoint at " + last.string());
    trainer.restore(load_checkpoint(last));
    std::cout << "resuming after epoch " << trainer.epoch() << "\n";
  }
  std::cout << "training on " << split.seen.size() << " seen categories, " << trainer.episodes_per_epoch()
            << " episodes per epoch\n";
  trainer.fit(out, [](const EpochRecord& r) {
    std::printf("epoch %4d  l_d %.4f  l_gd %.4f  l_1 %.4f  l_c_d %.4f  l_c_g %.4f  l_m %.4f  val_l1 %.4f\n", r.epoch,
                r.mean.l_d, r.mean.l_gd, r.mean.l_1, r.mean.l_c_d, r.mean.l_c_g, r.mean.l_m, r.validation_l1);
    std::fflush(stdout);
  });
  rm.finish();
  return 0;
}

struct LoadedRun {
  LoadedGenerator gen;
  DatasetManifest manifest;
  std::unique_ptr<ImageStore> store;
};

LoadedRun load_run(const Args& a) {
  LoadedRun r;
  r.gen = load_generator(load_checkpoint(a.checkpoint));
  r.manifest = load_manifest(a.manifest_override.empty() ? r.gen.config.manifest : a.manifest_override);
  if (r.manifest.image_channels != r.gen.image_channels || r.manifest.resolution != r.gen.resolution)
    throw DataError("dataset manifest does not match the checkpoint's image format");
  r.store = std::make_unique<ImageStore>(r.manifest);
  return r;
}

int cmd_generate(const Args& a) {
  const fs::path out(a.out);
  RunManifest rm("generate", a.argv, out);
  if (!a.replay_of.empty()) rm.doc()["replay_of"] = a.replay_of;
  rm.doc()["seed"] = a.seed;
  rm.argument("checkpoint", a.checkpoint);
  rm.argument("categories", a.categories);
  rm.argument("count", a.count < 0 ? 128 : a.count);
  rm.argument("per_row", a.per_row);
  rm.artifact("images", out / "images");
  rm.artifact("grids", out / "grids");
  rm.artifact("episodes", out / "episodes.jsonl");
  rm.write();

  auto run = load_run(a);
  rm.doc()["config"] = run.gen.config;
  const auto cats = resolve_categories(a.categories, run.gen.split, run.manifest);
  BankOptions bo;
  bo.count = a.count < 0 ? 128 : a.count;
  bo.k2 = a.k2 > 0 ? a.k2 : run.gen.config.k;
  bo.seed = a.seed;
  rm.argument("k2", bo.k2);
  rm.write();

  const auto bank = generate_bank(*run.gen.generator, *run.store, cats, bo);
  save_bank(bank, run.manifest, out / "images");
  std::ofstream eps(out / "episodes.jsonl");
  for (std::size_t c = 0; c < bank.categories.size(); ++c) {
    const auto& name = run.manifest.category(bank.categories[c]).name;
    for (std::size_t i = 0; i < bank.episodes[c].size(); ++i)
      eps << json{{"category", name}, {"image", i}, {"conditionals", bank.episodes[c][i].paths}}.dump() << '\n';
    if (!bank.images[c].empty())
      write_png(out / "grids" / (name + ".png"), bank_contact_sheet(bank, *run.store, c, a.per_row));
  }
  std::cout << "generated " << bank.total() << " images for " << cats.size() << " categories (K2=" << bo.k2
            << ") in " << (out / "images").string() << "\n";
  rm.finish();
  return 0;
}

EvalBackbone obtain_backbone(const Args& a, const LoadedRun& run, RunManifest& rm, const fs::path& out) {
  if (!a.backbone.empty()) {
    rm.artifact("backbone", a.backbone);
    return load_backbone(a.backbone);
  }
  const auto path = out / "backbone.ckpt";
  rm.artifact("backbone", path);
  if (fs::exists(path)) return load_backbone(path);
  BackboneSetup setup;
  setup.config.channels = parse_int_list(a.backbone_channels, "--backbone-channels");
  setup.training.epochs = a.backbone_epochs;
  std::cout << "training evaluation backbone on " << run.gen.split.seen.size() << " seen categories\n";
  auto net = pretrain_backbone(*run.store, run.gen.split.seen, setup, a.seed);
  save_backbone(net, {{"seed", a.seed}, {"trained_on", run.gen.split.seen}}, path);
  return net;
}

int cmd_eval(const Args& a) {
  if (std::find(kProtocols.begin(), kProtocols.end(), a.protocol) == kProtocols.end()) {
    std::string names;
    for (const auto& p : kProtocols) names += (names.empty() ? "" : ", ") + p;
    throw UsageError("unknown protocol '" + a.protocol + "'; valid protocols: " + names);
  }
  if (a.mode != "augmented" && a.mode != "standard" && a.mode != "both")
    throw UsageError("--mode must be augmented, standard or both");
  const auto shot_list = parse_int_list(a.shots, "--shots");
  const fs::path out(a.out);
  RunManifest rm("eval", a.argv, out);
  rm.doc()["seed"] = a.seed;
  rm.argument("checkpoint", a.checkpoint);
  rm.argument("protocol", a.protocol);
  rm.argument("categories", a.categories);
  rm.argument("shots", shot_list);
  rm.argument("mode", a.mode);
  rm.argument("ways", a.ways);
  rm.argument("episodes", a.episodes);
  rm.argument("count", a.count);
  rm.argument("head_steps", a.head_steps);
  rm.artifact("reports", out / "reports.jsonl");
  rm.artifact("summary", out / "summary.txt");
  rm.write();

  auto run = load_run(a);
  rm.doc()["config"] = run.gen.config;
  const int k2 = a.k2 > 0 ? a.k2 : run.gen.config.k;
  rm.argument("k2", k2);
  rm.write();
  const auto cats = resolve_categories(a.categories, run.gen.split, run.manifest);
  const auto backbone = obtain_backbone(a, run, rm, out);
  HeadTraining head;
  head.steps = a.head_steps;
  const std::string run_id = fs::path(a.checkpoint).stem().string();
  const json base_proto = {{"protocol", a.protocol}, {"K2", k2}, {"seed", a.seed}, {"categories", cats.size()}};

  std::vector<MetricReport> reports;
  std::ostringstream summary;
  if (a.protocol == "fid-is") {
    const int count = a.count < 0 ? 128 : a.count;
    const auto r = fid_is_protocol(*run.gen.generator, *run.store, cats, backbone, {count, k2, a.seed, 32}, head);
    json proto = base_proto;
    proto["count"] = count;
    reports.push_back({run_id, "fid", r.fid, proto, ""});
    reports.push_back({run_id, "is", r.inception_score, proto, ""});
    char buf[128];
    std::snprintf(buf, sizeof buf, "FID %.4f  IS %.4f  (%d real, %d generated)\n", r.fid, r.inception_score,
                  r.real_images, r.generated_images);
    summary << buf;
  } else if (a.protocol == "lowdata") {
    const int count = a.count < 0 ? 512 : a.count;
    std::vector<bool> modes;
    if (a.mode != "augmented") modes.push_back(false);
    if (a.mode != "standard") modes.push_back(true);
    for (int shots : shot_list)
      for (bool aug : modes) {
        LowDataOptions lo;
        lo.shots = shots;
        lo.augment = aug;
        lo.generated_per_category = count;
        lo.k2 = k2;
        lo.seed = a.seed;
        lo.head = head;
        const auto r = lowdata_protocol(run.gen.generator.get(), *run.store, cats, backbone, lo);
        json proto = base_proto;
        proto["shots"] = shots;
        proto["mode"] = aug ? "augmented" : "standard";
        proto["generated_per_category"] = aug ? count : 0;
        proto["test_images"] = r.test_images;
        reports.push_back({run_id, "accuracy", r.accuracy, proto, ""});
        char buf[128];
        std::snprintf(buf, sizeof buf, "shots %3d  %-9s  accuracy %.2f%%\n", shots, aug ? "augmented" : "standard",
                      100 * r.accuracy);
        summary << buf;
      }
  } else {
    const int count = a.count < 0 ? 512 : a.count;
    for (int shots : shot_list) {
      FewShotOptions fo;
      fo.ways = a.ways;
      fo.shots = shots;
      fo.episodes = a.episodes;
      fo.generated_per_category = count;
      fo.k2 = k2;
      fo.seed = a.seed;
      fo.head = head;
      const auto r = fewshot_protocol(*run.gen.generator, *run.store, cats, backbone, fo);
      json proto = base_proto;
      proto["ways"] = a.ways;
      proto["shots"] = shots;
      proto["episodes"] = a.episodes;
      proto["generated_per_category"] = count;
      proto["episode_accuracy"] = r.episode_accuracy;
      reports.push_back({run_id, "accuracy", r.mean_accuracy, proto, ""});
      char buf[128];
      std::snprintf(buf, sizeof buf, "%d-way %d-shot  accuracy %.2f%% over %d episodes\n", a.ways, shots,
                    100 * r.mean_accuracy, a.episodes);
      summary << buf;
    }
  }
  append_reports(out / "reports.jsonl", reports);
  write_text_atomic(out / "summary.txt", summary.str());
  std::cout << summary.str();
  rm.finish();
  return 0;
}

int cmd_ablate(const Args& a) {
  const auto raw = read_json_file(a.spec);
  auto spec = ablation_spec_from_json(raw);
  // Config file, then the spec's base, then flags.
  json base = a.config.empty() ? json::object() : read_json_file(a.config);
  for (const auto& [k, v] : spec.base.items()) base[k] = v;
  for (const auto& [field, text] : given_overrides(a)) base[field] = parse_override(field, text);
  if (!a.manifest_override.empty()) base["manifest"] = a.manifest_override;
  const TrainConfig cfg = config_from_json(base);
  spec.base = cfg;

  const fs::path out(a.out);
  RunManifest rm("ablate", a.argv, out);
  rm.doc()["config"] = cfg;
  rm.doc()["seed"] = spec.protocol.seed;
  rm.argument("spec_file", a.spec);
  rm.argument("spec", raw);
  rm.artifact("reports", out / "reports.jsonl");
  rm.artifact("k_grid", out / "k_grid.txt");
  rm.artifact("settings", out / "settings.txt");
  rm.artifact("runs", out / "runs");
  rm.write();

  const bool empty = !spec.has_k_grid() && setting_rows(spec).empty();
  AblationResult result;
  if (!empty) {
    if (cfg.split.empty()) throw ConfigError("no category split given (set 'split' in the config)");
    const auto m = load_manifest(cfg.manifest);
    const auto split = split_from_json(read_json_file(cfg.split));
    ImageStore store(m);
    BackboneSetup setup;
    setup.config.channels = spec.protocol.backbone_channels;
    setup.training.epochs = spec.protocol.backbone_epochs;
    std::cout << "training evaluation backbone on " << split.seen.size() << " seen categories\n";
    const auto backbone = pretrain_backbone(store, split.seen, setup, spec.protocol.seed);
    TrainFn train = [&](const TrainConfig& c, const std::string& id) {
      std::cout << id << ": training " << json(c).dump() << "\n" << std::flush;
      Trainer t(c, store, split);
      t.fit(out / "runs" / id);
      return load_generator(t.checkpoint()).generator;
    };
    AblationRunner runner(store, split, train, backbone);
    result = runner.run(spec);
    std::cout << runner.trainings() << " configurations trained\n";
  }
  const auto k_table = render_k_table(result);
  const auto s_table = render_settings_table(result);
  fs::create_directories(out);
  std::ofstream(out / "reports.jsonl", std::ios::trunc).close();
  append_reports(out / "reports.jsonl", result.reports());
  write_text_atomic(out / "k_grid.txt", k_table);
  write_text_atomic(out / "settings.txt", s_table);
  if (!k_table.empty()) std::cout << k_table << "\n";
  if (!s_table.empty()) std::cout << s_table;
  if (empty) std::cout << "empty ablation spec: nothing to run\n";
  rm.finish();
  return 0;
}

int run_cli(std::vector<std::string> argv, const std::string& replay_of);

int cmd_replay(const Args& a) {
  const auto doc = read_json_file(a.replay_manifest);
  std::vector<std::string> argv;
  try {
    argv = doc.at("argv").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError("run manifest " + a.replay_manifest + " has no argv: " + e.what());
  }
  if (argv.empty() || argv[0] == "replay") throw UsageError("run manifest does not describe a replayable command");
  const auto new_out = fs::absolute(a.out);
  bool replaced = false;
  for (std::size_t i = 0; i < argv.size(); ++i) {
    if (argv[i] == "--out" && i + 1 < argv.size()) {
      argv[i + 1] = new_out.string();
      replaced = true;
    } else if (argv[i].rfind("--out=", 0) == 0) {
      argv[i] = "--out=" + new_out.string();
      replaced = true;
    }
  }
  if (!replaced) throw UsageError("recorded command has no --out to redirect");
  const auto here = fs::current_path();
  const auto source = fs::absolute(a.replay_manifest).string();
  fs::current_path(doc.value("cwd", here.string()));
  try {
    const int rc = run_cli(argv, source);
    fs::current_path(here);
    return rc;
  } catch (...) {
    fs::current_path(here);
    throw;
  }
}

void add_config_flags(CLI::App* sub, Args& a) {
  sub->add_option("--config", a.config, "JSON run configuration")->check(CLI::ExistingFile);
  for (const auto& field : config_field_names()) {
    auto* opt = sub->add_option("--" + dashed(field), a.overrides[field], "override config field " + field);
    if (field == "coefficient_mode") opt->check(CLI::IsMember({"matched", "random"}));
    if (field == "shared_encoder") opt->check(CLI::IsMember({"true", "false", "1", "0"}));
    a.override_opts[field].push_back(opt);
  }
}

void add_eval_source(CLI::App* sub, Args& a) {
  sub->add_option("--checkpoint", a.checkpoint, "training checkpoint")->required()->check(CLI::ExistingFile);
  sub->add_option("--categories", a.categories, "unseen, seen, validation_seen, all, or comma-separated ids");
  sub->add_option("--k2", a.k2, "conditionals per generated image (default: the checkpoint's K)");
  sub->add_option("--seed", a.seed, "run seed");
  sub->add_option("--manifest", a.manifest_override, "dataset manifest (default: the checkpoint's)");
  sub->add_option("--out", a.out, "output directory")->required();
}

int run_cli(std::vector<std::string> argv, const std::string& replay_of) {
  CLI::App app{"Matching-based few-shot image generation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(MATCHINGGAN_VERSION));
  Args a;
  a.argv = argv;
  a.replay_of = replay_of;

  auto* synth = app.add_subcommand("synth", "write a synthetic glyph dataset");
  synth->add_option("--out", a.out, "dataset root")->required();
  synth->add_option("--categories", a.synth_categories, "number of categories")->check(CLI::PositiveNumber);
  synth->add_option("--per-category", a.synth_per_category, "images per category")->check(CLI::PositiveNumber);
  synth->add_option("--resolution", a.synth_resolution, "image side in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--seed", a.seed, "dataset seed");

  auto* prep = app.add_subcommand("prepare-data", "index a dataset root and split its categories");
  prep->add_option("--root", a.root, "dataset root with one directory per category")->required();
  prep->add_option("--split", a.split_counts, "category counts seen,validation_seen,unseen")->required();
  prep->add_option("--cap", a.cap, "keep at most this many images per category (0: all)")->check(CLI::NonNegativeNumber);
  prep->add_option("--channels", a.channels, "image channels")->check(CLI::IsMember({1, 3}));
  prep->add_option("--resolution", a.resolution, "training resolution")->check(CLI::PositiveNumber);
  prep->add_option("--seed", a.seed, "split and cap seed");
  prep->add_option("--out", a.out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a generator");
  add_config_flags(train, a);
  train->add_option("--out", a.out, "run directory")->required();
  train->add_flag("--resume", a.resume, "continue from the run directory's last checkpoint");

  auto* gen = app.add_subcommand("generate", "generate an image bank with contact sheets");
  add_eval_source(gen, a);
  gen->add_option("--count", a.count, "images per category (default 128)")->check(CLI::NonNegativeNumber);
  gen->add_option("--per-row", a.per_row, "generations per contact-sheet row")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_eval_source(eval, a);
  eval->add_option("--protocol", a.protocol, "fid-is, lowdata or fewshot")->required();
  eval->add_option("--shots", a.shots, "comma-separated shot counts (lowdata, fewshot)");
  eval->add_option("--mode", a.mode, "lowdata training set: augmented, standard or both");
  eval->add_option("--ways", a.ways, "categories per few-shot episode")->check(CLI::PositiveNumber);
  eval->add_option("--episodes", a.episodes, "few-shot episodes")->check(CLI::PositiveNumber);
  eval->add_option("--count", a.count, "generated images per category (default 128 for fid-is, else 512)")
      ->check(CLI::NonNegativeNumber);
  eval->add_option("--backbone", a.backbone, "pretrained evaluation backbone")->check(CLI::ExistingFile);
  eval->add_option("--backbone-epochs", a.backbone_epochs, "backbone pretraining epochs")->check(CLI::PositiveNumber);
  eval->add_option("--backbone-channels", a.backbone_channels, "backbone stage widths");
  eval->add_option("--head-steps", a.head_steps, "classifier head steps")->check(CLI::PositiveNumber);

  auto* ablate = app.add_subcommand("ablate", "run an ablation grid");
  ablate->add_option("--spec", a.spec, "ablation spec JSON")->required()->check(CLI::ExistingFile);
  add_config_flags(ablate, a);
  ablate->add_option("--out", a.out, "output directory")->required();

  auto* replay = app.add_subcommand("replay", "rerun a recorded command into a new output directory");
  replay->add_option("--manifest", a.replay_manifest, "run_manifest.json of the original run")
      ->required()
      ->check(CLI::ExistingFile);
  replay->add_option("--out", a.out, "new output directory")->required();

  std::vector<std::string> reversed(argv.rbegin(), argv.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  if (*synth) return cmd_synth(a);
  if (*prep) return cmd_prepare(a);
  if (*train) return cmd_train(a);
  if (*gen) return cmd_generate(a);
  if (*eval) return cmd_eval(a);
  if (*ablate) return cmd_ablate(a);
  return cmd_replay(a);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run_cli(args, "");
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}
