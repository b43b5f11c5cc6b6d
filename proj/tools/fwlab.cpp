// Command-line front end: scene/corpus/probe generation, corpus filters,
// frequency matching and statistics, training runs, and figure rendering.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.

#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fwlab/corpus_ops.hpp"
#include "fwlab/harness.hpp"
#include "fwlab/mac.hpp"
#include "fwlab/probe.hpp"
#include "fwlab/question.hpp"
#include "fwlab/report.hpp"
#include "fwlab/scene.hpp"
#include "fwlab/util.hpp"

using json = nlohmann::json;
using namespace fwlab;

namespace {

void print_summary(const json& j) { std::cout << j.dump() << std::endl; }

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

int cmd_gen_scenes(const std::string& out, int count, uint64_t seed, int min_objects,
                   int max_objects, int first_index) {
  WorldConfig wc;
  wc.min_objects = min_objects;
  wc.max_objects = max_objects;
  const auto scenes = generate_scenes(wc, count, seed, first_index);
  save_scenes(out, scenes);
  print_summary({{"command", "gen-scenes"},
                 {"out", out},
                 {"scenes", scenes.size()},
                 {"first_image_index", first_index},
                 {"seed", seed}});
  return 0;
}

int cmd_gen_corpus(const std::string& scenes_path, const std::string& out, int size,
                   uint64_t seed) {
  const auto scenes = load_scenes(scenes_path);
  const auto corpus = generate_training_corpus(scenes, CorpusPreset::clevr_like(), size, seed);
  save_corpus(out, corpus);
  const auto table = word_frequency_stats(corpus);
  print_summary({{"command", "gen-corpus"},
                 {"out", out},
                 {"questions", corpus.size()},
                 {"tokens", table.total_tokens},
                 {"seed", seed}});
  return 0;
}

int cmd_import_clevr(const std::string& in, const std::string& out) {
  std::ofstream sink(out, std::ios::binary);
  if (!sink) throw DataError("cannot write file: " + out);
  const long long n = import_questions_json(in, [&](Question&& q) {
    sink << question_to_jsonl(q) << "\n";
  });
  print_summary({{"command", "import-clevr"}, {"out", out}, {"questions", n}});
  return 0;
}

int cmd_gen_probes(const std::string& scenes_path, const std::string& out_dir,
                   const std::string& probes_csv, int max_images, uint64_t seed) {
  const auto pool = load_scenes(scenes_path);
  std::vector<std::string> names =
      probes_csv.empty() ? std::vector<std::string>{} : split_csv(probes_csv);
  if (names.empty())
    for (auto kind : all_probe_kinds()) names.push_back(probe_name(kind));
  std::filesystem::create_directories(out_dir);
  json files = json::array();
  for (auto& name : names) {
    for (auto& ch : name) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    ProbeSpec spec{probe_from_name(name), max_images};
    ProbeManifest manifest;
    const auto items = build_probe(spec, pool, seed, &manifest);
    const std::string path = out_dir + "/" + name + ".jsonl";
    save_probe(path, items);
    write_file(out_dir + "/" + name + ".manifest.json", manifest.to_json());
    files.push_back({{"probe", name}, {"path", path}, {"items", items.size()}});
  }
  print_summary({{"command", "gen-probes"}, {"seed", seed}, {"probes", files}});
  return 0;
}

int cmd_filter(const std::string& in, const std::string& out,
               const std::vector<std::string>& remove, const std::string& preset,
               const std::string& report_path) {
  std::vector<std::string> forms = remove;
  if (!preset.empty()) {
    if (preset == "no_and") forms = {"and"};
    else if (preset == "no_or") forms = {"or"};
    else if (preset == "no_equal") forms = {"equal", "same number"};
    else throw UsageError("unknown filter preset: " + preset);
  }
  if (forms.empty()) throw UsageError("nothing to remove: pass --remove or --preset");
  const auto corpus = load_corpus(in);
  RemovalReport report;
  const auto filtered = remove_questions_containing(corpus, RemovalSpec{forms}, &report);
  save_corpus(out, filtered);
  if (!report_path.empty()) write_file(report_path, report.to_json());
  print_summary({{"command", "filter"},
                 {"out", out},
                 {"removed", report.removed_questions},
                 {"remaining", report.remaining_questions}});
  return 0;
}

FrequencyTarget parse_target(const std::string& text, double default_tol) {
  // word_a:word_b:share_a[:tolerance]
  const auto parts = split_csv(text);  // no commas expected; split on ':' below
  std::vector<std::string> f;
  std::string cur;
  for (char c : text) {
    if (c == ':') {
      f.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  f.push_back(cur);
  if (f.size() < 3 || f.size() > 4)
    throw UsageError("target format is word_a:word_b:share_a[:tol], got: " + text);
  FrequencyTarget t;
  t.word_a = f[0];
  t.word_b = f[1];
  t.share_a = std::stod(f[2]);
  t.tolerance_pp = f.size() == 4 ? std::stod(f[3]) : default_tol;
  (void)parts;
  return t;
}

int cmd_match_freq(const std::string& in, const std::string& out,
                   const std::vector<std::string>& target_specs, bool childes, double tol,
                   uint64_t seed, const std::string& report_path) {
  std::vector<FrequencyTarget> targets;
  if (childes) targets = childes_targets(tol);
  for (const auto& spec : target_specs) targets.push_back(parse_target(spec, tol));
  if (targets.empty()) throw UsageError("no targets: pass --target or --childes");
  const auto corpus = load_corpus(in);
  MatchReport report;
  const auto matched = match_pair_frequencies(corpus, targets, seed, &report);
  save_corpus(out, matched);
  if (!report_path.empty()) write_file(report_path, report.to_json());
  print_summary(json::parse(report.to_json()));
  return 0;
}

int cmd_stats(const std::string& in, const std::string& out) {
  const auto table = word_frequency_stats_file(in);
  const std::string text = table.to_json();
  if (!out.empty()) write_file(out, text);
  std::cout << text << std::endl;
  return 0;
}

int cmd_train(const std::string& config_path, const json& overrides) {
  ExperimentConfig config;
  if (!config_path.empty()) config = ExperimentConfig::from_json(json::parse(read_file(config_path)));
  json merged = config.to_json();
  for (const auto& [k, v] : overrides.items()) merged[k] = v;
  config = ExperimentConfig::from_json(merged);
  const auto result = run_experiment(config);
  print_summary({{"command", "train"},
                 {"metrics", result.metrics_path},
                 {"aggregate", result.aggregate_path},
                 {"manifest", result.manifest_path},
                 {"checkpoints", result.checkpoint_paths},
                 {"records", result.metrics.size()}});
  return 0;
}

int cmd_report(const std::string& metrics_path, const std::string& kind,
               const std::string& probes_csv, const std::string& experiment, int epoch,
               const std::string& stats_json, const std::string& out) {
  std::string svg;
  if (kind == "frequency_table") {
    if (stats_json.empty()) throw UsageError("frequency_table needs --stats-json");
    const json j = json::parse(read_file(stats_json));
    FrequencyTable table;
    table.total_tokens = j.value("total_tokens", 0LL);
    table.total_questions = j.value("total_questions", 0LL);
    if (j.contains("words"))
      for (const auto& [word, stats] : j["words"].items())
        table.words[word] = WordStats{stats.value("raw", 0LL), stats.value("yes", 0LL),
                                      stats.value("no", 0LL)};
    svg = render_frequency_table_svg(table);
  } else {
    PlotSpec spec;
    spec.kind = kind;
    spec.probes = probes_csv.empty() ? std::vector<std::string>{} : split_csv(probes_csv);
    spec.experiment = experiment;
    spec.epoch = epoch;
    const auto metrics = parse_metrics_csv(read_file(metrics_path));
    svg = render_plot(metrics, spec);
  }
  write_file(out, svg);
  print_summary({{"command", "report"}, {"kind", kind}, {"out", out}, {"bytes", svg.size()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"block-world function word learning laboratory"};
  app.require_subcommand(1);

  // gen-scenes
  auto* gen_scenes = app.add_subcommand("gen-scenes", "generate a symbolic scene pool");
  std::string gs_out;
  int gs_count = 1000, gs_min = 3, gs_max = 10, gs_first = 0;
  uint64_t gs_seed = 0;
  gen_scenes->add_option("--out", gs_out, "output scene JSON")->required();
  gen_scenes->add_option("--count", gs_count, "number of scenes");
  gen_scenes->add_option("--seed", gs_seed, "random seed");
  gen_scenes->add_option("--min-objects", gs_min);
  gen_scenes->add_option("--max-objects", gs_max);
  gen_scenes->add_option("--first-index", gs_first, "first image_index");

  // gen-corpus
  auto* gen_corpus = app.add_subcommand("gen-corpus", "generate a training corpus");
  std::string gc_scenes, gc_out;
  int gc_size = 60000;
  uint64_t gc_seed = 0;
  gen_corpus->add_option("--scenes", gc_scenes)->required();
  gen_corpus->add_option("--out", gc_out)->required();
  gen_corpus->add_option("--size", gc_size, "question count");
  gen_corpus->add_option("--seed", gc_seed, "random seed");

  // import-clevr
  auto* import_clevr = app.add_subcommand("import-clevr", "normalize an original questions file");
  std::string ic_in, ic_out;
  import_clevr->add_option("--in", ic_in)->required();
  import_clevr->add_option("--out", ic_out)->required();

  // gen-probes
  auto* gen_probes = app.add_subcommand("gen-probes", "build semantic probe suites");
  std::string gp_scenes, gp_out = "probes", gp_probes;
  int gp_max_images = 10;
  uint64_t gp_seed = 0;
  gen_probes->add_option("--scenes", gp_scenes, "held-out scene pool")->required();
  gen_probes->add_option("--out-dir", gp_out);
  gen_probes->add_option("--probes", gp_probes, "comma list (default: all eight)");
  gen_probes->add_option("--max-images", gp_max_images);
  gen_probes->add_option("--seed", gp_seed, "random seed");

  // filter
  auto* filter = app.add_subcommand("filter", "remove questions containing surface forms");
  std::string f_in, f_out, f_preset, f_report;
  std::vector<std::string> f_remove;
  filter->add_option("--in", f_in)->required();
  filter->add_option("--out", f_out)->required();
  filter->add_option("--remove", f_remove, "word or phrase (repeatable)");
  filter->add_option("--preset", f_preset, "no_and | no_or | no_equal");
  filter->add_option("--report", f_report, "write removal report JSON");

  // match-freq
  auto* match = app.add_subcommand("match-freq", "match within-pair word frequencies");
  std::string m_in, m_out, m_report;
  std::vector<std::string> m_targets;
  bool m_childes = false;
  double m_tol = 0.5;
  uint64_t m_seed = 0;
  match->add_option("--in", m_in)->required();
  match->add_option("--out", m_out)->required();
  match->add_option("--target", m_targets, "word_a:word_b:share_a[:tol] (repeatable)");
  match->add_flag("--childes", m_childes, "use the child-directed-speech pair targets");
  match->add_option("--tol", m_tol, "default tolerance (percentage points)");
  match->add_option("--seed", m_seed, "random seed");
  match->add_option("--report", m_report, "write match report JSON");

  // stats
  auto* stats = app.add_subcommand("stats", "word/answer frequency statistics");
  std::string s_in, s_out;
  stats->add_option("--in", s_in, "corpus JSONL or original questions JSON")->required();
  stats->add_option("--out", s_out, "also write the JSON here");

  // train
  auto* train = app.add_subcommand("train", "run a training experiment");
  std::string t_config, t_experiment, t_corpus, t_train_scenes, t_probe_scenes, t_out_dir,
      t_probes, t_seeds, t_preset;
  int t_epochs = -1, t_stride = 0, t_cap = -1, t_batch = 0;
  double t_lr = 0;
  bool t_dump = false;
  train->add_option("--config", t_config, "experiment config JSON");
  train->add_option("--experiment", t_experiment,
                    "exp1_full | exp2_no_and | exp2_no_or | exp2_no_equal | exp3_childes | custom");
  train->add_option("--corpus", t_corpus);
  train->add_option("--train-scenes", t_train_scenes);
  train->add_option("--probe-scenes", t_probe_scenes);
  train->add_option("--out-dir", t_out_dir);
  train->add_option("--probes", t_probes, "comma list");
  train->add_option("--seeds", t_seeds, "comma list of training seeds");
  train->add_option("--epochs", t_epochs);
  train->add_option("--model-preset", t_preset, "desk | paper");
  train->add_option("--probe-stride", t_stride);
  train->add_option("--train-eval-cap", t_cap);
  train->add_option("--batch-size", t_batch);
  train->add_option("--lr", t_lr);
  train->add_flag("--dump-predictions", t_dump);

  // report
  auto* report = app.add_subcommand("report", "render SVG figures from metrics");
  std::string r_metrics, r_kind = "accuracy_overall", r_probes, r_experiment, r_stats, r_out;
  int r_epoch = -1;
  report->add_option("--metrics", r_metrics, "metrics CSV");
  report->add_option("--kind", r_kind,
                     "accuracy_overall | accuracy_by_answer | accuracy_by_distance | "
                     "accuracy_by_count_diff | or_exclusive_proportion | frequency_table");
  report->add_option("--probes", r_probes, "comma list");
  report->add_option("--experiment", r_experiment);
  report->add_option("--epoch", r_epoch, "epoch for bin plots (-1 = last)");
  report->add_option("--stats-json", r_stats, "stats JSON for frequency_table");
  report->add_option("--out", r_out, "output SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << std::endl;
    return 1;
  }

  try {
    if (gen_scenes->parsed())
      return cmd_gen_scenes(gs_out, gs_count, gs_seed, gs_min, gs_max, gs_first);
    if (gen_corpus->parsed()) return cmd_gen_corpus(gc_scenes, gc_out, gc_size, gc_seed);
    if (import_clevr->parsed()) return cmd_import_clevr(ic_in, ic_out);
    if (gen_probes->parsed())
      return cmd_gen_probes(gp_scenes, gp_out, gp_probes, gp_max_images, gp_seed);
    if (filter->parsed()) return cmd_filter(f_in, f_out, f_remove, f_preset, f_report);
    if (match->parsed())
      return cmd_match_freq(m_in, m_out, m_targets, m_childes, m_tol, m_seed, m_report);
    if (stats->parsed()) return cmd_stats(s_in, s_out);
    if (train->parsed()) {
      json overrides = json::object();
      if (!t_experiment.empty()) overrides["experiment"] = t_experiment;
      if (!t_corpus.empty()) overrides["corpus"] = t_corpus;
      if (!t_train_scenes.empty()) overrides["train_scenes"] = t_train_scenes;
      if (!t_probe_scenes.empty()) overrides["probe_scenes"] = t_probe_scenes;
      if (!t_out_dir.empty()) overrides["out_dir"] = t_out_dir;
      if (!t_probes.empty()) overrides["probes"] = split_csv(t_probes);
      if (!t_seeds.empty()) {
        std::vector<int> seeds;
        for (const auto& s : split_csv(t_seeds)) seeds.push_back(std::stoi(s));
        overrides["seeds"] = seeds;
      }
      if (t_epochs >= 0) overrides["epochs"] = t_epochs;
      if (!t_preset.empty()) {
        if (t_preset == "desk") overrides["model"] = ModelConfig::desk().to_json();
        else if (t_preset == "paper") overrides["model"] = ModelConfig::paper().to_json();
        else throw UsageError("unknown model preset: " + t_preset);
      }
      if (t_stride > 0) overrides["probe_stride"] = t_stride;
      if (t_cap >= 0) overrides["train_eval_cap"] = t_cap;
      if (t_batch > 0) overrides["batch_size"] = t_batch;
      if (t_lr > 0) overrides["lr"] = t_lr;
      if (t_dump) overrides["dump_predictions"] = true;
      return cmd_train(t_config, overrides);
    }
    if (report->parsed())
      return cmd_report(r_metrics, r_kind, r_probes, r_experiment, r_epoch, r_stats, r_out);
    std::cerr << app.help() << std::endl;
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << std::endl;
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << std::endl;
    return 3;
  }
}
