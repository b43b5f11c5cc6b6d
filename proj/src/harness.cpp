#include "fwlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <set>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fwlab/checkpoint.hpp"
#include "fwlab/corpus_ops.hpp"
#include "fwlab/optim.hpp"
#include "fwlab/util.hpp"

namespace fwlab {

using nlohmann::json;

static const char* kCodeVersion = "fwlab 0.1.0";

nlohmann::json ExperimentConfig::to_json() const {
  json j;
  j["experiment"] = experiment;
  j["corpus"] = corpus_path;
  j["train_scenes"] = train_scenes_path;
  j["probe_scenes"] = probe_scenes_path;
  j["probes"] = probes;
  j["epochs"] = epochs;
  j["seeds"] = seeds;
  j["model"] = model.to_json();
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["lr_floor"] = lr_floor;
  j["validation_fraction"] = validation_fraction;
  j["probe_seed"] = probe_seed;
  j["probe_stride"] = probe_stride;
  j["train_eval_cap"] = train_eval_cap;
  j["probe_max_images"] = probe_max_images;
  j["dump_predictions"] = dump_predictions;
  j["out_dir"] = out_dir;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.experiment = j.value("experiment", c.experiment);
  c.corpus_path = j.value("corpus", "");
  c.train_scenes_path = j.value("train_scenes", "");
  c.probe_scenes_path = j.value("probe_scenes", "");
  if (j.contains("probes")) c.probes = j["probes"].get<std::vector<std::string>>();
  c.epochs = j.value("epochs", c.epochs);
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<int>>();
  if (j.contains("model")) c.model = ModelConfig::from_json(j["model"]);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_floor = j.value("lr_floor", c.lr_floor);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.probe_seed = j.value("probe_seed", c.probe_seed);
  c.probe_stride = j.value("probe_stride", c.probe_stride);
  c.train_eval_cap = j.value("train_eval_cap", c.train_eval_cap);
  c.probe_max_images = j.value("probe_max_images", c.probe_max_images);
  c.dump_predictions = j.value("dump_predictions", c.dump_predictions);
  c.out_dir = j.value("out_dir", c.out_dir);
  return c;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw UsageError("at least one seed required");
  if (epochs < 0) throw UsageError("epochs must be >= 0");
  if (batch_size < 1) throw UsageError("batch size must be >= 1");
  if (probe_stride < 1) throw UsageError("probe stride must be >= 1");
  if (validation_fraction < 0.0 || validation_fraction >= 1.0)
    throw UsageError("validation fraction must be in [0,1)");
  if (corpus_path.empty() || train_scenes_path.empty() || probe_scenes_path.empty())
    throw UsageError("corpus, train_scenes, and probe_scenes paths are required");
  model.validate();
}

std::string metrics_csv_header() {
  return "experiment,seed,epoch,probe,group_key,group_value,n_items,n_correct,value\n";
}

std::string metric_to_csv(const MetricRecord& r) {
  char value[32];
  std::snprintf(value, sizeof(value), "%.6f", r.value);
  std::ostringstream out;
  out << r.experiment << ',' << r.seed << ',' << r.epoch << ',' << r.probe << ','
      << r.group_key << ',' << r.group_value << ',' << r.n_items << ',' << r.n_correct << ','
      << value << '\n';
  return out.str();
}

std::vector<MetricRecord> parse_metrics_csv(const std::string& text) {
  std::vector<MetricRecord> out;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("experiment,", 0) == 0) continue;
    }
    std::vector<std::string> cols;
    std::string col;
    std::istringstream ls(line);
    while (std::getline(ls, col, ',')) cols.push_back(col);
    if (cols.size() != 9) throw DataError("bad metrics row: " + line);
    MetricRecord r;
    r.experiment = cols[0];
    r.seed = std::stoi(cols[1]);
    r.epoch = std::stoi(cols[2]);
    r.probe = cols[3];
    r.group_key = cols[4];
    r.group_value = cols[5];
    r.n_items = std::stoll(cols[6]);
    r.n_correct = std::stoll(cols[7]);
    r.value = std::stod(cols[8]);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<MetricRecord> evaluate_probe(const std::string& probe_label,
                                         const std::vector<ProbeItem>& items,
                                         const PredictFn& predict) {
  if (items.empty()) throw DataError("evaluate_probe: empty probe " + probe_label);
  std::vector<std::string> predictions;
  predictions.reserve(items.size());
  for (const auto& item : items) predictions.push_back(predict(item));

  auto make = [&](const std::string& key, const std::string& value, long long n,
                  long long correct, double v) {
    MetricRecord r;
    r.probe = probe_label;
    r.group_key = key;
    r.group_value = value;
    r.n_items = n;
    r.n_correct = correct;
    r.value = v;
    return r;
  };
  auto ratio = [](long long c, long long n) { return n > 0 ? double(c) / double(n) : 0.0; };

  std::vector<MetricRecord> out;

  // overall, ambiguous excluded
  long long n_all = 0, c_all = 0;
  for (size_t i = 0; i < items.size(); ++i) {
    if (items[i].answer == "ambiguous") continue;
    ++n_all;
    c_all += predictions[i] == items[i].answer;
  }
  out.push_back(make("overall", "all", n_all, c_all, ratio(c_all, n_all)));

  // overall excluding |X| == |Y| items (count probes)
  const bool has_count = std::any_of(items.begin(), items.end(),
                                     [](const ProbeItem& it) { return it.has_count_diff; });
  if (has_count) {
    long long n = 0, c = 0;
    for (size_t i = 0; i < items.size(); ++i) {
      if (!items[i].has_count_diff || items[i].count_diff == 0) continue;
      ++n;
      c += predictions[i] == items[i].answer;
    }
    out.push_back(make("overall", "excl_equal", n, c, ratio(c, n)));
  }

  // by answer type (ambiguous tracked as its own group so groups partition)
  for (const char* ans : {"yes", "no"}) {
    long long n = 0, c = 0;
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i].answer != ans) continue;
      ++n;
      c += predictions[i] == items[i].answer;
    }
    out.push_back(make("answer_type", ans, n, c, ratio(c, n)));
  }
  long long n_amb = 0;
  for (const auto& item : items) n_amb += item.answer == "ambiguous";
  if (n_amb > 0) out.push_back(make("answer_type", "ambiguous", n_amb, 0, 0.0));

  // by distance bin (spatial probes)
  std::map<int, std::pair<long long, long long>> bins;
  for (size_t i = 0; i < items.size(); ++i) {
    if (items[i].distance_bin < 0) continue;
    auto& [n, c] = bins[items[i].distance_bin];
    ++n;
    c += predictions[i] == items[i].answer;
  }
  for (const auto& [bin, nc] : bins)
    out.push_back(
        make("distance_bin", std::to_string(bin), nc.first, nc.second, ratio(nc.second, nc.first)));

  // by absolute count difference (count probes)
  std::map<int, std::pair<long long, long long>> diffs;
  for (size_t i = 0; i < items.size(); ++i) {
    if (!items[i].has_count_diff) continue;
    auto& [n, c] = diffs[std::abs(items[i].count_diff)];
    ++n;
    c += predictions[i] == items[i].answer;
  }
  for (const auto& [d, nc] : diffs)
    out.push_back(make("abs_count_diff", std::to_string(d), nc.first, nc.second,
                       ratio(nc.second, nc.first)));

  // OR interpretation on ambiguous items: exclusive/inclusive over yes|no
  // predictions, non-yes/no tallied against all ambiguous items
  if (n_amb > 0) {
    long long n_yes = 0, n_no = 0, n_other = 0;
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i].answer != "ambiguous") continue;
      if (predictions[i] == "yes") ++n_yes;
      else if (predictions[i] == "no") ++n_no;
      else ++n_other;
    }
    const long long n_yn = n_yes + n_no;
    out.push_back(make("or_interpretation", "exclusive", n_yn, n_no, ratio(n_no, n_yn)));
    out.push_back(make("or_interpretation", "inclusive", n_yn, n_yes, ratio(n_yes, n_yn)));
    out.push_back(make("or_interpretation", "other", n_amb, n_other, ratio(n_other, n_amb)));
  }

  // non-yes/no predictions across the whole probe
  long long n_other_pred = 0;
  for (const auto& p : predictions) n_other_pred += p != "yes" && p != "no";
  out.push_back(make("diagnostic", "non_yes_no", static_cast<long long>(items.size()),
                     n_other_pred, ratio(n_other_pred, static_cast<long long>(items.size()))));
  return out;
}

std::vector<AggregateRecord> aggregate_runs(const std::vector<MetricRecord>& records) {
  if (records.empty()) return {};
  struct Bucket {
    AggregateRecord agg;
    std::vector<double> values;
  };
  std::vector<Bucket> buckets;
  std::map<std::string, size_t> index;
  for (const auto& r : records) {
    const std::string key = r.experiment + '\x1f' + std::to_string(r.epoch) + '\x1f' + r.probe +
                            '\x1f' + r.group_key + '\x1f' + r.group_value;
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, buckets.size()).first;
      Bucket b;
      b.agg.experiment = r.experiment;
      b.agg.epoch = r.epoch;
      b.agg.probe = r.probe;
      b.agg.group_key = r.group_key;
      b.agg.group_value = r.group_value;
      buckets.push_back(std::move(b));
    }
    buckets[it->second].values.push_back(r.value);
  }
  std::vector<AggregateRecord> out;
  for (auto& b : buckets) {
    const auto& v = b.values;
    const int n = static_cast<int>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double sq = 0;
    for (double x : v) sq += (x - mean) * (x - mean);
    b.agg.n_seeds = n;
    b.agg.mean = mean;
    b.agg.stddev = n > 1 ? std::sqrt(sq / (n - 1)) : 0.0;
    b.agg.single_seed = n == 1;
    out.push_back(b.agg);
  }
  return out;
}

std::string aggregates_to_csv(const std::vector<AggregateRecord>& aggregates) {
  std::ostringstream out;
  out << "experiment,epoch,probe,group_key,group_value,n_seeds,mean,std,single_seed\n";
  for (const auto& a : aggregates) {
    char mean[32], stddev[32];
    std::snprintf(mean, sizeof(mean), "%.6f", a.mean);
    std::snprintf(stddev, sizeof(stddev), "%.6f", a.stddev);
    out << a.experiment << ',' << a.epoch << ',' << a.probe << ',' << a.group_key << ','
        << a.group_value << ',' << a.n_seeds << ',' << mean << ',' << stddev << ','
        << (a.single_seed ? 1 : 0) << '\n';
  }
  return out.str();
}

namespace {

std::vector<double> ranks_of(const std::vector<double>& xs) {
  const size_t n = xs.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_rank_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw UsageError("spearman: need two same-length series of length >= 2");
  const auto rx = ranks_of(xs);
  const auto ry = ranks_of(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double num = 0, dx = 0, dy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0 || dy == 0) return 0.0;
  return num / std::sqrt(dx * dy);
}

int worker_count() {
  if (const char* env = std::getenv("FWLAB_WORKERS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace {

// Run fn(begin, end, worker) over [0, n) split into contiguous chunks, one
// per worker. Results must be written to disjoint, pre-sized storage so the
// outcome does not depend on scheduling.
template <typename F>
void parallel_chunks(int64_t n, int workers, F&& fn) {
  workers = std::max<int64_t>(1, std::min<int64_t>(workers, n));
  if (workers == 1) {
    fn(int64_t{0}, n, 0);
    return;
  }
  const int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    const int64_t begin = w * chunk, end = std::min<int64_t>(n, (w + 1) * chunk);
    if (begin >= end) break;
    threads.emplace_back([&, w, begin, end] {
      try {
        fn(begin, end, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct PreparedProbe {
  std::string name;
  std::vector<ProbeItem> items;
  std::vector<std::vector<int>> ids;          // token ids per item
  std::vector<const Tensor<float>*> rasters;  // per item
  std::string content_hash;
  ProbeManifest manifest;
};

class RasterCache {
 public:
  RasterCache(const std::vector<Scene>& scenes, const ModelConfig& cfg) {
    for (const auto& s : scenes) cache_.emplace(s.image_index, rasterize_scene<float>(s, cfg));
  }
  const Tensor<float>* at(int image_index) const {
    auto it = cache_.find(image_index);
    if (it == cache_.end())
      throw DataError("no scene with image_index " + std::to_string(image_index));
    return &it->second;
  }

 private:
  std::unordered_map<int, Tensor<float>> cache_;
};

}  // namespace

float train_batch(MacModel<float>& model, const std::vector<const TrainExample*>& batch,
                  const std::vector<uint64_t>& mask_seeds, Adam<float>& adam,
                  std::vector<std::vector<Tensor<float>>>& sinks, int workers) {
  const int b = static_cast<int>(batch.size());
  std::vector<double> losses(sinks.size(), 0.0);
  for (auto& sink : sinks)
    for (auto& t : sink) t.fill(0.0f);

  parallel_chunks(b, std::min<int>(workers, static_cast<int>(sinks.size())),
                  [&](int64_t begin, int64_t end, int w) {
                    for (int64_t i = begin; i < end; ++i) {
                      const TrainExample& ex = *batch[i];
                      Rng mask_rng(mask_seeds[i]);
                      const auto masks = DropoutMasks<float>::sample(model.config(), mask_rng);
                      Tape<float> tape;
                      const auto fwd = model.forward_taped(tape, ex.ids, *ex.raster, &sinks[w],
                                                           &masks, &ex.target);
                      const float loss = tape.val(fwd.loss).data[0];
                      if (!std::isfinite(loss))
                        throw std::runtime_error(
                            "non-finite loss at training example (image_index target id " +
                            std::to_string(ex.target) + ")");
                      losses[w] += loss;
                      tape.backward(fwd.loss);
                    }
                  });

  // Deterministic reduction: worker sinks summed in worker order.
  auto& store = model.params();
  const float scale = 1.0f / static_cast<float>(b);
  for (size_t p = 0; p < store.params.size(); ++p) {
    auto& grad = store.params[p].grad;
    grad.fill(0.0f);
    for (auto& sink : sinks)
      for (size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += sink[p].data[i];
    for (auto& g : grad.data) g *= scale;
  }
  adam.step(store);
  double total = 0;
  for (double l : losses) total += l;
  return static_cast<float>(total / b);
}

namespace {

// Predictions for the strided subset of items; returns (original index,
// predicted token) pairs in item order.
std::vector<std::string> predict_items(const MacModel<float>& model, const PreparedProbe& probe,
                                       const std::vector<size_t>& indices, int workers) {
  std::vector<std::string> preds(indices.size());
  parallel_chunks(static_cast<int64_t>(indices.size()), workers,
                  [&](int64_t begin, int64_t end, int) {
                    for (int64_t i = begin; i < end; ++i) {
                      const size_t idx = indices[i];
                      const auto out = model.forward_eval(probe.ids[idx], *probe.rasters[idx]);
                      preds[i] = model.vocab().id_to_token[out.prediction];
                    }
                  });
  return preds;
}

std::pair<long long, long long> question_accuracy(const MacModel<float>& model,
                                                  const std::vector<TrainExample>& examples,
                                                  const std::vector<size_t>& indices,
                                                  int workers) {
  std::vector<uint8_t> correct(indices.size(), 0);
  parallel_chunks(static_cast<int64_t>(indices.size()), workers,
                  [&](int64_t begin, int64_t end, int) {
                    for (int64_t i = begin; i < end; ++i) {
                      const auto& ex = examples[indices[i]];
                      const auto out = model.forward_eval(ex.ids, *ex.raster);
                      correct[i] = out.prediction == ex.target;
                    }
                  });
  long long c = 0;
  for (uint8_t v : correct) c += v;
  return {static_cast<long long>(indices.size()), c};
}

Corpus apply_experiment_preset(const std::string& experiment, const Corpus& corpus,
                               json* manifest_entry) {
  auto removal = [&](std::vector<std::string> forms) {
    RemovalReport report;
    Corpus out = remove_questions_containing(corpus, RemovalSpec{forms}, &report);
    // Independent verification scan of the filtered output.
    for (const auto& q : out)
      for (const auto& form : forms)
        if (count_occurrences(q.tokens, split_ws(form)) > 0)
          throw std::runtime_error("removal verification failed for form: " + form);
    if (manifest_entry) (*manifest_entry)["removal"] = json::parse(report.to_json());
    return out;
  };
  if (experiment == "exp2_no_and") return removal({"and"});
  if (experiment == "exp2_no_or") return removal({"or"});
  if (experiment == "exp2_no_equal") return removal({"equal", "same number"});
  if (experiment == "exp3_childes") {
    MatchReport report;
    Corpus out = match_pair_frequencies(corpus, childes_targets(0.5), /*seed=*/35711, &report);
    if (manifest_entry) (*manifest_entry)["frequency_match"] = json::parse(report.to_json());
    return out;
  }
  return corpus;  // exp1_full / custom
}

uint64_t mix_seed(uint64_t a, uint64_t b) { return derive_seed(derive_seed(a, 0x9e37), b); }

}  // namespace

RunResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  namespace fs = std::filesystem;
  fs::create_directories(config.out_dir);
  const int workers = worker_count();

  json manifest;
  manifest["code_version"] = kCodeVersion;
  manifest["config"] = config.to_json();

  // Corpus, preset manipulation, scenes.
  Corpus corpus = load_corpus(config.corpus_path);
  corpus = apply_experiment_preset(config.experiment, corpus, &manifest);
  if (corpus.empty()) throw DataError("corpus is empty after preset manipulation");
  const auto train_scenes = load_scenes(config.train_scenes_path);
  const auto probe_scenes = load_scenes(config.probe_scenes_path);
  {
    std::set<int> train_ids;
    for (const auto& s : train_scenes) train_ids.insert(s.image_index);
    for (const auto& s : probe_scenes)
      if (train_ids.count(s.image_index))
        throw DataError("probe scene pool overlaps training pool at image_index " +
                        std::to_string(s.image_index));
  }

  uint64_t corpus_hash = 0xcbf29ce484222325ULL;
  for (const auto& q : corpus) corpus_hash = fnv1a(question_to_jsonl(q), corpus_hash);
  manifest["corpus_hash"] = hash_hex(corpus_hash);
  manifest["corpus_questions"] = corpus.size();

  const Vocabulary vocab = Vocabulary::build(corpus);
  manifest["vocab_size"] = vocab.size();
  manifest["vocab_hash"] = hash_hex(fnv1a(vocab.to_json()));
  write_file(config.out_dir + "/vocab.json", vocab.to_json());

  // Probe suites: fixed seed, constant across epochs and training seeds.
  RasterCache train_rasters(train_scenes, config.model);
  RasterCache probe_rasters(probe_scenes, config.model);
  std::vector<std::string> probe_names = config.probes;
  if (probe_names.empty())
    for (auto kind : all_probe_kinds()) probe_names.push_back(probe_name(kind));

  std::vector<PreparedProbe> probes;
  manifest["probes"] = json::object();
  for (const auto& name : probe_names) {
    PreparedProbe p;
    p.name = name;
    ProbeSpec spec{probe_from_name(name), config.probe_max_images};
    p.items = build_probe(spec, probe_scenes, config.probe_seed, &p.manifest);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& item : p.items) h = fnv1a(probe_item_to_jsonl(item), h);
    p.content_hash = hash_hex(h);
    for (const auto& item : p.items) {
      std::vector<int> ids;
      for (const auto& t : item.tokens) ids.push_back(vocab.id(t));
      p.ids.push_back(std::move(ids));
      p.rasters.push_back(probe_rasters.at(item.image_index));
    }
    manifest["probes"][name] = {{"items", p.items.size()},
                                {"hash", p.content_hash},
                                {"manifest", json::parse(p.manifest.to_json())}};
    probes.push_back(std::move(p));
  }

  // Prepared training examples and the seed-independent validation split.
  std::vector<TrainExample> examples(corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    examples[i].ids.reserve(corpus[i].tokens.size());
    for (const auto& t : corpus[i].tokens) examples[i].ids.push_back(vocab.id(t));
    examples[i].raster = train_rasters.at(corpus[i].image_index);
    examples[i].target = vocab.id(corpus[i].answer);
  }
  std::vector<size_t> all_idx(examples.size());
  std::iota(all_idx.begin(), all_idx.end(), 0);
  {
    Rng split_rng(derive_seed(0xDA7A5, 1));
    split_rng.shuffle(all_idx);
  }
  const size_t n_val = static_cast<size_t>(config.validation_fraction *
                                           static_cast<double>(examples.size()));
  std::vector<size_t> val_idx(all_idx.begin(), all_idx.begin() + n_val);
  std::vector<size_t> train_idx(all_idx.begin() + n_val, all_idx.end());
  if (train_idx.empty()) throw DataError("no training questions after validation split");
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  RunResult result;
  result.metrics_path = config.out_dir + "/metrics.csv";
  result.aggregate_path = config.out_dir + "/aggregate.csv";
  result.manifest_path = config.out_dir + "/manifest.json";
  std::string csv = metrics_csv_header();
  json aborted = json::array();

  auto emit = [&](MetricRecord r, int seed, int epoch) {
    r.experiment = config.experiment;
    r.seed = seed;
    r.epoch = epoch;
    csv += metric_to_csv(r);
    result.metrics.push_back(std::move(r));
  };

  for (int seed : config.seeds) {
    try {
      MacModel<float> model(config.model, vocab, derive_seed(0x30DE1, seed));
      Adam<float> adam;
      adam.config().lr = config.lr;
      std::vector<std::vector<Tensor<float>>> sinks(std::max(1, workers));
      for (auto& sink : sinks)
        for (const auto& p : model.params().params) sink.emplace_back(p.value.shape);

      double prev_val_acc = -1.0;

      auto evaluate_epoch = [&](int epoch) {
        const bool final_epoch = epoch == config.epochs;
        // Probes (strided except at the final epoch).
        for (const auto& probe : probes) {
          const int stride = final_epoch ? 1 : config.probe_stride;
          std::vector<size_t> indices;
          for (size_t i = 0; i < probe.items.size(); i += stride) indices.push_back(i);
          const auto preds = predict_items(model, probe, indices, workers);
          std::vector<ProbeItem> subset;
          subset.reserve(indices.size());
          for (size_t i : indices) subset.push_back(probe.items[i]);
          size_t cursor = 0;
          auto records = evaluate_probe(
              probe.name, subset, [&](const ProbeItem&) { return preds[cursor++]; });
          for (auto& r : records) emit(std::move(r), seed, epoch);
          if (config.dump_predictions && final_epoch) {
            std::string dump;
            for (size_t i = 0; i < indices.size(); ++i) {
              json j;
              j["probe"] = probe.name;
              j["item_id"] = indices[i];
              j["prediction"] = preds[i];
              dump += j.dump();
              dump += "\n";
            }
            write_file(config.out_dir + "/predictions_seed" + std::to_string(seed) + "_" +
                           probe.name + ".jsonl",
                       dump);
          }
        }
        // Training accuracy (capped per epoch, full at the final epoch).
        std::vector<size_t> train_eval = train_idx;
        if (!final_epoch && config.train_eval_cap > 0 &&
            train_eval.size() > static_cast<size_t>(config.train_eval_cap))
          train_eval.resize(config.train_eval_cap);
        auto [tn, tc] = question_accuracy(model, examples, train_eval, workers);
        MetricRecord tr;
        tr.probe = "TRAIN";
        tr.group_key = "overall";
        tr.group_value = "all";
        tr.n_items = tn;
        tr.n_correct = tc;
        tr.value = tn ? double(tc) / tn : 0.0;
        emit(std::move(tr), seed, epoch);
        // Validation accuracy.
        double val_acc = 0.0;
        if (!val_idx.empty()) {
          auto [vn, vc] = question_accuracy(model, examples, val_idx, workers);
          MetricRecord vr;
          vr.probe = "VALIDATION";
          vr.group_key = "overall";
          vr.group_value = "all";
          vr.n_items = vn;
          vr.n_correct = vc;
          vr.value = vn ? double(vc) / vn : 0.0;
          val_acc = vr.value;
          emit(std::move(vr), seed, epoch);
        }
        return val_acc;
      };

      prev_val_acc = evaluate_epoch(0);  // pre-training snapshot

      for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<size_t> order = train_idx;
        Rng shuffle_rng(mix_seed(derive_seed(0x0EDA, seed), epoch));
        shuffle_rng.shuffle(order);
        for (size_t start = 0; start < order.size(); start += config.batch_size) {
          const size_t end = std::min(order.size(), start + config.batch_size);
          std::vector<const TrainExample*> batch;
          std::vector<uint64_t> mask_seeds;
          for (size_t i = start; i < end; ++i) {
            batch.push_back(&examples[order[i]]);
            mask_seeds.push_back(mix_seed(derive_seed(0xD80F, seed),
                                          static_cast<uint64_t>(epoch) * order.size() + i));
          }
          train_batch(model, batch, mask_seeds, adam, sinks, workers);
        }
        const double val_acc = evaluate_epoch(epoch);
        // Halve the learning rate when validation accuracy fails to improve.
        if (epoch > 0 && val_acc <= prev_val_acc)
          adam.config().lr = std::max(config.lr_floor, adam.config().lr * 0.5);
        prev_val_acc = val_acc;
      }

      const std::string ckpt =
          config.out_dir + "/checkpoint_seed" + std::to_string(seed) + ".ckpt";
      save_checkpoint(ckpt, model.params());
      result.checkpoint_paths.push_back(ckpt);
    } catch (const std::exception& e) {
      aborted.push_back({{"seed", seed}, {"error", e.what()}});
    }
  }

  manifest["aborted_seeds"] = aborted;
  write_file(result.metrics_path, csv);
  write_file(result.aggregate_path, aggregates_to_csv(aggregate_runs(result.metrics)));
  write_file(result.manifest_path, manifest.dump(2));
  return result;
}

}  // namespace fwlab
