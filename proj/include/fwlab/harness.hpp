#pragma once

// Experiment orchestration: multi-seed training with per-epoch probe
// evaluation, metric records, aggregation across seeds, and run manifests.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fwlab/mac.hpp"
#include "fwlab/probe.hpp"
#include "fwlab/question.hpp"

namespace fwlab {

struct ExperimentConfig {
  std::string experiment = "custom";  // exp1_full | exp2_no_and | exp2_no_or |
                                      // exp2_no_equal | exp3_childes | custom
  std::string corpus_path;
  std::string train_scenes_path;
  std::string probe_scenes_path;
  std::vector<std::string> probes;  // names; empty = all eight
  int epochs = 25;
  std::vector<int> seeds = {0, 1, 2, 3, 4};
  ModelConfig model;

  double lr = 1e-4;
  int batch_size = 64;
  double lr_floor = 1e-6;
  double validation_fraction = 0.05;
  uint64_t probe_seed = 9917;  // fixed independently of training seeds
  int probe_stride = 1;        // evaluate every k-th probe item (1 = all)
  int train_eval_cap = 0;      // questions used for per-epoch train accuracy
                               // (0 = all; final epoch is always full)
  int probe_max_images = 10;
  bool dump_predictions = false;
  std::string out_dir = ".";

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  void validate() const;
};

struct MetricRecord {
  std::string experiment;
  int seed = 0;
  int epoch = 0;
  std::string probe;  // probe name, or TRAIN / VALIDATION
  std::string group_key;    // overall | answer_type | distance_bin |
                            // abs_count_diff | or_interpretation | diagnostic
  std::string group_value;
  long long n_items = 0;
  long long n_correct = 0;
  double value = 0.0;
};

std::string metrics_csv_header();
std::string metric_to_csv(const MetricRecord& r);
std::vector<MetricRecord> parse_metrics_csv(const std::string& text);

// Probe scoring against any predictor (the model, or a stub in tests).
using PredictFn = std::function<std::string(const ProbeItem&)>;
std::vector<MetricRecord> evaluate_probe(const std::string& probe_label,
                                         const std::vector<ProbeItem>& items,
                                         const PredictFn& predict);

struct AggregateRecord {
  std::string experiment;
  int epoch = 0;
  std::string probe;
  std::string group_key;
  std::string group_value;
  int n_seeds = 0;
  double mean = 0.0;
  double stddev = 0.0;  // unbiased; 0 with single_seed flag when n_seeds == 1
  bool single_seed = false;
};

std::vector<AggregateRecord> aggregate_runs(const std::vector<MetricRecord>& records);
std::string aggregates_to_csv(const std::vector<AggregateRecord>& aggregates);

// Spearman rank correlation (average-rank ties).
double spearman_rank_correlation(const std::vector<double>& xs, const std::vector<double>& ys);

// Number of evaluation workers: FWLAB_WORKERS env var, else hardware threads.
int worker_count();

struct TrainExample {
  std::vector<int> ids;
  const Tensor<float>* raster = nullptr;
  int target = 0;
};

// One optimizer step over a batch: per-example taped forward/backward with
// worker-local gradient sinks (sinks[w] parallel to model params), reduced in
// worker order so the result is deterministic for any thread count. Returns
// the mean loss. mask_seeds supplies one variational-dropout seed per example.
float train_batch(MacModel<float>& model, const std::vector<const TrainExample*>& batch,
                  const std::vector<uint64_t>& mask_seeds, Adam<float>& adam,
                  std::vector<std::vector<Tensor<float>>>& sinks, int workers);

struct RunResult {
  std::vector<MetricRecord> metrics;
  std::string metrics_path;
  std::string aggregate_path;
  std::string manifest_path;
  std::vector<std::string> checkpoint_paths;
};

// Full experiment: preset corpus manipulation, probe construction over the
// held-out pool, per-seed training with per-epoch evaluation and the halving
// learning-rate schedule, metric/manifest emission. Deterministic per seed.
RunResult run_experiment(const ExperimentConfig& config);

}  // namespace fwlab
