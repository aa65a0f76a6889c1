#pragma once

// End-to-end study: for every seed x fold x strategy train, predict the test
// fold and evaluate; then ensemble the ea/la/sa predictions.
//
// Config (one JSON object, unknown keys rejected):
//   run_id            string, default "run"
//   data.phantom      phantom generator settings (see PhantomConfig), or
//   data.manifest     path to a manifest.jsonl
//   strategies        ["na", "ea", "la", "sa"]
//   folds.k           default 4;  folds.run: list of fold indices (default all)
//   folds.seed        split seed, default 0
//   seeds             training seeds, default [0]
//   model.arch        ArchitectureSpec fields
//   train             TrainConfig fields (seed is taken from `seeds`)
//   registration      demons settings; registration.source: demons | true | external
//   predict           patch, overlap (0.5), gaussian (false)
//   ensemble          enabled (true), fallback ("sa"), mode: vote | mean_prob | both
//   evaluation        min_voxels (50), miss_requires_size (true), miss_requires_overlap (true)
//   save_predictions  default true
//
// Layout under <out>/<run_id>/:
//   config.json, fields/, seed<s>/fold<f>/<method>/{loss.csv, checkpoint/, pred/},
//   metrics.csv (per case), summary.csv, report.md, loss_*.svg

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "phasealign/config.hpp"
#include "phasealign/evaluation.hpp"
#include "phasealign/inference.hpp"
#include "phasealign/report.hpp"

namespace phasealign {

enum class FieldSource { demons, truth, external };
enum class EnsembleMode { vote, mean_prob, both };

/// Exactly one of phantom / manifest.
struct DataSource {
    std::optional<PhantomConfig> phantom;
    std::filesystem::path manifest;
};

/// Reads {"phantom": {...}} or {"manifest": "path"}.
DataSource read_data_source(JsonSection s);

struct Dataset {
    std::vector<CasePair> cases;
    std::vector<std::optional<DeformationField>> external; // manifest fields, per case
};

Dataset load_dataset(const DataSource& src);

/// Fields that bring each arterial volume into its venous frame. demons
/// results are cached under cache_dir (reused only for identical settings).
std::vector<DeformationField> early_alignment_fields(const Dataset& d, FieldSource source,
                                                     const RegistrationConfig& reg,
                                                     const std::filesystem::path& cache_dir);

/// Reads the "source" key next to the demons settings.
FieldSource read_registration(const json& j, RegistrationConfig& reg);

struct ExperimentConfig {
    std::string run_id = "run";
    DataSource data;
    std::vector<Strategy> strategies{Strategy::na, Strategy::ea, Strategy::la, Strategy::sa};
    int folds_k = 4;
    std::vector<int> folds_run; // empty: all
    uint64_t split_seed = 0;
    std::vector<uint64_t> seeds{0};
    ArchitectureSpec arch;
    TrainConfig train;
    RegistrationConfig registration;
    FieldSource field_source = FieldSource::demons;
    PredictConfig predict;
    bool ensemble = true;
    Strategy ensemble_fallback = Strategy::sa;
    EnsembleMode ensemble_mode = EnsembleMode::both;
    int64_t min_voxels = kMinTumorVoxels;
    MissPolicy miss;
    bool save_predictions = true;
    json snapshot; // the config as given, after overrides
};

/// Throws ConfigError naming the offending key path.
ExperimentConfig parse_experiment_config(const json& j);

struct MetricRow {
    uint64_t seed = 0;
    int fold = 0;
    std::string method;
    CaseResult result;
};

struct ExperimentResult {
    std::filesystem::path dir;
    std::vector<MetricRow> rows;
    std::vector<SummaryRow> summary; // per (method, seed) plus a seed-mean row per method
    /// Tumor DSC per method averaged over seeds (pathological cases only).
    std::map<std::string, double> mean_tumor_dsc;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_root);

/// Rebuilds report.md and loss plots for an existing run directory.
void write_run_report(const std::filesystem::path& run_dir);

} // namespace phasealign
