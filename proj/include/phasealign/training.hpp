#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "phasealign/models.hpp"
#include "phasealign/volume.hpp"

namespace phasealign {

struct TrainConfig {
    double lr0 = 0.005;
    int total_iters = 2000;
    int batch_size = 1;
    Shape3 patch{64, 64, 64};
    uint64_t seed = 0;
    double loss_smooth_eps = 1e-5;
    double momentum = 0.9;
    double weight_decay = 0.0;
    int checkpoint_every = 0; // 0: only at the end
    int jitter = kDefaultJitter;
    int threads = 1;          // 1 gives bit-reproducible runs

    void validate() const; // throws ConfigError
};

/// lr0 * (1 + cos(pi t / total_iters)) / 2 for 0 <= t <= total_iters.
double cosine_lr(int t, const TrainConfig& cfg);

/// 1 - mean over foreground classes of (2 sum p y + eps) / (sum p + sum y + eps),
/// p = softmax(scores) over dim 1, sums pooled over batch and voxels.
/// scores (B, C, D, H, W), labels (B, D, H, W) int64.
torch::Tensor dice_loss(const torch::Tensor& scores, const torch::Tensor& labels, double eps = 1e-5);
/// Same on probabilities that are already normalized.
torch::Tensor soft_dice_loss(const torch::Tensor& probs, const torch::Tensor& labels, double eps = 1e-5);

/// Normalized volumes and labels; `field` warps arterial onto venous and is
/// required for early alignment.
struct TrainingCase {
    CasePair pair;
    std::optional<DeformationField> field;
};

/// Clip + z-score both phases. The phantom true field is not carried over.
TrainingCase make_training_case(const CasePair& c, std::optional<DeformationField> field = std::nullopt);

struct LossRecord {
    int iter = 0;
    double lr = 0.0;
    double loss = 0.0;
    bool operator==(const LossRecord&) const = default;
};

struct TrainResult {
    SegmentationNet model{nullptr};
    std::vector<LossRecord> log;
};

struct TrainOptions {
    std::filesystem::path out_dir; // empty: nothing written
    bool resume = false;           // continue from out_dir/checkpoint when present
    int stop_after = -1;           // stop (with a checkpoint) once this many iterations are done
};

/// SGD with momentum on the cosine schedule. Every iteration draws
/// batch_size random cases and a crop_pair patch from each, runs the model and
/// steps on dice_loss. Writes out_dir/{loss.csv, train_config.json,
/// checkpoint/}. Throws ConfigError (bad config, ea without fields),
/// NumericError (non-finite loss).
TrainResult train(const ModelSpec& spec, const std::vector<TrainingCase>& cases, const TrainConfig& cfg,
                  const TrainOptions& opts = {});

void write_loss_csv(const std::vector<LossRecord>& log, const std::filesystem::path& path);
std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path);

/// Rebuilds the model from out_dir/checkpoint.
SegmentationNet load_checkpoint(const std::filesystem::path& run_dir);

/// Batch of patches ready for a forward.
struct Batch {
    torch::Tensor venous, arterial, labels;
};
Batch sample_batch(const std::vector<CasePair>& cases, const TrainConfig& cfg, std::mt19937_64& rng);

} // namespace phasealign
