#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "phasealign/volume.hpp"

namespace phasealign {

/// 2|Y n Z| / (|Y| + |Z|) over the binary masks of `cls`; 1 when both are empty.
double dsc(const LabelMap& pred, const LabelMap& gt, uint8_t cls);

inline constexpr int64_t kMinTumorVoxels = 50;

/// Sizes of the 26-connected components of `cls`, in discovery order.
std::vector<int64_t> component_sizes(const LabelMap& labels, uint8_t cls);

/// Pathological iff some 26-connected tumor component has more than
/// `min_voxels` voxels.
bool classify_case(const LabelMap& pred, int64_t min_voxels = kMinTumorVoxels);

struct CaseResult {
    std::string case_id;
    std::array<double, kNumClasses> dsc{}; // index = class, [0] unused
    bool tumor_detected = false;
    int64_t predicted_tumor_voxels = 0;
    int64_t tumor_overlap_voxels = 0;
    bool is_pathological_gt = false;
};

struct MissPolicy {
    bool require_size_rule = true; // miss if classify_case is false
    bool require_overlap = true;   // miss if predicted tumor misses the GT tumor entirely
};

CaseResult evaluate_case(const LabelMap& pred, const LabelMap& gt, std::string case_id,
                         int64_t min_voxels = kMinTumorVoxels);

bool is_miss(const CaseResult& r, const MissPolicy& policy = {});

/// Counted over pathological cases only.
int count_misses(const std::vector<CaseResult>& results, const MissPolicy& policy = {});

struct SensSpec {
    std::optional<double> sensitivity; // empty when there are no pathological cases
    std::optional<double> specificity; // empty when there are no healthy cases
    int tp = 0, fn = 0, tn = 0, fp = 0;
};

SensSpec sens_spec(const std::vector<CaseResult>& results);

/// fold[i] is the test fold of case i. Deterministic in seed; fold sizes
/// differ by at most one.
std::vector<int> cross_validate(size_t n_cases, int k, uint64_t seed);
std::vector<size_t> fold_members(const std::vector<int>& folds, int fold);
std::vector<size_t> fold_complement(const std::vector<int>& folds, int fold);

struct ClassStats {
    double mean = 0.0;
    double std = 0.0;
    int n = 0;
};

/// Mean and population std of per-case DSC for `cls`. For the tumor class only
/// pathological cases contribute.
ClassStats dsc_stats(const std::vector<CaseResult>& results, uint8_t cls);

/// Per-case rows followed by a summary row (case_id = "summary").
void write_metrics_csv(const std::vector<CaseResult>& results, const std::filesystem::path& path,
                       const MissPolicy& policy = {});
std::vector<CaseResult> read_metrics_csv(const std::filesystem::path& path);

} // namespace phasealign
