#include "phasealign/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "phasealign/errors.hpp"

namespace phasealign {

namespace {

void require_same(const LabelMap& a, const LabelMap& b, const char* what) {
    if (!(a.shape() == b.shape()))
        throw DataError(std::string(what) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                        " differ");
}

} // namespace

double dsc(const LabelMap& pred, const LabelMap& gt, uint8_t cls) {
    require_same(pred, gt, "dsc");
    int64_t inter = 0, np = 0, ng = 0;
    auto p = pred.data();
    auto g = gt.data();
    for (size_t i = 0; i < p.size(); ++i) {
        const bool a = p[i] == cls, b = g[i] == cls;
        np += a;
        ng += b;
        inter += a && b;
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

std::vector<int64_t> component_sizes(const LabelMap& labels, uint8_t cls) {
    const Shape3 s = labels.shape();
    auto data = labels.data();
    std::vector<uint8_t> seen(data.size(), 0);
    std::vector<int64_t> sizes;
    std::vector<int64_t> stack;
    for (int64_t start = 0; start < static_cast<int64_t>(data.size()); ++start) {
        if (data[start] != cls || seen[start]) continue;
        int64_t count = 0;
        seen[start] = 1;
        stack.push_back(start);
        while (!stack.empty()) {
            const int64_t i = stack.back();
            stack.pop_back();
            ++count;
            const int64_t z = i / (s.h * s.w), y = (i / s.w) % s.h, x = i % s.w;
            for (int64_t dz = -1; dz <= 1; ++dz)
                for (int64_t dy = -1; dy <= 1; ++dy)
                    for (int64_t dx = -1; dx <= 1; ++dx) {
                        const int64_t zz = z + dz, yy = y + dy, xx = x + dx;
                        if (!s.contains(zz, yy, xx)) continue;
                        const int64_t j = s.index(zz, yy, xx);
                        if (data[j] == cls && !seen[j]) {
                            seen[j] = 1;
                            stack.push_back(j);
                        }
                    }
        }
        sizes.push_back(count);
    }
    return sizes;
}

bool classify_case(const LabelMap& pred, int64_t min_voxels) {
    for (int64_t sz : component_sizes(pred, kTumor))
        if (sz > min_voxels) return true;
    return false;
}

CaseResult evaluate_case(const LabelMap& pred, const LabelMap& gt, std::string case_id, int64_t min_voxels) {
    require_same(pred, gt, "evaluate_case");
    CaseResult r;
    r.case_id = std::move(case_id);
    for (int c = 1; c < kNumClasses; ++c) r.dsc[c] = dsc(pred, gt, static_cast<uint8_t>(c));
    r.dsc[0] = dsc(pred, gt, kBackground);
    r.tumor_detected = classify_case(pred, min_voxels);
    auto p = pred.data();
    auto g = gt.data();
    for (size_t i = 0; i < p.size(); ++i) {
        r.predicted_tumor_voxels += p[i] == kTumor;
        r.tumor_overlap_voxels += p[i] == kTumor && g[i] == kTumor;
        r.is_pathological_gt |= g[i] == kTumor;
    }
    return r;
}

bool is_miss(const CaseResult& r, const MissPolicy& policy) {
    if (!r.is_pathological_gt) return false;
    if (policy.require_size_rule && !r.tumor_detected) return true;
    if (policy.require_overlap && r.tumor_overlap_voxels == 0) return true;
    return false;
}

int count_misses(const std::vector<CaseResult>& results, const MissPolicy& policy) {
    return static_cast<int>(std::count_if(results.begin(), results.end(),
                                          [&](const CaseResult& r) { return is_miss(r, policy); }));
}

SensSpec sens_spec(const std::vector<CaseResult>& results) {
    SensSpec out;
    for (const auto& r : results) {
        if (r.is_pathological_gt) (r.tumor_detected ? out.tp : out.fn)++;
        else (r.tumor_detected ? out.fp : out.tn)++;
    }
    if (out.tp + out.fn > 0) out.sensitivity = static_cast<double>(out.tp) / (out.tp + out.fn);
    if (out.tn + out.fp > 0) out.specificity = static_cast<double>(out.tn) / (out.tn + out.fp);
    return out;
}

std::vector<int> cross_validate(size_t n_cases, int k, uint64_t seed) {
    if (k < 2) throw ConfigError("cross_validate: k must be >= 2");
    if (static_cast<size_t>(k) > n_cases)
        throw ConfigError("cross_validate: k = " + std::to_string(k) + " exceeds dataset size " +
                          std::to_string(n_cases));
    std::vector<size_t> order(n_cases);
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit draw so the permutation does not depend on
    // the standard library's shuffle implementation.
    for (size_t i = n_cases; i > 1; --i) {
        const size_t j = static_cast<size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    std::vector<int> fold(n_cases);
    for (size_t r = 0; r < n_cases; ++r) fold[order[r]] = static_cast<int>(r % static_cast<size_t>(k));
    return fold;
}

std::vector<size_t> fold_members(const std::vector<int>& folds, int fold) {
    std::vector<size_t> out;
    for (size_t i = 0; i < folds.size(); ++i)
        if (folds[i] == fold) out.push_back(i);
    return out;
}

std::vector<size_t> fold_complement(const std::vector<int>& folds, int fold) {
    std::vector<size_t> out;
    for (size_t i = 0; i < folds.size(); ++i)
        if (folds[i] != fold) out.push_back(i);
    return out;
}

ClassStats dsc_stats(const std::vector<CaseResult>& results, uint8_t cls) {
    ClassStats st;
    double sum = 0.0, ss = 0.0;
    for (const auto& r : results) {
        if (cls == kTumor && !r.is_pathological_gt) continue;
        sum += r.dsc[cls];
        ss += r.dsc[cls] * r.dsc[cls];
        ++st.n;
    }
    if (st.n == 0) return st;
    st.mean = sum / st.n;
    st.std = std::sqrt(std::max(0.0, ss / st.n - st.mean * st.mean));
    return st;
}

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace

void write_metrics_csv(const std::vector<CaseResult>& results, const std::filesystem::path& path,
                       const MissPolicy& policy) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    out << "case_id,dsc_pancreas,dsc_duct,dsc_tumor,tumor_detected,predicted_tumor_voxels,tumor_overlap_voxels,"
           "pathological,miss\n";
    for (const auto& r : results)
        out << r.case_id << "," << fmt(r.dsc[1]) << "," << fmt(r.dsc[2]) << "," << fmt(r.dsc[3]) << ","
            << int(r.tumor_detected) << "," << r.predicted_tumor_voxels << "," << r.tumor_overlap_voxels << ","
            << int(r.is_pathological_gt) << "," << int(is_miss(r, policy)) << "\n";
    const auto ss = sens_spec(results);
    out << "summary," << fmt(dsc_stats(results, 1).mean) << "," << fmt(dsc_stats(results, 2).mean) << ","
        << fmt(dsc_stats(results, 3).mean) << "," << (ss.sensitivity ? fmt(*ss.sensitivity) : "nan") << ","
        << (ss.specificity ? fmt(*ss.specificity) : "nan") << ",," << results.size() << ","
        << count_misses(results, policy) << "\n";
}

std::vector<CaseResult> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open metrics");
    std::string line;
    std::getline(in, line);
    std::vector<CaseResult> out;
    while (std::getline(in, line)) {
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cols.push_back(cell);
        if (cols.empty() || cols[0] == "summary") continue;
        if (cols.size() < 8) throw DataError(path.string() + ": malformed row '" + line + "'");
        CaseResult r;
        r.case_id = cols[0];
        r.dsc[1] = std::stod(cols[1]);
        r.dsc[2] = std::stod(cols[2]);
        r.dsc[3] = std::stod(cols[3]);
        r.tumor_detected = cols[4] == "1";
        r.predicted_tumor_voxels = std::stoll(cols[5]);
        r.tumor_overlap_voxels = std::stoll(cols[6]);
        r.is_pathological_gt = cols[7] == "1";
        out.push_back(r);
    }
    return out;
}

} // namespace phasealign
