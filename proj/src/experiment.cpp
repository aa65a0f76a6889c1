#include "phasealign/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>

#include "phasealign/errors.hpp"
#include "phasealign/io.hpp"
#include "phasealign/registration.hpp"
#include "phasealign/warp.hpp"

namespace phasealign {

namespace fs = std::filesystem;

namespace {

template <class F>
auto with_path(const std::string& path, F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

} // namespace

ExperimentConfig parse_experiment_config(const json& j) {
    ExperimentConfig c;
    c.snapshot = j;
    JsonSection root(j, "");
    c.run_id = root.get<std::string>("run_id", c.run_id);
    if (c.run_id.empty() || c.run_id.find('/') != std::string::npos)
        throw ConfigError("run_id: must be a non-empty name without '/'");

    c.data = read_data_source(root.section("data"));

    if (root.has("strategies")) {
        const json& s = root.raw("strategies");
        if (!s.is_array() || s.empty()) throw ConfigError("strategies: expected a non-empty list");
        c.strategies.clear();
        std::set<Strategy> seen;
        for (size_t i = 0; i < s.size(); ++i) {
            const std::string where = "strategies[" + std::to_string(i) + "]";
            if (!s[i].is_string()) throw ConfigError(where + ": expected a string");
            const Strategy st = with_path(where, [&] { return parse_strategy(s[i].get<std::string>()); });
            if (!seen.insert(st).second) throw ConfigError(where + ": duplicate strategy");
            c.strategies.push_back(st);
        }
    }

    JsonSection folds = root.section("folds");
    c.folds_k = folds.get("k", c.folds_k);
    c.folds_run = folds.get("run", c.folds_run);
    c.split_seed = folds.get("seed", c.split_seed);
    folds.finish();
    if (c.folds_k < 2) throw ConfigError("folds.k: must be >= 2");
    for (size_t i = 0; i < c.folds_run.size(); ++i)
        if (c.folds_run[i] < 0 || c.folds_run[i] >= c.folds_k)
            throw ConfigError("folds.run[" + std::to_string(i) + "]: fold index out of range");

    JsonSection model = root.section("model");
    c.arch = read_arch(model.section("arch"));
    model.finish();

    c.train = read_train_config(root.section("train"));
    c.seeds = root.get("seeds", std::vector<uint64_t>{c.train.seed});
    if (c.seeds.empty()) throw ConfigError("seeds: expected at least one seed");

    if (root.has("registration")) c.field_source = read_registration(root.raw("registration"), c.registration);

    JsonSection pred = root.section("predict");
    c.predict.patch = pred.get_shape("patch", c.train.patch);
    c.predict.overlap = pred.get("overlap", c.predict.overlap);
    c.predict.gaussian = pred.get("gaussian", c.predict.gaussian);
    pred.finish();
    with_path("predict", [&] { c.predict.validate(); return 0; });

    JsonSection ens = root.section("ensemble");
    c.ensemble = ens.get("enabled", c.ensemble);
    if (ens.has("fallback"))
        c.ensemble_fallback = with_path("ensemble.fallback", [&] { return parse_strategy(ens.require<std::string>("fallback")); });
    const std::string mode = ens.get<std::string>("mode", "both");
    if (mode == "vote") c.ensemble_mode = EnsembleMode::vote;
    else if (mode == "mean_prob") c.ensemble_mode = EnsembleMode::mean_prob;
    else if (mode == "both") c.ensemble_mode = EnsembleMode::both;
    else throw ConfigError("ensemble.mode: unknown value '" + mode + "' (vote, mean_prob, both)");
    ens.finish();
    if (c.ensemble_fallback == Strategy::na) throw ConfigError("ensemble.fallback: must be one of ea, la, sa");

    JsonSection ev = root.section("evaluation");
    c.min_voxels = ev.get("min_voxels", c.min_voxels);
    c.miss.require_size_rule = ev.get("miss_requires_size", c.miss.require_size_rule);
    c.miss.require_overlap = ev.get("miss_requires_overlap", c.miss.require_overlap);
    ev.finish();
    if (c.min_voxels < 0) throw ConfigError("evaluation.min_voxels: must be >= 0");

    c.save_predictions = root.get("save_predictions", c.save_predictions);
    root.finish();
    return c;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool contains(const std::vector<Strategy>& v, Strategy s) { return std::find(v.begin(), v.end(), s) != v.end(); }

} // namespace

DataSource read_data_source(JsonSection s) {
    DataSource d;
    if (s.has("phantom") == s.has("manifest"))
        throw ConfigError("data: give exactly one of data.phantom or data.manifest");
    if (s.has("phantom")) d.phantom = read_phantom_config(s.section("phantom"));
    if (s.has("manifest")) d.manifest = s.require<std::string>("manifest");
    s.finish();
    return d;
}

FieldSource read_registration(const json& j, RegistrationConfig& reg) {
    if (!j.is_object()) throw ConfigError("registration: expected an object");
    json rest = j;
    FieldSource source = FieldSource::demons;
    if (rest.contains("source")) {
        if (!rest["source"].is_string()) throw ConfigError("registration.source: expected a string");
        const std::string src = rest["source"].get<std::string>();
        if (src == "demons") source = FieldSource::demons;
        else if (src == "true") source = FieldSource::truth;
        else if (src == "external") source = FieldSource::external;
        else throw ConfigError("registration.source: unknown value '" + src + "' (demons, true, external)");
        rest.erase("source");
    }
    reg = read_registration_config(JsonSection(rest, "registration"));
    return source;
}

Dataset load_dataset(const DataSource& src) {
    Dataset d;
    if (src.phantom) {
        for (int i = 0; i < src.phantom->n_cases; ++i) d.cases.push_back(generate_case(*src.phantom, i));
        d.external.resize(d.cases.size());
        return d;
    }
    for (const ManifestEntry& e : read_manifest(src.manifest)) {
        d.cases.push_back(load_case(e));
        if (!e.field.empty()) d.external.push_back(load_external_field(e.field, d.cases.back().arterial.shape()));
        else d.external.emplace_back();
    }
    if (d.cases.empty()) throw DataError(src.manifest.string() + ": manifest lists no cases");
    return d;
}

std::vector<DeformationField> early_alignment_fields(const Dataset& d, FieldSource source,
                                                     const RegistrationConfig& reg, const fs::path& dir) {
    std::vector<DeformationField> fields;
    if (source == FieldSource::demons) {
        // cached fields are only reused for the same cases and registration settings
        json ids = json::array();
        for (const CasePair& c : d.cases) ids.push_back(c.case_id);
        const json stamp{{"registration", to_json(reg)}, {"cases", ids}};
        const fs::path stamp_path = dir / "stamp.json";
        if (fs::exists(stamp_path) && read_json_file(stamp_path) != stamp) fs::remove_all(dir);
        fs::create_directories(dir);
        std::ofstream(stamp_path) << stamp.dump(2) << '\n';
    }
    for (size_t i = 0; i < d.cases.size(); ++i) {
        const CasePair& c = d.cases[i];
        switch (source) {
        case FieldSource::truth:
            if (!c.true_field) throw ConfigError("registration.source: case '" + c.case_id + "' has no true field");
            fields.push_back(*c.true_field);
            break;
        case FieldSource::external:
            if (!d.external[i]) throw ConfigError("registration.source: case '" + c.case_id + "' has no field in the manifest");
            fields.push_back(*d.external[i]);
            break;
        case FieldSource::demons: {
            const fs::path p = dir / (c.case_id + ".def3");
            if (fs::exists(p)) {
                fields.push_back(read_field(p));
                break;
            }
            const auto t0 = Clock::now();
            fields.push_back(register_demons(clip(c.venous, kHuLow, kHuHigh), clip(c.arterial, kHuLow, kHuHigh), reg));
            write_field(fields.back(), p);
            std::clog << "registered " << c.case_id << " in " << std::fixed << std::setprecision(1) << seconds_since(t0)
                      << " s\n";
            break;
        }
        }
    }
    return fields;
}

namespace {

SummaryRow summarize(const std::string& method, const std::string& seed, const std::vector<CaseResult>& rs,
                     const MissPolicy& miss) {
    SummaryRow r;
    r.method = method;
    r.seed = seed;
    r.n_cases = static_cast<int>(rs.size());
    const ClassStats p = dsc_stats(rs, kPancreas), d = dsc_stats(rs, kDuct), t = dsc_stats(rs, kTumor);
    r.pancreas_mean = p.mean, r.pancreas_std = p.std;
    r.duct_mean = d.mean, r.duct_std = d.std;
    r.tumor_mean = t.mean, r.tumor_std = t.std;
    r.n_pathological = t.n;
    r.misses = count_misses(rs, miss);
    const SensSpec ss = sens_spec(rs);
    r.sensitivity = ss.sensitivity.value_or(-1.0);
    r.specificity = ss.specificity.value_or(-1.0);
    return r;
}

void write_metrics(const std::string& run_id, const std::vector<MetricRow>& rows, const MissPolicy& miss,
                   const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "run_id,seed,fold,method,case_id,dsc_pancreas,dsc_duct,dsc_tumor,pathological_gt,tumor_detected,"
           "predicted_tumor_voxels,tumor_overlap_voxels,miss\n"
        << std::setprecision(17);
    for (const MetricRow& m : rows) {
        const CaseResult& r = m.result;
        out << run_id << ',' << m.seed << ',' << m.fold << ',' << m.method << ',' << r.case_id << ',' << r.dsc[1] << ','
            << r.dsc[2] << ',' << r.dsc[3] << ',' << r.is_pathological_gt << ',' << r.tumor_detected << ','
            << r.predicted_tumor_voxels << ',' << r.tumor_overlap_voxels << ','
            << (r.is_pathological_gt && is_miss(r, miss)) << '\n';
    }
}

std::vector<std::pair<double, double>> smoothed(const std::vector<LossRecord>& log, size_t window) {
    std::vector<std::pair<double, double>> pts;
    double acc = 0;
    for (size_t i = 0; i < log.size(); ++i) {
        acc += log[i].loss;
        if (i >= window) acc -= log[i - window].loss;
        const size_t n = std::min(i + 1, window);
        if (i + 1 >= n && (i % std::max<size_t>(1, log.size() / 400) == 0 || i + 1 == log.size()))
            pts.emplace_back(log[i].iter, acc / static_cast<double>(n));
    }
    return pts;
}

} // namespace

void write_run_report(const fs::path& run_dir) {
    const std::vector<SummaryRow> rows = read_summary_csv(run_dir / "summary.csv");
    std::ofstream md(run_dir / "report.md");
    if (!md) throw DataError("cannot write " + (run_dir / "report.md").string());
    md << "# " << run_dir.filename().string() << "\n\nDSC in percent (mean &plusmn; std over test cases; tumor DSC "
       << "over pathological cases only). Rows with seed `mean` average the per-seed means; their std is across "
          "seeds.\n\n"
       << summary_markdown(rows) << "\n";

    for (const auto& seed_dir : fs::directory_iterator(run_dir)) {
        if (!seed_dir.is_directory() || seed_dir.path().filename().string().rfind("seed", 0) != 0) continue;
        for (const auto& fold_dir : fs::directory_iterator(seed_dir.path())) {
            if (!fold_dir.is_directory()) continue;
            std::vector<Series> series;
            std::vector<fs::path> methods;
            for (const auto& m : fs::directory_iterator(fold_dir.path()))
                if (fs::exists(m.path() / "loss.csv")) methods.push_back(m.path());
            std::sort(methods.begin(), methods.end());
            for (const fs::path& m : methods)
                series.push_back({m.filename().string(), smoothed(read_loss_csv(m / "loss.csv"), 50)});
            if (series.empty()) continue;
            const std::string name =
                "loss_" + seed_dir.path().filename().string() + "_" + fold_dir.path().filename().string() + ".svg";
            write_line_plot_svg(series, "training loss (moving average, 50 iterations)", "iteration", "dice loss",
                                run_dir / name);
            md << "![" << name << "](" << name << ")\n\n";
        }
    }
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const fs::path& out_root) {
    ExperimentResult res;
    res.dir = out_root / cfg.run_id;
    fs::create_directories(res.dir);
    std::ofstream(res.dir / "config.json") << cfg.snapshot.dump(2) << '\n';

    const Dataset data = load_dataset(cfg.data);
    const size_t n = data.cases.size();
    if (n < static_cast<size_t>(cfg.folds_k))
        throw ConfigError("folds.k: " + std::to_string(cfg.folds_k) + " folds need at least as many cases, have " +
                          std::to_string(n));

    std::vector<DeformationField> fields;
    if (contains(cfg.strategies, Strategy::ea))
        fields = early_alignment_fields(data, cfg.field_source, cfg.registration, res.dir / "fields");

    std::vector<TrainingCase> prepared;
    for (size_t i = 0; i < n; ++i)
        prepared.push_back(make_training_case(data.cases[i], fields.empty() ? std::nullopt
                                                                           : std::optional<DeformationField>(fields[i])));
    // Test-time arterial input for early alignment, already in the venous frame.
    std::vector<Volume> ea_arterial;
    for (size_t i = 0; i < fields.size(); ++i) ea_arterial.push_back(warp_scalar(fields[i], prepared[i].pair.arterial));

    const std::vector<int> folds = cross_validate(n, cfg.folds_k, cfg.split_seed);
    std::vector<int> run_folds = cfg.folds_run;
    if (run_folds.empty())
        for (int f = 0; f < cfg.folds_k; ++f) run_folds.push_back(f);

    const std::vector<Strategy> voters{Strategy::ea, Strategy::la, Strategy::sa};
    const bool do_ensemble =
        cfg.ensemble && std::all_of(voters.begin(), voters.end(), [&](Strategy s) { return contains(cfg.strategies, s); });
    const size_t fallback = static_cast<size_t>(std::find(voters.begin(), voters.end(), cfg.ensemble_fallback) - voters.begin());

    for (uint64_t seed : cfg.seeds) {
        for (int fold : run_folds) {
            const std::vector<size_t> train_idx = fold_complement(folds, fold);
            const std::vector<size_t> test_idx = fold_members(folds, fold);
            std::vector<TrainingCase> train_cases;
            for (size_t i : train_idx) train_cases.push_back(prepared[i]);
            const fs::path fold_dir = res.dir / ("seed" + std::to_string(seed)) / ("fold" + std::to_string(fold));

            std::map<Strategy, std::vector<LabelMap>> labels;
            std::map<Strategy, std::vector<ProbabilityMap>> probs;
            auto record = [&](const std::string& method, const std::vector<LabelMap>& preds) {
                for (size_t t = 0; t < test_idx.size(); ++t) {
                    const CasePair& c = data.cases[test_idx[t]];
                    res.rows.push_back({seed, fold, method, evaluate_case(preds[t], c.label, c.case_id, cfg.min_voxels)});
                    if (cfg.save_predictions) write_labels(preds[t], fold_dir / method / "pred" / (c.case_id + ".vol3"));
                }
            };

            for (Strategy st : cfg.strategies) {
                const std::string name = to_string(st);
                const fs::path dir = fold_dir / name;
                ModelSpec spec;
                spec.strategy = st;
                spec.arch = cfg.arch;
                TrainConfig tc = cfg.train;
                tc.seed = seed;

                auto t0 = Clock::now();
                SegmentationNet model{nullptr};
                const fs::path state = dir / "checkpoint" / "state.json";
                const json st_json = fs::exists(state) ? read_json_file(state) : json::object();
                if (st_json.value("iteration", -1) == tc.total_iters && st_json.value("train", json()) == to_json(tc) &&
                    st_json.value("model", json()) == to_json(spec)) {
                    model = load_checkpoint(dir);
                    std::clog << "[seed " << seed << " fold " << fold << " " << name << "] reused checkpoint\n";
                } else {
                    model = train(spec, train_cases, tc, {dir, true, -1}).model;
                    std::clog << "[seed " << seed << " fold " << fold << " " << name << "] trained " << tc.total_iters
                              << " iterations in " << std::fixed << std::setprecision(1) << seconds_since(t0) << " s\n";
                }

                t0 = Clock::now();
                for (size_t i : test_idx) {
                    const Volume& art = st == Strategy::ea ? ea_arterial[i] : prepared[i].pair.arterial;
                    ProbabilityMap p = predict_probabilities(model, prepared[i].pair.venous, art, cfg.predict);
                    labels[st].push_back(p.argmax());
                    if (do_ensemble && contains(voters, st)) probs[st].push_back(std::move(p));
                }
                record(name, labels[st]);
                std::clog << "[seed " << seed << " fold " << fold << " " << name << "] predicted " << test_idx.size()
                          << " cases in " << std::fixed << std::setprecision(1) << seconds_since(t0) << " s\n";
            }

            if (do_ensemble) {
                std::vector<LabelMap> vote, mean;
                for (size_t t = 0; t < test_idx.size(); ++t) {
                    if (cfg.ensemble_mode != EnsembleMode::mean_prob) {
                        const std::vector<LabelMap> ps{labels[voters[0]][t], labels[voters[1]][t], labels[voters[2]][t]};
                        vote.push_back(majority_vote(ps, fallback));
                    }
                    if (cfg.ensemble_mode != EnsembleMode::vote) {
                        const std::vector<ProbabilityMap> ps{probs[voters[0]][t], probs[voters[1]][t], probs[voters[2]][t]};
                        mean.push_back(mean_probability_vote(ps));
                    }
                }
                if (!vote.empty()) record("ens_vote", vote);
                if (!mean.empty()) record("ens_mean", mean);
            }
        }
    }

    // summaries: per method and seed, then the seed average per method
    std::vector<std::string> methods;
    for (const MetricRow& r : res.rows)
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    for (const std::string& m : methods) {
        std::vector<SummaryRow> per_seed;
        for (uint64_t seed : cfg.seeds) {
            std::vector<CaseResult> rs;
            for (const MetricRow& r : res.rows)
                if (r.method == m && r.seed == seed) rs.push_back(r.result);
            per_seed.push_back(summarize(m, std::to_string(seed), rs, cfg.miss));
        }
        SummaryRow avg;
        avg.method = m;
        avg.seed = "mean";
        auto mean_std = [&](auto field, double& mean, double& sd) {
            mean = 0;
            for (const SummaryRow& r : per_seed) mean += r.*field;
            mean /= static_cast<double>(per_seed.size());
            sd = 0;
            for (const SummaryRow& r : per_seed) sd += (r.*field - mean) * (r.*field - mean);
            sd = std::sqrt(sd / static_cast<double>(per_seed.size()));
        };
        mean_std(&SummaryRow::pancreas_mean, avg.pancreas_mean, avg.pancreas_std);
        mean_std(&SummaryRow::duct_mean, avg.duct_mean, avg.duct_std);
        mean_std(&SummaryRow::tumor_mean, avg.tumor_mean, avg.tumor_std);
        double unused = 0;
        mean_std(&SummaryRow::sensitivity, avg.sensitivity, unused);
        mean_std(&SummaryRow::specificity, avg.specificity, unused);
        for (const SummaryRow& r : per_seed) {
            if (r.sensitivity < 0) avg.sensitivity = -1;
            if (r.specificity < 0) avg.specificity = -1;
        }
        for (const SummaryRow& r : per_seed) {
            avg.n_cases += r.n_cases;
            avg.misses += r.misses;
            avg.n_pathological += r.n_pathological;
        }
        res.mean_tumor_dsc[m] = avg.tumor_mean;
        res.summary.insert(res.summary.end(), per_seed.begin(), per_seed.end());
        res.summary.push_back(avg);
    }

    write_metrics(cfg.run_id, res.rows, cfg.miss, res.dir / "metrics.csv");
    write_summary_csv(res.summary, res.dir / "summary.csv");
    write_run_report(res.dir);
    return res;
}

} // namespace phasealign
