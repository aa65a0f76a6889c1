// phasealign command line. Exit codes: 0 ok, 2 config error, 3 data error,
// 4 numeric failure, 1 anything else.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "phasealign/config.hpp"
#include "phasealign/ensemble.hpp"
#include "phasealign/errors.hpp"
#include "phasealign/evaluation.hpp"
#include "phasealign/experiment.hpp"
#include "phasealign/inference.hpp"
#include "phasealign/io.hpp"
#include "phasealign/phantom.hpp"
#include "phasealign/registration.hpp"
#include "phasealign/training.hpp"
#include "phasealign/warp.hpp"

namespace fs = std::filesystem;
using namespace phasealign;

namespace {

/// --config file (or {}) with every --set applied in order.
json load_config(const std::string& path, const std::vector<std::string>& sets) {
    json j = path.empty() ? json::object() : read_json_file(path);
    for (const std::string& s : sets) apply_override(j, s);
    return j;
}

void add_config_options(CLI::App* app, std::string& config, std::vector<std::string>& sets) {
    app->add_option("--config", config, "JSON config file");
    app->add_option("--set", sets, "override a config key, e.g. train.lr0=0.01 (repeatable)");
}

Volume normalized(const Volume& v) { return clip_and_normalize(v, kHuLow, kHuHigh); }

int cmd_phantom(const std::string& config, const std::vector<std::string>& sets, const fs::path& out) {
    // a bare phantom config, or a train/run config whose data.phantom is used
    const json j = load_config(config, sets);
    JsonSection root(j, "");
    if (root.has("data") && !root.section("data").has("phantom")) throw ConfigError("data.phantom: required key is missing");
    const PhantomConfig cfg = root.has("data") ? read_phantom_config(root.section("data").section("phantom"))
                                               : read_phantom_config(root);
    const fs::path manifest = write_phantom_dataset(cfg, out);
    std::cout << manifest.string() << '\n';
    return 0;
}

int cmd_register(const std::string& config, const std::vector<std::string>& sets, const fs::path& fixed_path,
                 const fs::path& moving_path, const fs::path& out, const std::string& warped_out) {
    const RegistrationConfig cfg = read_registration_config(JsonSection(load_config(config, sets), ""));
    const Volume fixed = clip(read_volume(fixed_path), kHuLow, kHuHigh);
    const Volume moving = clip(read_volume(moving_path), kHuLow, kHuHigh);
    if (!(fixed.shape() == moving.shape())) throw DataError(moving_path.string() + ": grid differs from the fixed volume");
    const DeformationField u = register_demons(fixed, moving, cfg);
    write_field(u, out);
    const Volume warped = warp_scalar(u, moving);
    std::cout << "mse before " << mean_squared_error(fixed, moving) << ", after " << mean_squared_error(fixed, warped)
              << '\n';
    if (!warped_out.empty()) write_volume(warp_scalar(u, read_volume(moving_path)), warped_out);
    return 0;
}

// train config: data, model {strategy, arch, skip_policy, fusion}, train, registration
int cmd_train(const std::string& config, const std::vector<std::string>& sets, const fs::path& out, bool resume,
              int stop_after) {
    const json j = load_config(config, sets);
    JsonSection root(j, "");
    const DataSource src = read_data_source(root.section("data"));
    const ModelSpec spec = read_model_spec(root.section("model"), Strategy::na);
    const TrainConfig tc = read_train_config(root.section("train"));
    RegistrationConfig reg;
    FieldSource source = FieldSource::demons;
    if (root.has("registration")) source = read_registration(root.raw("registration"), reg);
    root.finish();

    const Dataset data = load_dataset(src);
    std::vector<DeformationField> fields;
    if (spec.strategy == Strategy::ea) fields = early_alignment_fields(data, source, reg, out / "fields");
    std::vector<TrainingCase> cases;
    for (size_t i = 0; i < data.cases.size(); ++i)
        cases.push_back(make_training_case(data.cases[i], fields.empty() ? std::nullopt
                                                                        : std::optional<DeformationField>(fields[i])));
    const TrainResult r = train(spec, cases, tc, {out, resume, stop_after});
    if (!r.log.empty())
        std::cout << "iteration " << r.log.back().iter << " loss " << std::setprecision(6) << r.log.back().loss
                  << '\n';
    return 0;
}

struct PredictArgs {
    fs::path run;
    std::string venous, arterial, field, out;
    std::string manifest, out_dir;
    std::string config;
    std::vector<std::string> sets;
};

int cmd_predict(const PredictArgs& a) {
    const json j = load_config(a.config, a.sets);
    JsonSection s(j, "");
    PredictConfig pc;
    pc.patch = s.get_shape("patch", pc.patch);
    pc.overlap = s.get("overlap", pc.overlap);
    pc.gaussian = s.get("gaussian", pc.gaussian);
    s.finish();
    pc.validate();

    SegmentationNet model = load_checkpoint(a.run);
    const bool ea = model->spec().strategy == Strategy::ea;
    auto run_one = [&](const Volume& venous, const Volume& arterial, const std::optional<DeformationField>& field,
                       const std::string& what) {
        Volume art = normalized(arterial);
        if (ea) {
            if (!field) throw ConfigError(what + ": an ea model needs a field (--field or a manifest field)");
            art = warp_scalar(*field, art);
        }
        return predict(model, normalized(venous), art, pc);
    };

    if (!a.manifest.empty()) {
        if (a.out_dir.empty()) throw ConfigError("--out-dir is required with --manifest");
        for (const ManifestEntry& e : read_manifest(a.manifest)) {
            const Volume v = read_volume(e.venous);
            std::optional<DeformationField> f;
            if (!e.field.empty()) f = load_external_field(e.field, v.shape());
            write_labels(run_one(v, read_volume(e.arterial), f, e.case_id), fs::path(a.out_dir) / (e.case_id + ".vol3"));
        }
        return 0;
    }
    if (a.venous.empty() || a.arterial.empty() || a.out.empty())
        throw ConfigError("give --venous, --arterial and --out, or --manifest and --out-dir");
    const Volume v = read_volume(a.venous);
    std::optional<DeformationField> f;
    if (!a.field.empty()) f = load_external_field(a.field, v.shape());
    write_labels(run_one(v, read_volume(a.arterial), f, a.venous), a.out);
    return 0;
}

/// Either one file per voter or one directory per voter (matched by file name).
int cmd_ensemble(const std::vector<std::string>& preds, size_t fallback, const fs::path& out) {
    if (preds.size() < 2) throw ConfigError("--preds: need at least two predictions");
    if (fallback >= preds.size()) throw ConfigError("--fallback: index out of range");
    auto vote = [&](const std::vector<fs::path>& files, const fs::path& dst) {
        std::vector<LabelMap> ls;
        for (const fs::path& f : files) ls.push_back(read_labels(f));
        write_labels(majority_vote(ls, fallback), dst);
    };
    if (!fs::is_directory(preds[0])) {
        vote({preds.begin(), preds.end()}, out);
        return 0;
    }
    std::vector<fs::path> names;
    for (const auto& e : fs::directory_iterator(preds[0]))
        if (e.path().extension() == ".vol3") names.push_back(e.path().filename());
    std::sort(names.begin(), names.end());
    for (const fs::path& n : names) {
        std::vector<fs::path> files;
        for (const std::string& p : preds) files.push_back(fs::path(p) / n);
        vote(files, out / n);
    }
    return 0;
}

/// Ground truth lookup: a manifest (file or dir/manifest.jsonl), else
/// <gt>/<case>_label.vol3 or <gt>/<case>.vol3.
fs::path gt_path(const fs::path& gt, const std::string& case_id, const std::map<std::string, fs::path>& manifest) {
    if (!manifest.empty()) {
        auto it = manifest.find(case_id);
        if (it == manifest.end()) throw DataError(gt.string() + ": no ground truth for case '" + case_id + "'");
        return it->second;
    }
    for (const fs::path& p : {gt / (case_id + "_label.vol3"), gt / (case_id + ".vol3")})
        if (fs::exists(p)) return p;
    throw DataError(gt.string() + ": no ground truth for case '" + case_id + "'");
}

int cmd_evaluate(const fs::path& pred_dir, const fs::path& gt, const fs::path& out, int64_t min_voxels) {
    std::map<std::string, fs::path> manifest;
    fs::path mpath = fs::is_directory(gt) ? gt / "manifest.jsonl" : gt;
    if (fs::exists(mpath) && !fs::is_directory(mpath))
        for (const ManifestEntry& e : read_manifest(mpath)) manifest[e.case_id] = e.label;
    const fs::path gt_dir = fs::is_directory(gt) ? gt : gt.parent_path();

    std::vector<fs::path> preds;
    for (const auto& e : fs::directory_iterator(pred_dir))
        if (e.path().extension() == ".vol3") preds.push_back(e.path());
    if (preds.empty()) throw DataError(pred_dir.string() + ": no .vol3 predictions");
    std::sort(preds.begin(), preds.end());
    std::vector<CaseResult> results;
    for (const fs::path& p : preds) {
        const std::string id = p.stem().string();
        const LabelMap gt_labels = read_labels(gt_path(gt_dir, id, manifest));
        results.push_back(evaluate_case(read_labels(p), gt_labels, id, min_voxels));
    }
    write_metrics_csv(results, out);
    const ClassStats t = dsc_stats(results, 3);
    const SensSpec ss = sens_spec(results);
    auto rate = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("n/a"); };
    std::cout << results.size() << " cases, tumor DSC " << std::fixed << std::setprecision(4) << t.mean << ", misses "
              << count_misses(results) << ", sensitivity " << rate(ss.sensitivity) << ", specificity "
              << rate(ss.specificity) << '\n';
    return 0;
}

int cmd_run(const std::string& config, const std::vector<std::string>& sets, const fs::path& out) {
    if (config.empty()) throw ConfigError("--config is required");
    const ExperimentConfig cfg = parse_experiment_config(load_config(config, sets));
    const ExperimentResult r = run_experiment(cfg, out);
    std::cout << (r.dir / "report.md").string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-phase CT pancreas segmentation with feature alignment"};
    app.require_subcommand(1);

    std::string config;
    std::vector<std::string> sets;
    fs::path out;

    auto* phantom = app.add_subcommand("phantom", "write a synthetic dataset (volumes, labels, true fields, manifest)");
    add_config_options(phantom, config, sets);
    phantom->add_option("--out", out, "output directory")->required();

    auto* reg = app.add_subcommand("register", "demons registration of the moving volume onto the fixed one");
    add_config_options(reg, config, sets);
    fs::path fixed, moving;
    std::string warped;
    reg->add_option("--fixed", fixed, "fixed volume (.vol3)")->required()->check(CLI::ExistingFile);
    reg->add_option("--moving", moving, "moving volume (.vol3)")->required()->check(CLI::ExistingFile);
    reg->add_option("--out", out, "field (.def3)")->required();
    reg->add_option("--warped", warped, "also write the warped moving volume");

    auto* tr = app.add_subcommand("train", "train one model on every case of a dataset");
    add_config_options(tr, config, sets);
    bool resume = false;
    int stop_after = -1;
    tr->add_option("--out", out, "run directory")->required();
    tr->add_flag("--resume", resume, "continue from <out>/checkpoint");
    tr->add_option("--stop-after", stop_after, "stop once this many iterations are done");

    auto* pr = app.add_subcommand("predict", "sliding-window prediction with a trained model");
    PredictArgs pa;
    add_config_options(pr, pa.config, pa.sets);
    pr->add_option("--run", pa.run, "training run directory")->required()->check(CLI::ExistingDirectory);
    pr->add_option("--venous", pa.venous, "venous volume");
    pr->add_option("--arterial", pa.arterial, "arterial volume");
    pr->add_option("--field", pa.field, "field warping arterial onto venous (ea models)");
    pr->add_option("--out", pa.out, "predicted labels (.vol3)");
    pr->add_option("--manifest", pa.manifest, "predict every case of a manifest");
    pr->add_option("--out-dir", pa.out_dir, "output directory for --manifest");

    auto* ens = app.add_subcommand("ensemble", "majority vote over predictions");
    std::vector<std::string> preds;
    size_t fallback = 0;
    ens->add_option("--preds", preds, "label files, or directories of them")->required()->expected(2, -1);
    ens->add_option("--fallback", fallback, "index of the voter used where no label has a majority")->required();
    ens->add_option("--out", out, "output file (or directory)")->required();

    auto* ev = app.add_subcommand("evaluate", "DSC, detection and misses against ground truth");
    fs::path pred_dir, gt;
    int64_t min_voxels = kMinTumorVoxels;
    ev->add_option("--pred", pred_dir, "directory of <case>.vol3 predictions")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--gt", gt, "manifest or directory of labels")->required()->check(CLI::ExistingPath);
    ev->add_option("--out", out, "metrics.csv")->required();
    ev->add_option("--min-voxels", min_voxels, "tumor component size for a positive case");

    auto* rep = app.add_subcommand("report", "rebuild report.md and loss plots of a run");
    fs::path run_dir;
    rep->add_option("--run", run_dir, "run directory")->required()->check(CLI::ExistingDirectory);

    auto* run = app.add_subcommand("run", "full cross-validated study from one config");
    add_config_options(run, config, sets);
    out = "runs";
    run->add_option("--out", out, "output root");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*phantom) return cmd_phantom(config, sets, out);
        if (*reg) return cmd_register(config, sets, fixed, moving, out, warped);
        if (*tr) return cmd_train(config, sets, out, resume, stop_after);
        if (*pr) return cmd_predict(pa);
        if (*ens) return cmd_ensemble(preds, fallback, out);
        if (*ev) return cmd_evaluate(pred_dir, gt, out, min_voxels);
        if (*rep) {
            write_run_report(run_dir);
            return 0;
        }
        if (*run) return cmd_run(config, sets, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
