#include "phasealign/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "phasealign/config.hpp"
#include "phasealign/errors.hpp"
#include "phasealign/warp.hpp"

namespace phasealign {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("train.lr0 must be > 0");
    if (total_iters < 1) throw ConfigError("train.total_iters must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (patch.d < 1 || patch.h < 1 || patch.w < 1) throw ConfigError("train.patch must be positive");
    if (!(loss_smooth_eps > 0.0)) throw ConfigError("train.loss_smooth_eps must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
    if (jitter < 0) throw ConfigError("train.jitter must be >= 0");
    if (threads < 1) throw ConfigError("train.threads must be >= 1");
}

double cosine_lr(int t, const TrainConfig& cfg) {
    if (t < 0 || t > cfg.total_iters)
        throw ConfigError("cosine_lr: step " + std::to_string(t) + " outside [0, " + std::to_string(cfg.total_iters) + "]");
    return cfg.lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t / cfg.total_iters));
}

torch::Tensor soft_dice_loss(const torch::Tensor& probs, const torch::Tensor& labels, double eps) {
    if (probs.dim() != 5 || labels.dim() != 4 || probs.size(0) != labels.size(0) ||
        probs.sizes().slice(2) != labels.sizes().slice(1))
        throw DataError("dice_loss: scores (B, C, D, H, W) and labels (B, D, H, W) disagree");
    const int64_t classes = probs.size(1);
    const torch::Tensor y = torch::one_hot(labels, classes).permute({0, 4, 1, 2, 3}).to(probs.scalar_type());
    const std::vector<int64_t> dims{0, 2, 3, 4};
    const torch::Tensor inter = (probs * y).sum(dims);
    const torch::Tensor denom = probs.sum(dims) + y.sum(dims);
    const torch::Tensor d = (2.0 * inter + eps) / (denom + eps);
    return 1.0 - d.slice(0, 1).mean();
}

torch::Tensor dice_loss(const torch::Tensor& scores, const torch::Tensor& labels, double eps) {
    return soft_dice_loss(torch::softmax(scores, 1), labels, eps);
}

TrainingCase make_training_case(const CasePair& c, std::optional<DeformationField> field) {
    TrainingCase t;
    t.pair.case_id = c.case_id;
    t.pair.venous = clip_and_normalize(c.venous, kHuLow, kHuHigh);
    t.pair.arterial = clip_and_normalize(c.arterial, kHuLow, kHuHigh);
    t.pair.label = c.label;
    if (field) require_same_shape(*field, c.arterial.shape(), "early-alignment field");
    t.field = std::move(field);
    return t;
}

Batch sample_batch(const std::vector<CasePair>& cases, const TrainConfig& cfg, std::mt19937_64& rng) {
    std::vector<torch::Tensor> v, a, l;
    std::uniform_int_distribution<size_t> pick(0, cases.size() - 1);
    for (int b = 0; b < cfg.batch_size; ++b) {
        const PatchPair p = crop_pair(cases[pick(rng)], cfg.patch, cfg.jitter, rng);
        v.push_back(to_tensor(p.venous));
        a.push_back(to_tensor(p.arterial));
        l.push_back(to_tensor(p.label));
    }
    return {torch::cat(v, 0), torch::cat(a, 0), torch::cat(l, 0)};
}

void write_loss_csv(const std::vector<LossRecord>& log, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "iter,lr,loss\n" << std::setprecision(17);
    for (const LossRecord& r : log) out << r.iter << ',' << r.lr << ',' << r.loss << '\n';
}

std::vector<LossRecord> read_loss_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "iter,lr,loss") throw DataError(path.string() + ": not a loss log");
    std::vector<LossRecord> log;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        LossRecord r;
        char c1 = 0, c2 = 0;
        std::istringstream ss(line);
        if (!(ss >> r.iter >> c1 >> r.lr >> c2 >> r.loss) || c1 != ',' || c2 != ',')
            throw DataError(path.string() + ": malformed row '" + line + "'");
        log.push_back(r);
    }
    return log;
}

namespace {

struct Checkpoint {
    fs::path dir;
    fs::path model() const { return dir / "model.pt"; }
    fs::path optimizer() const { return dir / "optimizer.pt"; }
    fs::path state() const { return dir / "state.json"; }
};

void save_checkpoint(const Checkpoint& ck, SegmentationNet& model, torch::optim::SGD& opt, int iter,
                     const std::mt19937_64& rng, const ModelSpec& spec, const TrainConfig& cfg) {
    fs::create_directories(ck.dir);
    torch::save(model, ck.model().string());
    torch::save(opt, ck.optimizer().string());
    std::ostringstream rs;
    rs << rng;
    const json state{{"iteration", iter}, {"rng", rs.str()}, {"model", to_json(spec)}, {"train", to_json(cfg)}};
    std::ofstream(ck.state()) << state.dump(2) << '\n';
}

ModelSpec spec_from_state(const json& state, const fs::path& where) {
    if (!state.contains("model")) throw DataError(where.string() + ": checkpoint state lacks the model spec");
    const json& m = state["model"];
    return read_model_spec(JsonSection(m, "model"), parse_strategy(m.value("strategy", "na")));
}

} // namespace

SegmentationNet load_checkpoint(const fs::path& run_dir) {
    const Checkpoint ck{run_dir / "checkpoint"};
    if (!fs::exists(ck.state())) throw DataError("no checkpoint under " + run_dir.string());
    const json state = read_json_file(ck.state());
    SegmentationNet model(spec_from_state(state, ck.state()));
    torch::load(model, ck.model().string());
    model->eval();
    return model;
}

TrainResult train(const ModelSpec& spec, const std::vector<TrainingCase>& cases, const TrainConfig& cfg,
                  const TrainOptions& opts) {
    cfg.validate();
    spec.validate();
    if (cases.empty()) throw ConfigError("train: empty dataset");
    const int64_t div = spec.arch.divisor();
    for (int ax = 0; ax < 3; ++ax)
        if (cfg.patch[ax] % div != 0)
            throw ConfigError("train.patch: every extent must be divisible by " + std::to_string(div));

    // Early alignment trains on arterial volumes already warped into the venous frame.
    std::vector<CasePair> data;
    data.reserve(cases.size());
    for (const TrainingCase& c : cases) {
        if (spec.strategy == Strategy::ea && !c.field)
            throw ConfigError("train: early alignment needs a deformation field for case '" + c.pair.case_id + "'");
        CasePair p = c.pair;
        p.true_field.reset();
        if (spec.strategy == Strategy::ea) p.arterial = warp_scalar(*c.field, c.pair.arterial);
        data.push_back(std::move(p));
    }

    torch::set_num_threads(cfg.threads);
    torch::manual_seed(cfg.seed);
    TrainResult result;
    result.model = SegmentationNet(spec);
    SegmentationNet& model = result.model;
    torch::optim::SGD opt(model->parameters(),
                          torch::optim::SGDOptions(cfg.lr0).momentum(cfg.momentum).weight_decay(cfg.weight_decay));
    std::mt19937_64 rng(cfg.seed);
    int start = 0;

    const Checkpoint ck{opts.out_dir / "checkpoint"};
    const bool writing = !opts.out_dir.empty();
    if (writing && opts.resume && fs::exists(ck.state())) {
        const json state = read_json_file(ck.state());
        if (state.value("model", json()) != to_json(spec) || state.value("train", json()) != to_json(cfg))
            throw ConfigError("resume: checkpoint in " + opts.out_dir.string() + " was written with a different config");
        torch::load(model, ck.model().string());
        torch::load(opt, ck.optimizer().string());
        std::istringstream rs(state.at("rng").get<std::string>());
        rs >> rng;
        start = state.at("iteration").get<int>();
        result.log = read_loss_csv(opts.out_dir / "loss.csv");
        if (result.log.size() < static_cast<size_t>(start)) throw DataError("resume: loss log shorter than checkpoint");
        result.log.resize(static_cast<size_t>(start));
    }
    if (writing) {
        fs::create_directories(opts.out_dir);
        std::ofstream(opts.out_dir / "train_config.json")
            << json{{"model", to_json(spec)}, {"train", to_json(cfg)}}.dump(2) << '\n';
    }

    model->train();
    const int stop = opts.stop_after >= 0 ? std::min(opts.stop_after, cfg.total_iters) : cfg.total_iters;
    for (int t = start; t < stop; ++t) {
        const double lr = cosine_lr(t, cfg);
        for (auto& group : opt.param_groups()) static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
        const Batch b = sample_batch(data, cfg, rng);
        opt.zero_grad();
        const torch::Tensor loss = dice_loss(model->forward(b.venous, b.arterial), b.labels, cfg.loss_smooth_eps);
        const double value = loss.item<double>();
        if (!std::isfinite(value)) throw NumericError("training diverged at iteration " + std::to_string(t));
        loss.backward();
        opt.step();
        result.log.push_back({t, lr, value});

        const int done = t + 1;
        if (writing && cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < stop) {
            save_checkpoint(ck, model, opt, done, rng, spec, cfg);
            write_loss_csv(result.log, opts.out_dir / "loss.csv");
        }
    }
    if (writing) {
        save_checkpoint(ck, model, opt, stop, rng, spec, cfg);
        write_loss_csv(result.log, opts.out_dir / "loss.csv");
    }
    model->eval();
    return result;
}

} // namespace phasealign
