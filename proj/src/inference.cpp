#include "phasealign/inference.hpp"

#include <cmath>

#include "phasealign/errors.hpp"
#include "phasealign/nn.hpp"

namespace phasealign {

void PredictConfig::validate() const {
    if (patch.d < 1 || patch.h < 1 || patch.w < 1) throw ConfigError("predict.patch must be positive");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("predict.overlap must lie in [0, 1)");
}

std::vector<int64_t> window_starts(int64_t size, int64_t patch, double overlap) {
    if (size <= patch) return {0};
    const int64_t step = std::max<int64_t>(1, static_cast<int64_t>(std::floor(patch * (1.0 - overlap))));
    std::vector<int64_t> starts;
    for (int64_t s = 0; s + patch < size; s += step) starts.push_back(s);
    starts.push_back(size - patch);
    return starts;
}

namespace {

torch::Tensor window_weight(Shape3 patch, bool gaussian) {
    if (!gaussian) return torch::ones({patch.d, patch.h, patch.w}, torch::kFloat32);
    auto axis = [](int64_t n) {
        const double sigma = n / 8.0, c = (n - 1) / 2.0;
        torch::Tensor t = torch::arange(n, torch::kFloat64);
        return torch::exp(-(t - c).pow(2) / (2 * sigma * sigma)).to(torch::kFloat32);
    };
    const torch::Tensor w = axis(patch.d).view({-1, 1, 1}) * axis(patch.h).view({1, -1, 1}) * axis(patch.w).view({1, 1, -1});
    return w / w.max();
}

} // namespace

ProbabilityMap predict_probabilities(SegmentationNet& model, const Volume& venous, const Volume& arterial,
                                     const PredictConfig& cfg) {
    if (!model) throw ConfigError("predict: no trained model");
    cfg.validate();
    if (venous.shape() != arterial.shape()) throw DataError("predict: venous and arterial grids differ");
    const int64_t div = model->spec().arch.divisor();
    for (int ax = 0; ax < 3; ++ax)
        if (cfg.patch[ax] % div != 0)
            throw ConfigError("predict.patch: every extent must be divisible by " + std::to_string(div));

    const Shape3 orig = venous.shape();
    const Volume v = pad_to(venous, cfg.patch);
    const Volume a = pad_to(arterial, cfg.patch);
    const Shape3 s = v.shape();
    const torch::Tensor vt = to_tensor(v), at = to_tensor(a);
    const int64_t classes = model->spec().arch.num_classes;
    torch::Tensor acc = torch::zeros({classes, s.d, s.h, s.w}, torch::kFloat32);
    torch::Tensor wsum = torch::zeros({s.d, s.h, s.w}, torch::kFloat32);
    const torch::Tensor w = window_weight(cfg.patch, cfg.gaussian);

    torch::NoGradGuard ng;
    model->eval();
    using torch::indexing::Slice;
    for (int64_t z : window_starts(s.d, cfg.patch.d, cfg.overlap))
        for (int64_t y : window_starts(s.h, cfg.patch.h, cfg.overlap))
            for (int64_t x : window_starts(s.w, cfg.patch.w, cfg.overlap)) {
                const std::vector<torch::indexing::TensorIndex> idx{
                    Slice(), Slice(), Slice(z, z + cfg.patch.d), Slice(y, y + cfg.patch.h), Slice(x, x + cfg.patch.w)};
                const torch::Tensor p = torch::softmax(model->forward(vt.index(idx), at.index(idx)), 1).squeeze(0);
                acc.index({Slice(), Slice(z, z + cfg.patch.d), Slice(y, y + cfg.patch.h), Slice(x, x + cfg.patch.w)})
                    .add_(p * w);
                wsum.index({Slice(z, z + cfg.patch.d), Slice(y, y + cfg.patch.h), Slice(x, x + cfg.patch.w)}).add_(w);
            }
    acc = (acc / wsum).contiguous();

    // undo the symmetric padding of pad_to
    const int64_t oz = (s.d - orig.d) / 2, oy = (s.h - orig.h) / 2, ox = (s.w - orig.w) / 2;
    const torch::Tensor cropped =
        acc.index({Slice(), Slice(oz, oz + orig.d), Slice(oy, oy + orig.h), Slice(ox, ox + orig.w)}).contiguous();
    ProbabilityMap out(orig);
    if (classes != kNumClasses) throw ConfigError("predict: model class count differs from the label set");
    std::copy_n(cropped.data_ptr<float>(), out.p.size(), out.p.begin());
    return out;
}

LabelMap predict(SegmentationNet& model, const Volume& venous, const Volume& arterial, const PredictConfig& cfg) {
    return predict_probabilities(model, venous, arterial, cfg).argmax();
}

} // namespace phasealign
