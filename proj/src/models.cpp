#include "phasealign/models.hpp"

#include "phasealign/errors.hpp"

namespace phasealign {

Strategy parse_strategy(std::string_view s) {
    if (s == "na") return Strategy::na;
    if (s == "ea") return Strategy::ea;
    if (s == "la") return Strategy::la;
    if (s == "sa") return Strategy::sa;
    throw ConfigError("unknown strategy '" + std::string(s) + "' (expected na, ea, la or sa)");
}

std::string to_string(Strategy s) {
    switch (s) {
    case Strategy::na: return "na";
    case Strategy::ea: return "ea";
    case Strategy::la: return "la";
    case Strategy::sa: return "sa";
    }
    return "?";
}

SkipPolicy parse_skip_policy(std::string_view s) {
    if (s == "both_streams") return SkipPolicy::both_streams;
    if (s == "venous_only") return SkipPolicy::venous_only;
    if (s == "fused") return SkipPolicy::fused;
    throw ConfigError("unknown skip policy '" + std::string(s) + "'");
}

std::string to_string(SkipPolicy s) {
    switch (s) {
    case SkipPolicy::both_streams: return "both_streams";
    case SkipPolicy::venous_only: return "venous_only";
    case SkipPolicy::fused: return "fused";
    }
    return "?";
}

Fusion parse_fusion(std::string_view s) {
    if (s == "bottleneck") return Fusion::bottleneck;
    if (s == "per_level") return Fusion::per_level;
    throw ConfigError("unknown fusion '" + std::string(s) + "'");
}

std::string to_string(Fusion f) { return f == Fusion::bottleneck ? "bottleneck" : "per_level"; }

SkipPolicy ModelSpec::skips() const {
    if (skip_policy) return *skip_policy;
    switch (strategy) {
    case Strategy::la: return SkipPolicy::venous_only;
    case Strategy::sa: return SkipPolicy::fused;
    default: return SkipPolicy::both_streams;
    }
}

Fusion ModelSpec::fusion_mode() const {
    if (fusion) return *fusion;
    return strategy == Strategy::sa ? Fusion::per_level : Fusion::bottleneck;
}

void ModelSpec::validate() const {
    arch.validate();
    const Fusion f = fusion_mode();
    const SkipPolicy s = skips();
    if (strategy == Strategy::la && f != Fusion::bottleneck) throw ConfigError("model: la fuses at the bottleneck only");
    if (strategy == Strategy::sa && f != Fusion::per_level) throw ConfigError("model: sa fuses at every level");
    if ((f == Fusion::per_level) != (s == SkipPolicy::fused))
        throw ConfigError("model: the fused skip policy goes with per-level fusion and only with it");
}

SegmentationNetImpl::SegmentationNetImpl(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const ArchitectureSpec& a = spec_.arch;
    const int n = a.n_levels;
    const bool per_level = spec_.fusion_mode() == Fusion::per_level;

    std::vector<int64_t> arterial_in(n), venous_in(n);
    for (int k = 1; k <= n; ++k) {
        arterial_in[k - 1] = k == 1 ? a.in_channels : a.channels[k - 1];
        venous_in[k - 1] = k == 1 ? a.in_channels : (per_level ? 2 : 1) * a.channels[k - 1];
    }
    venous_ = register_module("venous", Encoder(a, venous_in));
    arterial_ = register_module("arterial", Encoder(a, arterial_in));

    std::vector<int64_t> skip(n + 1, 0);
    for (int k = 1; k < n; ++k) skip[k] = (spec_.skips() == SkipPolicy::venous_only ? 1 : 2) * a.channels[k];
    decoder_ = register_module("decoder", Decoder(a, 2 * a.channels[n], skip));

    if (spec_.has_alignment()) {
        const int64_t budget = static_cast<int64_t>(static_cast<double>(segmentation_parameter_count()) / a.alignment_shrink);
        align_ = register_module("align", std::make_shared<torch::nn::Module>("Alignment"));
        const int first = spec_.strategy == Strategy::sa ? 1 : n;
        for (int k = first; k <= n; ++k) {
            const int64_t c = a.channels[k];
            blocks_.emplace(k, align_->register_module("level" + std::to_string(k),
                                                        AlignmentBlock(k, c, alignment_width_for_budget(c, budget, a.bias), a.bias)));
        }
    }
}

int64_t SegmentationNetImpl::segmentation_parameter_count() const {
    return parameter_count(*venous_) + parameter_count(*arterial_) + parameter_count(*decoder_);
}

std::vector<AlignmentBlock> SegmentationNetImpl::alignment_blocks() const {
    std::vector<AlignmentBlock> out;
    for (const auto& [k, b] : blocks_) out.push_back(b);
    return out;
}

void SegmentationNetImpl::check_inputs(const torch::Tensor& venous, const torch::Tensor& arterial) const {
    if (!venous.defined() || !arterial.defined()) throw DataError("model: missing input");
    if (venous.dim() != 5 || venous.sizes() != arterial.sizes())
        throw DataError("model: venous and arterial must be equal (B, C, D, H, W) tensors");
    if (venous.size(1) != spec_.arch.in_channels) throw DataError("model: wrong input channel count");
    const int64_t div = spec_.arch.divisor();
    for (int ax = 2; ax < 5; ++ax)
        if (venous.size(ax) % div != 0)
            throw DataError("model: spatial size " + std::to_string(venous.size(ax)) + " is not divisible by " +
                            std::to_string(div));
}

torch::Tensor SegmentationNetImpl::forward(const torch::Tensor& venous, const torch::Tensor& arterial,
                                           ForwardTrace* trace) {
    check_inputs(venous, arterial);
    const int n = spec_.arch.n_levels;

    auto align = [&](int k, const torch::Tensor& fixed, const torch::Tensor& moving) {
        AlignmentBlock& t = blocks_.at(k);
        const torch::Tensor phi = t->forward(fixed, moving);
        if (trace) {
            trace->fields.push_back(phi);
            trace->aligned_levels.push_back(k);
        }
        return warp_features(moving, phi);
    };

    std::vector<torch::Tensor> a(n + 1);
    a[0] = arterial;
    for (int k = 1; k <= n; ++k) {
        a[k] = arterial_->stage(k)->forward(a[k - 1]);
        if (trace) trace->arterial.push_back(a[k]);
    }

    std::vector<torch::Tensor> skips;
    torch::Tensor bottleneck;
    if (spec_.fusion_mode() == Fusion::per_level) {
        torch::Tensor fused = venous;
        std::vector<torch::Tensor> levels(n + 1);
        for (int k = 1; k <= n; ++k) {
            const torch::Tensor v = venous_->stage(k)->forward(fused);
            if (trace) trace->venous.push_back(v);
            const torch::Tensor moving = spec_.strategy == Strategy::sa ? align(k, v, a[k]) : a[k];
            fused = torch::cat({v, moving}, 1);
            levels[k] = fused;
        }
        bottleneck = levels[n];
        for (int k = n - 1; k >= 1; --k) skips.push_back(levels[k]);
    } else {
        std::vector<torch::Tensor> v(n + 1);
        v[0] = venous;
        for (int k = 1; k <= n; ++k) {
            v[k] = venous_->stage(k)->forward(v[k - 1]);
            if (trace) trace->venous.push_back(v[k]);
        }
        const torch::Tensor moving = spec_.strategy == Strategy::la ? align(n, v[n], a[n]) : a[n];
        bottleneck = torch::cat({v[n], moving}, 1);
        for (int k = n - 1; k >= 1; --k)
            skips.push_back(spec_.skips() == SkipPolicy::venous_only ? v[k] : torch::cat({v[k], a[k]}, 1));
    }
    return decoder_->forward(bottleneck, skips);
}

namespace {

void require_strategy(const SegmentationNet& m, Strategy s) {
    if (!m) throw ConfigError("model: not constructed");
    if (m->spec().strategy != s)
        throw ConfigError("model: built for " + to_string(m->spec().strategy) + ", called as " + to_string(s));
}

} // namespace

torch::Tensor forward_na(SegmentationNet& m, const torch::Tensor& venous, const torch::Tensor& arterial,
                         ForwardTrace* trace) {
    require_strategy(m, Strategy::na);
    return m->forward(venous, arterial, trace);
}

torch::Tensor forward_ea(SegmentationNet& m, const torch::Tensor& venous, const torch::Tensor& arterial,
                         const torch::Tensor& phi, ForwardTrace* trace) {
    require_strategy(m, Strategy::ea);
    if (!phi.defined()) throw DataError("forward_ea: a deformation field is required");
    if (!arterial.defined() || phi.dim() != 5 || phi.size(1) != 3 || phi.size(0) != arterial.size(0) ||
        phi.sizes().slice(2) != arterial.sizes().slice(2))
        throw DataError("forward_ea: field must be (B, 3) on the arterial grid");
    return m->forward(venous, warp_features(arterial, phi.to(arterial.scalar_type())), trace);
}

torch::Tensor forward_la(SegmentationNet& m, const torch::Tensor& venous, const torch::Tensor& arterial,
                         ForwardTrace* trace) {
    require_strategy(m, Strategy::la);
    return m->forward(venous, arterial, trace);
}

torch::Tensor forward_sa(SegmentationNet& m, const torch::Tensor& venous, const torch::Tensor& arterial,
                         ForwardTrace* trace) {
    require_strategy(m, Strategy::sa);
    return m->forward(venous, arterial, trace);
}

size_t copy_shared_parameters(const SegmentationNet& from, SegmentationNet& to) {
    torch::NoGradGuard ng;
    size_t copied = 0;
    auto dst_params = to->named_parameters(true);
    for (const auto& item : from->named_parameters(true)) {
        torch::Tensor* d = dst_params.find(item.key());
        if (d && d->sizes() == item.value().sizes()) {
            d->copy_(item.value());
            ++copied;
        }
    }
    auto dst_buffers = to->named_buffers(true);
    for (const auto& item : from->named_buffers(true)) {
        torch::Tensor* d = dst_buffers.find(item.key());
        if (d && d->sizes() == item.value().sizes()) {
            d->copy_(item.value());
            ++copied;
        }
    }
    return copied;
}

} // namespace phasealign
