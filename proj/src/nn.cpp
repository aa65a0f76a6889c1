#include "phasealign/nn.hpp"

#include <cmath>
#include <string>

#include "phasealign/errors.hpp"
#include "phasealign/warp_kernels.hpp"

namespace phasealign {

namespace F = torch::nn::functional;

namespace {

// ATen sends small single-sample 3D convolutions to its reference kernel and
// oneDNN's own backward is slower still. All three products are expressed as
// oneDNN forward convolutions instead:
//   grad_input  = zero-stuffed grad_output correlated with the flipped kernel
//   grad_weight = padded input (channels as batch) correlated with grad_output
//                 used as a dilated kernel
class FastConv3d : public torch::autograd::Function<FastConv3d> {
public:
    static torch::Tensor forward(torch::autograd::AutogradContext* ctx, const torch::Tensor& x,
                                 const torch::Tensor& w, const torch::Tensor& b, int64_t stride) {
        ctx->save_for_backward({x, w});
        ctx->saved_data["stride"] = stride;
        return at::mkldnn_convolution(x.contiguous(), w.contiguous(), b, {1, 1, 1}, {stride, stride, stride},
                                      {1, 1, 1}, 1);
    }

    static torch::autograd::tensor_list backward(torch::autograd::AutogradContext* ctx,
                                                 torch::autograd::tensor_list grads) {
        const auto saved = ctx->get_saved_variables();
        const torch::Tensor& x = saved[0];
        const torch::Tensor& w = saved[1];
        const int64_t stride = ctx->saved_data["stride"].toInt();
        const torch::Tensor g = grads[0].contiguous();
        const int64_t batch = x.size(0), cout = w.size(0);

        torch::Tensor gz = g;
        if (stride != 1) {
            gz = torch::zeros({batch, cout, stride * g.size(2), stride * g.size(3), stride * g.size(4)}, g.options());
            using torch::indexing::Slice;
            gz.index_put_({Slice(), Slice(), Slice(0, torch::indexing::None, stride),
                           Slice(0, torch::indexing::None, stride), Slice(0, torch::indexing::None, stride)},
                          g);
        }

        torch::Tensor grad_x, grad_w, grad_b;
        if (ctx->needs_input_grad(0)) {
            const torch::Tensor wf = w.flip({2, 3, 4}).transpose(0, 1).contiguous();
            grad_x = at::mkldnn_convolution(gz, wf, torch::Tensor(), {1, 1, 1}, {1, 1, 1}, {1, 1, 1}, 1);
            using torch::indexing::Slice;
            grad_x = grad_x.index({Slice(), Slice(), Slice(0, x.size(2)), Slice(0, x.size(3)), Slice(0, x.size(4))})
                         .contiguous();
        }
        if (ctx->needs_input_grad(1)) {
            const torch::Tensor xp = F::pad(x, F::PadFuncOptions({1, 1, 1, 1, 1, 1})).transpose(0, 1).contiguous();
            const torch::Tensor k = g.transpose(0, 1).contiguous();
            torch::Tensor r = at::mkldnn_convolution(xp, k, torch::Tensor(), {0, 0, 0}, {1, 1, 1},
                                                     {stride, stride, stride}, 1);
            using torch::indexing::Slice;
            grad_w = r.index({Slice(), Slice(), Slice(0, 3), Slice(0, 3), Slice(0, 3)}).transpose(0, 1).contiguous();
        }
        if (ctx->needs_input_grad(2)) grad_b = g.sum({0, 2, 3, 4});
        return {grad_x, grad_w, grad_b, torch::Tensor()};
    }
};

torch::Tensor conv3d(const torch::Tensor& x, torch::nn::Conv3d& c, int64_t stride) {
    if (x.device().is_cpu() && x.scalar_type() == torch::kFloat32 && at::hasMKLDNN())
        // an undefined bias trips the autograd device bookkeeping, so pass zeros
        return FastConv3d::apply(x, c->weight, c->options.bias() ? c->bias : torch::zeros({c->weight.size(0)}, x.options()),
                                 stride);
    return c->forward(x);
}

} // namespace

void ArchitectureSpec::validate() const {
    if (n_levels < 1) throw ConfigError("arch: n_levels must be >= 1");
    if (channels.size() != static_cast<size_t>(n_levels) + 1)
        throw ConfigError("arch: channels must list n_levels + 1 widths, got " + std::to_string(channels.size()));
    for (int64_t c : channels)
        if (c < 1) throw ConfigError("arch: channel widths must be positive");
    if (in_channels < 1 || num_classes < 2) throw ConfigError("arch: bad input or class count");
    if (!(alignment_shrink >= 1.0)) throw ConfigError("arch: alignment_shrink must be >= 1");
    if (!(background_prior > 0.0 && background_prior < 1.0)) throw ConfigError("arch: background_prior must be in (0, 1)");
}

ConvBlockImpl::ConvBlockImpl(int64_t in, int64_t out, int64_t stride, bool norm, bool bias) : stride_(stride) {
    conv_ = register_module("conv", torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, 3)
                                                          .stride(stride)
                                                          .padding(1)
                                                          .bias(bias)));
    if (norm)
        norm_ = register_module("norm", torch::nn::InstanceNorm3d(
                                            torch::nn::InstanceNorm3dOptions(out).affine(bias)));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
    torch::Tensor y = conv3d(x, conv_, stride_);
    if (norm_) y = norm_(y);
    return F::leaky_relu(y, F::LeakyReLUFuncOptions().negative_slope(0.01));
}

EncoderStageImpl::EncoderStageImpl(int level, int64_t in, int64_t out, bool norm, bool bias)
    : level_(level), in_(in), out_(out) {
    down_ = register_module("down", ConvBlock(in, out, 2, norm, bias));
    conv_ = register_module("conv", ConvBlock(out, out, 1, norm, bias));
}

torch::Tensor EncoderStageImpl::forward(const torch::Tensor& x) {
    if (x.dim() != 5 || x.size(1) != in_)
        throw DataError("encoder stage " + std::to_string(level_) + ": expected " + std::to_string(in_) +
                        " input channels");
    return conv_(down_(x));
}

EncoderImpl::EncoderImpl(const ArchitectureSpec& arch, const std::vector<int64_t>& input_channels) {
    if (input_channels.size() != static_cast<size_t>(arch.n_levels))
        throw ConfigError("encoder: one input width per stage required");
    for (int k = 1; k <= arch.n_levels; ++k)
        stages_.push_back(register_module(
            "stage" + std::to_string(k),
            EncoderStage(k, input_channels[k - 1], arch.channels[k], arch.norm, arch.bias)));
}

AlignmentBlockImpl::AlignmentBlockImpl(int level, int64_t feature_channels, int64_t width, bool bias)
    : level_(level), feature_channels_(feature_channels), width_(width) {
    // no normalization: the coarsest grid may be a single voxel
    enc_ = register_module("enc", ConvBlock(2 * feature_channels, width, 1, false, bias));
    down_ = register_module("down", ConvBlock(width, 2 * width, 2, false, bias));
    mid_ = register_module("mid", ConvBlock(2 * width, 2 * width, 1, false, bias));
    dec_ = register_module("dec", ConvBlock(3 * width, width, 1, false, bias));
    head_ = register_module("head", torch::nn::Conv3d(torch::nn::Conv3dOptions(width, 3, 3).padding(1).bias(bias)));
    torch::NoGradGuard ng;
    head_->weight.zero_();
    if (bias) head_->bias.zero_();
}

torch::Tensor AlignmentBlockImpl::forward(const torch::Tensor& fixed, const torch::Tensor& moving) {
    if (fixed.sizes() != moving.sizes())
        throw DataError("alignment block: fixed and moving features differ in shape");
    if (fixed.size(1) != feature_channels_)
        throw DataError("alignment block " + std::to_string(level_) + ": expected " +
                        std::to_string(feature_channels_) + " channels per stream");
    const torch::Tensor e = enc_(torch::cat({fixed, moving}, 1));
    const torch::Tensor m = mid_(down_(e));
    const torch::Tensor u = F::interpolate(m, F::InterpolateFuncOptions()
                                                  .size(std::vector<int64_t>{e.size(2), e.size(3), e.size(4)})
                                                  .mode(torch::kTrilinear)
                                                  .align_corners(false));
    return head_(dec_(torch::cat({e, u}, 1)));
}

int64_t alignment_block_parameter_count(int64_t c, int64_t a, bool bias) {
    const int64_t k = 27;
    int64_t n = k * (2 * c * a + a * 2 * a + 2 * a * 2 * a + 3 * a * a + a * 3);
    if (bias) n += a + 2 * a + 2 * a + a + 3;
    return n;
}

int64_t alignment_width_for_budget(int64_t c, int64_t budget, bool bias) {
    for (int64_t a = c; a > 1; --a)
        if (alignment_block_parameter_count(c, a, bias) <= budget) return a;
    return 1;
}

DecoderImpl::DecoderImpl(const ArchitectureSpec& arch, int64_t bottleneck_channels,
                         const std::vector<int64_t>& skip_channels)
    : n_levels_(arch.n_levels), skip_channels_(static_cast<size_t>(arch.n_levels) + 1, 0) {
    for (int k = 1; k < n_levels_ && k < static_cast<int>(skip_channels.size()); ++k)
        skip_channels_[k] = skip_channels[k];
    conv1_.assign(static_cast<size_t>(n_levels_), ConvBlock(nullptr));
    conv2_.assign(static_cast<size_t>(n_levels_), ConvBlock(nullptr));
    int64_t prev = bottleneck_channels;
    for (int k = n_levels_ - 1; k >= 0; --k) {
        const int64_t c = arch.channels[k];
        conv1_[k] = register_module("level" + std::to_string(k) + "_conv1",
                                    ConvBlock(prev + skip_channels_[k], c, 1, arch.norm, arch.bias));
        conv2_[k] = register_module("level" + std::to_string(k) + "_conv2", ConvBlock(c, c, 1, arch.norm, arch.bias));
        prev = c;
    }
    head_ = register_module("head", torch::nn::Conv3d(torch::nn::Conv3dOptions(prev, arch.num_classes, 1).bias(arch.bias)));
    // Start with most of the mass on background. From a uniform start every
    // foreground class covers the whole patch, its Dice gradient is nearly
    // zero, and the hardest class tends to end up absorbing the background.
    if (arch.bias) {
        torch::NoGradGuard ng;
        head_->bias.zero_();
        head_->bias[0] = std::log(arch.background_prior * static_cast<double>(arch.num_classes - 1) / (1 - arch.background_prior));
    }
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& bottleneck, const std::vector<torch::Tensor>& skips) {
    const size_t expected = static_cast<size_t>(n_levels_ - 1);
    if (skips.size() != expected)
        throw DataError("decoder: expected " + std::to_string(expected) + " skips, got " + std::to_string(skips.size()));
    torch::Tensor x = bottleneck;
    for (int k = n_levels_ - 1; k >= 0; --k) {
        std::vector<int64_t> size{2 * x.size(2), 2 * x.size(3), 2 * x.size(4)};
        x = F::interpolate(x, F::InterpolateFuncOptions().size(size).mode(torch::kTrilinear).align_corners(false));
        if (k >= 1) {
            const torch::Tensor& s = skips[static_cast<size_t>(n_levels_ - 1 - k)];
            if (s.size(1) != skip_channels_[k] || s.size(2) != size[0] || s.size(3) != size[1] || s.size(4) != size[2])
                throw DataError("decoder: skip at level " + std::to_string(k) + " has the wrong shape");
            x = torch::cat({x, s}, 1);
        }
        x = conv2_[k](conv1_[k](x));
    }
    return head_(x);
}

int64_t parameter_count(const torch::nn::Module& m) {
    int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.numel();
    return n;
}

FeatureMap encoder_stage_forward(EncoderStage& stage, const FeatureMap& in) {
    if (in.level != stage->level() - 1)
        throw DataError("encoder stage " + std::to_string(stage->level()) + " expects level " +
                        std::to_string(stage->level() - 1) + " input, got level " + std::to_string(in.level));
    return {stage->forward(in.data), stage->level()};
}

torch::Tensor alignment_block(AlignmentBlock& t, const FeatureMap& fixed, const FeatureMap& moving) {
    if (fixed.level != moving.level || fixed.level != t->level())
        throw DataError("alignment block: level mismatch");
    return t->forward(fixed.data, moving.data);
}

FeatureMap fuse(const FeatureMap& fixed, const FeatureMap& aligned_moving) {
    if (fixed.level != aligned_moving.level || fixed.data.dim() != 5 || aligned_moving.data.dim() != 5 ||
        fixed.data.size(0) != aligned_moving.data.size(0) ||
        fixed.data.sizes().slice(2) != aligned_moving.data.sizes().slice(2))
        throw DataError("fuse: feature maps differ in level or spatial shape");
    return {torch::cat({fixed.data, aligned_moving.data}, 1), fixed.level};
}

torch::Tensor decoder_forward(Decoder& g, const FeatureMap& bottleneck, const std::vector<FeatureMap>& skips) {
    std::vector<torch::Tensor> t;
    int expect = bottleneck.level - 1;
    for (const FeatureMap& s : skips) {
        if (s.level != expect) throw DataError("decoder: skips must be ordered deepest first");
        t.push_back(s.data);
        --expect;
    }
    return g->forward(bottleneck.data, t);
}

// ---- warp_features -----------------------------------------------------------

namespace {

class WarpFeatures : public torch::autograd::Function<WarpFeatures> {
public:
    static torch::Tensor forward(torch::autograd::AutogradContext* ctx, torch::Tensor feat, torch::Tensor field) {
        feat = feat.contiguous();
        field = field.contiguous();
        ctx->save_for_backward({feat, field});
        torch::Tensor out = torch::empty_like(feat);
        const Shape3 s{feat.size(2), feat.size(3), feat.size(4)};
        const int64_t n = s.voxels();
        const int64_t batch = feat.size(0), channels = feat.size(1);
        AT_DISPATCH_FLOATING_TYPES(feat.scalar_type(), "warp_features", [&] {
            const scalar_t* src = feat.data_ptr<scalar_t>();
            const scalar_t* u = field.data_ptr<scalar_t>();
            scalar_t* dst = out.data_ptr<scalar_t>();
            for (int64_t b = 0; b < batch; ++b)
                for (int64_t c = 0; c < channels; ++c)
                    kernels::warp_forward(src + (b * channels + c) * n, u + b * 3 * n, dst + (b * channels + c) * n, s,
                                          kernels::Boundary::clamp);
        });
        return out;
    }

    static torch::autograd::tensor_list backward(torch::autograd::AutogradContext* ctx,
                                                 torch::autograd::tensor_list grads) {
        const auto saved = ctx->get_saved_variables();
        const torch::Tensor& feat = saved[0];
        const torch::Tensor& field = saved[1];
        const torch::Tensor g = grads[0].contiguous();
        const bool want_src = ctx->needs_input_grad(0), want_field = ctx->needs_input_grad(1);
        torch::Tensor grad_src = want_src ? torch::zeros_like(feat) : torch::Tensor();
        torch::Tensor grad_field = want_field ? torch::zeros_like(field) : torch::Tensor();
        const Shape3 s{feat.size(2), feat.size(3), feat.size(4)};
        const int64_t n = s.voxels();
        const int64_t batch = feat.size(0), channels = feat.size(1);
        AT_DISPATCH_FLOATING_TYPES(feat.scalar_type(), "warp_features_backward", [&] {
            const scalar_t* src = feat.data_ptr<scalar_t>();
            const scalar_t* u = field.data_ptr<scalar_t>();
            const scalar_t* gd = g.data_ptr<scalar_t>();
            scalar_t* gs = want_src ? grad_src.data_ptr<scalar_t>() : nullptr;
            scalar_t* gf = want_field ? grad_field.data_ptr<scalar_t>() : nullptr;
            for (int64_t b = 0; b < batch; ++b)
                for (int64_t c = 0; c < channels; ++c) {
                    const int64_t off = (b * channels + c) * n;
                    kernels::warp_backward(src + off, u + b * 3 * n, gd + off, gs ? gs + off : nullptr,
                                           gf ? gf + b * 3 * n : nullptr, s, kernels::Boundary::clamp);
                }
        });
        return {grad_src, grad_field};
    }
};

} // namespace

torch::Tensor warp_features(const torch::Tensor& features, const torch::Tensor& field) {
    if (features.dim() != 5 || field.dim() != 5 || field.size(1) != 3 || field.size(0) != features.size(0) ||
        field.sizes().slice(2) != features.sizes().slice(2))
        throw DataError("warp_features: field must be (B, 3, D, H, W) on the feature grid");
    if (features.scalar_type() != field.scalar_type())
        throw DataError("warp_features: features and field must share a dtype");
    return WarpFeatures::apply(features, field);
}

// ---- conversions -------------------------------------------------------------

torch::Tensor to_tensor(const Volume& v) {
    const Shape3& s = v.shape();
    return torch::from_blob(const_cast<float*>(v.data().data()), {1, 1, s.d, s.h, s.w}, torch::kFloat32).clone();
}

torch::Tensor to_tensor(const LabelMap& l) {
    const Shape3& s = l.shape();
    return torch::from_blob(const_cast<uint8_t*>(l.data().data()), {1, s.d, s.h, s.w}, torch::kUInt8)
        .to(torch::kInt64);
}

torch::Tensor to_tensor(const DeformationField& f) {
    const Shape3& s = f.shape;
    return torch::from_blob(const_cast<float*>(f.u.data()), {1, 3, s.d, s.h, s.w}, torch::kFloat32).clone();
}

DeformationField to_field(const torch::Tensor& t) {
    torch::Tensor x = t.dim() == 5 ? t.squeeze(0) : t;
    if (x.dim() != 4 || x.size(0) != 3) throw DataError("to_field: expected (1, 3, D, H, W)");
    x = x.to(torch::kFloat32).contiguous();
    const Shape3 s{x.size(1), x.size(2), x.size(3)};
    const float* p = x.data_ptr<float>();
    return DeformationField(s, std::vector<float>(p, p + 3 * s.voxels()));
}

} // namespace phasealign
