#pragma once

// Network building blocks: encoder stages, decoder, the feature alignment
// block and the differentiable feature warp. Tensors are (B, C, D, H, W).

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "phasealign/field.hpp"
#include "phasealign/volume.hpp"

namespace phasealign {

/// channels[0] is the decoder width at input resolution, channels[k] the
/// output width of encoder stage k (level k, k downsamplings).
struct ArchitectureSpec {
    int n_levels = 4;
    std::vector<int64_t> channels{16, 32, 64, 128, 256};
    int64_t in_channels = 1;
    int64_t num_classes = kNumClasses;
    double alignment_shrink = 8.0; // each alignment net <= segmentation net / shrink
    double background_prior = 0.95; // initial softmax mass on class 0 (head bias)
    bool norm = true;              // instance norm after every encoder/decoder conv
    bool bias = true;

    void validate() const; // throws ConfigError
    int64_t divisor() const { return int64_t{1} << n_levels; }
};

struct FeatureMap {
    torch::Tensor data;
    int level = 0;

    int64_t channels() const { return data.size(1); }
};

/// conv3x3x3 (optionally strided) -> [instance norm] -> leaky ReLU
class ConvBlockImpl : public torch::nn::Module {
public:
    ConvBlockImpl(int64_t in, int64_t out, int64_t stride, bool norm, bool bias);
    torch::Tensor forward(const torch::Tensor& x);

private:
    int64_t stride_;
    torch::nn::Conv3d conv_{nullptr};
    torch::nn::InstanceNorm3d norm_{nullptr};
};
TORCH_MODULE(ConvBlock);

/// Strided conv halving the grid, then a second conv.
class EncoderStageImpl : public torch::nn::Module {
public:
    EncoderStageImpl(int level, int64_t in, int64_t out, bool norm, bool bias);
    torch::Tensor forward(const torch::Tensor& x);
    int level() const { return level_; }
    int64_t in_channels() const { return in_; }
    int64_t out_channels() const { return out_; }

private:
    int level_;
    int64_t in_, out_;
    ConvBlock down_{nullptr}, conv_{nullptr};
};
TORCH_MODULE(EncoderStage);

/// Stages registered as stage1..stageN.
class EncoderImpl : public torch::nn::Module {
public:
    /// input_channels[k-1] is the input width of stage k.
    EncoderImpl(const ArchitectureSpec& arch, const std::vector<int64_t>& input_channels);
    EncoderStage& stage(int level) { return stages_.at(static_cast<size_t>(level - 1)); }
    int n_levels() const { return static_cast<int>(stages_.size()); }

private:
    std::vector<EncoderStage> stages_;
};
TORCH_MODULE(Encoder);

/// Two-level U-Net over concat(fixed, moving) producing a 3-channel field at
/// the features' resolution. The head is zero initialized, so a fresh block
/// returns the zero field.
class AlignmentBlockImpl : public torch::nn::Module {
public:
    AlignmentBlockImpl(int level, int64_t feature_channels, int64_t width, bool bias);
    torch::Tensor forward(const torch::Tensor& fixed, const torch::Tensor& moving);
    int level() const { return level_; }
    int64_t width() const { return width_; }

private:
    int level_;
    int64_t feature_channels_, width_;
    ConvBlock enc_{nullptr}, down_{nullptr}, mid_{nullptr}, dec_{nullptr};
    torch::nn::Conv3d head_{nullptr};
};
TORCH_MODULE(AlignmentBlock);

int64_t alignment_block_parameter_count(int64_t feature_channels, int64_t width, bool bias);

/// Widest block (width <= feature_channels) whose parameter count stays within
/// budget; 1 if none fits.
int64_t alignment_width_for_budget(int64_t feature_channels, int64_t budget, bool bias);

/// Upsample, concatenate the level's skip, two convs; 1x1 head at level 0.
class DecoderImpl : public torch::nn::Module {
public:
    /// skip_channels[k] is the skip width at level k (k = 1..n-1); index 0 and
    /// n are ignored.
    DecoderImpl(const ArchitectureSpec& arch, int64_t bottleneck_channels,
                const std::vector<int64_t>& skip_channels);
    /// skips ordered deepest first: levels n-1 ... 1.
    torch::Tensor forward(const torch::Tensor& bottleneck, const std::vector<torch::Tensor>& skips);

private:
    int n_levels_;
    std::vector<int64_t> skip_channels_;
    std::vector<ConvBlock> conv1_, conv2_; // index = level
    torch::nn::Conv3d head_{nullptr};
};
TORCH_MODULE(Decoder);

int64_t parameter_count(const torch::nn::Module& m);

// ---- operations on feature maps -------------------------------------------------

FeatureMap encoder_stage_forward(EncoderStage& stage, const FeatureMap& in);

/// Field (B, 3, D, H, W) in voxels of the features' grid.
torch::Tensor alignment_block(AlignmentBlock& t, const FeatureMap& fixed, const FeatureMap& moving);

/// Channel concatenation, fixed stream first.
FeatureMap fuse(const FeatureMap& fixed, const FeatureMap& aligned_moving);

torch::Tensor decoder_forward(Decoder& g, const FeatureMap& bottleneck, const std::vector<FeatureMap>& skips);

/// Backward trilinear warp of every channel, out(x) = f(x + u(x)), clamped at
/// the border. Differentiable in both arguments (float or double).
torch::Tensor warp_features(const torch::Tensor& features, const torch::Tensor& field);

// ---- conversions -------------------------------------------------------------

torch::Tensor to_tensor(const Volume& v);                 // (1, 1, D, H, W) float
torch::Tensor to_tensor(const LabelMap& l);               // (1, D, H, W) int64
torch::Tensor to_tensor(const DeformationField& f);       // (1, 3, D, H, W) float
DeformationField to_field(const torch::Tensor& t);        // (1, 3, D, H, W) or (3, D, H, W)

} // namespace phasealign
