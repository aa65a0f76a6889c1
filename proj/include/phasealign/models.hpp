#pragma once

// The four dual-phase assemblies. Venous is the fixed stream (F), arterial
// the moving stream (F'), G the decoder and T_k the alignment blocks.
//
//   na  G(F(X) + F'(X'))                       no warping
//   ea  G(F(X) + F'(phi o X'))                 image warped by a given field
//   la  G(F(X) + T(F, F') o F'(X'))            one block at the bottleneck
//   sa  F_k = F_k(F_{k-1}) + T_k o F'_k         one block per level
//
// Canonical parameter names (used by checkpoints):
//   venous.stage<k>.{down,conv}.{conv,norm}.{weight,bias}
//   arterial.stage<k>...
//   decoder.level<k>_conv{1,2}.{conv,norm}.*, decoder.head.*
//   align.level<k>.{enc,down,mid,dec}.conv.*, align.level<k>.head.*

#include <torch/torch.h>

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "phasealign/nn.hpp"

namespace phasealign {

enum class Strategy { na, ea, la, sa };
enum class SkipPolicy { both_streams, venous_only, fused };
enum class Fusion { bottleneck, per_level };

Strategy parse_strategy(std::string_view s); // throws ConfigError
std::string to_string(Strategy s);
SkipPolicy parse_skip_policy(std::string_view s);
std::string to_string(SkipPolicy s);
Fusion parse_fusion(std::string_view s);
std::string to_string(Fusion f);

struct ModelSpec {
    Strategy strategy = Strategy::na;
    ArchitectureSpec arch;
    std::optional<SkipPolicy> skip_policy; // empty: strategy default
    std::optional<Fusion> fusion;          // empty: strategy default

    /// na/ea: both_streams, la: venous_only, sa: fused.
    SkipPolicy skips() const;
    /// sa: per_level, otherwise bottleneck.
    Fusion fusion_mode() const;
    bool has_alignment() const { return strategy == Strategy::la || strategy == Strategy::sa; }
    void validate() const; // throws ConfigError
};

/// Activations recorded during a forward.
struct ForwardTrace {
    std::vector<torch::Tensor> venous;   // F_k before fusion, k = 1..n
    std::vector<torch::Tensor> arterial; // F'_k, k = 1..n
    std::vector<torch::Tensor> fields;   // one per alignment block call
    std::vector<int> aligned_levels;
};

class SegmentationNetImpl : public torch::nn::Module {
public:
    explicit SegmentationNetImpl(ModelSpec spec);

    /// Scores (B, classes, D, H, W). For ea the arterial input must already be
    /// warped (see forward_ea).
    torch::Tensor forward(const torch::Tensor& venous, const torch::Tensor& arterial, ForwardTrace* trace = nullptr);

    const ModelSpec& spec() const { return spec_; }
    /// Encoders plus decoder.
    int64_t segmentation_parameter_count() const;
    std::vector<AlignmentBlock> alignment_blocks() const;

private:
    void check_inputs(const torch::Tensor& venous, const torch::Tensor& arterial) const;

    ModelSpec spec_;
    Encoder venous_{nullptr}, arterial_{nullptr};
    Decoder decoder_{nullptr};
    std::shared_ptr<torch::nn::Module> align_;
    std::map<int, AlignmentBlock> blocks_;
};
TORCH_MODULE(SegmentationNet);

torch::Tensor forward_na(SegmentationNet& m, const torch::Tensor& venous, const torch::Tensor& arterial,
                         ForwardTrace* trace = nullptr);
/// phi is (B, 3, D, H, W) on the image grid; throws DataError when undefined
/// or mismatched.
torch::Tensor forward_ea(SegmentationNet& m, const torch::Tensor& venous, const torch::Tensor& arterial,
                         const torch::Tensor& phi, ForwardTrace* trace = nullptr);
torch::Tensor forward_la(SegmentationNet& m, const torch::Tensor& venous, const torch::Tensor& arterial,
                         ForwardTrace* trace = nullptr);
torch::Tensor forward_sa(SegmentationNet& m, const torch::Tensor& venous, const torch::Tensor& arterial,
                         ForwardTrace* trace = nullptr);

/// Copies every parameter and buffer of `from` whose canonical name and shape
/// exist in `to`. Returns the number of tensors copied.
size_t copy_shared_parameters(const SegmentationNet& from, SegmentationNet& to);

} // namespace phasealign
