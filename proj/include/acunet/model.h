#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "acunet/dataset.h"
#include "acunet/tensor.h"

namespace acunet {

// Block labels A..I: A-D encoder, E bottleneck, F-I decoder.
constexpr std::array<char, 9> kBlockLabels = {'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I'};

struct ModelConfig {
    int base_filters = 8;
    std::set<char> film_blocks;  // subset of {A..I}
    double bn_momentum = 0.9;
    double bn_epsilon = 1e-5;
    int pad_multiple = 16;
    // Alternative FiLM generator init: gamma-map weights zero with bias 1
    // (and beta-map zero), so conditioning starts as the identity.
    bool film_identity_init = false;

    // Filters in block A..I: base * (1,2,4,8,16,8,4,2,1).
    int filters_of(char block) const;
    void validate() const;
};

// "C-G" (contiguous range), "A,C,E" (list), or "none" for the empty set.
std::set<char> parse_film_blocks(const std::string& s);
std::string format_film_blocks(const std::set<char>& blocks);

struct ConvBnParams {
    Tensor weight;
    Tensor bias;
    BatchNormParams bn;
};

struct FilmGenerator {
    Tensor gamma_weight;  // [K, 128]
    Tensor gamma_bias;    // [K]
    Tensor beta_weight;
    Tensor beta_bias;
};

struct UnetBlockParams {
    ConvBnParams conv1;
    ConvBnParams conv2;
    std::optional<FilmGenerator> film;  // active only for blocks in film_blocks
    // decoder blocks (F..I) own the 2x2 transposed conv that feeds them
    Tensor upsample_weight;
    Tensor upsample_bias;
};

// Named handle to one parameter or buffer tensor. `decay` marks tensors the
// L2 penalty applies to (conv/linear weights); running stats are buffers.
struct ParamRef {
    std::string name;
    Tensor tensor;
    bool decay = false;
    bool buffer = false;
};

// Per-stage spatial dims of the spectrogram encoder, for inspection.
struct EncoderTrace {
    std::vector<std::array<int, 2>> conv_shapes;  // h,w after each conv stage
};

// The audio-conditioned U-Net: spectrogram encoder producing a 128-dim
// conditioning vector, and a 9-block U-Net over the page whose FiLM layers
// (where active) are driven by that vector.
class Model {
  public:
    Model(ModelConfig config, uint64_t seed);

    const ModelConfig& config() const { return config_; }

    // pages [B,1,H,W], excerpts [B,1,78,40] -> probability map [B,1,H,W].
    Tensor forward(GradTape* tape, const Tensor& pages, const Tensor& excerpts, bool training);

    // Conditioning vector z [B,128].
    Tensor encode(GradTape* tape, const Tensor& excerpts, bool training,
                  EncoderTrace* trace = nullptr);

    std::vector<ParamRef> parameters();
    int64_t num_parameters();

    Model clone() const;

  private:
    Model() = default;

    ModelConfig config_;
    std::vector<ConvBnParams> enc_convs_;  // 7 stages from the encoder table
    Tensor enc_lin_weight_, enc_lin_bias_;
    BatchNormParams enc_lin_bn_;
    std::array<UnetBlockParams, 9> blocks_;
    Tensor head_weight_, head_bias_;

    Tensor run_block(GradTape* tape, const Tensor& x, UnetBlockParams& block, const Tensor& z,
                     bool training);
};

}  // namespace acunet
