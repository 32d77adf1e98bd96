#include "acunet/model.h"

#include <algorithm>
#include <cmath>

namespace acunet {

int ModelConfig::filters_of(char block) const {
    switch (block) {
        case 'A': case 'I': return base_filters;
        case 'B': case 'H': return base_filters * 2;
        case 'C': case 'G': return base_filters * 4;
        case 'D': case 'F': return base_filters * 8;
        case 'E': return base_filters * 16;
        default: throw ConfigError(std::string("unknown block label '") + block + "'");
    }
}

void ModelConfig::validate() const {
    if (base_filters < 1) throw ConfigError("base_filters must be >= 1");
    if (pad_multiple < 16) throw ConfigError("pad_multiple must be >= 16 (four pooling levels)");
    for (char b : film_blocks) {
        if (b < 'A' || b > 'I') {
            throw ConfigError(std::string("invalid film block label '") + b + "'");
        }
    }
}

std::set<char> parse_film_blocks(const std::string& s) {
    std::string t;
    for (char c : s) {
        if (!std::isspace(static_cast<unsigned char>(c))) t.push_back(c);
    }
    // accept the report row form "FiLMLayers(C-G)"
    const size_t lp = t.find('(');
    if (lp != std::string::npos) {
        const size_t rp = t.find(')', lp);
        if (rp == std::string::npos) throw ConfigError("film set: unbalanced '(' in '" + s + "'");
        t = t.substr(lp + 1, rp - lp - 1);
    }
    if (t.empty() || t == "none" || t == "NONE") return {};
    std::set<char> out;
    size_t i = 0;
    while (i < t.size()) {
        const char a = static_cast<char>(std::toupper(static_cast<unsigned char>(t[i])));
        if (a < 'A' || a > 'I') {
            throw ConfigError(std::string("film set: invalid block '") + t[i] + "' in '" + s + "'");
        }
        if (i + 1 < t.size() && t[i + 1] == '-') {
            if (i + 2 >= t.size()) throw ConfigError("film set: dangling '-' in '" + s + "'");
            const char b = static_cast<char>(std::toupper(static_cast<unsigned char>(t[i + 2])));
            if (b < 'A' || b > 'I' || b < a) {
                throw ConfigError("film set: bad range in '" + s + "'");
            }
            for (char c = a; c <= b; ++c) out.insert(c);
            i += 3;
        } else {
            out.insert(a);
            i += 1;
        }
        if (i < t.size()) {
            if (t[i] != ',') throw ConfigError("film set: expected ',' in '" + s + "'");
            ++i;
        }
    }
    return out;
}

std::string format_film_blocks(const std::set<char>& blocks) {
    if (blocks.empty()) return "none";
    // emit maximal contiguous runs as ranges
    std::string out;
    auto it = blocks.begin();
    while (it != blocks.end()) {
        char lo = *it, hi = *it;
        auto next = std::next(it);
        while (next != blocks.end() && *next == hi + 1) {
            hi = *next;
            ++next;
        }
        if (!out.empty()) out.push_back(',');
        out.push_back(lo);
        if (hi > lo) {
            out.push_back('-');
            out.push_back(hi);
        }
        it = next;
    }
    return out;
}

// ---- construction -----------------------------------------------------------

namespace {

constexpr int kZDim = 128;

// Spectrogram encoder stages: filters, kernel, stride.
struct EncStage {
    int filters;
    int kernel;
    int stride;
};
constexpr std::array<EncStage, 7> kEncStages = {{
    {16, 3, 1},
    {16, 3, 1},
    {32, 3, 2},
    {32, 3, 1},
    {64, 3, 2},
    {96, 3, 2},
    {96, 1, 1},
}};

ConvBnParams make_conv_bn(int out_ch, int in_ch, int kernel, const ModelConfig& cfg, Rng& rng) {
    ConvBnParams p;
    p.weight = orthogonal_init({out_ch, in_ch, kernel, kernel}, rng);
    p.bias = Tensor::zeros({out_ch}, true);
    p.bn = make_batch_norm(out_ch, cfg.bn_momentum, cfg.bn_epsilon);
    return p;
}

FilmGenerator make_film(int channels, const ModelConfig& cfg, Rng& rng) {
    FilmGenerator f;
    if (cfg.film_identity_init) {
        f.gamma_weight = Tensor::zeros({channels, kZDim}, true);
        f.gamma_bias = Tensor::full({channels}, 1.0, true);
        f.beta_weight = Tensor::zeros({channels, kZDim}, true);
        f.beta_bias = Tensor::zeros({channels}, true);
    } else {
        f.gamma_weight = orthogonal_init({channels, kZDim}, rng);
        f.gamma_bias = Tensor::zeros({channels}, true);
        f.beta_weight = orthogonal_init({channels, kZDim}, rng);
        f.beta_bias = Tensor::zeros({channels}, true);
    }
    return f;
}

int round_up(int v, int multiple) {
    return (v + multiple - 1) / multiple * multiple;
}

}  // namespace

Model::Model(ModelConfig config, uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);

    // spectrogram encoder (fixed geometry, independent of base_filters)
    int in_ch = 1;
    for (const EncStage& s : kEncStages) {
        enc_convs_.push_back(make_conv_bn(s.filters, in_ch, s.kernel, config_, rng));
        in_ch = s.filters;
    }
    // after three stride-2 stages: 78x40 -> 39x20 -> 20x10 -> 10x5
    const int flat = 96 * 10 * 5;
    enc_lin_weight_ = orthogonal_init({kZDim, flat}, rng);
    enc_lin_bias_ = Tensor::zeros({kZDim}, true);
    enc_lin_bn_ = make_batch_norm(kZDim, config_.bn_momentum, config_.bn_epsilon);

    // U-Net blocks A..I
    for (size_t i = 0; i < kBlockLabels.size(); ++i) {
        const char label = kBlockLabels[i];
        const int filters = config_.filters_of(label);
        int block_in;
        if (label == 'A') {
            block_in = 1;
        } else if (label <= 'E') {
            block_in = config_.filters_of(static_cast<char>(label - 1));  // after pooling
        } else {
            block_in = filters;  // decoder input: upsample + skip, already at `filters`
        }
        UnetBlockParams& b = blocks_[i];
        b.conv1 = make_conv_bn(filters, block_in, 3, config_, rng);
        b.conv2 = make_conv_bn(filters, filters, 3, config_, rng);
        if (config_.film_blocks.count(label)) {
            b.film = make_film(filters, config_, rng);
        }
    }

    // transposed-conv upsampling weights live with the decoder block they feed
    for (char label = 'F'; label <= 'I'; ++label) {
        UnetBlockParams& b = blocks_[static_cast<size_t>(label - 'A')];
        const int in_filters = config_.filters_of(static_cast<char>(label - 1));
        const int out_filters = config_.filters_of(label);
        b.upsample_weight = orthogonal_init({in_filters, out_filters, 2, 2}, rng);
        b.upsample_bias = Tensor::zeros({out_filters}, true);
    }

    head_weight_ = orthogonal_init({1, config_.base_filters, 1, 1}, rng);
    head_bias_ = Tensor::zeros({1}, true);
}

// ---- forward ------------------------------------------------------------------

Tensor Model::encode(GradTape* tape, const Tensor& excerpts, bool training, EncoderTrace* trace) {
    if (excerpts.ndim() != 4 || excerpts.dim(1) != 1 ||
        excerpts.dim(2) != audio_config::kNumBands ||
        excerpts.dim(3) != audio_config::kExcerptFrames) {
        throw DimensionError("encode: excerpts must be [B,1,78,40], got " +
                             shape_str(excerpts.shape()));
    }
    Tensor x = excerpts;
    for (size_t i = 0; i < enc_convs_.size(); ++i) {
        const EncStage& stage = kEncStages[i];
        const int pad = stage.kernel == 3 ? 1 : 0;
        x = conv2d(tape, x, enc_convs_[i].weight, enc_convs_[i].bias, stage.stride, pad);
        x = batch_norm(tape, x, enc_convs_[i].bn, training);
        x = elu(tape, x);
        if (trace) trace->conv_shapes.push_back({x.dim(2), x.dim(3)});
    }
    x = reshape(tape, x, {x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
    x = linear(tape, x, enc_lin_weight_, enc_lin_bias_);
    x = batch_norm(tape, x, enc_lin_bn_, training);
    x = elu(tape, x);
    return x;
}

Tensor Model::run_block(GradTape* tape, const Tensor& x, UnetBlockParams& block, const Tensor& z,
                        bool training) {
    Tensor h = conv2d(tape, x, block.conv1.weight, block.conv1.bias, 1, 1);
    h = batch_norm(tape, h, block.conv1.bn, training);
    h = elu(tape, h);
    h = conv2d(tape, h, block.conv2.weight, block.conv2.bias, 1, 1);
    h = batch_norm(tape, h, block.conv2.bn, training);
    if (block.film) {
        Tensor gamma = linear(tape, z, block.film->gamma_weight, block.film->gamma_bias);
        Tensor beta = linear(tape, z, block.film->beta_weight, block.film->beta_bias);
        h = film(tape, h, gamma, beta);
    }
    return elu(tape, h);
}

Tensor Model::forward(GradTape* tape, const Tensor& pages, const Tensor& excerpts, bool training) {
    if (pages.ndim() != 4 || pages.dim(1) != 1) {
        throw DimensionError("forward: pages must be [B,1,H,W], got " + shape_str(pages.shape()));
    }
    if (pages.dim(0) != excerpts.dim(0)) {
        throw DimensionError("forward: batch size mismatch, pages " +
                             std::to_string(pages.dim(0)) + " vs excerpts " +
                             std::to_string(excerpts.dim(0)));
    }
    const int H = pages.dim(2), W = pages.dim(3);

    Tensor z = encode(tape, excerpts, training);

    Tensor x = pages;
    const int ph = round_up(H, config_.pad_multiple);
    const int pw = round_up(W, config_.pad_multiple);
    if (ph != H || pw != W) x = pad2d(tape, x, ph, pw);

    // encoder: keep each block's pre-pool output for the residual skips
    std::array<Tensor, 4> skips;
    for (char label = 'A'; label <= 'D'; ++label) {
        UnetBlockParams& b = blocks_[static_cast<size_t>(label - 'A')];
        x = run_block(tape, x, b, z, training);
        skips[static_cast<size_t>(label - 'A')] = x;
        x = max_pool2d(tape, x);
    }
    x = run_block(tape, x, blocks_[4], z, training);  // bottleneck E

    // decoder: upsample, add the symmetric encoder output, run the block
    for (char label = 'F'; label <= 'I'; ++label) {
        UnetBlockParams& b = blocks_[static_cast<size_t>(label - 'A')];
        x = conv_transpose2d(tape, x, b.upsample_weight, b.upsample_bias);
        x = add(tape, x, skips[static_cast<size_t>('I' - label)]);
        x = run_block(tape, x, b, z, training);
    }

    x = conv2d(tape, x, head_weight_, head_bias_, 1, 0);
    x = sigmoid(tape, x);
    if (ph != H || pw != W) x = crop2d(tape, x, H, W);
    return x;
}

// ---- parameter registry -----------------------------------------------------------

namespace {

void add_conv_bn(std::vector<ParamRef>& out, const std::string& prefix, ConvBnParams& p) {
    out.push_back({prefix + ".weight", p.weight, true, false});
    out.push_back({prefix + ".bias", p.bias, false, false});
    out.push_back({prefix + ".bn.scale", p.bn.scale, false, false});
    out.push_back({prefix + ".bn.shift", p.bn.shift, false, false});
    out.push_back({prefix + ".bn.running_mean", p.bn.running_mean, false, true});
    out.push_back({prefix + ".bn.running_var", p.bn.running_var, false, true});
}

}  // namespace

std::vector<ParamRef> Model::parameters() {
    std::vector<ParamRef> out;
    for (size_t i = 0; i < enc_convs_.size(); ++i) {
        add_conv_bn(out, "encoder.conv" + std::to_string(i), enc_convs_[i]);
    }
    out.push_back({"encoder.linear.weight", enc_lin_weight_, true, false});
    out.push_back({"encoder.linear.bias", enc_lin_bias_, false, false});
    out.push_back({"encoder.linear.bn.scale", enc_lin_bn_.scale, false, false});
    out.push_back({"encoder.linear.bn.shift", enc_lin_bn_.shift, false, false});
    out.push_back({"encoder.linear.bn.running_mean", enc_lin_bn_.running_mean, false, true});
    out.push_back({"encoder.linear.bn.running_var", enc_lin_bn_.running_var, false, true});
    for (size_t i = 0; i < kBlockLabels.size(); ++i) {
        const std::string prefix = std::string("unet.") + kBlockLabels[i];
        UnetBlockParams& b = blocks_[i];
        add_conv_bn(out, prefix + ".conv1", b.conv1);
        add_conv_bn(out, prefix + ".conv2", b.conv2);
        if (b.upsample_weight.defined()) {
            out.push_back({prefix + ".upsample.weight", b.upsample_weight, true, false});
            out.push_back({prefix + ".upsample.bias", b.upsample_bias, false, false});
        }
        if (b.film) {
            out.push_back({prefix + ".film.gamma.weight", b.film->gamma_weight, true, false});
            out.push_back({prefix + ".film.gamma.bias", b.film->gamma_bias, false, false});
            out.push_back({prefix + ".film.beta.weight", b.film->beta_weight, true, false});
            out.push_back({prefix + ".film.beta.bias", b.film->beta_bias, false, false});
        }
    }
    out.push_back({"head.weight", head_weight_, true, false});
    out.push_back({"head.bias", head_bias_, false, false});
    return out;
}

int64_t Model::num_parameters() {
    int64_t n = 0;
    for (const ParamRef& p : parameters()) {
        if (!p.buffer) n += p.tensor.numel();
    }
    return n;
}

namespace {

ConvBnParams deep_copy(const ConvBnParams& p) {
    ConvBnParams c;
    c.weight = p.weight.clone();
    c.bias = p.bias.clone();
    c.bn.scale = p.bn.scale.clone();
    c.bn.shift = p.bn.shift.clone();
    c.bn.running_mean = p.bn.running_mean.clone();
    c.bn.running_var = p.bn.running_var.clone();
    c.bn.momentum = p.bn.momentum;
    c.bn.epsilon = p.bn.epsilon;
    return c;
}

}  // namespace

Model Model::clone() const {
    Model m;
    m.config_ = config_;
    for (const ConvBnParams& p : enc_convs_) m.enc_convs_.push_back(deep_copy(p));
    m.enc_lin_weight_ = enc_lin_weight_.clone();
    m.enc_lin_bias_ = enc_lin_bias_.clone();
    m.enc_lin_bn_.scale = enc_lin_bn_.scale.clone();
    m.enc_lin_bn_.shift = enc_lin_bn_.shift.clone();
    m.enc_lin_bn_.running_mean = enc_lin_bn_.running_mean.clone();
    m.enc_lin_bn_.running_var = enc_lin_bn_.running_var.clone();
    m.enc_lin_bn_.momentum = enc_lin_bn_.momentum;
    m.enc_lin_bn_.epsilon = enc_lin_bn_.epsilon;
    for (size_t i = 0; i < blocks_.size(); ++i) {
        const UnetBlockParams& b = blocks_[i];
        UnetBlockParams& c = m.blocks_[i];
        c.conv1 = deep_copy(b.conv1);
        c.conv2 = deep_copy(b.conv2);
        if (b.film) {
            FilmGenerator f;
            f.gamma_weight = b.film->gamma_weight.clone();
            f.gamma_bias = b.film->gamma_bias.clone();
            f.beta_weight = b.film->beta_weight.clone();
            f.beta_bias = b.film->beta_bias.clone();
            c.film = std::move(f);
        }
        if (b.upsample_weight.defined()) {
            c.upsample_weight = b.upsample_weight.clone();
            c.upsample_bias = b.upsample_bias.clone();
        }
    }
    m.head_weight_ = head_weight_.clone();
    m.head_bias_ = head_bias_.clone();
    return m;
}

}  // namespace acunet
