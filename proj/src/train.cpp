#include "acunet/train.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

#include "acunet/rng.h"

namespace acunet {

// ---- dice loss ---------------------------------------------------------------

namespace {

Tensor dice_impl(GradTape* tape, const Tensor& p, const Tensor& g, double smooth, int batch) {
    if (p.shape() != g.shape()) {
        throw DimensionError("dice_loss: prediction " + shape_str(p.shape()) +
                             " vs ground truth " + shape_str(g.shape()));
    }
    const int64_t per = p.numel() / batch;
    const double* pd = p.data().data();
    const double* gd = g.data().data();

    auto nums = std::make_shared<std::vector<double>>(static_cast<size_t>(batch));
    auto dens = std::make_shared<std::vector<double>>(static_cast<size_t>(batch));
    double total = 0;
    for (int b = 0; b < batch; ++b) {
        double pg = 0, pp = 0, gg = 0;
        const double* pb = pd + static_cast<size_t>(b) * per;
        const double* gb = gd + static_cast<size_t>(b) * per;
        for (int64_t i = 0; i < per; ++i) {
            pg += pb[i] * gb[i];
            pp += pb[i] * pb[i];
            gg += gb[i] * gb[i];
        }
        (*nums)[static_cast<size_t>(b)] = 2.0 * pg + smooth;
        (*dens)[static_cast<size_t>(b)] = pp + gg + smooth;
        total += 1.0 - (*nums)[static_cast<size_t>(b)] / (*dens)[static_cast<size_t>(b)];
    }
    Tensor out = Tensor::from_vector({1}, {total / batch});

    if (tape && p.requires_grad()) {
        out.set_requires_grad(true);
        Tensor p_c = p, g_c = g, out_c = out;
        tape->record(out, [p_c, g_c, out_c, nums, dens, batch, per]() mutable {
            p_c.ensure_grad();
            const double go = out_c.grad()[0] / batch;
            const double* pd = p_c.data().data();
            const double* gd = g_c.data().data();
            double* gp = p_c.grad().data();
            for (int b = 0; b < batch; ++b) {
                const double num = (*nums)[static_cast<size_t>(b)];
                const double den = (*dens)[static_cast<size_t>(b)];
                const double inv_den2 = 1.0 / (den * den);
                const size_t base = static_cast<size_t>(b) * per;
                for (int64_t i = 0; i < per; ++i) {
                    // d/dp of (1 - num/den): (2p*num - 2g*den) / den^2
                    gp[base + i] += go * (2.0 * pd[base + i] * num - 2.0 * gd[base + i] * den) *
                                    inv_den2;
                }
            }
        });
    }
    return out;
}

}  // namespace

Tensor dice_loss(GradTape* tape, const Tensor& p, const Tensor& g, double smooth) {
    return dice_impl(tape, p, g, smooth, 1);
}

Tensor dice_loss_mean(GradTape* tape, const Tensor& p, const Tensor& g, double smooth) {
    if (p.ndim() < 1) throw DimensionError("dice_loss_mean: prediction must have a batch axis");
    return dice_impl(tape, p, g, smooth, p.dim(0));
}

// ---- Adam ---------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(std::vector<ParamRef> params, double weight_decay)
    : weight_decay_(weight_decay) {
    for (ParamRef& p : params) {
        if (p.buffer) continue;
        m_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
        v_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
        params_.push_back(std::move(p));
    }
}

void AdamOptimizer::step(double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        ParamRef& p = params_[pi];
        p.tensor.ensure_grad();
        const std::vector<double>& grad = p.tensor.grad();
        std::vector<double>& data = p.tensor.data();
        std::vector<double>& m = m_[pi];
        std::vector<double>& v = v_[pi];
        const double wd = p.decay ? weight_decay_ : 0.0;
        for (size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i] + wd * data[i];
            if (!std::isfinite(g)) {
                throw TrainingError("non-finite gradient in " + p.name);
            }
            m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
            v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            data[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
        }
    }
}

void AdamOptimizer::zero_grad() {
    for (ParamRef& p : params_) p.tensor.zero_grad();
}

// ---- plateau schedule ------------------------------------------------------------

void PlateauScheduler::observe(double val_loss) {
    if (val_loss < best) {
        best = val_loss;
        since_best = 0;
        return;
    }
    ++since_best;
    if (since_best >= patience) {
        since_best = 0;
        if (halvings >= max_halvings) {
            halt = true;
        } else {
            lr /= 2.0;
            ++halvings;
        }
    }
}

// ---- checkpoint I/O ----------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'A', 'C', 'U', 'N'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    put_u32(os, static_cast<uint32_t>(v));
    put_u32(os, static_cast<uint32_t>(v >> 32));
}

void put_f64(std::ostream& os, double d) {
    uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(os, v);
}

void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw CheckpointError(path + ": truncated file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& is, const std::string& path) {
    const uint64_t lo = get_u32(is, path);
    const uint64_t hi = get_u32(is, path);
    return lo | (hi << 32);
}

double get_f64(std::istream& is, const std::string& path) {
    const uint64_t v = get_u64(is, path);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

std::string get_str(std::istream& is, const std::string& path) {
    const uint32_t n = get_u32(is, path);
    if (n > (1u << 20)) throw CheckpointError(path + ": implausible string length");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw CheckpointError(path + ": truncated file");
    return s;
}

}  // namespace

Checkpoint snapshot(Model& model, const TrainConfig& tcfg, int epoch, double val_loss) {
    Checkpoint cp;
    cp.version = kVersion;
    cp.model_config = model.config();
    cp.train_config = tcfg;
    cp.epoch = epoch;
    cp.val_loss = val_loss;
    for (const ParamRef& p : model.parameters()) {
        cp.tensors.push_back({p.name, p.tensor.clone()});
    }
    return cp;
}

void save_checkpoint(const std::string& path, const Checkpoint& cp) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os.write(kMagic, 4);
    put_u32(os, cp.version);

    uint32_t film_mask = 0;
    for (char b : cp.model_config.film_blocks) film_mask |= 1u << (b - 'A');
    put_u32(os, static_cast<uint32_t>(cp.model_config.base_filters));
    put_u32(os, film_mask);
    put_f64(os, cp.model_config.bn_momentum);
    put_f64(os, cp.model_config.bn_epsilon);
    put_u32(os, static_cast<uint32_t>(cp.model_config.pad_multiple));
    put_u32(os, cp.model_config.film_identity_init ? 1 : 0);

    const TrainConfig& t = cp.train_config;
    put_f64(os, t.learning_rate);
    put_f64(os, t.weight_decay);
    put_u32(os, static_cast<uint32_t>(t.batch_size));
    put_u32(os, static_cast<uint32_t>(t.plateau_patience));
    put_u32(os, static_cast<uint32_t>(t.max_halvings));
    put_u32(os, static_cast<uint32_t>(t.augment_max_shift));
    put_u64(os, t.seed);
    put_u32(os, static_cast<uint32_t>(t.max_epochs));
    put_u32(os, static_cast<uint32_t>(t.val_stride));
    put_f64(os, t.dice_smooth);

    put_u32(os, static_cast<uint32_t>(cp.epoch));
    put_f64(os, cp.val_loss);

    put_u64(os, cp.tensors.size());
    for (const NamedTensor& nt : cp.tensors) {
        put_str(os, nt.name);
        os.put(0);  // dtype tag: f64
        put_u32(os, static_cast<uint32_t>(nt.tensor.ndim()));
        for (int d : nt.tensor.shape()) put_u64(os, static_cast<uint64_t>(d));
        for (double v : nt.tensor.data()) put_f64(os, v);
    }
    if (!os) throw IoError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw CheckpointError(path + ": bad magic bytes (not an ACUN checkpoint)");
    }
    Checkpoint cp;
    cp.version = get_u32(is, path);
    if (cp.version != kVersion) {
        throw CheckpointError(path + ": unsupported version " + std::to_string(cp.version));
    }

    cp.model_config.base_filters = static_cast<int>(get_u32(is, path));
    const uint32_t film_mask = get_u32(is, path);
    for (int i = 0; i < 9; ++i) {
        if (film_mask & (1u << i)) cp.model_config.film_blocks.insert(static_cast<char>('A' + i));
    }
    cp.model_config.bn_momentum = get_f64(is, path);
    cp.model_config.bn_epsilon = get_f64(is, path);
    cp.model_config.pad_multiple = static_cast<int>(get_u32(is, path));
    cp.model_config.film_identity_init = get_u32(is, path) != 0;

    TrainConfig& t = cp.train_config;
    t.learning_rate = get_f64(is, path);
    t.weight_decay = get_f64(is, path);
    t.batch_size = static_cast<int>(get_u32(is, path));
    t.plateau_patience = static_cast<int>(get_u32(is, path));
    t.max_halvings = static_cast<int>(get_u32(is, path));
    t.augment_max_shift = static_cast<int>(get_u32(is, path));
    t.seed = get_u64(is, path);
    t.max_epochs = static_cast<int>(get_u32(is, path));
    t.val_stride = static_cast<int>(get_u32(is, path));
    t.dice_smooth = get_f64(is, path);

    cp.epoch = static_cast<int>(get_u32(is, path));
    cp.val_loss = get_f64(is, path);

    const uint64_t count = get_u64(is, path);
    if (count > (1u << 20)) throw CheckpointError(path + ": implausible tensor count");
    for (uint64_t i = 0; i < count; ++i) {
        NamedTensor nt;
        nt.name = get_str(is, path);
        const int dtype = is.get();
        if (dtype != 0) throw CheckpointError(path + ": unknown dtype tag for " + nt.name);
        const uint32_t ndim = get_u32(is, path);
        if (ndim > 8) throw CheckpointError(path + ": implausible rank for " + nt.name);
        std::vector<int> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) {
            shape[d] = static_cast<int>(get_u64(is, path));
        }
        std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
        for (double& v : data) v = get_f64(is, path);
        nt.tensor = Tensor::from_vector(std::move(shape), std::move(data));
        cp.tensors.push_back(std::move(nt));
    }
    return cp;
}

void apply_checkpoint(Model& model, const Checkpoint& cp) {
    std::map<std::string, const NamedTensor*> by_name;
    for (const NamedTensor& nt : cp.tensors) by_name[nt.name] = &nt;
    for (ParamRef& p : model.parameters()) {
        const auto it = by_name.find(p.name);
        if (it == by_name.end()) {
            throw CheckpointError("checkpoint is missing parameter " + p.name);
        }
        const Tensor& src = it->second->tensor;
        if (src.shape() != p.tensor.shape()) {
            throw CheckpointError("shape mismatch for " + p.name + ": model " +
                                  shape_str(p.tensor.shape()) + " vs checkpoint " +
                                  shape_str(src.shape()));
        }
        p.tensor.data() = src.data();
    }
}

Model model_from_checkpoint(const Checkpoint& cp) {
    Model model(cp.model_config, 0);
    apply_checkpoint(model, cp);
    return model;
}

// ---- batch assembly ------------------------------------------------------------------

Tensor pages_to_tensor(const std::vector<const ScorePage*>& pages) {
    if (pages.empty()) throw ArgumentError("pages_to_tensor: empty batch");
    const int H = pages[0]->height, W = pages[0]->width;
    Tensor t = Tensor::zeros({static_cast<int>(pages.size()), 1, H, W});
    for (size_t b = 0; b < pages.size(); ++b) {
        if (pages[b]->height != H || pages[b]->width != W) {
            throw DimensionError("pages_to_tensor: mixed page sizes in one batch");
        }
        std::copy(pages[b]->pixels.begin(), pages[b]->pixels.end(),
                  t.data().begin() + static_cast<int64_t>(b) * H * W);
    }
    return t;
}

Tensor excerpts_to_tensor(const std::vector<AudioExcerpt>& excerpts) {
    if (excerpts.empty()) throw ArgumentError("excerpts_to_tensor: empty batch");
    const int n = audio_config::kNumBands * audio_config::kExcerptFrames;
    Tensor t = Tensor::zeros({static_cast<int>(excerpts.size()), 1, audio_config::kNumBands,
                              audio_config::kExcerptFrames});
    for (size_t b = 0; b < excerpts.size(); ++b) {
        std::copy(excerpts[b].values.begin(), excerpts[b].values.end(),
                  t.data().begin() + static_cast<int64_t>(b) * n);
    }
    return t;
}

Tensor masks_to_tensor(const std::vector<const TargetMask*>& masks) {
    if (masks.empty()) throw ArgumentError("masks_to_tensor: empty batch");
    const int H = masks[0]->height, W = masks[0]->width;
    Tensor t = Tensor::zeros({static_cast<int>(masks.size()), 1, H, W});
    for (size_t b = 0; b < masks.size(); ++b) {
        if (masks[b]->height != H || masks[b]->width != W) {
            throw DimensionError("masks_to_tensor: mixed mask sizes in one batch");
        }
        double* dst = t.data().data() + static_cast<int64_t>(b) * H * W;
        for (size_t i = 0; i < masks[b]->pixels.size(); ++i) {
            dst[i] = static_cast<double>(masks[b]->pixels[i]);
        }
    }
    return t;
}

// ---- training loop --------------------------------------------------------------------

double validation_loss(Model& model, const std::vector<const Piece*>& pieces,
                       const TrainConfig& tcfg) {
    tune_allocator();
    double total = 0;
    int64_t count = 0;
    std::vector<const ScorePage*> pages;
    std::vector<AudioExcerpt> excerpts;
    std::vector<const TargetMask*> masks;
    std::vector<TargetMask> mask_storage;

    auto flush = [&]() {
        if (pages.empty()) return;
        masks.clear();
        for (const TargetMask& m : mask_storage) masks.push_back(&m);
        Tensor pred = model.forward(nullptr, pages_to_tensor(pages), excerpts_to_tensor(excerpts),
                                    false);
        Tensor target = masks_to_tensor(masks);
        const int b = static_cast<int>(pages.size());
        total += dice_loss_mean(nullptr, pred, target, tcfg.dice_smooth).data()[0] * b;
        count += b;
        pages.clear();
        excerpts.clear();
        mask_storage.clear();
    };

    for (const Piece* piece : pieces) {
        for (size_t i = 0; i < piece->notes.size();
             i += static_cast<size_t>(std::max(1, tcfg.val_stride))) {
            const int end = onset_frame(piece->notes[i]);
            pages.push_back(&piece->page);
            excerpts.push_back(excerpt(piece->spec, end));
            mask_storage.push_back(build_target_mask(*piece, end));
            if (static_cast<int>(pages.size()) == tcfg.batch_size) flush();
        }
        flush();  // pieces may differ in page size; do not mix across pieces
    }
    if (count == 0) throw ConfigError("validation_loss: no validation excerpts");
    return total / static_cast<double>(count);
}

TrainResult train(const std::vector<Piece>& corpus, const ModelConfig& mcfg,
                  const TrainConfig& tcfg, const std::string& log_csv_path,
                  const std::function<void(const EpochStats&)>& on_epoch) {
    tune_allocator();
    std::vector<const Piece*> train_pieces, valid_pieces;
    for (const Piece& p : corpus) {
        if (p.split == Split::train) train_pieces.push_back(&p);
        if (p.split == Split::valid) valid_pieces.push_back(&p);
    }
    if (train_pieces.empty()) throw ConfigError("train: no pieces tagged 'train'");
    if (valid_pieces.empty()) throw ConfigError("train: no pieces tagged 'valid'");

    Model model(mcfg, tcfg.seed);
    AdamOptimizer opt(model.parameters(), tcfg.weight_decay);
    PlateauScheduler sched;
    sched.lr = tcfg.learning_rate;
    sched.patience = tcfg.plateau_patience;
    sched.max_halvings = tcfg.max_halvings;

    Rng rng(tcfg.seed * 0x9e3779b97f4a7c15ULL + 1);

    std::ofstream log;
    if (!log_csv_path.empty()) {
        log.open(log_csv_path);
        if (!log) throw IoError("cannot write " + log_csv_path);
        log << "epoch,train_loss,val_loss,lr\n";
    }

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();

    std::vector<size_t> order(train_pieces.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
        // Fisher-Yates shuffle of the piece order
        for (size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1],
                      order[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        }

        double train_total = 0;
        int64_t train_count = 0;
        std::vector<ScorePage> page_storage;
        std::vector<TargetMask> mask_storage;
        std::vector<AudioExcerpt> excerpts;

        auto flush = [&]() {
            if (page_storage.empty()) return;
            std::vector<const ScorePage*> pages;
            std::vector<const TargetMask*> masks;
            for (const ScorePage& p : page_storage) pages.push_back(&p);
            for (const TargetMask& m : mask_storage) masks.push_back(&m);
            GradTape tape;
            Tensor pred = model.forward(&tape, pages_to_tensor(pages),
                                        excerpts_to_tensor(excerpts), true);
            Tensor target = masks_to_tensor(masks);
            Tensor loss = dice_loss_mean(&tape, pred, target, tcfg.dice_smooth);
            const int b = static_cast<int>(pages.size());
            train_total += loss.data()[0] * b;
            train_count += b;
            opt.zero_grad();
            tape.backward(loss);
            opt.step(sched.lr);
            page_storage.clear();
            mask_storage.clear();
            excerpts.clear();
        };

        for (size_t oi : order) {
            const Piece& piece = *train_pieces[oi];
            const int note_idx = rng.uniform_int(0, static_cast<int>(piece.notes.size()) - 1);
            const int end = onset_frame(piece.notes[static_cast<size_t>(note_idx)]);
            TargetMask mask = build_target_mask(piece, end);
            const int dx = rng.uniform_int(-tcfg.augment_max_shift, tcfg.augment_max_shift);
            const int dy = rng.uniform_int(-tcfg.augment_max_shift, tcfg.augment_max_shift);
            auto [page, shifted] = augment_shift(piece.page, mask, dx, dy, tcfg.augment_max_shift);
            page_storage.push_back(std::move(page));
            mask_storage.push_back(std::move(shifted));
            excerpts.push_back(excerpt(piece.spec, end));
            if (static_cast<int>(page_storage.size()) == tcfg.batch_size) flush();
        }
        flush();

        const double val = validation_loss(model, valid_pieces, tcfg);
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = train_total / static_cast<double>(train_count);
        stats.val_loss = val;
        stats.lr = sched.lr;
        result.curve.push_back(stats);
        if (log) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", stats.epoch,
                          stats.train_loss, stats.val_loss, stats.lr);
            log << buf;
            log.flush();
        }
        if (on_epoch) on_epoch(stats);

        if (val < best_val) {
            best_val = val;
            result.best = snapshot(model, tcfg, epoch, val);
        }
        sched.observe(val);
        if (sched.halt) break;
    }
    if (result.curve.empty()) throw ConfigError("train: zero epochs run");
    return result;
}

}  // namespace acunet
