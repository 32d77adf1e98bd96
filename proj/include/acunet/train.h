#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "acunet/dataset.h"
#include "acunet/model.h"
#include "acunet/tensor.h"

namespace acunet {

struct TrainConfig {
    double learning_rate = 0.001;
    double weight_decay = 5e-5;
    int batch_size = 32;
    int plateau_patience = 2;
    int max_halvings = 5;
    int augment_max_shift = 10;
    uint64_t seed = 1;
    int max_epochs = 200;   // safety cap on top of the plateau rule
    int val_stride = 4;     // every n-th onset is a validation excerpt
    double dice_smooth = 1.0;
};

// Dice coefficient loss 1 - (2 sum(p*g) + s) / (sum(p^2) + sum(g^2) + s)
// over all elements of p, differentiable in p. The smoothing constant makes
// the all-empty pair a perfect match (loss 0) instead of 0/0.
Tensor dice_loss(GradTape* tape, const Tensor& p, const Tensor& g, double smooth = 1.0);

// Mean of per-sample dice losses, axis 0 of p/g being the batch.
Tensor dice_loss_mean(GradTape* tape, const Tensor& p, const Tensor& g, double smooth = 1.0);

// Adam (beta1 0.9, beta2 0.999, eps 1e-8) with classical L2 decay added to
// the gradient before the moment update; decay applies only to refs with
// `decay` set. Fails fast on non-finite gradients.
class AdamOptimizer {
  public:
    explicit AdamOptimizer(std::vector<ParamRef> params, double weight_decay);

    void step(double lr);
    void zero_grad();
    int64_t step_count() const { return step_; }

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

  private:
    std::vector<ParamRef> params_;
    std::vector<std::vector<double>> m_, v_;
    double weight_decay_;
    int64_t step_ = 0;
};

// Halves the learning rate when the validation loss has not decreased for
// `patience` epochs; after `max_halvings` halvings the next trigger raises
// the halt flag instead.
struct PlateauScheduler {
    double lr = 0.001;
    int patience = 2;
    int max_halvings = 5;

    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    int halvings = 0;
    bool halt = false;

    void observe(double val_loss);
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct Checkpoint {
    uint32_t version = 1;
    ModelConfig model_config;
    TrainConfig train_config;
    int epoch = 0;
    double val_loss = 0;
    std::vector<NamedTensor> tensors;  // parameters and batch-norm buffers
};

Checkpoint snapshot(Model& model, const TrainConfig& tcfg, int epoch, double val_loss);

// Little-endian binary: magic "ACUN", version, config blocks, named f64
// tensor table, metadata. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const Checkpoint& cp);
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint values into an existing model, validating every shape
// (errors name the offending parameter).
void apply_checkpoint(Model& model, const Checkpoint& cp);
Model model_from_checkpoint(const Checkpoint& cp);

// Batch assembly: all pages/masks in one batch must share dimensions.
Tensor pages_to_tensor(const std::vector<const ScorePage*>& pages);
Tensor excerpts_to_tensor(const std::vector<AudioExcerpt>& excerpts);
Tensor masks_to_tensor(const std::vector<const TargetMask*>& masks);

struct EpochStats {
    int epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double lr = 0;
};

struct TrainResult {
    Checkpoint best;
    std::vector<EpochStats> curve;
};

// Mean validation dice loss over a deterministic onset grid (every
// `val_stride`-th onset of every piece), eval-mode batch norm.
double validation_loss(Model& model, const std::vector<const Piece*>& pieces,
                       const TrainConfig& tcfg);

// One epoch = one random excerpt (with shift augmentation) per training
// piece; minimizes mean batch dice loss with Adam under the plateau
// schedule, tracking the lowest-validation-loss checkpoint. Appends
// `epoch,train_loss,val_loss,lr` rows to log_csv_path when non-empty.
TrainResult train(const std::vector<Piece>& corpus, const ModelConfig& mcfg,
                  const TrainConfig& tcfg, const std::string& log_csv_path = "",
                  const std::function<void(const EpochStats&)>& on_epoch = nullptr);

}  // namespace acunet
