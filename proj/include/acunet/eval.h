#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "acunet/dataset.h"
#include "acunet/model.h"
#include "acunet/tensor.h"
#include "acunet/train.h"

namespace acunet {

struct ConfusionCounts {
    int64_t tp = 0;
    int64_t fp = 0;
    int64_t fn = 0;
    int64_t tn = 0;

    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
};

// pixel >= threshold -> 1.
TargetMask binarize(const std::vector<double>& p, int height, int width, double threshold = 0.5);

ConfusionCounts confusion(const TargetMask& pred, const TargetMask& truth);

struct Prf {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
};

// P = tp/(tp+fp), R = tp/(tp+fn), F1 = 2tp/(2tp+fp+fn); a zero denominator
// yields 1.0 when the corresponding error count is also 0, else 0.0.
Prf precision_recall_f1(const ConfusionCounts& c);

// Probability maps [B,1,H,W] from (pages, excerpts); lets tests substitute
// stub predictors for the real model.
using Predictor = std::function<Tensor(const Tensor& pages, const Tensor& excerpts)>;

Predictor model_predictor(Model& model);

struct PieceEval {
    std::string piece;
    ConfusionCounts counts;
    Prf metrics;
};

struct EvalReport {
    std::string model_id;
    std::vector<PieceEval> pieces;
    ConfusionCounts micro_counts;
    Prf micro;  // metrics of the summed counts
    Prf macro;  // mean of the per-piece metrics
};

// Evaluates every piece of the split at every note-onset end_frame:
// forward -> binarize at 0.5 -> confusion, micro-aggregated.
EvalReport evaluate(const std::vector<Piece>& corpus, Split split, const Predictor& predictor,
                    const std::string& model_id = "", int batch_size = 32);

void write_eval_report_csv(const std::string& path, const EvalReport& report);

struct AblationRow {
    std::string label;  // "FiLM Layers (C-G)"
    std::set<char> blocks;
    Prf metrics;
};

// The seven film-placement rows evaluated in order; trains one model per
// set on the train split and reports micro metrics on the test split.
std::vector<std::set<char>> default_ablation_sets();

std::vector<AblationRow> ablation(const std::vector<Piece>& corpus,
                                  const std::vector<std::set<char>>& sets,
                                  const ModelConfig& base_config, const TrainConfig& tcfg,
                                  const std::function<void(const std::string&)>& on_progress =
                                      nullptr);

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

// Overlay: page rendered white-on-black-ink grayscale with the probability
// heat blended into the green channel, G = gray*(1-p) + 255*p; also writes
// the raw probability map as <out>.prob.png.
void render_overlay(const ScorePage& page, const std::vector<double>& prob,
                    const std::string& out_path);

}  // namespace acunet
