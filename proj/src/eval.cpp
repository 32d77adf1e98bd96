#include "acunet/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "acunet/png_io.h"

namespace acunet {

TargetMask binarize(const std::vector<double>& p, int height, int width, double threshold) {
    if (static_cast<int64_t>(p.size()) != static_cast<int64_t>(height) * width) {
        throw DimensionError("binarize: " + std::to_string(p.size()) + " values for " +
                             std::to_string(height) + "x" + std::to_string(width));
    }
    TargetMask m;
    m.height = height;
    m.width = width;
    m.pixels.resize(p.size());
    for (size_t i = 0; i < p.size(); ++i) m.pixels[i] = p[i] >= threshold ? 1 : 0;
    return m;
}

ConfusionCounts confusion(const TargetMask& pred, const TargetMask& truth) {
    if (pred.height != truth.height || pred.width != truth.width) {
        throw DimensionError("confusion: prediction " + std::to_string(pred.height) + "x" +
                             std::to_string(pred.width) + " vs truth " +
                             std::to_string(truth.height) + "x" + std::to_string(truth.width));
    }
    ConfusionCounts c;
    for (size_t i = 0; i < pred.pixels.size(); ++i) {
        const bool p = pred.pixels[i] != 0;
        const bool t = truth.pixels[i] != 0;
        if (p && t) ++c.tp;
        else if (p && !t) ++c.fp;
        else if (!p && t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

namespace {

double safe_ratio(int64_t num, int64_t den, int64_t err_count) {
    if (den == 0) return err_count == 0 ? 1.0 : 0.0;
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

Prf precision_recall_f1(const ConfusionCounts& c) {
    Prf out;
    out.precision = safe_ratio(c.tp, c.tp + c.fp, c.fp);
    out.recall = safe_ratio(c.tp, c.tp + c.fn, c.fn);
    out.f1 = safe_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, c.fp + c.fn);
    return out;
}

Predictor model_predictor(Model& model) {
    return [&model](const Tensor& pages, const Tensor& excerpts) {
        return model.forward(nullptr, pages, excerpts, false);
    };
}

EvalReport evaluate(const std::vector<Piece>& corpus, Split split, const Predictor& predictor,
                    const std::string& model_id, int batch_size) {
    if (batch_size < 1) throw ArgumentError("evaluate: batch_size must be >= 1");
    tune_allocator();
    std::vector<const Piece*> pieces;
    for (const Piece& p : corpus) {
        if (p.split == split) pieces.push_back(&p);
    }
    if (pieces.empty()) {
        throw ConfigError(std::string("evaluate: no pieces tagged '") + split_name(split) + "'");
    }

    EvalReport report;
    report.model_id = model_id;
    for (const Piece* piece : pieces) {
        // deterministic end_frame grid: every note onset, deduplicated
        std::vector<int> ends;
        for (const NoteAnnotation& n : piece->notes) {
            const int f = onset_frame(n);
            if (ends.empty() || ends.back() != f) ends.push_back(f);
        }

        ConfusionCounts piece_counts;
        for (size_t start = 0; start < ends.size(); start += static_cast<size_t>(batch_size)) {
            const size_t stop = std::min(ends.size(), start + static_cast<size_t>(batch_size));
            std::vector<const ScorePage*> pages;
            std::vector<AudioExcerpt> excerpts;
            std::vector<TargetMask> truths;
            for (size_t i = start; i < stop; ++i) {
                pages.push_back(&piece->page);
                excerpts.push_back(excerpt(piece->spec, ends[i]));
                truths.push_back(build_target_mask(*piece, ends[i]));
            }
            const Tensor pred = predictor(pages_to_tensor(pages), excerpts_to_tensor(excerpts));
            const int H = piece->page.height, W = piece->page.width;
            if (pred.ndim() != 4 || pred.dim(0) != static_cast<int>(pages.size()) ||
                pred.dim(2) != H || pred.dim(3) != W) {
                throw DimensionError("evaluate: predictor returned " + shape_str(pred.shape()));
            }
            for (size_t i = 0; i < pages.size(); ++i) {
                std::vector<double> sample(
                    pred.data().begin() + static_cast<int64_t>(i) * H * W,
                    pred.data().begin() + static_cast<int64_t>(i + 1) * H * W);
                piece_counts += confusion(binarize(sample, H, W), truths[i]);
            }
        }

        PieceEval pe;
        pe.piece = piece->name;
        pe.counts = piece_counts;
        pe.metrics = precision_recall_f1(piece_counts);
        report.micro_counts += piece_counts;
        report.pieces.push_back(std::move(pe));
    }

    report.micro = precision_recall_f1(report.micro_counts);
    for (const PieceEval& pe : report.pieces) {
        report.macro.precision += pe.metrics.precision;
        report.macro.recall += pe.metrics.recall;
        report.macro.f1 += pe.metrics.f1;
    }
    const double n = static_cast<double>(report.pieces.size());
    report.macro.precision /= n;
    report.macro.recall /= n;
    report.macro.f1 /= n;
    return report;
}

void write_eval_report_csv(const std::string& path, const EvalReport& report) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "scope,name,precision,recall,f1,tp,fp,fn,tn\n";
    char buf[256];
    for (const PieceEval& pe : report.pieces) {
        std::snprintf(buf, sizeof buf, "piece,%s,%.6f,%.6f,%.6f,%lld,%lld,%lld,%lld\n",
                      pe.piece.c_str(), pe.metrics.precision, pe.metrics.recall, pe.metrics.f1,
                      static_cast<long long>(pe.counts.tp), static_cast<long long>(pe.counts.fp),
                      static_cast<long long>(pe.counts.fn), static_cast<long long>(pe.counts.tn));
        f << buf;
    }
    std::snprintf(buf, sizeof buf, "micro,%s,%.6f,%.6f,%.6f,%lld,%lld,%lld,%lld\n",
                  report.model_id.c_str(), report.micro.precision, report.micro.recall,
                  report.micro.f1, static_cast<long long>(report.micro_counts.tp),
                  static_cast<long long>(report.micro_counts.fp),
                  static_cast<long long>(report.micro_counts.fn),
                  static_cast<long long>(report.micro_counts.tn));
    f << buf;
    std::snprintf(buf, sizeof buf, "macro,%s,%.6f,%.6f,%.6f,,,,\n", report.model_id.c_str(),
                  report.macro.precision, report.macro.recall, report.macro.f1);
    f << buf;
}

std::vector<std::set<char>> default_ablation_sets() {
    return {
        parse_film_blocks("E"),   parse_film_blocks("D-F"), parse_film_blocks("C-G"),
        parse_film_blocks("B-H"), parse_film_blocks("A-I"), parse_film_blocks("A-E"),
        parse_film_blocks("E-I"),
    };
}

std::vector<AblationRow> ablation(const std::vector<Piece>& corpus,
                                  const std::vector<std::set<char>>& sets,
                                  const ModelConfig& base_config, const TrainConfig& tcfg,
                                  const std::function<void(const std::string&)>& on_progress) {
    std::vector<AblationRow> rows;
    for (const std::set<char>& blocks : sets) {
        ModelConfig mcfg = base_config;
        mcfg.film_blocks = blocks;
        mcfg.validate();
        const std::string label = "FiLM Layers (" + format_film_blocks(blocks) + ")";
        if (on_progress) on_progress("training " + label);
        TrainResult tr = train(corpus, mcfg, tcfg);
        Model model = model_from_checkpoint(tr.best);
        const EvalReport report =
            evaluate(corpus, Split::test, model_predictor(model), format_film_blocks(blocks));
        AblationRow row;
        row.label = label;
        row.blocks = blocks;
        row.metrics = report.micro;
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "architecture,precision,recall,f1\n";
    char buf[160];
    for (const AblationRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.4f,%.4f,%.4f\n", r.label.c_str(),
                      r.metrics.precision, r.metrics.recall, r.metrics.f1);
        f << buf;
    }
}

void render_overlay(const ScorePage& page, const std::vector<double>& prob,
                    const std::string& out_path) {
    if (static_cast<int64_t>(prob.size()) !=
        static_cast<int64_t>(page.height) * page.width) {
        throw DimensionError("render_overlay: probability map size " +
                             std::to_string(prob.size()) + " does not match page " +
                             std::to_string(page.height) + "x" + std::to_string(page.width));
    }
    RgbImage img;
    img.height = page.height;
    img.width = page.width;
    img.pixels.resize(prob.size() * 3);
    GrayImage raw;
    raw.height = page.height;
    raw.width = page.width;
    raw.pixels.resize(prob.size());
    for (size_t i = 0; i < prob.size(); ++i) {
        const double gray = std::clamp(1.0 - page.pixels[i], 0.0, 1.0) * 255.0;
        const double p = std::clamp(prob[i], 0.0, 1.0);
        const uint8_t base = static_cast<uint8_t>(std::lround(gray * (1.0 - p)));
        img.pixels[3 * i] = base;
        img.pixels[3 * i + 1] = static_cast<uint8_t>(std::lround(gray * (1.0 - p) + 255.0 * p));
        img.pixels[3 * i + 2] = base;
        raw.pixels[i] = static_cast<uint8_t>(std::lround(p * 255.0));
    }
    write_png_rgb(out_path, img);
    write_png_gray(out_path + ".prob.png", raw);
}

}  // namespace acunet
