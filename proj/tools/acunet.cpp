#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "acunet/dataset.h"
#include "acunet/eval.h"
#include "acunet/gradcheck.h"
#include "acunet/model.h"
#include "acunet/png_io.h"
#include "acunet/train.h"
#include "acunet/wav.h"

namespace {

using namespace acunet;

int cmd_synth(const std::string& out_dir, int pieces, uint64_t seed, int notes, int staves) {
    SynthConfig cfg;
    cfg.pieces = pieces;
    if (notes > 0) cfg.notes_per_piece = notes;
    if (staves > 0) cfg.staves_per_page = staves;
    const auto corpus = synth_generate(seed, cfg);
    write_corpus(out_dir, corpus);
    int n_train = 0, n_valid = 0, n_test = 0;
    for (const Piece& p : corpus) {
        if (p.split == Split::train) ++n_train;
        else if (p.split == Split::valid) ++n_valid;
        else ++n_test;
    }
    std::cout << "wrote " << corpus.size() << " pieces to " << out_dir << " (train " << n_train
              << ", valid " << n_valid << ", test " << n_test << ")\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& film, const std::string& out_path,
              int base_filters, uint64_t seed, int max_epochs, int batch_size,
              const std::string& log_path, bool identity_init) {
    ModelConfig mcfg;
    mcfg.base_filters = base_filters;
    mcfg.film_blocks = parse_film_blocks(film);
    mcfg.film_identity_init = identity_init;
    TrainConfig tcfg;
    tcfg.seed = seed;
    if (max_epochs > 0) tcfg.max_epochs = max_epochs;
    if (batch_size > 0) tcfg.batch_size = batch_size;

    const auto corpus = load_corpus(data_dir);
    std::cout << "loaded " << corpus.size() << " pieces; training film=" << film
              << " base_filters=" << base_filters << "\n";
    TrainResult result = train(corpus, mcfg, tcfg, log_path, [](const EpochStats& s) {
        std::cout << "epoch " << s.epoch << "  train " << s.train_loss << "  val " << s.val_loss
                  << "  lr " << s.lr << "\n";
    });
    save_checkpoint(out_path, result.best);
    std::cout << "best epoch " << result.best.epoch << " (val loss " << result.best.val_loss
              << ") -> " << out_path << "\n";
    return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt_path, const std::string& split,
             const std::string& report_path) {
    const Checkpoint cp = load_checkpoint(ckpt_path);
    Model model = model_from_checkpoint(cp);
    const auto corpus = load_corpus(data_dir);
    const EvalReport report =
        evaluate(corpus, parse_split(split), model_predictor(model),
                 format_film_blocks(cp.model_config.film_blocks));
    write_eval_report_csv(report_path, report);
    std::cout << "split " << split << ": micro P " << report.micro.precision << "  R "
              << report.micro.recall << "  F1 " << report.micro.f1 << " -> " << report_path
              << "\n";
    return 0;
}

int cmd_ablate(const std::string& data_dir, const std::string& sets_arg,
               const std::string& report_path, int base_filters, uint64_t seed, int max_epochs) {
    std::vector<std::set<char>> sets;
    if (sets_arg.empty()) {
        sets = default_ablation_sets();
    } else {
        // comma-separated list of block ranges, e.g. E,D-F,C-G
        std::string cur;
        for (char c : sets_arg + ",") {
            if (c == ',') {
                if (!cur.empty()) sets.push_back(parse_film_blocks(cur));
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
    }
    ModelConfig mcfg;
    mcfg.base_filters = base_filters;
    TrainConfig tcfg;
    tcfg.seed = seed;
    if (max_epochs > 0) tcfg.max_epochs = max_epochs;
    const auto corpus = load_corpus(data_dir);
    const auto rows = ablation(corpus, sets, mcfg, tcfg,
                               [](const std::string& msg) { std::cout << msg << "\n"; });
    write_ablation_csv(report_path, rows);
    std::cout << "wrote " << rows.size() << " rows -> " << report_path << "\n";
    return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& page_path,
                const std::string& audio_path, int frame, const std::string& out_path) {
    const Checkpoint cp = load_checkpoint(ckpt_path);
    Model model = model_from_checkpoint(cp);

    const GrayImage img = read_png_gray(page_path);
    ScorePage page;
    page.height = img.height;
    page.width = img.width;
    page.src_height = img.height;
    page.src_width = img.width;
    page.pixels.resize(img.pixels.size());
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        page.pixels[i] = 1.0 - static_cast<double>(img.pixels[i]) / 255.0;
    }

    const AudioSignal signal = read_wav(audio_path);
    const Spectrogram spec = spectrogram(signal);
    const AudioExcerpt ex = excerpt(spec, frame);

    const Tensor pred = model.forward(nullptr, pages_to_tensor({&page}),
                                      excerpts_to_tensor({ex}), false);
    render_overlay(page, pred.data(), out_path);
    std::cout << "wrote " << out_path << " and " << out_path << ".prob.png\n";
    return 0;
}

int cmd_gradcheck(uint64_t seed) {
    return run_gradcheck(seed, std::cout) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Audio-conditioned U-Net: locate audio excerpts in sheet-image pages"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
    std::string synth_out;
    int synth_pieces = 48, synth_notes = 0, synth_staves = 0;
    uint64_t synth_seed = 1;
    synth->add_option("--out", synth_out, "Output corpus directory")->required();
    synth->add_option("--pieces", synth_pieces, "Number of pieces");
    synth->add_option("--seed", synth_seed, "Generator seed");
    synth->add_option("--notes-per-piece", synth_notes, "Notes per piece");
    synth->add_option("--staves", synth_staves, "Staves per page");

    // train
    auto* tr = app.add_subcommand("train", "Train a model");
    std::string tr_data, tr_film = "C-G", tr_out = "ckpt.acun", tr_log;
    int tr_bf = 8, tr_epochs = 0, tr_batch = 0;
    uint64_t tr_seed = 1;
    bool tr_identity = false;
    tr->add_option("--data", tr_data, "Corpus directory")->required();
    tr->add_option("--film", tr_film, "FiLM blocks (range C-G, list A,C,E, or none)");
    tr->add_option("--out", tr_out, "Checkpoint output path");
    tr->add_option("--base-filters", tr_bf, "Filters in block A");
    tr->add_option("--seed", tr_seed, "Training seed");
    tr->add_option("--epochs", tr_epochs, "Max epochs (default 200)");
    tr->add_option("--batch", tr_batch, "Batch size (default 32)");
    tr->add_option("--log", tr_log, "Training log CSV path");
    tr->add_flag("--film-identity-init", tr_identity,
                 "Initialize FiLM generators to the identity");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string ev_data, ev_ckpt, ev_split = "test", ev_report = "report.csv";
    ev->add_option("--data", ev_data, "Corpus directory")->required();
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
    ev->add_option("--split", ev_split, "Split: train|valid|test");
    ev->add_option("--report", ev_report, "Report CSV path");

    // ablate
    auto* ab = app.add_subcommand("ablate", "Train and evaluate FiLM placements");
    std::string ab_data, ab_sets, ab_report = "table2.csv";
    int ab_bf = 8, ab_epochs = 0;
    uint64_t ab_seed = 1;
    ab->add_option("--data", ab_data, "Corpus directory")->required();
    ab->add_option("--sets", ab_sets, "Comma list of block sets (default E,D-F,C-G,B-H,A-I,A-E,E-I)");
    ab->add_option("--report", ab_report, "Report CSV path");
    ab->add_option("--base-filters", ab_bf, "Filters in block A");
    ab->add_option("--seed", ab_seed, "Training seed");
    ab->add_option("--epochs", ab_epochs, "Max epochs per model");

    // predict
    auto* pr = app.add_subcommand("predict", "Render a prediction overlay");
    std::string pr_ckpt, pr_page, pr_audio, pr_out = "overlay.png";
    int pr_frame = 0;
    pr->add_option("--ckpt", pr_ckpt, "Checkpoint path")->required();
    pr->add_option("--page", pr_page, "Page PNG")->required();
    pr->add_option("--audio", pr_audio, "Audio WAV")->required();
    pr->add_option("--frame", pr_frame, "Excerpt end frame")->required();
    pr->add_option("--out", pr_out, "Overlay PNG path");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
    uint64_t gc_seed = 7;
    gc->add_option("--seed", gc_seed, "Random seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            return cmd_synth(synth_out, synth_pieces, synth_seed, synth_notes, synth_staves);
        }
        if (tr->parsed()) {
            return cmd_train(tr_data, tr_film, tr_out, tr_bf, tr_seed, tr_epochs, tr_batch,
                             tr_log, tr_identity);
        }
        if (ev->parsed()) return cmd_eval(ev_data, ev_ckpt, ev_split, ev_report);
        if (ab->parsed()) {
            return cmd_ablate(ab_data, ab_sets, ab_report, ab_bf, ab_seed, ab_epochs);
        }
        if (pr->parsed()) return cmd_predict(pr_ckpt, pr_page, pr_audio, pr_frame, pr_out);
        if (gc->parsed()) return cmd_gradcheck(gc_seed);
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
