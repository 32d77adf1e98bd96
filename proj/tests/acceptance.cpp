// Acceptance suite: one line per criterion, nonzero exit if any fails.
// Run the whole suite with no arguments, or pass criterion numbers to run a
// subset, e.g. `acceptance 1 4 9`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "acunet/eval.h"
#include "acunet/gradcheck.h"
#include "acunet/model.h"
#include "acunet/rng.h"
#include "acunet/train.h"

using namespace acunet;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

Tensor random_page(std::vector<int> shape, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) v = rng.uniform01();
    return t;
}

// 1. Gradient integrity: ops and the full tiny model vs finite differences.
Outcome criterion_gradients() {
    Outcome out;
    const auto t0 = Clock::now();
    const GradCheckReport ops = gradcheck_ops(2024);
    const GradCheckReport full = gradcheck_full_model(2024);
    out.require(ops.ok(), "op gradients failed (" +
                              (ops.failures.empty() ? "" : ops.failures.front()) + ")");
    out.require(full.ok(), "full-model gradients failed (" +
                               (full.failures.empty() ? "" : full.failures.front()) + ")");
    const double dt = seconds_since(t0);
    out.require(dt < 300.0, "took " + std::to_string(dt) + "s, budget 300s");
    char buf[128];
    std::snprintf(buf, sizeof buf, "%d op + %d model checks in %.0fs", ops.checks, full.checks,
                  dt);
    if (out.pass) out.detail = buf;
    return out;
}

// 2. FiLM semantics: identity conditioning severs the excerpt; Eq. arithmetic.
Outcome criterion_film() {
    Outcome out;
    Tensor x = Tensor::from_vector({1, 1, 1, 2}, {1, 2});
    Tensor g = Tensor::full({1, 1}, 2.0);
    Tensor b = Tensor::full({1, 1}, -1.0);
    const Tensor y = film(nullptr, x, g, b);
    out.require(y.data() == std::vector<double>{1, 3}, "film([1,2],g=2,b=-1) != [1,3]");

    ModelConfig cfg;
    cfg.base_filters = 2;
    cfg.film_blocks = parse_film_blocks("C-G");
    cfg.film_identity_init = true;  // gamma-maps zero with bias 1, beta-maps zero
    Model model(cfg, 11);
    Rng rng(12);
    Tensor page = random_page({1, 1, 48, 32}, rng);
    Tensor e1 = random_page({1, 1, 78, 40}, rng);
    Tensor e2 = random_page({1, 1, 78, 40}, rng);
    const Tensor o1 = model.forward(nullptr, page, e1, false);
    const Tensor o2 = model.forward(nullptr, page, e2, false);
    out.require(o1.data() == o2.data(), "gamma=1,beta=0 output depends on the excerpt");
    if (out.pass) out.detail = "identity conditioning is bitwise excerpt-independent";
    return out;
}

// 3. Loss identities and the dice gradient at 1e-6.
Outcome criterion_loss() {
    Outcome out;
    Rng rng(3);
    Tensor m = Tensor::zeros({40});
    for (double& v : m.data()) v = rng.uniform01() < 0.5 ? 1.0 : 0.0;
    m.data()[0] = 1.0;  // non-empty
    out.require(dice_loss(nullptr, m, m, 1.0).data()[0] == 0.0, "dice(p==g) != 0");

    Tensor p = Tensor::from_vector({3}, {1, 1, 0});
    Tensor g = Tensor::from_vector({3}, {0, 0, 1});
    out.require(dice_loss(nullptr, p, g, 1.0).data()[0] == 0.75, "disjoint dice != 0.75");

    Tensor pr = Tensor::zeros({16}, true);
    Tensor gr = Tensor::zeros({16});
    for (double& v : pr.data()) v = 0.05 + 0.9 * rng.uniform01();
    for (double& v : gr.data()) v = rng.uniform01() < 0.4 ? 1.0 : 0.0;
    GradTape tape;
    Tensor loss = dice_loss(&tape, pr, gr, 1.0);
    tape.backward(loss);
    const double h = 1e-6;
    double worst = 0;
    for (size_t i = 0; i < pr.data().size(); ++i) {
        const double orig = pr.data()[i];
        pr.data()[i] = orig + h;
        const double f1 = dice_loss(nullptr, pr, gr, 1.0).data()[0];
        pr.data()[i] = orig - h;
        const double f0 = dice_loss(nullptr, pr, gr, 1.0).data()[0];
        pr.data()[i] = orig;
        const double fd = (f1 - f0) / (2 * h);
        worst = std::max(worst, std::abs(pr.grad()[i] - fd) /
                                    std::max({std::abs(fd), std::abs(pr.grad()[i]), 1e-12}));
    }
    out.require(worst < 1e-6, "dice gradient off by " + std::to_string(worst));
    if (out.pass) out.detail = "identities exact, gradient within 1e-6";
    return out;
}

// 4. Metric identities.
Outcome criterion_metrics() {
    Outcome out;
    const Prf m = precision_recall_f1({3, 1, 2, 0});
    out.require(m.precision == 0.75, "P != 0.75");
    out.require(m.recall == 0.6, "R != 0.6");
    out.require(m.f1 == 6.0 / 9.0, "F1 != 6/9");

    Rng rng(4);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        ConfusionCounts c;
        c.tp = rng.uniform_int(0, 500);
        c.fp = rng.uniform_int(0, 500);
        c.fn = rng.uniform_int(0, 500);
        const Prf r = precision_recall_f1(c);
        if (r.precision + r.recall > 0) {
            worst = std::max(
                worst, std::abs(r.f1 - 2 * r.precision * r.recall / (r.precision + r.recall)));
        }
    }
    out.require(worst < 1e-12, "micro-F1 identity violated by " + std::to_string(worst));
    if (out.pass) out.detail = "formulas exact, micro-F1 identity within 1e-12";
    return out;
}

// 5. Architecture conformance.
Outcome criterion_architecture() {
    Outcome out;
    ModelConfig cfg;  // base_filters 8
    cfg.film_blocks = parse_film_blocks("C-G");
    const int expected[] = {8, 16, 32, 64, 128, 64, 32, 16, 8};
    for (int i = 0; i < 9; ++i) {
        out.require(cfg.filters_of(static_cast<char>('A' + i)) == expected[i],
                    std::string("filters of block ") + static_cast<char>('A' + i));
    }

    Model model(cfg, 5);
    Rng rng(6);
    EncoderTrace trace;
    Tensor ex = random_page({1, 1, 78, 40}, rng);
    const Tensor z = model.encode(nullptr, ex, false, &trace);
    out.require(z.shape() == std::vector<int>{1, 128}, "z is not 128-dim");
    out.require(trace.conv_shapes.size() == 7 &&
                    trace.conv_shapes[4] == std::array<int, 2>{20, 10} &&
                    trace.conv_shapes[5] == std::array<int, 2>{10, 5} &&
                    trace.conv_shapes[6] == std::array<int, 2>{10, 5},
                "encoder trace is not 78x40 -> 10x5");

    Tensor page = random_page({1, 1, 393, 278}, rng);
    const Tensor prob = model.forward(nullptr, page, ex, false);
    out.require(prob.shape() == std::vector<int>{1, 1, 393, 278}, "output shape mismatch");
    bool open_interval = true;
    for (double v : prob.data()) {
        if (!(v > 0.0 && v < 1.0)) open_interval = false;
    }
    out.require(open_interval, "output left (0,1)");
    if (out.pass) out.detail = "filter ladder, encoder trace, and 393x278 map verified";
    return out;
}

// 6. Overfit check: 4 fixed synthetic samples, base_filters 4, lr 0.001.
Outcome criterion_overfit() {
    Outcome out;
    const auto t0 = Clock::now();

    SynthConfig scfg;
    scfg.pieces = 1;
    scfg.staves_per_page = 1;
    scfg.notes_per_piece = 12;
    scfg.page_width = 112;
    scfg.note_x_step = 8;
    const auto corpus = synth_generate(60, scfg);
    const Piece& piece = corpus[0];

    std::vector<const ScorePage*> pages;
    std::vector<AudioExcerpt> excerpts;
    std::vector<TargetMask> storage;
    std::vector<const TargetMask*> masks;
    for (int i = 0; i < 4; ++i) {
        const int end = onset_frame(piece.notes[static_cast<size_t>(2 + 3 * i)]);
        pages.push_back(&piece.page);
        excerpts.push_back(excerpt(piece.spec, end));
        storage.push_back(build_target_mask(piece, end));
    }
    for (const TargetMask& m : storage) masks.push_back(&m);
    const Tensor page_t = pages_to_tensor(pages);
    const Tensor ex_t = excerpts_to_tensor(excerpts);
    const Tensor mask_t = masks_to_tensor(masks);

    ModelConfig mcfg;
    mcfg.base_filters = 4;
    mcfg.film_blocks = parse_film_blocks("C-G");
    Model model(mcfg, 61);
    AdamOptimizer opt(model.parameters(), 0.0);

    double loss_val = 1.0;
    int steps = 0;
    for (; steps < 2000; ++steps) {
        GradTape tape;
        Tensor pred = model.forward(&tape, page_t, ex_t, true);
        Tensor loss = dice_loss_mean(&tape, pred, mask_t, 1.0);
        loss_val = loss.data()[0];
        if (loss_val < 0.1) break;
        opt.zero_grad();
        tape.backward(loss);
        opt.step(0.001);
    }
    const double dt = seconds_since(t0);
    out.require(loss_val < 0.1,
                "dice " + std::to_string(loss_val) + " after " + std::to_string(steps) + " steps");
    out.require(dt < 900.0, "took " + std::to_string(dt) + "s, budget 900s");
    char buf[96];
    std::snprintf(buf, sizeof buf, "dice %.4f after %d steps (%.0fs)", loss_val, steps, dt);
    if (out.pass) out.detail = buf;
    return out;
}

// 7. Scaled-down end-to-end: conditioning must beat the baselines.
Outcome criterion_end_to_end() {
    Outcome out;
    const auto t0 = Clock::now();

    SynthConfig scfg;  // defaults: 48 pieces -> 32 train / 8 valid / 8 test
    const auto corpus = synth_generate(1, scfg);

    ModelConfig cg_cfg;
    cg_cfg.base_filters = 8;
    cg_cfg.film_blocks = parse_film_blocks("C-G");
    TrainConfig tcfg;
    tcfg.seed = 1;
    tcfg.max_epochs = 100;
    tcfg.val_stride = 4;

    const TrainResult cg = train(corpus, cg_cfg, tcfg);
    Model cg_model = model_from_checkpoint(cg.best);
    const EvalReport cg_eval = evaluate(corpus, Split::test, model_predictor(cg_model), "C-G");

    ModelConfig none_cfg = cg_cfg;
    none_cfg.film_blocks.clear();
    const TrainResult none = train(corpus, none_cfg, tcfg);

    const Predictor allpos = [](const Tensor& pages, const Tensor&) {
        return Tensor::full(pages.shape(), 1.0);
    };
    const EvalReport base = evaluate(corpus, Split::test, allpos, "all-positive");

    out.require(cg_eval.micro.f1 > base.micro.f1,
                "F1 " + std::to_string(cg_eval.micro.f1) + " <= baseline " +
                    std::to_string(base.micro.f1));
    out.require(cg_eval.micro.f1 > 0.5, "F1 " + std::to_string(cg_eval.micro.f1) + " <= 0.5");
    out.require(cg.best.val_loss <= none.best.val_loss,
                "C-G val " + std::to_string(cg.best.val_loss) + " > unconditioned val " +
                    std::to_string(none.best.val_loss));
    const double dt = seconds_since(t0);
    out.require(dt < 7200.0, "took " + std::to_string(dt) + "s, budget 7200s");
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "C-G F1 %.4f vs all-positive %.4f; val %.4f vs unconditioned %.4f (%.0fs)",
                  cg_eval.micro.f1, base.micro.f1, cg.best.val_loss, none.best.val_loss, dt);
    if (out.pass) out.detail = buf;
    return out;
}

// 8. Determinism and persistence.
Outcome criterion_determinism() {
    Outcome out;

    SynthConfig scfg;
    scfg.pieces = 6;
    scfg.notes_per_piece = 10;
    scfg.staves_per_page = 1;
    scfg.page_width = 96;
    scfg.note_x_step = 8;
    scfg.train_frac = 4.0 / 6.0;
    scfg.valid_frac = 1.0 / 6.0;
    const auto corpus = synth_generate(80, scfg);

    ModelConfig mcfg;
    mcfg.base_filters = 2;
    mcfg.film_blocks = parse_film_blocks("E");
    TrainConfig tcfg;
    tcfg.seed = 9;
    tcfg.max_epochs = 3;
    tcfg.batch_size = 4;
    tcfg.val_stride = 2;

    const TrainResult a = train(corpus, mcfg, tcfg);
    const TrainResult b = train(corpus, mcfg, tcfg);
    bool same = a.curve.size() == b.curve.size();
    if (same) {
        for (size_t i = 0; i < a.curve.size(); ++i) {
            same = same && a.curve[i].train_loss == b.curve[i].train_loss &&
                   a.curve[i].val_loss == b.curve[i].val_loss && a.curve[i].lr == b.curve[i].lr;
        }
    }
    out.require(same, "loss curves differ between identical runs");

    const fs::path dir = fs::temp_directory_path() / "acunet_acceptance";
    fs::create_directories(dir);
    const std::string path = (dir / "det.acun").string();
    save_checkpoint(path, a.best);
    const Checkpoint loaded = load_checkpoint(path);
    bool bitexact = loaded.tensors.size() == a.best.tensors.size();
    if (bitexact) {
        for (size_t i = 0; i < loaded.tensors.size(); ++i) {
            bitexact = bitexact &&
                       loaded.tensors[i].tensor.data() == a.best.tensors[i].tensor.data();
        }
    }
    out.require(bitexact, "checkpoint round-trip is not bit-exact");

    // ablate: default list produces exactly the seven published row labels
    TrainConfig ab_cfg = tcfg;
    ab_cfg.max_epochs = 1;
    const auto rows = ablation(corpus, default_ablation_sets(), mcfg, ab_cfg);
    const char* expected[] = {"FiLM Layers (E)",   "FiLM Layers (D-F)", "FiLM Layers (C-G)",
                              "FiLM Layers (B-H)", "FiLM Layers (A-I)", "FiLM Layers (A-E)",
                              "FiLM Layers (E-I)"};
    bool labels_ok = rows.size() == 7;
    for (size_t i = 0; labels_ok && i < rows.size(); ++i) {
        labels_ok = rows[i].label == expected[i];
    }
    out.require(labels_ok, "ablation rows do not match the seven published labels");
    fs::remove_all(dir);
    if (out.pass) out.detail = "curves bitwise equal, checkpoint exact, 7 ablation rows";
    return out;
}

// 9. Schedule conformance: lr halves through 0.001*2^-k, halting after five.
Outcome criterion_schedule() {
    Outcome out;
    PlateauScheduler s;
    s.lr = 0.001;
    s.observe(1.0);
    std::vector<double> lrs;
    int triggers = 0;
    while (!s.halt && triggers < 20) {
        s.observe(2.0);
        s.observe(2.0);
        ++triggers;
        lrs.push_back(s.lr);
    }
    out.require(triggers == 6, "halted after " + std::to_string(triggers) + " triggers, not 6");
    bool ladder = true;
    for (int k = 0; k < 5; ++k) {
        ladder = ladder && lrs[static_cast<size_t>(k)] == 0.001 / std::pow(2.0, k + 1);
    }
    out.require(ladder, "lr sequence is not 0.001*2^-k");
    out.require(s.lr == 0.001 / 32.0, "final lr is not 0.001/32");
    out.require(s.halvings == 5, "halvings != 5");
    if (out.pass) out.detail = "lr ladder 0.001*2^-k, halt after the fifth halving";
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    struct Criterion {
        int id;
        const char* name;
        Outcome (*fn)();
    };
    const Criterion criteria[] = {
        {1, "gradient integrity", criterion_gradients},
        {2, "film semantics", criterion_film},
        {3, "loss identities", criterion_loss},
        {4, "metric identities", criterion_metrics},
        {5, "architecture conformance", criterion_architecture},
        {6, "overfit check", criterion_overfit},
        {7, "scaled-down end-to-end", criterion_end_to_end},
        {8, "determinism and persistence", criterion_determinism},
        {9, "schedule conformance", criterion_schedule},
    };

    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const Criterion& c : criteria) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        const Outcome out = c.fn();
        std::printf("[%s] %d %s%s%s\n", out.pass ? "PASS" : "FAIL", c.id, c.name,
                    out.detail.empty() ? "" : ": ", out.detail.c_str());
        std::fflush(stdout);
        if (!out.pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
