#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "acunet/rng.h"
#include "acunet/train.h"

using namespace acunet;
namespace fs = std::filesystem;

TEST_CASE("dice loss identities") {
    // perfect overlap with smoothing: 1 - (2*2+1)/(2+2+1) = 0
    Tensor p = Tensor::from_vector({3}, {1, 0, 1});
    Tensor g = Tensor::from_vector({3}, {1, 0, 1});
    CHECK(dice_loss(nullptr, p, g, 1.0).data()[0] == 0.0);

    // disjoint: numerator 0 -> 1 - 1/(2+1+1) = 0.75
    Tensor p2 = Tensor::from_vector({3}, {1, 1, 0});
    Tensor g2 = Tensor::from_vector({3}, {0, 0, 1});
    CHECK(dice_loss(nullptr, p2, g2, 1.0).data()[0] == doctest::Approx(0.75).epsilon(1e-15));

    // without smoothing the disjoint case is exactly 1
    CHECK(dice_loss(nullptr, p2, g2, 0.0).data()[0] == 1.0);

    // p=[0.5,0.5], g=[1,0], no smoothing: 1 - 1/1.5 = 1/3
    Tensor p3 = Tensor::from_vector({2}, {0.5, 0.5});
    Tensor g3 = Tensor::from_vector({2}, {1, 0});
    CHECK(dice_loss(nullptr, p3, g3, 0.0).data()[0] ==
          doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    // all-empty pair is a perfect match under smoothing
    Tensor z = Tensor::zeros({4});
    CHECK(dice_loss(nullptr, z, z, 1.0).data()[0] == 0.0);

    Tensor bad = Tensor::zeros({5});
    CHECK_THROWS_AS(dice_loss(nullptr, p, bad, 1.0), DimensionError);
}

TEST_CASE("dice loss stays in [0,1] and vanishes only on matches") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor p = Tensor::zeros({20});
        Tensor g = Tensor::zeros({20});
        for (double& v : p.data()) v = rng.uniform01();
        for (double& v : g.data()) v = rng.uniform01() < 0.3 ? 1.0 : 0.0;
        const double d = dice_loss(nullptr, p, g, 1.0).data()[0];
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
    }
    // binary p == g, non-empty: loss <= 1e-12
    Tensor m = Tensor::zeros({50});
    for (double& v : m.data()) v = rng.uniform01() < 0.5 ? 1.0 : 0.0;
    m.data()[0] = 1.0;
    CHECK(dice_loss(nullptr, m, m, 1.0).data()[0] <= 1e-12);
}

TEST_CASE("dice gradient matches finite differences at 1e-6") {
    Rng rng(17);
    Tensor p = Tensor::zeros({12}, true);
    Tensor g = Tensor::zeros({12});
    for (double& v : p.data()) v = 0.05 + 0.9 * rng.uniform01();
    for (double& v : g.data()) v = rng.uniform01() < 0.4 ? 1.0 : 0.0;

    GradTape tape;
    Tensor loss = dice_loss(&tape, p, g, 1.0);
    tape.backward(loss);

    const double h = 1e-6;
    for (size_t i = 0; i < p.data().size(); ++i) {
        const double orig = p.data()[i];
        p.data()[i] = orig + h;
        const double f1 = dice_loss(nullptr, p, g, 1.0).data()[0];
        p.data()[i] = orig - h;
        const double f0 = dice_loss(nullptr, p, g, 1.0).data()[0];
        p.data()[i] = orig;
        const double fd = (f1 - f0) / (2 * h);
        CHECK(p.grad()[i] == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("dice punishes an all-background prediction where cross-entropy would not") {
    // 1% positives, p identically 0: dice is near-maximal, mean BCE is small
    const int n = 10000;
    Tensor p = Tensor::full({n}, 1e-4);
    Tensor g = Tensor::zeros({n});
    for (int i = 0; i < n / 100; ++i) g.data()[static_cast<size_t>(i)] = 1.0;

    const double dice = dice_loss(nullptr, p, g, 1.0).data()[0];
    CHECK(dice > 0.9);

    double bce = 0;
    for (int i = 0; i < n; ++i) {
        const double pi = p.data()[static_cast<size_t>(i)];
        const double gi = g.data()[static_cast<size_t>(i)];
        bce += -(gi * std::log(pi) + (1 - gi) * std::log(1 - pi));
    }
    bce /= n;
    CHECK(bce < 0.15);
}

TEST_CASE("adam first step and zero-grad behavior") {
    Tensor w = Tensor::from_vector({1}, {0.5}, true);
    AdamOptimizer opt({{"w", w, false, false}}, 0.0);
    w.ensure_grad();
    w.grad()[0] = 1.0;
    opt.step(0.001);
    // bias-corrected first step is -lr * g/(|g| + eps-ish)
    CHECK(w.data()[0] == doctest::Approx(0.5 - 0.001).epsilon(1e-6));

    Tensor v = Tensor::from_vector({3}, {1, 2, 3}, true);
    AdamOptimizer opt2({{"v", v, false, false}}, 0.0);
    v.ensure_grad();
    opt2.step(0.01);
    CHECK(v.data() == std::vector<double>{1, 2, 3});
}

TEST_CASE("adam step is antisymmetric in the gradient at fresh state") {
    auto one_step = [](double g) {
        Tensor w = Tensor::from_vector({1}, {0.0}, true);
        AdamOptimizer opt({{"w", w, false, false}}, 0.0);
        w.ensure_grad();
        w.grad()[0] = g;
        opt.step(0.001);
        return w.data()[0];
    };
    for (double g : {0.1, 1.0, 7.5}) {
        CHECK(one_step(g) == doctest::Approx(-one_step(-g)).epsilon(1e-12));
    }
}

TEST_CASE("adam converges on a 1-D quadratic") {
    // f(w) = (w-3)^2, grad = 2(w-3)
    Tensor w = Tensor::from_vector({1}, {0.0}, true);
    AdamOptimizer opt({{"w", w, false, false}}, 0.0);
    for (int step = 0; step < 5000; ++step) {
        w.ensure_grad();
        w.grad()[0] = 2.0 * (w.data()[0] - 3.0);
        opt.step(0.01);
        w.zero_grad();
    }
    CHECK(std::abs(w.data()[0] - 3.0) < 1e-3);
}

TEST_CASE("adam fails fast on non-finite gradients") {
    Tensor w = Tensor::from_vector({1}, {0.0}, true);
    AdamOptimizer opt({{"w", w, false, false}}, 0.0);
    w.ensure_grad();
    w.grad()[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(opt.step(0.001), TrainingError);
}

TEST_CASE("weight decay applies only to decay-marked tensors") {
    Tensor w = Tensor::from_vector({1}, {2.0}, true);
    Tensor b = Tensor::from_vector({1}, {2.0}, true);
    AdamOptimizer opt({{"w", w, true, false}, {"b", b, false, false}}, 0.1);
    w.ensure_grad();
    b.ensure_grad();
    opt.step(0.001);
    CHECK(w.data()[0] < 2.0);   // decay pulls toward zero
    CHECK(b.data()[0] == 2.0);  // no decay, no gradient
}

TEST_CASE("plateau schedule halves and halts") {
    SUBCASE("monotone improvement leaves lr unchanged") {
        PlateauScheduler s;
        s.lr = 0.001;
        for (double v : {1.0, 0.9, 0.8}) s.observe(v);
        CHECK(s.lr == 0.001);
        CHECK(s.halvings == 0);
    }
    SUBCASE("two non-improving epochs halve") {
        PlateauScheduler s;
        s.lr = 0.001;
        for (double v : {1.0, 1.1, 1.2}) s.observe(v);
        CHECK(s.lr == 0.0005);
        CHECK(s.halvings == 1);
        CHECK_FALSE(s.halt);
    }
    SUBCASE("equal losses count as non-improving") {
        PlateauScheduler s;
        s.lr = 0.001;
        for (double v : {1.0, 1.0, 1.0}) s.observe(v);
        CHECK(s.lr == 0.0005);
    }
    SUBCASE("the sixth trigger halts with lr still 2^-5 of the start") {
        PlateauScheduler s;
        s.lr = 0.001;
        s.observe(0.5);
        int triggers = 0;
        while (!s.halt) {
            s.observe(1.0);
            s.observe(1.0);
            ++triggers;
            CHECK(triggers <= 6);
        }
        CHECK(triggers == 6);
        CHECK(s.halvings == 5);
        CHECK(s.lr == doctest::Approx(0.001 / 32.0).epsilon(1e-12));
    }
}

TEST_CASE("checkpoint round-trip is bit-exact; corrupt files rejected") {
    ModelConfig mcfg;
    mcfg.base_filters = 2;
    mcfg.film_blocks = parse_film_blocks("D-F");
    Model model(mcfg, 31);
    TrainConfig tcfg;
    tcfg.seed = 77;

    const fs::path dir = fs::temp_directory_path() / "acunet_ckpt_test";
    fs::create_directories(dir);
    const std::string path = (dir / "m.acun").string();

    Checkpoint cp = snapshot(model, tcfg, 12, 0.25);
    save_checkpoint(path, cp);
    const Checkpoint loaded = load_checkpoint(path);

    CHECK(loaded.epoch == 12);
    CHECK(loaded.val_loss == 0.25);
    CHECK(loaded.model_config.base_filters == 2);
    CHECK(loaded.model_config.film_blocks == mcfg.film_blocks);
    CHECK(loaded.train_config.seed == 77);
    REQUIRE(loaded.tensors.size() == cp.tensors.size());
    for (size_t i = 0; i < cp.tensors.size(); ++i) {
        CHECK(loaded.tensors[i].name == cp.tensors[i].name);
        CHECK(loaded.tensors[i].tensor.shape() == cp.tensors[i].tensor.shape());
        CHECK(loaded.tensors[i].tensor.data() == cp.tensors[i].tensor.data());  // bitwise
    }

    // rebuilding from the checkpoint reproduces the model parameters
    Model rebuilt = model_from_checkpoint(loaded);
    auto pa = model.parameters();
    auto pb = rebuilt.parameters();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].tensor.data() == pb[i].tensor.data());

    SUBCASE("wrong magic bytes") {
        const std::string bad = (dir / "bad.acun").string();
        std::ofstream f(bad, std::ios::binary);
        f << "NOPE this is not a checkpoint";
        f.close();
        CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
    }
    SUBCASE("truncated file") {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        in.close();
        const std::string cut = (dir / "cut.acun").string();
        std::ofstream f(cut, std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        f.close();
        CHECK_THROWS_AS(load_checkpoint(cut), CheckpointError);
    }
    SUBCASE("mismatched config names the parameter") {
        ModelConfig other = mcfg;
        other.base_filters = 4;
        Model wrong(other, 1);
        CHECK_THROWS_WITH_AS(apply_checkpoint(wrong, cp), doctest::Contains("unet.A"),
                             CheckpointError);
    }
    fs::remove_all(dir);
}

namespace {

std::vector<Piece> tiny_corpus(uint64_t seed) {
    SynthConfig cfg;
    cfg.pieces = 6;
    cfg.notes_per_piece = 10;
    cfg.staves_per_page = 1;
    cfg.page_width = 96;
    cfg.note_x_step = 8;
    cfg.train_frac = 4.0 / 6.0;
    cfg.valid_frac = 2.0 / 6.0;  // 4 train / 2 valid / 0 test
    return synth_generate(seed, cfg);
}

}  // namespace

TEST_CASE("training is deterministic and tracks the best checkpoint") {
    const auto corpus = tiny_corpus(55);
    ModelConfig mcfg;
    mcfg.base_filters = 2;
    mcfg.film_blocks = parse_film_blocks("E");
    TrainConfig tcfg;
    tcfg.seed = 5;
    tcfg.max_epochs = 3;
    tcfg.batch_size = 4;
    tcfg.val_stride = 2;

    const TrainResult a = train(corpus, mcfg, tcfg);
    const TrainResult b = train(corpus, mcfg, tcfg);
    REQUIRE(a.curve.size() == b.curve.size());
    for (size_t i = 0; i < a.curve.size(); ++i) {
        CHECK(a.curve[i].train_loss == b.curve[i].train_loss);  // bitwise
        CHECK(a.curve[i].val_loss == b.curve[i].val_loss);
        CHECK(a.curve[i].lr == b.curve[i].lr);
    }

    double min_val = 1e300;
    for (const EpochStats& e : a.curve) min_val = std::min(min_val, e.val_loss);
    CHECK(a.best.val_loss == min_val);

    SUBCASE("empty splits are config errors") {
        std::vector<Piece> no_valid;
        for (const Piece& p : corpus) {
            if (p.split == Split::train) no_valid.push_back(p);
        }
        CHECK_THROWS_AS(train(no_valid, mcfg, tcfg), ConfigError);
    }
}

TEST_CASE("training writes the loss-curve log") {
    const auto corpus = tiny_corpus(56);
    ModelConfig mcfg;
    mcfg.base_filters = 2;
    TrainConfig tcfg;
    tcfg.seed = 6;
    tcfg.max_epochs = 2;
    tcfg.batch_size = 4;
    tcfg.val_stride = 2;

    const fs::path dir = fs::temp_directory_path() / "acunet_train_log";
    fs::create_directories(dir);
    const std::string log = (dir / "log.csv").string();
    const TrainResult r = train(corpus, mcfg, tcfg, log);

    std::ifstream f(log);
    std::string header;
    std::getline(f, header);
    CHECK(header == "epoch,train_loss,val_loss,lr");
    int rows = 0;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == static_cast<int>(r.curve.size()));
    fs::remove_all(dir);
}

TEST_CASE("a few steps of training reduce the loss on a fixed batch") {
    // tiny smoke check; the full overfit run lives in the acceptance suite
    const auto corpus = tiny_corpus(57);
    const Piece& piece = corpus[0];

    ModelConfig mcfg;
    mcfg.base_filters = 2;
    mcfg.film_blocks = parse_film_blocks("C-G");
    Model model(mcfg, 3);
    AdamOptimizer opt(model.parameters(), 0.0);

    std::vector<const ScorePage*> pages;
    std::vector<AudioExcerpt> excerpts;
    std::vector<const TargetMask*> masks;
    std::vector<TargetMask> storage;
    for (int i = 0; i < 2; ++i) {
        const int end = onset_frame(piece.notes[static_cast<size_t>(3 + 3 * i)]);
        pages.push_back(&piece.page);
        excerpts.push_back(excerpt(piece.spec, end));
        storage.push_back(build_target_mask(piece, end));
    }
    for (const TargetMask& m : storage) masks.push_back(&m);
    const Tensor page_t = pages_to_tensor(pages);
    const Tensor ex_t = excerpts_to_tensor(excerpts);
    const Tensor mask_t = masks_to_tensor(masks);

    double first = 0, last = 0;
    for (int step = 0; step < 30; ++step) {
        GradTape tape;
        Tensor pred = model.forward(&tape, page_t, ex_t, true);
        Tensor loss = dice_loss_mean(&tape, pred, mask_t, 1.0);
        if (step == 0) first = loss.data()[0];
        last = loss.data()[0];
        opt.zero_grad();
        tape.backward(loss);
        opt.step(0.001);
    }
    CHECK(last < first);
}
