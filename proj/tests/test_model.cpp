#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>

#include "acunet/gradcheck.h"
#include "acunet/model.h"
#include "acunet/rng.h"

using namespace acunet;

namespace {

Tensor rand_tensor(std::vector<int> shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) v = lo + (hi - lo) * rng.uniform01();
    return t;
}

}  // namespace

TEST_CASE("film identity and arithmetic") {
    Tensor x = Tensor::from_vector({1, 1, 1, 2}, {1, 2});

    Tensor g1 = Tensor::full({1, 1}, 1.0);
    Tensor b0 = Tensor::zeros({1, 1});
    CHECK(film(nullptr, x, g1, b0).data() == std::vector<double>{1, 2});

    Tensor g2 = Tensor::full({1, 1}, 2.0);
    Tensor bm1 = Tensor::full({1, 1}, -1.0);
    CHECK(film(nullptr, x, g2, bm1).data() == std::vector<double>{1, 3});

    Tensor bad = Tensor::zeros({1, 3});
    CHECK_THROWS_AS(film(nullptr, x, bad, b0), DimensionError);
}

TEST_CASE("film blocks parse and format") {
    CHECK(parse_film_blocks("C-G") == std::set<char>{'C', 'D', 'E', 'F', 'G'});
    CHECK(parse_film_blocks("E") == std::set<char>{'E'});
    CHECK(parse_film_blocks("A,C,E") == std::set<char>{'A', 'C', 'E'});
    CHECK(parse_film_blocks("none").empty());
    CHECK(parse_film_blocks("FiLM Layers (C-G)") == parse_film_blocks("C-G"));
    CHECK(format_film_blocks(parse_film_blocks("C-G")) == "C-G");
    CHECK(format_film_blocks(parse_film_blocks("A,C,E")) == "A,C,E");
    CHECK(format_film_blocks({}) == "none");
    CHECK_THROWS_AS(parse_film_blocks("C-Z"), ConfigError);
    CHECK_THROWS_AS(parse_film_blocks("Q"), ConfigError);
    for (const char* s : {"E", "D-F", "C-G", "B-H", "A-I", "A-E", "E-I"}) {
        CHECK(format_film_blocks(parse_film_blocks(s)) == s);
    }
}

TEST_CASE("encoder output is 128-dim with the documented shape trace") {
    ModelConfig cfg;
    cfg.base_filters = 2;
    Model model(cfg, 3);
    Rng rng(4);
    Tensor ex = rand_tensor({2, 1, 78, 40}, rng, 0, 2);
    EncoderTrace trace;
    Tensor z = model.encode(nullptr, ex, false, &trace);
    CHECK(z.shape() == std::vector<int>{2, 128});

    REQUIRE(trace.conv_shapes.size() == 7);
    CHECK(trace.conv_shapes[0] == std::array<int, 2>{78, 40});
    CHECK(trace.conv_shapes[1] == std::array<int, 2>{78, 40});
    CHECK(trace.conv_shapes[2] == std::array<int, 2>{39, 20});
    CHECK(trace.conv_shapes[3] == std::array<int, 2>{39, 20});
    CHECK(trace.conv_shapes[4] == std::array<int, 2>{20, 10});
    CHECK(trace.conv_shapes[5] == std::array<int, 2>{10, 5});
    CHECK(trace.conv_shapes[6] == std::array<int, 2>{10, 5});

    // two different excerpts should not collapse to the same encoding
    Tensor ex2 = rand_tensor({2, 1, 78, 40}, rng, 0, 2);
    Tensor z2 = model.encode(nullptr, ex2, false);
    bool differs = false;
    for (size_t i = 0; i < z.data().size(); ++i) {
        if (z.data()[i] != z2.data()[i]) differs = true;
    }
    CHECK(differs);

    Tensor wrong = rand_tensor({1, 1, 78, 39}, rng);
    CHECK_THROWS_AS(model.encode(nullptr, wrong, false), DimensionError);
}

TEST_CASE("block filter counts follow the 8..128..8 ladder") {
    ModelConfig cfg;
    CHECK(cfg.filters_of('A') == 8);
    CHECK(cfg.filters_of('B') == 16);
    CHECK(cfg.filters_of('C') == 32);
    CHECK(cfg.filters_of('D') == 64);
    CHECK(cfg.filters_of('E') == 128);
    CHECK(cfg.filters_of('F') == 64);
    CHECK(cfg.filters_of('G') == 32);
    CHECK(cfg.filters_of('H') == 16);
    CHECK(cfg.filters_of('I') == 8);

    cfg.film_blocks = parse_film_blocks("C-G");
    Model model(cfg, 1);
    std::map<std::string, std::vector<int>> shapes;
    for (const ParamRef& p : model.parameters()) shapes[p.name] = p.tensor.shape();
    CHECK(shapes.at("unet.A.conv2.weight") == std::vector<int>{8, 8, 3, 3});
    CHECK(shapes.at("unet.B.conv2.weight") == std::vector<int>{16, 16, 3, 3});
    CHECK(shapes.at("unet.E.conv2.weight") == std::vector<int>{128, 128, 3, 3});
    CHECK(shapes.at("unet.I.conv2.weight") == std::vector<int>{8, 8, 3, 3});
    CHECK(shapes.at("unet.F.upsample.weight") == std::vector<int>{128, 64, 2, 2});
    CHECK(shapes.at("unet.C.film.gamma.weight") == std::vector<int>{32, 128});
    CHECK(shapes.count("unet.A.film.gamma.weight") == 0);
    CHECK(shapes.at("head.weight") == std::vector<int>{1, 8, 1, 1});
}

TEST_CASE("film_blocks=none has zero FiLM parameters; invalid labels rejected") {
    ModelConfig cfg;
    Model model(cfg, 1);
    for (const ParamRef& p : model.parameters()) {
        CHECK(p.name.find("film") == std::string::npos);
    }
    ModelConfig bad;
    bad.film_blocks = {'Z'};
    CHECK_THROWS_AS(Model(bad, 1), ConfigError);
}

TEST_CASE("same seed builds identical parameters") {
    ModelConfig cfg;
    cfg.base_filters = 4;
    cfg.film_blocks = parse_film_blocks("C-G");
    Model a(cfg, 42);
    Model b(cfg, 42);
    auto pa = a.parameters();
    auto pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(pa[i].tensor.data() == pb[i].tensor.data());
    }
    CHECK(a.num_parameters() == b.num_parameters());

    // biases start at zero, batch-norm running stats at (0, 1)
    for (const ParamRef& p : pa) {
        if (p.name.ends_with(".bias")) {
            for (double v : p.tensor.data()) CHECK(v == 0.0);
        }
        if (p.name.ends_with(".running_var")) {
            for (double v : p.tensor.data()) CHECK(v == 1.0);
        }
    }
}

TEST_CASE("forward pads to multiples of 16 and crops back") {
    ModelConfig cfg;
    cfg.base_filters = 2;
    cfg.film_blocks = parse_film_blocks("C-G");
    Model model(cfg, 7);
    Rng rng(11);

    // 393x278 pads to 400x288 internally; output crops back
    Tensor page = rand_tensor({1, 1, 393, 278}, rng);
    Tensor ex = rand_tensor({1, 1, 78, 40}, rng, 0, 2);
    Tensor out = model.forward(nullptr, page, ex, false);
    CHECK(out.shape() == std::vector<int>{1, 1, 393, 278});
    for (double v : out.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("fully convolutional: same parameters run on different page sizes") {
    ModelConfig cfg;
    cfg.base_filters = 2;
    cfg.film_blocks = parse_film_blocks("E");
    Model model(cfg, 9);
    Rng rng(12);
    Tensor ex = rand_tensor({1, 1, 78, 40}, rng, 0, 2);

    Tensor small = rand_tensor({1, 1, 64, 48}, rng);
    Tensor out1 = model.forward(nullptr, small, ex, false);
    CHECK(out1.shape() == std::vector<int>{1, 1, 64, 48});

    Tensor big = rand_tensor({1, 1, 96, 112}, rng);
    Tensor out2 = model.forward(nullptr, big, ex, false);
    CHECK(out2.shape() == std::vector<int>{1, 1, 96, 112});
}

TEST_CASE("identity-initialized FiLM severs the conditioning") {
    ModelConfig cfg;
    cfg.base_filters = 2;
    cfg.film_blocks = parse_film_blocks("C-G");
    cfg.film_identity_init = true;  // gamma == 1, beta == 0 exactly
    Model model(cfg, 21);
    Rng rng(22);

    Tensor page = rand_tensor({1, 1, 48, 32}, rng);
    Tensor e1 = rand_tensor({1, 1, 78, 40}, rng, 0, 2);
    Tensor e2 = rand_tensor({1, 1, 78, 40}, rng, 0, 2);
    Tensor o1 = model.forward(nullptr, page, e1, false);
    Tensor o2 = model.forward(nullptr, page, e2, false);
    CHECK(o1.data() == o2.data());  // bitwise
}

TEST_CASE("orthogonally-initialized FiLM responds to the excerpt") {
    ModelConfig cfg;
    cfg.base_filters = 2;
    cfg.film_blocks = parse_film_blocks("C-G");
    Model model(cfg, 23);
    Rng rng(24);

    Tensor page = rand_tensor({1, 1, 48, 32}, rng);
    Tensor e1 = rand_tensor({1, 1, 78, 40}, rng, 0, 2);
    Tensor e2 = rand_tensor({1, 1, 78, 40}, rng, 0, 2);
    Tensor o1 = model.forward(nullptr, page, e1, false);
    Tensor o2 = model.forward(nullptr, page, e2, false);
    bool differs = false;
    for (size_t i = 0; i < o1.data().size(); ++i) {
        if (o1.data()[i] != o2.data()[i]) differs = true;
    }
    CHECK(differs);
}

TEST_CASE("batch size mismatch and bad shapes raise dimension errors") {
    ModelConfig cfg;
    cfg.base_filters = 2;
    Model model(cfg, 2);
    Rng rng(3);
    Tensor page = rand_tensor({2, 1, 32, 32}, rng);
    Tensor ex = rand_tensor({1, 1, 78, 40}, rng);
    CHECK_THROWS_AS(model.forward(nullptr, page, ex, false), DimensionError);
    Tensor flat = rand_tensor({2, 32, 32}, rng);
    CHECK_THROWS_AS(model.forward(nullptr, flat, ex, false), DimensionError);
}

TEST_CASE("full tiny model matches finite differences") {
    const GradCheckReport report = gradcheck_full_model(614);
    for (const std::string& f : report.failures) MESSAGE(f);
    CHECK(report.failures.empty());
    CHECK(report.checks > 100);
}

TEST_CASE("model clone is independent of the original") {
    ModelConfig cfg;
    cfg.base_filters = 2;
    cfg.film_blocks = parse_film_blocks("D-F");
    Model a(cfg, 5);
    Model b = a.clone();
    auto pa = a.parameters();
    auto pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    pb[0].tensor.data()[0] += 1.0;
    CHECK(pa[0].tensor.data()[0] != pb[0].tensor.data()[0]);
}
