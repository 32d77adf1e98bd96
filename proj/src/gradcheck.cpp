#include "acunet/gradcheck.h"

#include <cmath>
#include <cstdio>
#include <functional>

#include "acunet/model.h"
#include "acunet/rng.h"
#include "acunet/tensor.h"
#include "acunet/train.h"

namespace acunet {

namespace {

constexpr double kH = 1e-5;
constexpr double kRelTol = 1e-4;
constexpr double kAbsTol = 1e-7;

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                     bool rg = true) {
    Tensor t = Tensor::zeros(std::move(shape), rg);
    for (double& v : t.data()) v = lo + (hi - lo) * rng.uniform01();
    return t;
}

// Checks analytic gradients of `loss_fn` (a pure function of the current
// tensor values) against central differences on sampled entries.
void fd_check(GradCheckReport& report, const std::string& label,
              const std::vector<std::pair<std::string, Tensor>>& tensors,
              const std::function<Tensor(GradTape*)>& loss_fn, Rng& rng,
              int samples_per_tensor = 3) {
    GradTape tape;
    Tensor loss = loss_fn(&tape);
    tape.backward(loss);

    for (const auto& [name, t] : tensors) {
        Tensor tensor = t;
        const int64_t n = tensor.numel();
        for (int s = 0; s < samples_per_tensor; ++s) {
            const int64_t idx =
                s == 0 ? 0
                       : static_cast<int64_t>(rng.uniform01() * static_cast<double>(n));
            const size_t i = static_cast<size_t>(std::min(idx, n - 1));
            const double orig = tensor.data()[i];
            tensor.data()[i] = orig + kH;
            const double f1 = loss_fn(nullptr).data()[0];
            tensor.data()[i] = orig - kH;
            const double f0 = loss_fn(nullptr).data()[0];
            tensor.data()[i] = orig;
            const double fd = (f1 - f0) / (2.0 * kH);
            const double an = tensor.has_grad() ? tensor.grad()[i] : 0.0;
            ++report.checks;
            const double tol = kRelTol * std::max(std::abs(an), std::abs(fd)) + kAbsTol;
            if (std::abs(an - fd) > tol) {
                char buf[256];
                std::snprintf(buf, sizeof buf, "%s %s[%lld]: analytic %.10g vs fd %.10g",
                              label.c_str(), name.c_str(), static_cast<long long>(i), an, fd);
                report.failures.push_back(buf);
            }
        }
    }
}

// Scalar loss sum(out * R) with a fixed random weighting R, so output
// gradients are non-trivial.
Tensor weighted_sum(GradTape* tape, const Tensor& out, const Tensor& r) {
    return sum(tape, mul(tape, out, r));
}

}  // namespace

GradCheckReport gradcheck_ops(uint64_t seed) {
    tune_allocator();
    GradCheckReport report;
    Rng rng(seed);
    constexpr int kTrials = 20;

    for (int trial = 0; trial < kTrials; ++trial) {
        {  // conv2d, stride 1 and 2
            const int stride = 1 + trial % 2;
            Tensor x = random_tensor({2, 3, 6, 6}, rng);
            Tensor w = random_tensor({4, 3, 3, 3}, rng);
            Tensor b = random_tensor({4}, rng);
            Tensor out0 = conv2d(nullptr, x, w, b, stride, 1);
            Tensor r = random_tensor(out0.shape(), rng, -1, 1, false);
            auto loss = [&](GradTape* t) {
                return weighted_sum(t, conv2d(t, x, w, b, stride, 1), r);
            };
            fd_check(report, "conv2d/s" + std::to_string(stride),
                     {{"input", x}, {"weight", w}, {"bias", b}}, loss, rng);
        }
        {  // conv_transpose2d
            Tensor x = random_tensor({2, 3, 4, 5}, rng);
            Tensor w = random_tensor({3, 2, 2, 2}, rng);
            Tensor b = random_tensor({2}, rng);
            Tensor r = random_tensor({2, 2, 8, 10}, rng, -1, 1, false);
            auto loss = [&](GradTape* t) {
                return weighted_sum(t, conv_transpose2d(t, x, w, b), r);
            };
            fd_check(report, "conv_transpose2d", {{"input", x}, {"weight", w}, {"bias", b}}, loss,
                     rng);
        }
        {  // max_pool2d
            Tensor x = random_tensor({1, 2, 6, 6}, rng);
            Tensor r = random_tensor({1, 2, 3, 3}, rng, -1, 1, false);
            auto loss = [&](GradTape* t) { return weighted_sum(t, max_pool2d(t, x), r); };
            fd_check(report, "max_pool2d", {{"input", x}}, loss, rng);
        }
        {  // batch_norm, training and eval mode
            const bool training = trial % 2 == 0;
            Tensor x = random_tensor({3, 4, 2, 2}, rng);
            BatchNormParams bn = make_batch_norm(4);
            for (double& v : bn.scale.data()) v = 0.5 + rng.uniform01();
            for (double& v : bn.shift.data()) v = rng.uniform01() - 0.5;
            for (double& v : bn.running_mean.data()) v = rng.uniform01() - 0.5;
            for (double& v : bn.running_var.data()) v = 0.5 + rng.uniform01();
            Tensor r = random_tensor({3, 4, 2, 2}, rng, -1, 1, false);
            auto loss = [&](GradTape* t) {
                return weighted_sum(t, batch_norm(t, x, bn, training), r);
            };
            fd_check(report, training ? "batch_norm/train" : "batch_norm/eval",
                     {{"input", x}, {"scale", bn.scale}, {"shift", bn.shift}}, loss, rng);
        }
        {  // elu
            Tensor x = random_tensor({2, 3, 4}, rng, -2, 2);
            Tensor r = random_tensor({2, 3, 4}, rng, -1, 1, false);
            auto loss = [&](GradTape* t) { return weighted_sum(t, elu(t, x), r); };
            fd_check(report, "elu", {{"input", x}}, loss, rng);
        }
        {  // sigmoid
            Tensor x = random_tensor({2, 5}, rng, -4, 4);
            Tensor r = random_tensor({2, 5}, rng, -1, 1, false);
            auto loss = [&](GradTape* t) { return weighted_sum(t, sigmoid(t, x), r); };
            fd_check(report, "sigmoid", {{"input", x}}, loss, rng);
        }
        {  // linear
            Tensor x = random_tensor({3, 5}, rng);
            Tensor w = random_tensor({4, 5}, rng);
            Tensor b = random_tensor({4}, rng);
            Tensor r = random_tensor({3, 4}, rng, -1, 1, false);
            auto loss = [&](GradTape* t) { return weighted_sum(t, linear(t, x, w, b), r); };
            fd_check(report, "linear", {{"input", x}, {"weight", w}, {"bias", b}}, loss, rng);
        }
        {  // film
            Tensor x = random_tensor({2, 3, 4, 4}, rng);
            Tensor g = random_tensor({2, 3}, rng);
            Tensor be = random_tensor({2, 3}, rng);
            Tensor r = random_tensor({2, 3, 4, 4}, rng, -1, 1, false);
            auto loss = [&](GradTape* t) { return weighted_sum(t, film(t, x, g, be), r); };
            fd_check(report, "film", {{"input", x}, {"gamma", g}, {"beta", be}}, loss, rng);
        }
        {  // dice loss
            Tensor p = random_tensor({2, 1, 4, 4}, rng, 0.05, 0.95);
            Tensor g = Tensor::zeros({2, 1, 4, 4});
            for (double& v : g.data()) v = rng.uniform01() < 0.3 ? 1.0 : 0.0;
            auto loss = [&](GradTape* t) { return dice_loss_mean(t, p, g, 1.0); };
            fd_check(report, "dice", {{"p", p}}, loss, rng);
        }
        {  // residual add + crop/pad path
            Tensor a = random_tensor({1, 2, 4, 4}, rng);
            Tensor b = random_tensor({1, 2, 4, 4}, rng);
            Tensor r = random_tensor({1, 2, 3, 3}, rng, -1, 1, false);
            auto loss = [&](GradTape* t) {
                return weighted_sum(t, crop2d(t, pad2d(t, add(t, a, b), 6, 6), 3, 3), r);
            };
            fd_check(report, "add/pad/crop", {{"a", a}, {"b", b}}, loss, rng);
        }
    }
    return report;
}

GradCheckReport gradcheck_full_model(uint64_t seed) {
    tune_allocator();
    GradCheckReport report;
    Rng rng(seed + 17);

    ModelConfig mcfg;
    mcfg.base_filters = 2;
    mcfg.film_blocks = parse_film_blocks("C-G");
    Model model(mcfg, seed + 1);

    Tensor pages = random_tensor({2, 1, 48, 32}, rng, 0.0, 1.0, false);
    Tensor excerpts = random_tensor({2, 1, 78, 40}, rng, 0.0, 2.0, false);
    Tensor mask = Tensor::zeros({2, 1, 48, 32});
    for (double& v : mask.data()) v = rng.uniform01() < 0.15 ? 1.0 : 0.0;

    auto loss = [&](GradTape* t) {
        return dice_loss_mean(t, model.forward(t, pages, excerpts, true), mask, 1.0);
    };

    std::vector<std::pair<std::string, Tensor>> tensors;
    for (const ParamRef& p : model.parameters()) {
        if (!p.buffer) tensors.push_back({p.name, p.tensor});
    }
    fd_check(report, "model", tensors, loss, rng, 4);
    return report;
}

bool run_gradcheck(uint64_t seed, std::ostream& os) {
    const GradCheckReport ops = gradcheck_ops(seed);
    os << "op gradients:    " << (ops.ok() ? "PASS" : "FAIL") << " (" << ops.checks
       << " checks)\n";
    for (const std::string& f : ops.failures) os << "  " << f << "\n";

    const GradCheckReport full = gradcheck_full_model(seed);
    os << "full model:      " << (full.ok() ? "PASS" : "FAIL") << " (" << full.checks
       << " checks)\n";
    for (const std::string& f : full.failures) os << "  " << f << "\n";
    return ops.ok() && full.ok();
}

}  // namespace acunet
