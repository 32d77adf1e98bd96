#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace acunet {

struct GradCheckReport {
    int checks = 0;
    std::vector<std::string> failures;
    bool ok() const { return failures.empty(); }
};

// Central finite differences (h = 1e-5) against the tape gradients, at
// least 20 randomized trials per differentiable op.
GradCheckReport gradcheck_ops(uint64_t seed);

// Full tiny model (base_filters 2, 48x32 pages, FiLM C-G, batch 2): every
// parameter tensor sampled and checked against finite differences of the
// dice loss.
GradCheckReport gradcheck_full_model(uint64_t seed);

// Runs both suites, printing one line per section to `os`; returns true
// when everything passed.
bool run_gradcheck(uint64_t seed, std::ostream& os);

}  // namespace acunet
