#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace cbf {

inline constexpr double kGradientTolerance = 1e-4;
inline constexpr double kGradientStep = 1e-6;

struct GradientReport {
    // Worst relative error per primitive (or "end_to_end") over all seeds.
    std::map<std::string, double> max_rel_error;
    std::size_t checked = 0;
    std::size_t flagged = 0;  // kink coordinates excluded from the maximum

    double worst() const;
    bool passed(double tolerance = kGradientTolerance) const { return worst() <= tolerance; }
};

// Every differentiable primitive, on random inputs drawn from each seed in
// [first_seed, first_seed + seeds).
GradientReport primitive_gradients(std::uint64_t first_seed, std::size_t seeds);

// total_loss of a d_model = 8 bottleneck model (feed-forward bottleneck on
// even seeds, attention on odd ones) against every parameter tensor, probing
// `coordinates` random entries of each.
GradientReport end_to_end_gradients(std::uint64_t first_seed, std::size_t seeds, std::size_t coordinates = 2);

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// Gradient, CKA and decomposition suites; `on_result` sees each as it ends.
std::vector<SuiteResult> run_selfcheck(const std::function<void(const SuiteResult&)>& on_result = {});

}  // namespace cbf
