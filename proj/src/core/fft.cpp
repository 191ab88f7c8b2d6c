#include "cbformer/fft.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <stdexcept>

namespace cbf::fft {
namespace {

struct Plan {
    std::size_t n = 0;
    std::vector<std::size_t> factors;
    std::vector<cplx> twiddles;  // exp(-2 pi i j / n)
};

std::shared_ptr<const Plan> plan_for(std::size_t n) {
    thread_local std::map<std::size_t, std::shared_ptr<const Plan>> cache;
    if (auto it = cache.find(n); it != cache.end()) return it->second;
    auto plan = std::make_shared<Plan>();
    plan->n = n;
    std::size_t rest = n;
    for (std::size_t f = 2; f * f <= rest; ++f) {
        while (rest % f == 0) {
            plan->factors.push_back(f);
            rest /= f;
        }
    }
    if (rest > 1) plan->factors.push_back(rest);
    if (plan->factors.empty()) plan->factors.push_back(1);
    plan->twiddles.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double angle = -2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
        plan->twiddles[j] = {std::cos(angle), std::sin(angle)};
    }
    cache.emplace(n, plan);
    return plan;
}

void transform(const Plan& plan, const cplx* in, std::size_t in_stride, cplx* out, std::size_t n,
               std::size_t tw_step, std::size_t fi, bool inv) {
    const std::size_t p = plan.factors[fi];
    const std::size_t m = n / p;
    if (m == 1) {
        for (std::size_t q = 0; q < p; ++q) out[q] = in[q * in_stride];
    } else {
        for (std::size_t q = 0; q < p; ++q) {
            transform(plan, in + q * in_stride, in_stride * p, out + q * m, m, tw_step * p, fi + 1, inv);
        }
    }
    if (p == 1) return;

    const std::size_t big_n = plan.n;
    auto w = [&](std::size_t j) {
        const cplx v = plan.twiddles[j % big_n];
        return inv ? std::conj(v) : v;
    };
    cplx small[16];
    std::vector<cplx> large;
    cplx* t = small;
    if (p > 16) {
        large.resize(p);
        t = large.data();
    }
    for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t q = 0; q < p; ++q) t[q] = out[q * m + k] * w(q * k * tw_step);
        if (p == 2) {
            out[k] = t[0] + t[1];
            out[k + m] = t[0] - t[1];
            continue;
        }
        for (std::size_t r = 0; r < p; ++r) {
            cplx acc = t[0];
            for (std::size_t q = 1; q < p; ++q) acc += t[q] * w(q * r * m * tw_step);
            out[k + r * m] = acc;
        }
    }
}

std::vector<cplx> run(std::span<const cplx> input, bool inv) {
    const std::size_t n = input.size();
    if (n == 0) return {};
    auto plan = plan_for(n);
    std::vector<cplx> out(n);
    transform(*plan, input.data(), 1, out.data(), n, 1, 0, inv);
    if (inv) {
        const double scale = 1.0 / static_cast<double>(n);
        for (auto& v : out) v *= scale;
    }
    return out;
}

}  // namespace

std::vector<cplx> forward(std::span<const cplx> input) { return run(input, false); }

std::vector<cplx> inverse(std::span<const cplx> input) { return run(input, true); }

std::vector<cplx> rfft(std::span<const double> input) {
    std::vector<cplx> c(input.begin(), input.end());
    auto full = forward(c);
    full.resize(input.size() / 2 + 1);
    return full;
}

std::vector<double> irfft(std::span<const cplx> half_spectrum, std::size_t n) {
    if (half_spectrum.size() != n / 2 + 1) {
        throw std::invalid_argument("irfft: expected " + std::to_string(n / 2 + 1) + " bins, got " +
                                    std::to_string(half_spectrum.size()));
    }
    std::vector<cplx> full(n);
    for (std::size_t k = 0; k < half_spectrum.size(); ++k) full[k] = half_spectrum[k];
    for (std::size_t k = half_spectrum.size(); k < n; ++k) full[k] = std::conj(half_spectrum[n - k]);
    // Hermitian symmetry forces real DC and Nyquist bins.
    full[0] = {full[0].real(), 0.0};
    if (n % 2 == 0) full[n / 2] = {full[n / 2].real(), 0.0};
    auto back = inverse(full);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = back[i].real();
    return out;
}

std::vector<double> circular_cross_correlation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("circular_cross_correlation: lengths " + std::to_string(a.size()) +
                                    " and " + std::to_string(b.size()) + " differ");
    }
    const auto fa = rfft(a);
    const auto fb = rfft(b);
    std::vector<cplx> prod(fa.size());
    for (std::size_t k = 0; k < fa.size(); ++k) prod[k] = fa[k] * std::conj(fb[k]);
    return irfft(prod, a.size());
}

}  // namespace cbf::fft
