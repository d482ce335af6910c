#pragma once

// Independent reference computations used to check the library.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <boost/multiprecision/cpp_dec_float.hpp>

#include "scot/grpo.hpp"

namespace scot::fixtures {

using BigFloat = boost::multiprecision::cpp_dec_float_50;

/// Group advantages in 50-digit decimal arithmetic.
inline std::vector<BigFloat> advantages_oracle(std::span<const double> totals, double eps) {
    const BigFloat n(totals.size());
    BigFloat sum = 0;
    for (double r : totals) sum += BigFloat(r);
    const BigFloat mean = sum / n;
    BigFloat sq = 0;
    for (double r : totals) sq += (BigFloat(r) - mean) * (BigFloat(r) - mean);
    const BigFloat denom = boost::multiprecision::sqrt(sq / n) + BigFloat(eps);
    std::vector<BigFloat> out;
    for (double r : totals) out.push_back(denom > 0 ? (BigFloat(r) - mean) / denom : BigFloat(0));
    return out;
}

/// The clipped surrogate written term by term, without the kernel's branch
/// bookkeeping.
inline double objective_oracle(std::span<const std::vector<bool>> masks, std::span<const TokenLogprobs> lps,
                               std::span<const double> adv, double clip) {
    double total = 0.0;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        double sum = 0.0;
        int n = 0;
        for (std::size_t k = 0; k < masks[i].size(); ++k) {
            if (!masks[i][k]) continue;
            const double rho = std::exp(lps[i].current[k] - lps[i].behavior[k]);
            const double lo = 1.0 - clip;
            const double hi = 1.0 + clip;
            const double rho_c = rho < lo ? lo : (rho > hi ? hi : rho);
            sum += std::min(rho * adv[i], rho_c * adv[i]);
            ++n;
        }
        if (n > 0) total += sum / n;
    }
    return -total / static_cast<double>(masks.size());
}

}  // namespace scot::fixtures
