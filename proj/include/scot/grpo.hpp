#pragma once

// Group-relative advantages and the token-masked clipped surrogate.
//
// Token layout of a trajectory: its spans in order, each contributing
// `token_count` positions. Positions inside observation spans are masked and
// never read.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scot/error.hpp"
#include "scot/reward.hpp"
#include "scot/trajectory.hpp"

namespace scot {

inline constexpr double kDefaultAdvantageEps = 1e-4;

struct GroupMember {
    Trajectory trajectory;
    RewardBreakdown reward;
};

struct Group {
    TaskRef task;
    std::vector<GroupMember> members;

    std::size_t size() const noexcept { return members.size(); }

    std::vector<double> totals() const {
        std::vector<double> out;
        out.reserve(members.size());
        for (const auto& m : members) out.push_back(m.reward.total);
        return out;
    }
};

inline Group make_group(TaskRef task, std::vector<GroupMember> members) {
    if (members.size() < 2) throw Error(ErrorCode::InvalidArgument, "a group needs at least 2 members");
    for (const auto& m : members) {
        if (m.trajectory.task.id != task.id) {
            throw Error(ErrorCode::InvalidArgument, "member '" + m.trajectory.id + "' belongs to task '" +
                                                        m.trajectory.task.id + "', not '" + task.id + "'");
        }
    }
    return {std::move(task), std::move(members)};
}

struct AdvantageSet {
    std::vector<double> advantages;
    double mean = 0.0;
    double stddev = 0.0;  ///< population
    double eps = 0.0;
};

/// (r - mean) / (population std + eps).
inline AdvantageSet compute_advantages(std::span<const double> totals, double eps = kDefaultAdvantageEps) {
    if (totals.size() < 2) throw Error(ErrorCode::InvalidArgument, "advantages need a group of at least 2");
    if (!(eps >= 0.0)) throw Error(ErrorCode::InvalidArgument, "eps must be non-negative");
    const double n = static_cast<double>(totals.size());
    double sum = 0.0;
    for (double r : totals) sum += r;
    const double mean = sum / n;
    double sq = 0.0;
    for (double r : totals) sq += (r - mean) * (r - mean);
    const double stddev = std::sqrt(sq / n);

    AdvantageSet out;
    out.mean = mean;
    out.stddev = stddev;
    out.eps = eps;
    out.advantages.reserve(totals.size());
    const double denom = stddev + eps;
    for (double r : totals) out.advantages.push_back(denom > 0.0 ? (r - mean) / denom : 0.0);
    return out;
}

inline AdvantageSet compute_advantages(const Group& g, double eps = kDefaultAdvantageEps) {
    const auto totals = g.totals();
    return compute_advantages(totals, eps);
}

/// Per-token log-probabilities of one trajectory, in token-layout order.
struct TokenLogprobs {
    std::vector<double> current;
    std::vector<double> behavior;
    std::optional<std::vector<double>> reference;
};

/// true at optimized positions, false at observation positions.
inline std::vector<bool> token_mask(const Trajectory& t) {
    std::vector<bool> mask;
    for (std::size_t i = 0; i < t.spans.size(); ++i) {
        const auto& span = t.spans[i];
        if (!span.token_count) {
            throw Error(ErrorCode::AlignmentError,
                        "trajectory '" + t.id + "' span " + std::to_string(i) + " has no token count");
        }
        if (*span.token_count < 0) throw Error(ErrorCode::AlignmentError, "negative token count");
        mask.insert(mask.end(), static_cast<std::size_t>(*span.token_count), !span.masked());
    }
    return mask;
}

struct ObjectiveConfig {
    double clip = 0.2;
    /// Weight of the k3 KL estimate against `reference`; off by default.
    double kl_coef = 0.0;
};

struct ObjectiveResult {
    double loss = 0.0;
    /// d loss / d current log-prob, one vector per trajectory. Exactly zero
    /// at masked positions.
    std::vector<std::vector<double>> grad;
    int active_tokens = 0;
    int clipped_tokens = 0;
};

/// -mean_i (1/T_i) sum_t min(rho A_i, clip(rho) A_i), rho = exp(current - behavior),
/// over unmasked tokens only. Trajectories with no unmasked token add 0.
inline ObjectiveResult masked_objective(std::span<const std::vector<bool>> masks,
                                        std::span<const TokenLogprobs> logprobs, std::span<const double> advantages,
                                        const ObjectiveConfig& config = {}) {
    if (masks.size() != logprobs.size() || masks.size() != advantages.size()) {
        throw Error(ErrorCode::AlignmentError, "masks, logprobs and advantages differ in length");
    }
    if (!(config.clip >= 0.0)) throw Error(ErrorCode::InvalidArgument, "clip must be non-negative");
    ObjectiveResult out;
    out.grad.resize(masks.size());
    if (masks.empty()) return out;
    const double inv_g = 1.0 / static_cast<double>(masks.size());

    for (std::size_t i = 0; i < masks.size(); ++i) {
        const auto& mask = masks[i];
        const auto& lp = logprobs[i];
        if (lp.current.size() != mask.size() || lp.behavior.size() != mask.size()) {
            throw Error(ErrorCode::AlignmentError, "trajectory " + std::to_string(i) + ": " +
                                                       std::to_string(mask.size()) + " tokens but " +
                                                       std::to_string(lp.current.size()) + " current and " +
                                                       std::to_string(lp.behavior.size()) + " behavior log-probs");
        }
        if (config.kl_coef != 0.0 && (!lp.reference || lp.reference->size() != mask.size())) {
            throw Error(ErrorCode::AlignmentError, "kl term needs reference log-probs for every token");
        }
        auto& grad = out.grad[i];
        grad.assign(mask.size(), 0.0);
        int count = 0;
        for (bool m : mask) count += m ? 1 : 0;
        if (count == 0) continue;
        out.active_tokens += count;

        const double a = advantages[i];
        const double scale = inv_g / static_cast<double>(count);
        double sum = 0.0;
        for (std::size_t k = 0; k < mask.size(); ++k) {
            if (!mask[k]) continue;
            const double rho = std::exp(lp.current[k] - lp.behavior[k]);
            const double clipped = std::clamp(rho, 1.0 - config.clip, 1.0 + config.clip);
            const double unclipped_term = rho * a;
            const double clipped_term = clipped * a;
            if (clipped_term < unclipped_term) {
                sum += clipped_term;
                ++out.clipped_tokens;
            } else {
                sum += unclipped_term;
                grad[k] = -scale * unclipped_term;
            }
            if (config.kl_coef != 0.0) {
                const double d = (*lp.reference)[k] - lp.current[k];
                sum -= config.kl_coef * (std::exp(d) - d - 1.0);
                grad[k] += scale * config.kl_coef * (1.0 - std::exp(d));
            }
        }
        out.loss -= scale * sum;
    }
    return out;
}

inline ObjectiveResult masked_objective(const Group& g, const AdvantageSet& adv, std::span<const TokenLogprobs> logprobs,
                                        const ObjectiveConfig& config = {}) {
    if (adv.advantages.size() != g.size()) throw Error(ErrorCode::AlignmentError, "advantages do not match group");
    std::vector<std::vector<bool>> masks;
    masks.reserve(g.size());
    for (const auto& m : g.members) masks.push_back(token_mask(m.trajectory));
    return masked_objective(masks, logprobs, adv.advantages, config);
}

}  // namespace scot
