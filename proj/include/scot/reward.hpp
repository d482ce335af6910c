#pragma once

// Outcome reward: accuracy + format + a tool bonus that only pays when the
// answer is right and a subagent call actually ran before the answer.

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "scot/chat.hpp"
#include "scot/error.hpp"
#include "scot/model_client.hpp"
#include "scot/protocol.hpp"
#include "scot/scene.hpp"
#include "scot/trajectory.hpp"

namespace scot {

struct RewardLevels {
    double acc_pos = 0.8;
    double acc_neg = 0.0;
    double fmt_ok = 0.0;
    double fmt_bad = -0.2;
    double tool_bonus = 1.2;

    void check() const {
        if (!(acc_pos > 0.0)) throw Error(ErrorCode::InvalidArgument, "acc_pos must be positive");
        if (!(tool_bonus >= 0.0)) throw Error(ErrorCode::InvalidArgument, "tool_bonus must be non-negative");
    }

    friend bool operator==(const RewardLevels&, const RewardLevels&) = default;
};

struct RewardOptions {
    /// When false the bonus is paid for any recorded call, wherever it sits
    /// relative to the answer. Only useful for ablations.
    bool use_ordering_indicator = true;
};

enum class FormatViolation { NoAnswer, MultipleAnswers, UnbalancedThink, MalformedCall, InvalidCall };

constexpr std::string_view to_string(FormatViolation v) noexcept {
    switch (v) {
    case FormatViolation::NoAnswer: return "no_answer";
    case FormatViolation::MultipleAnswers: return "multiple_answers";
    case FormatViolation::UnbalancedThink: return "unbalanced_think";
    case FormatViolation::MalformedCall: return "malformed_call";
    case FormatViolation::InvalidCall: return "invalid_call";
    }
    return "no_answer";
}

struct FormatScore {
    double value = 0.0;
    std::vector<FormatViolation> violations;

    bool ok() const noexcept { return violations.empty(); }
};

inline FormatScore score_format(const Trajectory& t, const RewardLevels& levels = {}) {
    FormatScore out;
    auto flag = [&](FormatViolation v) {
        for (auto seen : out.violations) {
            if (seen == v) return;
        }
        out.violations.push_back(v);
    };
    int answers = 0;
    for (const auto& span : t.spans) {
        if (span.origin != SpanOrigin::MainAgent) continue;
        for (const auto& seg : parse_turn(span.text)) {
            if (seg.kind == SegmentKind::Answer) ++answers;
            if (seg.issue == ParseIssue::None) continue;
            if (seg.issue == ParseIssue::MalformedCall) {
                flag(FormatViolation::MalformedCall);
            } else if (seg.raw.starts_with(kThinkOpen) || seg.raw.starts_with(kThinkClose)) {
                flag(FormatViolation::UnbalancedThink);
            } else if (seg.raw.starts_with(kCallOpen) || seg.raw.starts_with(kCallClose)) {
                flag(FormatViolation::MalformedCall);
            }
        }
    }
    if (answers == 0) flag(FormatViolation::NoAnswer);
    if (answers > 1) flag(FormatViolation::MultipleAnswers);
    for (const auto& c : t.calls) {
        if (c.status == CallStatus::Rejected) flag(FormatViolation::InvalidCall);
    }
    out.value = out.ok() ? levels.fmt_ok : levels.fmt_bad;
    return out;
}

struct ExactMatchJudge {};

/// Asks a chat backend whether the answer matches the reference. The reply
/// must start with "yes" or "no".
struct LlmJudge {
    ChatBackend* backend = nullptr;
    std::string rubric =
        "You grade answers. Given a question, a reference answer and a candidate answer, reply with "
        "exactly one word: yes if the candidate means the same as the reference, no otherwise.";
    SamplingParams params{0.0, 8, std::nullopt};
};

using JudgeKind = std::variant<ExactMatchJudge, LlmJudge>;

namespace detail {

inline bool llm_verdict(const LlmJudge& judge, const TaskRef& task, std::string_view answer) {
    if (judge.backend == nullptr) throw Error(ErrorCode::JudgeUnavailable, "llm judge has no backend");
    std::string user = "Question: " + task.question + "\nReference answer: " + task.ground_truth +
                       "\nCandidate answer: " + std::string(answer);
    const ChatMessage messages[] = {{Role::System, judge.rubric, std::nullopt}, {Role::User, user, std::nullopt}};
    ChatReply reply;
    try {
        reply = chat(messages, judge.params, *judge.backend);
    } catch (const BackendError& e) {
        throw Error(ErrorCode::JudgeUnavailable, std::string("judge backend failed: ") + e.what());
    }
    const auto words = keywords(reply.text);
    if (!words.empty() && words.front() == "yes") return true;
    if (!words.empty() && words.front() == "no") return false;
    throw Error(ErrorCode::JudgeUnavailable, "judge verdict is neither yes nor no: '" + reply.text + "'");
}

}  // namespace detail

/// True iff the final answer is judged correct. A missing answer is wrong.
inline bool judge_correct(const Trajectory& t, const JudgeKind& judge) {
    if (!t.final_answer) return false;
    if (std::holds_alternative<ExactMatchJudge>(judge)) return scot::judge(*t.final_answer, t.task.ground_truth);
    return detail::llm_verdict(std::get<LlmJudge>(judge), t.task, *t.final_answer);
}

inline double score_accuracy(const Trajectory& t, const JudgeKind& judge, const RewardLevels& levels = {}) {
    return judge_correct(t, judge) ? levels.acc_pos : levels.acc_neg;
}

/// At least one call ran through a subagent before the answer.
inline bool ordering_indicator(const Trajectory& t) noexcept {
    for (const auto& c : t.calls) {
        if (c.executed_before_answer()) return true;
    }
    return false;
}

/// Number of calls written after the answer tag.
inline int detect_hacking(const Trajectory& t) noexcept {
    int n = 0;
    for (const auto& c : t.calls) n += c.status == CallStatus::AfterAnswer ? 1 : 0;
    return n;
}

struct RewardBreakdown {
    double r_acc = 0.0;
    double r_format = 0.0;
    double r_tool = 0.0;
    bool ind_acc_pos = false;
    bool ind_tool_before_ans = false;
    bool ordering_enforced = true;
    double total = 0.0;
    std::vector<FormatViolation> format_violations;

    /// Whether the bonus was added to the total.
    bool bonus_paid() const noexcept { return ind_acc_pos && (!ordering_enforced || ind_tool_before_ans) && r_tool != 0.0; }

    friend bool operator==(const RewardBreakdown&, const RewardBreakdown&) = default;
};

/// r_tool is the bonus when any call was recorded; it enters the total only
/// for correct answers and, unless disabled, only when a call ran first.
inline RewardBreakdown total_reward(const Trajectory& t, const RewardLevels& levels, const JudgeKind& judge,
                                    const RewardOptions& options = {}) {
    RewardBreakdown b;
    b.r_acc = score_accuracy(t, judge, levels);
    auto fmt = score_format(t, levels);
    b.r_format = fmt.value;
    b.format_violations = std::move(fmt.violations);
    b.r_tool = t.calls.empty() ? 0.0 : levels.tool_bonus;
    b.ind_acc_pos = b.r_acc > 0.0;
    b.ind_tool_before_ans = ordering_indicator(t);
    b.ordering_enforced = options.use_ordering_indicator;
    const bool gate = b.ind_acc_pos && (!b.ordering_enforced || b.ind_tool_before_ans);
    b.total = b.r_acc + b.r_format + (gate ? b.r_tool : 0.0);
    return b;
}

/// A hack that paid: the bonus went out although no call ran before the answer.
inline bool is_rewarded_hack(const Trajectory& t, const RewardBreakdown& b) noexcept {
    return detect_hacking(t) > 0 && b.bonus_paid() && !b.ind_tool_before_ans;
}

inline nlohmann::json reward_to_json(const RewardBreakdown& b) {
    nlohmann::json violations = nlohmann::json::array();
    for (auto v : b.format_violations) violations.push_back(std::string(to_string(v)));
    return {{"r_acc", b.r_acc},
            {"r_format", b.r_format},
            {"r_tool", b.r_tool},
            {"ind_acc_pos", b.ind_acc_pos},
            {"ind_tool_before_ans", b.ind_tool_before_ans},
            {"ordering_enforced", b.ordering_enforced},
            {"total", b.total},
            {"format_violations", std::move(violations)}};
}

inline RewardBreakdown reward_from_json(const nlohmann::json& j) {
    RewardBreakdown b;
    b.r_acc = j.at("r_acc").get<double>();
    b.r_format = j.at("r_format").get<double>();
    b.r_tool = j.at("r_tool").get<double>();
    b.ind_acc_pos = j.at("ind_acc_pos").get<bool>();
    b.ind_tool_before_ans = j.at("ind_tool_before_ans").get<bool>();
    b.ordering_enforced = j.at("ordering_enforced").get<bool>();
    b.total = j.at("total").get<double>();
    for (const auto& v : j.at("format_violations")) {
        const auto name = v.get<std::string>();
        bool found = false;
        for (auto fv : {FormatViolation::NoAnswer, FormatViolation::MultipleAnswers, FormatViolation::UnbalancedThink,
                        FormatViolation::MalformedCall, FormatViolation::InvalidCall}) {
            if (to_string(fv) == name) {
                b.format_violations.push_back(fv);
                found = true;
            }
        }
        if (!found) throw Error(ErrorCode::ParseError, "unknown format violation '" + name + "'");
    }
    return b;
}

}  // namespace scot
