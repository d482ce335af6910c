#pragma once

// Rollout state: alternating main-agent spans and subagent observation spans.
// Observation spans are the ones excluded from optimization.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "scot/error.hpp"
#include "scot/geometry.hpp"
#include "scot/protocol.hpp"
#include "scot/scene.hpp"

namespace scot {

enum class SpanOrigin { MainAgent, SubagentObservation };

struct Span {
    std::string text;
    SpanOrigin origin = SpanOrigin::MainAgent;
    int turn_index = 0;
    std::optional<int> token_count;

    bool masked() const noexcept { return origin == SpanOrigin::SubagentObservation; }

    friend bool operator==(const Span&, const Span&) = default;
};

enum class CallStatus {
    Executed,     ///< validated and answered by a subagent before any answer
    Rejected,     ///< failed validation, never sent
    WithAnswer,   ///< emitted in the answering turn before the answer tag
    AfterAnswer,  ///< appended after the answer tag
    OverBudget,   ///< beyond max_tool_calls, never sent
};

constexpr std::string_view to_string(CallStatus s) noexcept {
    switch (s) {
    case CallStatus::Executed: return "executed";
    case CallStatus::Rejected: return "rejected";
    case CallStatus::WithAnswer: return "with_answer";
    case CallStatus::AfterAnswer: return "after_answer";
    case CallStatus::OverBudget: return "over_budget";
    }
    return "executed";
}

struct CallRecord {
    ToolCall call;
    CallStatus status = CallStatus::Executed;
    int turn_index = 0;
    std::optional<std::string> observation;
    /// Enlarged crop actually sent (executed calls only).
    std::optional<BBox> crop;
    std::vector<Violation> violations;

    bool executed_before_answer() const noexcept { return status == CallStatus::Executed; }

    friend bool operator==(const CallRecord&, const CallRecord&) = default;
};

enum class Termination { Answered, MaxTurns, MaxCalls, BackendError };

constexpr std::string_view to_string(Termination t) noexcept {
    switch (t) {
    case Termination::Answered: return "answered";
    case Termination::MaxTurns: return "max_turns";
    case Termination::MaxCalls: return "max_calls";
    case Termination::BackendError: return "backend_error";
    }
    return "answered";
}

struct TaskRef {
    std::string id;
    std::string question;
    std::string ground_truth;
    std::optional<std::uint64_t> scene_seed;

    friend bool operator==(const TaskRef&, const TaskRef&) = default;
};

inline TaskRef task_ref(const Task& task) {
    return {task.id, task.question, task.ground_truth,
            task.scene ? std::optional<std::uint64_t>(task.scene->seed) : std::nullopt};
}

struct TraceEntry {
    std::string agent;  // "main" or "sub"
    std::string request;
    std::string response;

    friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

struct TrajectoryMetadata {
    std::uint64_t seed = 0;
    std::string backend;
    int main_chats = 0;
    int subagent_chats = 0;
    std::optional<double> elapsed_ms;
    std::string error;
    std::vector<TraceEntry> trace;

    friend bool operator==(const TrajectoryMetadata&, const TrajectoryMetadata&) = default;
};

struct Trajectory {
    std::string id;
    TaskRef task;
    std::vector<Span> spans;
    std::vector<CallRecord> calls;
    std::optional<std::string> final_answer;
    Termination termination = Termination::MaxTurns;
    TrajectoryMetadata metadata;

    int executed_calls() const noexcept {
        int n = 0;
        for (const auto& c : calls) n += c.executed_before_answer() ? 1 : 0;
        return n;
    }

    friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

// ---------------------------------------------------------------------------
// Record format: one JSON object per line.
//
//   {"schema": "scot.trajectory", "version": 1, "trajectory": {...}}
//
// Writers may add sibling keys (e.g. "reward", "config"); the trajectory
// reader ignores them. Text must be valid UTF-8; invalid bytes are replaced
// with U+FFFD when written.

inline constexpr int kTrajectorySchemaVersion = 1;

namespace detail {

inline SpanOrigin span_origin_from(const std::string& s) {
    if (s == "main") return SpanOrigin::MainAgent;
    if (s == "observation") return SpanOrigin::SubagentObservation;
    throw Error(ErrorCode::ParseError, "unknown span origin '" + s + "'");
}

inline CallStatus call_status_from(const std::string& s) {
    for (auto st : {CallStatus::Executed, CallStatus::Rejected, CallStatus::WithAnswer, CallStatus::AfterAnswer,
                    CallStatus::OverBudget}) {
        if (to_string(st) == s) return st;
    }
    throw Error(ErrorCode::ParseError, "unknown call status '" + s + "'");
}

inline Termination termination_from(const std::string& s) {
    for (auto t : {Termination::Answered, Termination::MaxTurns, Termination::MaxCalls, Termination::BackendError}) {
        if (to_string(t) == s) return t;
    }
    throw Error(ErrorCode::ParseError, "unknown termination '" + s + "'");
}

inline Violation violation_from(const std::string& s) {
    for (auto v : {Violation::EmptyTaskType, Violation::EmptyPrompt, Violation::MissingBBox, Violation::DegenerateBBox,
                   Violation::BBoxOutsideCanvas}) {
        if (to_string(v) == s) return v;
    }
    throw Error(ErrorCode::ParseError, "unknown violation '" + s + "'");
}

template <class T>
nlohmann::json optional_to_json(const std::optional<T>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <class T>
std::optional<T> optional_from_json(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<T>();
}

}  // namespace detail

inline nlohmann::json trajectory_to_json(const Trajectory& t) {
    using nlohmann::json;
    json spans = json::array();
    for (const auto& s : t.spans) {
        spans.push_back({{"origin", s.origin == SpanOrigin::MainAgent ? "main" : "observation"},
                         {"turn", s.turn_index},
                         {"text", s.text},
                         {"tokens", detail::optional_to_json(s.token_count)}});
    }
    json calls = json::array();
    for (const auto& c : t.calls) {
        json violations = json::array();
        for (auto v : c.violations) violations.push_back(std::string(to_string(v)));
        calls.push_back({{"task_type", c.call.task_type},
                         {"prompt", c.call.prompt},
                         {"bbox", c.call.bbox ? bbox_to_json(*c.call.bbox) : json(nullptr)},
                         {"status", std::string(to_string(c.status))},
                         {"executed_before_answer", c.executed_before_answer()},
                         {"turn", c.turn_index},
                         {"observation", detail::optional_to_json(c.observation)},
                         {"crop", c.crop ? bbox_to_json(*c.crop) : json(nullptr)},
                         {"violations", std::move(violations)}});
    }
    json trace = json::array();
    for (const auto& e : t.metadata.trace) {
        trace.push_back({{"agent", e.agent}, {"request", e.request}, {"response", e.response}});
    }
    return {{"id", t.id},
            {"task",
             {{"id", t.task.id},
              {"question", t.task.question},
              {"ground_truth", t.task.ground_truth},
              {"scene_seed", detail::optional_to_json(t.task.scene_seed)}}},
            {"spans", std::move(spans)},
            {"calls", std::move(calls)},
            {"final_answer", detail::optional_to_json(t.final_answer)},
            {"termination", std::string(to_string(t.termination))},
            {"metadata",
             {{"seed", t.metadata.seed},
              {"backend", t.metadata.backend},
              {"main_chats", t.metadata.main_chats},
              {"subagent_chats", t.metadata.subagent_chats},
              {"elapsed_ms", detail::optional_to_json(t.metadata.elapsed_ms)},
              {"error", t.metadata.error},
              {"trace", std::move(trace)}}}};
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
    Trajectory t;
    t.id = j.at("id").get<std::string>();
    const auto& task = j.at("task");
    t.task.id = task.at("id").get<std::string>();
    t.task.question = task.at("question").get<std::string>();
    t.task.ground_truth = task.at("ground_truth").get<std::string>();
    t.task.scene_seed = detail::optional_from_json<std::uint64_t>(task.at("scene_seed"));
    for (const auto& s : j.at("spans")) {
        t.spans.push_back({s.at("text").get<std::string>(), detail::span_origin_from(s.at("origin").get<std::string>()),
                           s.at("turn").get<int>(), detail::optional_from_json<int>(s.at("tokens"))});
    }
    for (const auto& c : j.at("calls")) {
        CallRecord rec;
        rec.call.task_type = c.at("task_type").get<std::string>();
        rec.call.prompt = c.at("prompt").get<std::string>();
        if (!c.at("bbox").is_null()) rec.call.bbox = bbox_from_json(c.at("bbox"));
        rec.status = detail::call_status_from(c.at("status").get<std::string>());
        rec.turn_index = c.at("turn").get<int>();
        rec.observation = detail::optional_from_json<std::string>(c.at("observation"));
        if (!c.at("crop").is_null()) rec.crop = bbox_from_json(c.at("crop"));
        for (const auto& v : c.at("violations")) rec.violations.push_back(detail::violation_from(v.get<std::string>()));
        t.calls.push_back(std::move(rec));
    }
    t.final_answer = detail::optional_from_json<std::string>(j.at("final_answer"));
    t.termination = detail::termination_from(j.at("termination").get<std::string>());
    const auto& md = j.at("metadata");
    t.metadata.seed = md.at("seed").get<std::uint64_t>();
    t.metadata.backend = md.at("backend").get<std::string>();
    t.metadata.main_chats = md.at("main_chats").get<int>();
    t.metadata.subagent_chats = md.at("subagent_chats").get<int>();
    t.metadata.elapsed_ms = detail::optional_from_json<double>(md.at("elapsed_ms"));
    t.metadata.error = md.at("error").get<std::string>();
    for (const auto& e : md.at("trace")) {
        t.metadata.trace.push_back(
            {e.at("agent").get<std::string>(), e.at("request").get<std::string>(), e.at("response").get<std::string>()});
    }
    return t;
}

inline std::string dump_record(const nlohmann::json& record) {
    return record.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

/// Parses one record line and checks its schema and version. `base_offset`
/// is the position of the line in its file, used in ParseError offsets.
inline nlohmann::json parse_record(std::string_view line, std::size_t base_offset = 0) {
    nlohmann::json record;
    try {
        record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        const std::size_t at = e.byte > 0 ? e.byte - 1 : 0;
        throw ParseError(base_offset + at, e.what());
    }
    if (!record.is_object()) throw ParseError(base_offset, "record is not an object");
    if (record.value("schema", std::string{}) != "scot.trajectory") throw ParseError(base_offset, "not a trajectory record");
    const auto version = record.find("version");
    if (version == record.end() || !version->is_number_integer()) throw ParseError(base_offset, "missing schema version");
    if (version->get<int>() != kTrajectorySchemaVersion) throw VersionError(kTrajectorySchemaVersion, version->get<int>());
    return record;
}

inline std::string serialize_trajectory(const Trajectory& t) {
    return dump_record(
        {{"schema", "scot.trajectory"}, {"version", kTrajectorySchemaVersion}, {"trajectory", trajectory_to_json(t)}});
}

inline Trajectory deserialize_trajectory(std::string_view line, std::size_t base_offset = 0) {
    const auto record = parse_record(line, base_offset);
    try {
        return trajectory_from_json(record.at("trajectory"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(base_offset, std::string("trajectory: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ParseError && dynamic_cast<const ParseError*>(&e) == nullptr) {
            throw ParseError(base_offset, e.what());
        }
        throw;
    }
}

}  // namespace scot
