#pragma once

// The self-calling rollout loop. The main agent reasons in text; each valid
// tool call becomes an isolated subagent chat over an enlarged crop, and the
// replies come back as observation spans. Calls run strictly in order.

#include <algorithm>
#include <chrono>
#include <sstream>
#include <optional>
#include <string>
#include <vector>

#include "scot/chat.hpp"
#include "scot/error.hpp"
#include "scot/image.hpp"
#include "scot/model_client.hpp"
#include "scot/protocol.hpp"
#include "scot/scene.hpp"
#include "scot/trajectory.hpp"

namespace scot {

inline constexpr std::string_view kMainAgentSystemPrompt =
    "You are the main agent. Answer the user's question about the image. You may delegate "
    "atomic perception subtasks (ocr, vqa, caption, grounding) to a subagent that sees only a "
    "cropped region. To call it, emit a block\n"
    "<tool_call>\n"
    "{\"task_type\": \"ocr\", \"prompt\": \"read the sign\", \"bbox\": [x1, y1, x2, y2]}\n"
    "</tool_call>\n"
    "with bbox in absolute pixel coordinates of the image. Subagent replies arrive as tool "
    "messages. Think inside <think></think> and give the final answer inside <answer></answer>.";

struct RolloutConfig {
    int max_turns = 6;
    int max_tool_calls = 8;
    double alpha = kDefaultEnlargeAlpha;
    ValidationMode mode = ValidationMode::Constrained;
    SamplingParams main_sampling;
    SamplingParams sub_sampling;
    /// Keep every request/reply in the trajectory metadata.
    bool trace = false;
    /// Wall-clock timing breaks byte-identical replays, so it is opt-in.
    bool record_timing = false;
    std::string main_system_prompt = std::string(kMainAgentSystemPrompt);

    void check() const {
        if (max_turns <= 0) throw Error(ErrorCode::InvalidArgument, "max_turns must be positive");
        if (max_tool_calls <= 0) throw Error(ErrorCode::InvalidArgument, "max_tool_calls must be positive");
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
    }
};

/// What the main agent is asked: a question over an image.
struct RolloutInput {
    TaskRef task;
    ImageHandle image;
};

inline RolloutInput rollout_input(const Task& task) {
    if (!task.scene) throw Error(ErrorCode::InvalidArgument, "task has no scene");
    return {task_ref(task), task.scene};
}

/// The entire context a subagent receives for one call.
inline std::vector<ChatMessage> subagent_context(const ToolCall& call, const ImageRegion& crop) {
    return render_subtask_messages(call, crop.attachment());
}

/// Tool-result text shown to the main agent: an echo of the call followed by
/// the subagent reply.
inline std::string observation_message(const ToolCall& call, const BBox& crop, std::string_view reply) {
    std::ostringstream os;
    os << subtask_line(call) << " @ " << crop << "\n" << reply;
    return os.str();
}

/// Subagent reply part of an observation_message.
inline std::string_view observation_reply(std::string_view message) {
    const auto nl = message.find('\n');
    return nl == std::string_view::npos ? message : message.substr(nl + 1);
}

namespace detail {

inline std::string describe_request(std::span<const ChatMessage> messages) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& m : messages) {
        nlohmann::json entry = {{"role", std::string(to_string(m.role))}, {"text", m.text}};
        if (m.image) entry["image"] = {{"media_type", m.image->media_type}, {"bytes", m.image->bytes.size()}};
        j.push_back(std::move(entry));
    }
    return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace detail

inline Trajectory run_rollout(const RolloutInput& input, const RolloutConfig& config, ChatBackend& backend,
                              std::string trajectory_id = {}) {
    config.check();
    const auto started = std::chrono::steady_clock::now();
    const Canvas canvas = canvas_of(input.image);

    Trajectory t;
    t.id = trajectory_id.empty() ? input.task.id : std::move(trajectory_id);
    t.task = input.task;
    t.metadata.seed = config.main_sampling.seed.value_or(0);
    t.metadata.backend = backend.describe();

    std::vector<ChatMessage> context;
    context.push_back({Role::System, config.main_system_prompt, std::nullopt});
    {
        std::ostringstream user;
        user << input.task.question << "\n(image size " << canvas.width << "x" << canvas.height << ")";
        context.push_back({Role::User, user.str(), crop_image(input.image, canvas_box(canvas)).attachment()});
    }

    auto traced_chat = [&](std::span<const ChatMessage> messages, const SamplingParams& params, const char* agent) {
        auto reply = chat(messages, params, backend);
        if (config.trace) t.metadata.trace.push_back({agent, detail::describe_request(messages), reply.text});
        return reply;
    };

    auto finish = [&](Termination reason) {
        t.termination = reason;
        if (config.record_timing) {
            t.metadata.elapsed_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        }
        return std::move(t);
    };

    int calls_used = 0;
    try {
        for (int turn = 0; turn < config.max_turns; ++turn) {
            const auto reply = traced_chat(context, config.main_sampling, "main");
            ++t.metadata.main_chats;
            t.spans.push_back({reply.text, SpanOrigin::MainAgent, turn, reply.completion_tokens});
            context.push_back({Role::Assistant, reply.text, std::nullopt});

            const auto segments = parse_turn(reply.text);
            const auto answer = std::find_if(segments.begin(), segments.end(),
                                             [](const Segment& s) { return s.kind == SegmentKind::Answer; });
            if (answer != segments.end()) {
                t.final_answer = answer->text;
                for (auto it = segments.begin(); it != segments.end(); ++it) {
                    if (it->kind != SegmentKind::Call) continue;
                    CallRecord rec;
                    rec.call = *it->call;
                    rec.turn_index = turn;
                    rec.status = it < answer ? CallStatus::WithAnswer : CallStatus::AfterAnswer;
                    t.calls.push_back(std::move(rec));
                }
                return finish(Termination::Answered);
            }

            std::vector<ChatMessage> observations;
            bool over_budget = false;
            for (const auto& seg : segments) {
                if (seg.kind != SegmentKind::Call) continue;
                CallRecord rec;
                rec.call = *seg.call;
                rec.turn_index = turn;
                if (calls_used >= config.max_tool_calls) {
                    rec.status = CallStatus::OverBudget;
                    t.calls.push_back(std::move(rec));
                    over_budget = true;
                    continue;
                }
                auto validated = validate_call(*seg.call, config.mode, canvas);
                if (!validated.ok()) {
                    rec.status = CallStatus::Rejected;
                    rec.violations = std::move(validated.violations);
                    t.calls.push_back(std::move(rec));
                    continue;
                }
                const BBox crop = enlarge_bbox(*validated.call->bbox, canvas, config.alpha);
                const auto sub_context = subagent_context(*validated.call, crop_image(input.image, crop));
                rec.status = CallStatus::Executed;
                rec.crop = crop;
                t.calls.push_back(rec);
                ++calls_used;

                const auto sub_reply = traced_chat(sub_context, config.sub_sampling, "sub");
                ++t.metadata.subagent_chats;
                t.calls.back().observation = sub_reply.text;
                t.spans.push_back({sub_reply.text, SpanOrigin::SubagentObservation, turn, sub_reply.completion_tokens});
                observations.push_back(
                    {Role::ToolResult, observation_message(*validated.call, crop, sub_reply.text), std::nullopt});
            }
            for (auto& m : observations) context.push_back(std::move(m));
            if (over_budget) return finish(Termination::MaxCalls);
        }
    } catch (const BackendError& e) {
        // A call whose subagent reply never arrived stays Executed with no observation.
        t.metadata.error = e.what();
        return finish(Termination::BackendError);
    }
    return finish(Termination::MaxTurns);
}

inline Trajectory run_rollout(const Task& task, const RolloutConfig& config, ChatBackend& backend,
                              std::string trajectory_id = {}) {
    return run_rollout(rollout_input(task), config, backend, std::move(trajectory_id));
}

}  // namespace scot
