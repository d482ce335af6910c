#pragma once

// Scripted main agents for evaluation and tests.

#include <memory>
#include <span>
#include <string>

#include "scot/model_client.hpp"
#include "scot/orchestrator.hpp"
#include "scot/scene.hpp"

namespace scot {

/// First item of the most recent subagent reply in the current turn, or
/// `fallback` when there is none or it is unusable.
inline std::string first_observation_item(std::span<const ChatMessage> messages, std::string_view fallback) {
    for (auto it = messages.rbegin(); it != messages.rend() && it->role != Role::Assistant; ++it) {
        if (it->role != Role::ToolResult) continue;
        const auto reply = std::string(observation_reply(it->text));
        if (reply == kUnreadable || reply.starts_with("unsupported")) return std::string(fallback);
        return reply.substr(0, reply.find("; "));
    }
    return std::string(fallback);
}

inline int assistant_turns(std::span<const ChatMessage> messages) {
    int n = 0;
    for (const auto& m : messages) n += m.role == Role::Assistant ? 1 : 0;
    return n;
}

/// Knows the scene: calls a vqa subagent on the region the question names,
/// then answers with what it read.
inline Responder oracle_agent(std::shared_ptr<const Scene> scene, std::string question) {
    return [scene = std::move(scene), question = std::move(question)](std::span<const ChatMessage> messages,
                                                                        const SamplingParams&) -> ChatReply {
        if (assistant_turns(messages) > 0) {
            return {"<answer>" + first_observation_item(messages, "unknown") + "</answer>", 1};
        }
        const Region* target = resolve_question(*scene, question);
        if (target == nullptr) return {"<answer>unknown</answer>", 1};
        const std::string text = "<think>The " + std::string(to_string(target->color)) + " " +
                                 std::string(to_string(target->kind)) + " is small; ask a subagent.</think>\n" +
                                 render_call(ToolCall{"vqa", question, target->bbox});
        return {text, count_words(text)};
    };
}

/// Answers every question with the same word, without looking.
inline Responder guess_agent(std::string word = std::string(kLabelWords.front())) {
    return [word = std::move(word)](std::span<const ChatMessage>, const SamplingParams&) -> ChatReply {
        return {"<answer>" + word + "</answer>", 1};
    };
}

}  // namespace scot
