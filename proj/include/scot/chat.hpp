#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scot {

enum class Role { System, User, Assistant, ToolResult };

constexpr std::string_view to_string(Role role) noexcept {
    switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    case Role::ToolResult: return "tool";
    }
    return "user";
}

/// Encoded image bytes ready to be attached to a message.
struct ImageAttachment {
    std::string media_type;
    std::string bytes;

    friend bool operator==(const ImageAttachment&, const ImageAttachment&) = default;
};

struct ChatMessage {
    Role role = Role::User;
    std::string text;
    std::optional<ImageAttachment> image;

    friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct SamplingParams {
    double temperature = 1.0;
    int max_new_tokens = 1024;
    std::optional<std::uint64_t> seed;

    friend bool operator==(const SamplingParams&, const SamplingParams&) = default;
};

struct ChatReply {
    std::string text;
    /// Completion length reported by the backend, when it reports one.
    std::optional<int> completion_tokens;
};

/// One chat-completion endpoint. Main-agent and subagent calls in a rollout
/// travel through the same instance.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;

    /// Blocking completion. Implementations throw BackendError.
    virtual ChatReply chat(std::span<const ChatMessage> messages, const SamplingParams& params) = 0;

    /// Short description recorded in trajectory metadata.
    virtual std::string describe() const = 0;
};

}  // namespace scot
