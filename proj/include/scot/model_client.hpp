#pragma once

// Chat-completion backends. Main-agent and subagent requests go through the
// same ChatBackend instance; a subagent is just another forward call.
//
//   RemoteBackend    de-facto chat-completions JSON over HTTP(S)
//   ScriptedBackend  deterministic: subagent-shaped requests are answered by
//                    the scene oracle, everything else by a responder
//                    function (a replay tape, a toy policy, a fixed judge)
//   RecordingBackend decorator that keeps every request/reply pair

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
#include <json.hpp>

#include "scot/chat.hpp"
#include "scot/error.hpp"
#include "scot/image.hpp"
#include "scot/protocol.hpp"
#include "scot/scene.hpp"

namespace scot {

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
};

struct RemoteConfig {
    std::string endpoint = "http://127.0.0.1:8000/v1/chat/completions";
    std::string model = "default";
    /// Name of the environment variable holding the bearer token. The token
    /// itself never appears in configuration.
    std::string auth_env = "SCOT_API_KEY";
    std::chrono::milliseconds timeout{60000};
    RetryPolicy retry;
};

/// True for the two-message context produced by render_subtask_messages.
inline bool is_subagent_request(std::span<const ChatMessage> messages) {
    return messages.size() == 2 && messages[0].role == Role::System && messages[0].text == kSubagentSystemPrompt;
}

/// Builds the chat-completions request body. Images become base64 data URLs
/// placed before the message text; tool-result messages use role "tool".
inline nlohmann::json build_request_body(std::span<const ChatMessage> messages, const SamplingParams& params,
                                         const std::string& model) {
    nlohmann::json wire = nlohmann::json::array();
    int tool_index = 0;
    for (const auto& m : messages) {
        nlohmann::json msg = {{"role", std::string(to_string(m.role))}};
        if (m.image) {
            nlohmann::json parts = nlohmann::json::array();
            parts.push_back({{"type", "image_url"},
                             {"image_url", {{"url", "data:" + m.image->media_type + ";base64," +
                                                        base64_encode(m.image->bytes)}}}});
            parts.push_back({{"type", "text"}, {"text", m.text}});
            msg["content"] = std::move(parts);
        } else {
            msg["content"] = m.text;
        }
        if (m.role == Role::ToolResult) msg["tool_call_id"] = "call_" + std::to_string(tool_index++);
        wire.push_back(std::move(msg));
    }
    nlohmann::json body = {{"model", model},
                           {"messages", std::move(wire)},
                           {"temperature", params.temperature},
                           {"max_tokens", params.max_new_tokens},
                           {"stream", false}};
    if (params.seed) body["seed"] = *params.seed;
    return body;
}

/// Extracts the first choice. Throws BackendError(ProtocolError) on anything
/// that does not look like a chat-completions reply.
inline ChatReply parse_response_body(std::string_view body, const std::string& request_id) {
    const auto j = nlohmann::json::parse(body, nullptr, false);
    auto fail = [&](const std::string& why) -> ChatReply {
        throw BackendError(ErrorCode::ProtocolError, request_id, why);
    };
    if (j.is_discarded() || !j.is_object()) return fail("reply is not a JSON object");
    const auto choices = j.find("choices");
    if (choices == j.end() || !choices->is_array() || choices->empty()) return fail("reply has no choices");
    const auto& first = (*choices)[0];
    if (!first.is_object() || !first.contains("message") || !first["message"].is_object()) {
        return fail("first choice has no message");
    }
    const auto& content = first["message"].value("content", nlohmann::json());
    ChatReply reply;
    if (content.is_string()) {
        reply.text = content.get<std::string>();
    } else if (content.is_array()) {
        for (const auto& part : content) {
            if (part.is_object() && part.value("type", "") == "text" && part.contains("text") && part["text"].is_string()) {
                reply.text += part["text"].get<std::string>();
            }
        }
    } else {
        return fail("message content is neither a string nor a list of parts");
    }
    if (const auto usage = j.find("usage"); usage != j.end() && usage->is_object()) {
        if (const auto ct = usage->find("completion_tokens"); ct != usage->end() && ct->is_number_integer()) {
            reply.completion_tokens = ct->get<int>();
        }
    }
    return reply;
}

namespace detail {

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

inline ParsedUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error(ErrorCode::InvalidArgument, "endpoint must be an absolute URL");
    const auto path_begin = url.find('/', scheme_end + 3);
    if (path_begin == std::string::npos) return {url, "/"};
    return {url.substr(0, path_begin), url.substr(path_begin)};
}

}  // namespace detail

class RemoteBackend final : public ChatBackend {
public:
    using Inspector = std::function<void(const nlohmann::json& body)>;

    explicit RemoteBackend(RemoteConfig config) : config_(std::move(config)), url_(detail::split_url(config_.endpoint)) {}

    /// Sees every request body before it is sent.
    void set_inspector(Inspector inspector) { inspector_ = std::move(inspector); }

    ChatReply chat(std::span<const ChatMessage> messages, const SamplingParams& params) override {
        const std::string request_id = "req-" + std::to_string(++counter_);
        const auto body = build_request_body(messages, params, config_.model);
        if (inspector_) inspector_(body);
        const std::string payload = body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);

        httplib::Headers headers;
        if (const char* token = std::getenv(config_.auth_env.c_str()); token != nullptr && *token != '\0') {
            headers.emplace("Authorization", std::string("Bearer ") + token);
        }

        auto backoff = config_.retry.initial_backoff;
        std::string last_error = "no attempt made";
        const int attempts = std::max(1, config_.retry.attempts);
        for (int attempt = 1; attempt <= attempts; ++attempt) {
            httplib::Client client(url_.origin);
            const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
            const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
            client.set_connection_timeout(secs.count(), usecs.count());
            client.set_read_timeout(secs.count(), usecs.count());
            client.set_write_timeout(secs.count(), usecs.count());

            auto res = client.Post(url_.path, headers, payload, "application/json");
            if (!res) {
                last_error = "transport failure: " + httplib::to_string(res.error());
            } else if (res->status == 429 || res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
            } else if (res->status < 200 || res->status >= 300) {
                throw BackendError(ErrorCode::ProtocolError, request_id,
                                   "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
            } else {
                return parse_response_body(res->body, request_id);
            }
            if (attempt < attempts) {
                std::this_thread::sleep_for(backoff);
                backoff = std::chrono::milliseconds(
                    static_cast<std::int64_t>(static_cast<double>(backoff.count()) * config_.retry.multiplier));
            }
        }
        throw BackendError(ErrorCode::RemoteUnavailable, request_id,
                           last_error + " after " + std::to_string(attempts) + " attempt(s) to " + config_.endpoint);
    }

    std::string describe() const override { return "remote:" + config_.model + "@" + config_.endpoint; }

private:
    RemoteConfig config_;
    detail::ParsedUrl url_;
    Inspector inspector_;
    std::atomic<std::uint64_t> counter_{0};
};

using Responder = std::function<ChatReply(std::span<const ChatMessage>, const SamplingParams&)>;

inline int count_words(std::string_view text) {
    int n = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

/// Responder that replays fixed main-agent turns in order. Shared cursor:
/// copies of the returned function advance the same tape.
inline Responder replay_tape(std::vector<std::string> turns) {
    struct Tape {
        std::vector<std::string> turns;
        std::size_t next = 0;
        std::mutex mu;
    };
    auto tape = std::make_shared<Tape>();
    tape->turns = std::move(turns);
    return [tape](std::span<const ChatMessage>, const SamplingParams&) -> ChatReply {
        std::lock_guard lock(tape->mu);
        if (tape->next >= tape->turns.size()) {
            throw BackendError(ErrorCode::TapeExhausted, "tape-" + std::to_string(tape->next),
                               "replay tape has only " + std::to_string(tape->turns.size()) + " turn(s)");
        }
        const std::string& text = tape->turns[tape->next++];
        return {text, count_words(text)};
    };
}

/// Responder that always returns the same text (e.g. a judge verdict).
inline Responder fixed_reply(std::string text) {
    return [text = std::move(text)](std::span<const ChatMessage>, const SamplingParams&) {
        return ChatReply{text, count_words(text)};
    };
}

class ScriptedBackend final : public ChatBackend {
public:
    ScriptedBackend(std::shared_ptr<const Scene> scene, Responder responder, double fidelity = kDefaultFidelity)
        : scene_(std::move(scene)), responder_(std::move(responder)), fidelity_(fidelity) {}

    ChatReply chat(std::span<const ChatMessage> messages, const SamplingParams& params) override {
        const std::string request_id = "scripted-" + std::to_string(++counter_);
        if (is_subagent_request(messages)) {
            if (!scene_) throw BackendError(ErrorCode::ProtocolError, request_id, "no scene to answer subtasks from");
            const auto& user = messages[1];
            const auto line = parse_subtask_line(user.text);
            const auto crop = user.image ? parse_scene_crop(*user.image) : std::nullopt;
            if (!line || !crop) {
                throw BackendError(ErrorCode::ProtocolError, request_id, "subagent request is not a scene-crop subtask");
            }
            if (crop->scene_seed != scene_->seed) {
                throw BackendError(ErrorCode::ProtocolError, request_id, "crop refers to a different scene");
            }
            std::string answer = answer_subtask(*scene_, crop->bbox, ToolCall{line->first, line->second, crop->bbox}, fidelity_);
            const int tokens = count_words(answer);
            return {std::move(answer), tokens};
        }
        if (!responder_) throw BackendError(ErrorCode::ProtocolError, request_id, "no main-agent responder");
        return responder_(messages, params);
    }

    std::string describe() const override {
        return scene_ ? "scripted:scene" + std::to_string(scene_->seed) : "scripted";
    }

private:
    std::shared_ptr<const Scene> scene_;
    Responder responder_;
    double fidelity_;
    std::atomic<std::uint64_t> counter_{0};
};

/// Forwards to another backend and keeps every exchange.
class RecordingBackend final : public ChatBackend {
public:
    struct Exchange {
        std::vector<ChatMessage> request;
        std::string reply;
    };

    explicit RecordingBackend(ChatBackend& inner) : inner_(inner) {}

    ChatReply chat(std::span<const ChatMessage> messages, const SamplingParams& params) override {
        auto reply = inner_.chat(messages, params);
        std::lock_guard lock(mu_);
        exchanges_.push_back({{messages.begin(), messages.end()}, reply.text});
        return reply;
    }

    std::string describe() const override { return inner_.describe(); }

    std::vector<Exchange> exchanges() const {
        std::lock_guard lock(mu_);
        return exchanges_;
    }

private:
    ChatBackend& inner_;
    mutable std::mutex mu_;
    std::vector<Exchange> exchanges_;
};

/// Checks the request shape, then forwards.
inline ChatReply chat(std::span<const ChatMessage> messages, const SamplingParams& params, ChatBackend& backend) {
    if (messages.empty()) throw Error(ErrorCode::InvalidArgument, "chat needs at least one message");
    if (messages.front().role != Role::System) throw Error(ErrorCode::InvalidArgument, "first message must be system");
    if (params.temperature < 0.0) throw Error(ErrorCode::InvalidArgument, "temperature must be >= 0");
    if (params.max_new_tokens <= 0) throw Error(ErrorCode::InvalidArgument, "max_new_tokens must be positive");
    return backend.chat(messages, params);
}

}  // namespace scot
