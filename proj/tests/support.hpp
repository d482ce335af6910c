#pragma once

// Generators shared by the unit tests and the acceptance binary.

#include <memory>
#include <string>
#include <vector>

#include "scot/agents.hpp"
#include "scot/model_client.hpp"
#include "scot/orchestrator.hpp"
#include "scot/random.hpp"
#include "scot/reward.hpp"
#include "scot/scene.hpp"
#include "scot/trajectory.hpp"

namespace scot::fixtures {

inline std::string random_text(Rng& rng, int max_len) {
    static const std::string kAlphabet = "abcdefghijklmnopqrstuvwxyz ABCXYZ0123456789.,;:!?\"'\\/{}[]\n\t";
    static const char* const kUnicode[] = {"é", "ß", "中文", "🙂", "ñ", "∑"};
    std::string s;
    const auto n = rng.uniform_int(0, max_len);
    for (std::int64_t i = 0; i < n; ++i) {
        if (rng.uniform01() < 0.05) {
            s += kUnicode[rng.uniform_int(0, 5)];
        } else {
            s.push_back(kAlphabet[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(kAlphabet.size()) - 1))]);
        }
    }
    return s;
}

inline BBox random_box(Rng& rng, Canvas canvas) {
    const int x1 = static_cast<int>(rng.uniform_int(0, canvas.width - 1));
    const int y1 = static_cast<int>(rng.uniform_int(0, canvas.height - 1));
    const int x2 = static_cast<int>(rng.uniform_int(x1 + 1, canvas.width));
    const int y2 = static_cast<int>(rng.uniform_int(y1 + 1, canvas.height));
    return {x1, y1, x2, y2};
}

inline ToolCall random_call(Rng& rng) {
    static const char* const kTypes[] = {"ocr", "vqa", "caption", "grounding"};
    ToolCall c;
    c.task_type = kTypes[rng.uniform_int(0, 3)];
    c.prompt = random_text(rng, 20);
    if (rng.uniform01() < 0.8) c.bbox = random_box(rng, {1000, 1000});
    return c;
}

/// A structurally arbitrary trajectory: any field combination, including
/// ones the orchestrator would never produce. For serialization tests.
inline Trajectory random_trajectory(Rng& rng, int index = 0) {
    Trajectory t;
    t.id = "t" + std::to_string(index) + "-" + random_text(rng, 6);
    t.task = {"task-" + std::to_string(rng.uniform_int(0, 99)), random_text(rng, 30), random_text(rng, 8),
              rng.uniform01() < 0.5 ? std::optional<std::uint64_t>(rng.next()) : std::nullopt};
    const auto n_spans = rng.uniform_int(0, 6);
    for (std::int64_t i = 0; i < n_spans; ++i) {
        t.spans.push_back({random_text(rng, 60), rng.uniform01() < 0.5 ? SpanOrigin::MainAgent : SpanOrigin::SubagentObservation,
                           static_cast<int>(i / 2),
                           rng.uniform01() < 0.9 ? std::optional<int>(static_cast<int>(rng.uniform_int(0, 40))) : std::nullopt});
    }
    const auto n_calls = rng.uniform_int(0, 4);
    for (std::int64_t i = 0; i < n_calls; ++i) {
        CallRecord c;
        c.call = random_call(rng);
        c.status = static_cast<CallStatus>(rng.uniform_int(0, 4));
        c.turn_index = static_cast<int>(rng.uniform_int(0, 3));
        if (rng.uniform01() < 0.5) c.observation = random_text(rng, 20);
        if (rng.uniform01() < 0.5) c.crop = random_box(rng, {1000, 1000});
        for (int k = 0; k < 5; ++k) {
            if (rng.uniform01() < 0.1) c.violations.push_back(static_cast<Violation>(k));
        }
        t.calls.push_back(std::move(c));
    }
    if (rng.uniform01() < 0.7) t.final_answer = random_text(rng, 10);
    t.termination = static_cast<Termination>(rng.uniform_int(0, 3));
    t.metadata.seed = rng.next();
    t.metadata.backend = random_text(rng, 10);
    t.metadata.main_chats = static_cast<int>(rng.uniform_int(0, 6));
    t.metadata.subagent_chats = static_cast<int>(rng.uniform_int(0, 6));
    if (rng.uniform01() < 0.5) t.metadata.elapsed_ms = rng.uniform01() * 1000.0;
    if (rng.uniform01() < 0.2) t.metadata.error = random_text(rng, 20);
    if (rng.uniform01() < 0.2) t.metadata.trace.push_back({"main", random_text(rng, 30), random_text(rng, 30)});
    return t;
}

/// A trajectory shaped like an orchestrator output: main turns made of
/// think/call/answer pieces (some malformed), observation spans after
/// executed calls, and call records consistent with the text.
inline Trajectory random_protocol_trajectory(Rng& rng, const std::string& ground_truth, int index = 0) {
    Trajectory t;
    t.id = "p" + std::to_string(index);
    t.task = {"task", "What does the red sign say?", ground_truth, std::nullopt};
    const int turns = static_cast<int>(rng.uniform_int(1, 3));
    bool answered = false;
    for (int turn = 0; turn < turns && !answered; ++turn) {
        std::string text;
        std::vector<CallRecord> pending;
        const auto pieces = rng.uniform_int(1, 4);
        for (std::int64_t p = 0; p < pieces; ++p) {
            const double u = rng.uniform01();
            if (u < 0.25) {
                text += "<think>" + random_text(rng, 10) + "</think>";
            } else if (u < 0.3) {
                text += rng.uniform01() < 0.5 ? "<think>unfinished " : "stray</think>";
            } else if (u < 0.6) {
                ToolCall call = random_call(rng);
                text += render_call(call);
                CallRecord rec;
                rec.call = call;
                rec.turn_index = turn;
                rec.status = rng.uniform01() < 0.2 ? CallStatus::Rejected : CallStatus::Executed;
                if (rec.status == CallStatus::Rejected) rec.violations.push_back(Violation::MissingBBox);
                pending.push_back(rec);
            } else if (u < 0.65) {
                text += "<tool_call>{not json}</tool_call>";
            } else if (u < 0.95) {
                const std::string answer = rng.uniform01() < 0.5 ? ground_truth : random_text(rng, 5);
                text += "<answer>" + answer + "</answer>";
                if (!answered) {
                    answered = true;
                    t.final_answer = answer;
                }
            } else {
                text += random_text(rng, 8);
            }
        }
        t.spans.push_back({text, SpanOrigin::MainAgent, turn, static_cast<int>(rng.uniform_int(0, 20))});
        // Calls in the answering turn are never executed: before the answer
        // tag they ride along with it, after it they are post-answer calls.
        if (answered) {
            const auto segs = parse_turn(text);
            bool seen_answer = false;
            std::size_t k = 0;
            for (const auto& s : segs) {
                if (s.kind == SegmentKind::Answer) seen_answer = true;
                if (s.kind != SegmentKind::Call) continue;
                if (k < pending.size()) {
                    pending[k].status = seen_answer ? CallStatus::AfterAnswer : CallStatus::WithAnswer;
                    pending[k].violations.clear();
                }
                ++k;
            }
        }
        for (auto& rec : pending) {
            if (rec.status == CallStatus::Executed) {
                rec.observation = random_text(rng, 10);
                t.spans.push_back({*rec.observation, SpanOrigin::SubagentObservation, turn, 3});
            }
            t.calls.push_back(std::move(rec));
        }
    }
    t.termination = answered ? Termination::Answered : Termination::MaxTurns;
    return t;
}

/// Appends `n` post-answer calls to the last main span and records them.
inline Trajectory append_post_answer_calls(Trajectory t, Rng& rng, int n) {
    for (auto it = t.spans.rbegin(); it != t.spans.rend(); ++it) {
        if (it->origin != SpanOrigin::MainAgent) continue;
        for (int i = 0; i < n; ++i) {
            CallRecord rec;
            rec.call = random_call(rng);
            rec.status = CallStatus::AfterAnswer;
            rec.turn_index = it->turn_index;
            it->text += "\n" + render_call(rec.call);
            t.calls.push_back(std::move(rec));
        }
        break;
    }
    return t;
}

/// Main agent that makes two calls in two turns (a caption of a random
/// region, then vqa on the target) before answering. Gives the second
/// subagent request a main-chain history to leak.
inline Responder chain_agent(std::shared_ptr<const Scene> scene, std::string question, std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    return [scene = std::move(scene), question = std::move(question), rng](std::span<const ChatMessage> messages,
                                                                           const SamplingParams&) -> ChatReply {
        const int turn = assistant_turns(messages);
        if (turn == 0) {
            const auto& r = scene->regions[static_cast<std::size_t>(rng->uniform_int(0, static_cast<std::int64_t>(scene->regions.size()) - 1))];
            const std::string text = "<think>First look around region " + std::to_string(r.id) + ".</think>\n" +
                                     render_call(ToolCall{"caption", "describe this", r.bbox});
            return {text, count_words(text)};
        }
        if (turn == 1) {
            const Region* target = resolve_question(*scene, question);
            const BBox box = target != nullptr ? target->bbox : scene->regions.front().bbox;
            const std::string text = "<think>Now read the target.</think>\n" + render_call(ToolCall{"vqa", question, box});
            return {text, count_words(text)};
        }
        const std::string text = "<answer>" + first_observation_item(messages, "unknown") + "</answer>";
        return {text, count_words(text)};
    };
}

}  // namespace scot::fixtures
