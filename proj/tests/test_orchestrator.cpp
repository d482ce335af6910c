#include <gtest/gtest.h>

#include "scot/agents.hpp"
#include "scot/orchestrator.hpp"
#include "support.hpp"

using namespace scot;

namespace {

struct Fixture {
    Task task;
    const Region* target = nullptr;
};

Fixture fixture(std::uint64_t seed = 4) {
    Fixture f;
    f.task = make_corpus(seed, 1, {4096, 4096}, 8)[0];
    f.target = f.task.scene->find(f.task.target_region);
    return f;
}

std::string call_on(const BBox& b, std::string type = "vqa", std::string prompt = "What does it say?") {
    return render_call({std::move(type), std::move(prompt), b});
}

/// Answers every request with a callback; used where no scene exists.
class LambdaBackend final : public ChatBackend {
public:
    explicit LambdaBackend(Responder fn) : fn_(std::move(fn)) {}
    ChatReply chat(std::span<const ChatMessage> m, const SamplingParams& p) override { return fn_(m, p); }
    std::string describe() const override { return "lambda"; }

private:
    Responder fn_;
};

}  // namespace

TEST(Rollout, CallThenAnswer) {
    const auto f = fixture();
    ScriptedBackend inner(f.task.scene, oracle_agent(f.task.scene, f.task.question));
    RecordingBackend backend(inner);
    const auto t = run_rollout(f.task, {}, backend);

    EXPECT_EQ(t.termination, Termination::Answered);
    ASSERT_EQ(t.calls.size(), 1u);
    EXPECT_EQ(t.calls[0].status, CallStatus::Executed);
    EXPECT_TRUE(t.calls[0].executed_before_answer());
    EXPECT_EQ(t.calls[0].crop, enlarge_bbox(f.target->bbox, f.task.scene->canvas, kDefaultEnlargeAlpha));
    EXPECT_EQ(t.calls[0].observation, f.task.ground_truth);
    EXPECT_EQ(t.final_answer, f.task.ground_truth);
    ASSERT_EQ(t.spans.size(), 3u);
    EXPECT_EQ(t.spans[0].origin, SpanOrigin::MainAgent);
    EXPECT_EQ(t.spans[1].origin, SpanOrigin::SubagentObservation);
    EXPECT_EQ(t.spans[2].origin, SpanOrigin::MainAgent);
    EXPECT_EQ(t.metadata.main_chats, 2);
    EXPECT_EQ(t.metadata.subagent_chats, 1);
    EXPECT_NEAR(total_reward(t, {}, ExactMatchJudge{}).total, 2.0, 1e-12);

    // The second main request carries the observation as a tool message.
    const auto ex = backend.exchanges();
    ASSERT_EQ(ex.size(), 3u);
    const auto& second_main = ex[2].request;
    ASSERT_EQ(second_main.size(), 4u);
    EXPECT_EQ(second_main.back().role, Role::ToolResult);
    EXPECT_EQ(observation_reply(second_main.back().text), f.task.ground_truth);
}

TEST(Rollout, DirectAnswer) {
    const auto f = fixture();
    ScriptedBackend backend(f.task.scene, replay_tape({"<think>guess</think><answer>exit</answer>"}));
    const auto t = run_rollout(f.task, {}, backend);
    EXPECT_TRUE(t.calls.empty());
    EXPECT_EQ(t.final_answer, "exit");
    EXPECT_EQ(t.spans.size(), 1u);
}

TEST(Rollout, RejectedCallIsNotSent) {
    const auto f = fixture();
    ScriptedBackend backend(f.task.scene,
                            replay_tape({render_call({"ocr", "read", std::nullopt}), "<answer>x</answer>"}));
    const auto t = run_rollout(f.task, {}, backend);
    ASSERT_EQ(t.calls.size(), 1u);
    EXPECT_EQ(t.calls[0].status, CallStatus::Rejected);
    EXPECT_EQ(t.calls[0].violations, std::vector<Violation>{Violation::MissingBBox});
    EXPECT_EQ(t.metadata.subagent_chats, 0);
    EXPECT_EQ(total_reward(t, {}, ExactMatchJudge{}).format_violations,
              std::vector<FormatViolation>{FormatViolation::InvalidCall});
}

TEST(Rollout, RelaxedModeUsesTheWholeCanvas) {
    const auto f = fixture();
    ScriptedBackend backend(f.task.scene, replay_tape({render_call({"", "", std::nullopt}), "<answer>x</answer>"}));
    RolloutConfig config;
    config.mode = ValidationMode::Relaxed;
    const auto t = run_rollout(f.task, config, backend);
    ASSERT_EQ(t.calls.size(), 1u);
    EXPECT_EQ(t.calls[0].status, CallStatus::Executed);
    EXPECT_EQ(t.calls[0].crop, canvas_box(f.task.scene->canvas));
    EXPECT_EQ(t.calls[0].observation, "unsupported task type: ");
}

TEST(Rollout, CallsInTheAnsweringTurnAreNotExecuted) {
    const auto f = fixture();
    const std::string text = call_on(f.target->bbox) + "\n<answer>exit</answer>\n" + call_on(f.target->bbox) +
                             call_on(f.target->bbox);
    ScriptedBackend backend(f.task.scene, replay_tape({text}));
    const auto t = run_rollout(f.task, {}, backend);
    ASSERT_EQ(t.calls.size(), 3u);
    EXPECT_EQ(t.calls[0].status, CallStatus::WithAnswer);
    EXPECT_EQ(t.calls[1].status, CallStatus::AfterAnswer);
    EXPECT_EQ(t.calls[2].status, CallStatus::AfterAnswer);
    EXPECT_EQ(t.metadata.subagent_chats, 0);
    EXPECT_EQ(detect_hacking(t), 2);
    EXPECT_FALSE(ordering_indicator(t));
}

TEST(Rollout, OverBudgetEndsTheRollout) {
    const auto f = fixture();
    ScriptedBackend backend(f.task.scene, replay_tape({call_on(f.target->bbox) + call_on(f.target->bbox) + call_on(f.target->bbox)}));
    RolloutConfig config;
    config.max_tool_calls = 2;
    const auto t = run_rollout(f.task, config, backend);
    EXPECT_EQ(t.termination, Termination::MaxCalls);
    ASSERT_EQ(t.calls.size(), 3u);
    EXPECT_EQ(t.calls[2].status, CallStatus::OverBudget);
    EXPECT_EQ(t.metadata.subagent_chats, 2);
}

TEST(Rollout, MaxTurns) {
    const auto f = fixture();
    ScriptedBackend backend(f.task.scene, fixed_reply("<think>hmm</think>"));
    RolloutConfig config;
    config.max_turns = 3;
    const auto t = run_rollout(f.task, config, backend);
    EXPECT_EQ(t.termination, Termination::MaxTurns);
    EXPECT_EQ(t.spans.size(), 3u);
    EXPECT_FALSE(t.final_answer);
}

TEST(Rollout, BackendErrorIsRecorded) {
    const auto f = fixture();
    ScriptedBackend backend(f.task.scene, replay_tape({call_on(f.target->bbox)}));
    const auto t = run_rollout(f.task, {}, backend);
    EXPECT_EQ(t.termination, Termination::BackendError);
    EXPECT_NE(t.metadata.error.find("TapeExhausted"), std::string::npos);
    ASSERT_EQ(t.calls.size(), 1u);
    EXPECT_TRUE(t.calls[0].observation);
}

TEST(Rollout, SubagentFailureLeavesCallWithoutObservation) {
    const auto f = fixture();
    int n = 0;
    LambdaBackend backend([&](std::span<const ChatMessage> m, const SamplingParams&) -> ChatReply {
        ++n;
        if (is_subagent_request(m)) throw BackendError(ErrorCode::RemoteUnavailable, "sub", "down");
        return {call_on(f.target->bbox), 3};
    });
    const auto t = run_rollout(f.task, {}, backend);
    EXPECT_EQ(t.termination, Termination::BackendError);
    ASSERT_EQ(t.calls.size(), 1u);
    EXPECT_EQ(t.calls[0].status, CallStatus::Executed);
    EXPECT_FALSE(t.calls[0].observation);
    EXPECT_EQ(n, 2);
}

TEST(Rollout, TraceAndTimingAreOptIn) {
    const auto f = fixture();
    ScriptedBackend a(f.task.scene, oracle_agent(f.task.scene, f.task.question));
    const auto plain = run_rollout(f.task, {}, a);
    EXPECT_TRUE(plain.metadata.trace.empty());
    EXPECT_FALSE(plain.metadata.elapsed_ms);

    RolloutConfig config;
    config.trace = true;
    config.record_timing = true;
    ScriptedBackend b(f.task.scene, oracle_agent(f.task.scene, f.task.question));
    const auto traced = run_rollout(f.task, config, b);
    ASSERT_EQ(traced.metadata.trace.size(), 3u);
    EXPECT_EQ(traced.metadata.trace[1].agent, "sub");
    EXPECT_EQ(traced.metadata.trace[1].response, f.task.ground_truth);
    EXPECT_TRUE(traced.metadata.elapsed_ms);
}

TEST(Rollout, RejectsBadConfig) {
    const auto f = fixture();
    ScriptedBackend backend(f.task.scene, fixed_reply("<answer>x</answer>"));
    RolloutConfig config;
    config.max_turns = 0;
    EXPECT_THROW(run_rollout(f.task, config, backend), Error);
}

TEST(Isolation, SubagentSeesOnlyTheTemplate) {
    const auto corpus = make_corpus(17, 20, {4096, 4096}, 8);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& task = corpus[i];
        ScriptedBackend inner(task.scene, fixtures::chain_agent(task.scene, task.question, i));
        RecordingBackend backend(inner);
        const auto t = run_rollout(task, {}, backend);
        ASSERT_EQ(t.executed_calls(), 2);
        std::vector<std::vector<ChatMessage>> expected;
        for (const auto& c : t.calls) {
            const ToolCall sent{c.call.task_type, c.call.prompt, clamp_to(*c.call.bbox, task.scene->canvas)};
            expected.push_back(subagent_context(sent, crop_image(task.scene, *c.crop)));
        }
        int sub = 0;
        for (const auto& ex : backend.exchanges()) {
            if (!is_subagent_request(ex.request)) continue;
            ASSERT_LT(sub, 2);
            // The request is a function of the call alone.
            EXPECT_EQ(ex.request, expected[static_cast<std::size_t>(sub)]);
            ++sub;
            for (const auto& m : ex.request) {
                EXPECT_EQ(m.text.find("First look around"), std::string::npos);
                EXPECT_EQ(m.text.find("Now read"), std::string::npos);
                EXPECT_EQ(m.text.find("image size"), std::string::npos);
                EXPECT_EQ(m.text.find("main agent"), std::string::npos);
            }
        }
        EXPECT_EQ(sub, 2);
    }
}

TEST(Rollout, RasterImagesAreCroppedToTheEnlargedBox) {
    auto img = std::make_shared<RasterImage>();
    img->width = 200;
    img->height = 100;
    img->rgba.assign(200 * 100 * 4, 255);
    RolloutInput input{{"raster", "What is in the corner?", "cat", std::nullopt}, std::shared_ptr<const RasterImage>(img)};
    std::optional<RasterImage> seen;
    LambdaBackend backend([&](std::span<const ChatMessage> m, const SamplingParams&) -> ChatReply {
        if (is_subagent_request(m)) {
            seen = decode_png(m[1].image->bytes);
            return {"cat", 1};
        }
        if (assistant_turns(m) == 0) {
            EXPECT_EQ(decode_png(m[1].image->bytes).width, 200);
            return {render_call({"caption", "what animal?", BBox{10, 10, 30, 30}}), 5};
        }
        return {"<answer>" + first_observation_item(m, "none") + "</answer>", 1};
    });
    const auto t = run_rollout(input, {}, backend);
    ASSERT_TRUE(seen);
    const BBox crop = enlarge_bbox({10, 10, 30, 30}, {200, 100}, kDefaultEnlargeAlpha);
    EXPECT_EQ(seen->width, crop.width());
    EXPECT_EQ(seen->height, crop.height());
    EXPECT_EQ(t.final_answer, "cat");
}
