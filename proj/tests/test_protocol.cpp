#include <gtest/gtest.h>

#include "scot/protocol.hpp"
#include "scot/random.hpp"
#include "support.hpp"

using namespace scot;

namespace {

std::string joined_raw(const std::vector<Segment>& segs) {
    std::string s;
    for (const auto& seg : segs) s += seg.raw;
    return s;
}

// Exact rational oracle for alpha = k / 1000: (g (1000 - k) + c k) / 1000,
// rounded half away from zero.
int oracle_mix(int g, int c, int k) {
    const std::int64_t num = static_cast<std::int64_t>(g) * (1000 - k) + static_cast<std::int64_t>(c) * k;
    const std::int64_t twice = 2 * num;
    // floor((2 num + 1000) / 2000) for non-negative num
    return static_cast<int>((twice + 1000) / 2000);
}

}  // namespace

TEST(ParseTurn, SplitsThinkCallAnswer) {
    const std::string text =
        "<think>look</think>\n<tool_call>\n{\"task_type\": \"ocr\", \"prompt\": \"read\", \"bbox\": [1, 2, 3, 4]}\n"
        "</tool_call>\n<answer>exit</answer>";
    const auto segs = parse_turn(text);
    ASSERT_EQ(segs.size(), 5u);
    EXPECT_EQ(segs[0].kind, SegmentKind::Think);
    EXPECT_EQ(segs[0].text, "look");
    EXPECT_EQ(segs[2].kind, SegmentKind::Call);
    ASSERT_TRUE(segs[2].call);
    EXPECT_EQ(segs[2].call->task_type, "ocr");
    EXPECT_EQ(*segs[2].call->bbox, (BBox{1, 2, 3, 4}));
    EXPECT_EQ(segs[4].kind, SegmentKind::Answer);
    EXPECT_EQ(segs[4].text, "exit");
    EXPECT_EQ(joined_raw(segs), text);
}

TEST(ParseTurn, ThinkThenBareKeyCall) {
    const auto segs =
        parse_turn("<think>find sign</think><tool_call>{task_type:\"ocr\", prompt:\"read the sign\", bbox:[10,10,50,40]}</tool_call>");
    ASSERT_EQ(segs.size(), 2u);
    EXPECT_EQ(segs[0].kind, SegmentKind::Think);
    EXPECT_EQ(segs[0].text, "find sign");
    ASSERT_EQ(segs[1].kind, SegmentKind::Call);
    EXPECT_EQ(*segs[1].call, (ToolCall{"ocr", "read the sign", BBox{10, 10, 50, 40}}));
    // Round trip through the canonical renderer.
    EXPECT_EQ(parse_turn(render_call(*segs[1].call))[0].call, segs[1].call);
}

TEST(ParseTurn, BareKeysAreAccepted) {
    const auto segs = parse_turn("<tool_call>{task_type: \"vqa\", prompt: \"a: b\", bbox: [0,0,5,5]}</tool_call>");
    ASSERT_EQ(segs.size(), 1u);
    ASSERT_TRUE(segs[0].call);
    EXPECT_EQ(segs[0].call->prompt, "a: b");
}

TEST(ParseTurn, NullOrEmptyBBoxMeansAbsent) {
    for (const char* bbox : {"null", "[]"}) {
        const auto segs =
            parse_turn(std::string("<tool_call>{\"task_type\": \"ocr\", \"prompt\": \"p\", \"bbox\": ") + bbox +
                       "}</tool_call>");
        ASSERT_TRUE(segs[0].call) << bbox;
        EXPECT_FALSE(segs[0].call->bbox);
    }
}

TEST(ParseTurn, MalformedCallsBecomePlainWithIssue) {
    const char* bodies[] = {
        "{not json}",
        "[1, 2]",
        "{\"task_type\": \"ocr\"}",
        "{\"task_type\": 3, \"prompt\": \"p\"}",
        "{\"task_type\": \"ocr\", \"prompt\": \"p\", \"bbox\": [1, 2, 3]}",
        "{\"task_type\": \"ocr\", \"prompt\": \"p\", \"bbox\": [1.5, 2, 3, 4]}",
        "{\"task_type\": \"ocr\", \"prompt\": \"p\", \"bbox\": [1, 2, 3, 99999999999]}",
        "{\"task_type\": \"ocr\", \"prompt\": \"p\", \"extra\": 1}",
    };
    for (const char* body : bodies) {
        const std::string text = std::string("<tool_call>") + body + "</tool_call>";
        const auto segs = parse_turn(text);
        ASSERT_EQ(segs.size(), 1u) << body;
        EXPECT_EQ(segs[0].kind, SegmentKind::Plain) << body;
        EXPECT_EQ(segs[0].issue, ParseIssue::MalformedCall) << body;
        EXPECT_FALSE(segs[0].note.empty());
        EXPECT_EQ(segs[0].raw, text);
    }
}

TEST(ParseTurn, UnclosedAndStrayTags) {
    auto segs = parse_turn("ok <think>never closed <answer>x</answer>");
    ASSERT_EQ(segs.size(), 2u);
    EXPECT_EQ(segs[1].issue, ParseIssue::UnclosedTag);
    EXPECT_EQ(segs[1].offset, 3u);

    segs = parse_turn("a</answer>b");
    ASSERT_EQ(segs.size(), 3u);
    EXPECT_EQ(segs[1].issue, ParseIssue::StrayClosingTag);
    EXPECT_EQ(segs[1].raw, "</answer>");
}

TEST(ParseTurn, LosslessOnRandomTagSoup) {
    const char* pieces[] = {"<think>", "</think>", "<answer>", "</answer>", "<tool_call>", "</tool_call>",
                            "{\"task_type\": \"ocr\", \"prompt\": \"x\"}", "<", ">", "text ", "\n", "<thin"};
    Rng rng(11);
    for (int trial = 0; trial < 2000; ++trial) {
        std::string text;
        const auto n = rng.uniform_int(0, 12);
        for (std::int64_t i = 0; i < n; ++i) text += pieces[rng.uniform_int(0, 11)];
        const auto segs = parse_turn(text);
        ASSERT_EQ(joined_raw(segs), text);
        std::size_t offset = 0;
        for (const auto& s : segs) {
            EXPECT_EQ(s.offset, offset);
            offset += s.raw.size();
        }
    }
}

TEST(RenderCall, RoundTripsThroughParser) {
    Rng rng(5);
    for (int i = 0; i < 500; ++i) {
        const ToolCall call = fixtures::random_call(rng);
        const auto segs = parse_turn(render_call(call));
        ASSERT_EQ(segs.size(), 1u);
        ASSERT_TRUE(segs[0].call) << render_call(call);
        EXPECT_EQ(*segs[0].call, call);
    }
}

TEST(RenderCall, CanonicalShape) {
    EXPECT_EQ(render_call(ToolCall{"ocr", "read", BBox{1, 2, 3, 4}}),
              "<tool_call>\n{\"task_type\": \"ocr\", \"prompt\": \"read\", \"bbox\": [1, 2, 3, 4]}\n</tool_call>");
    EXPECT_EQ(render_call(ToolCall{"ocr", "read", std::nullopt}),
              "<tool_call>\n{\"task_type\": \"ocr\", \"prompt\": \"read\"}\n</tool_call>");
}

TEST(ValidateCall, ConstrainedModeRules) {
    const Canvas canvas{100, 100};
    auto r = validate_call({"", " ", std::nullopt}, ValidationMode::Constrained, canvas);
    EXPECT_FALSE(r.ok());
    EXPECT_EQ(r.violations, (std::vector<Violation>{Violation::EmptyTaskType, Violation::EmptyPrompt,
                                                    Violation::MissingBBox}));
    EXPECT_FALSE(r.call);

    r = validate_call({"ocr", "p", BBox{5, 5, 5, 9}}, ValidationMode::Constrained, canvas);
    EXPECT_EQ(r.violations, std::vector<Violation>{Violation::DegenerateBBox});

    r = validate_call({"ocr", "p", BBox{200, 200, 300, 300}}, ValidationMode::Constrained, canvas);
    EXPECT_EQ(r.violations, std::vector<Violation>{Violation::BBoxOutsideCanvas});

    r = validate_call({"ocr", "p", BBox{-10, 50, 50, 150}}, ValidationMode::Constrained, canvas);
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(*r.call->bbox, (BBox{0, 50, 50, 100}));
}

TEST(ValidateCall, RelaxedModeFillsCanvas) {
    const auto r = validate_call({"", "", std::nullopt}, ValidationMode::Relaxed, {640, 480});
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(*r.call->bbox, (BBox{0, 0, 640, 480}));
}

TEST(ValidateCall, RejectsInvalidCanvas) {
    EXPECT_THROW(validate_call({"ocr", "p", std::nullopt}, ValidationMode::Relaxed, {0, 10}), Error);
}

TEST(EnlargeBBox, WorkedExample) {
    EXPECT_EQ(enlarge_bbox({100, 100, 200, 200}, {1000, 1000}, 0.05), (BBox{95, 95, 240, 240}));
}

TEST(EnlargeBBox, Endpoints) {
    const Canvas canvas{1000, 800};
    EXPECT_EQ(enlarge_bbox({10, 20, 30, 40}, canvas, 0.0), (BBox{10, 20, 30, 40}));
    EXPECT_EQ(enlarge_bbox({10, 20, 30, 40}, canvas, 1.0), (BBox{0, 0, 1000, 800}));
}

TEST(EnlargeBBox, HalfwayRoundsAwayFromZero) {
    // 10 * 0.95 = 9.5 in exact arithmetic, 9.4999... in binary.
    EXPECT_EQ(enlarge_bbox({10, 10, 20, 20}, {1000, 1000}, 0.05).x1, 10);
}

TEST(EnlargeBBox, MatchesExactRationalOracle) {
    Rng rng(21);
    for (int i = 0; i < 20000; ++i) {
        const Canvas canvas{static_cast<int>(rng.uniform_int(1, 5000)), static_cast<int>(rng.uniform_int(1, 5000))};
        const BBox g = fixtures::random_box(rng, canvas);
        const int k = static_cast<int>(rng.uniform_int(0, 1000));
        const BBox out = enlarge_bbox(g, canvas, k / 1000.0);
        const BBox expected{oracle_mix(g.x1, 0, k), oracle_mix(g.y1, 0, k), oracle_mix(g.x2, canvas.width, k),
                            oracle_mix(g.y2, canvas.height, k)};
        ASSERT_EQ(out, expected) << g << " on " << canvas << " alpha " << k << "/1000";
    }
}

TEST(EnlargeBBox, ClampsGroundFirst) {
    EXPECT_EQ(enlarge_bbox({-100, -100, 50, 50}, {100, 100}, 0.0), (BBox{0, 0, 50, 50}));
}

TEST(EnlargeBBox, RejectsBadInput) {
    EXPECT_THROW(enlarge_bbox({0, 0, 10, 10}, {100, 100}, -0.1), Error);
    EXPECT_THROW(enlarge_bbox({0, 0, 10, 10}, {100, 100}, 1.5), Error);
    EXPECT_THROW(enlarge_bbox({0, 0, 10, 10}, {100, 100}, std::nan("")), Error);
    EXPECT_THROW(enlarge_bbox({0, 0, 0, 10}, {100, 100}, 0.1), Error);
    EXPECT_THROW(enlarge_bbox({200, 200, 300, 300}, {100, 100}, 0.1), Error);
    EXPECT_THROW(enlarge_bbox({0, 0, 10, 10}, {0, 100}, 0.1), Error);
}

TEST(EnlargeBBox, ContainmentAndMonotonicity) {
    Rng rng(8);
    for (int i = 0; i < 5000; ++i) {
        const Canvas canvas{static_cast<int>(rng.uniform_int(1, 4096)), static_cast<int>(rng.uniform_int(1, 4096))};
        const BBox g = fixtures::random_box(rng, canvas);
        double a = rng.uniform01();
        double b = rng.uniform01();
        if (a > b) std::swap(a, b);
        const BBox ea = enlarge_bbox(g, canvas, a);
        const BBox eb = enlarge_bbox(g, canvas, b);
        ASSERT_TRUE(ea.contains(g));
        ASSERT_TRUE(canvas_box(canvas).contains(eb));
        ASSERT_TRUE(eb.contains(ea)) << g << " " << a << " " << b;
    }
}

TEST(Subtask, LineRoundTrip) {
    const ToolCall call{"ocr", "read the [sign] please", BBox{0, 0, 1, 1}};
    const auto parsed = parse_subtask_line(subtask_line(call));
    ASSERT_TRUE(parsed);
    EXPECT_EQ(parsed->first, "ocr");
    EXPECT_EQ(parsed->second, "read the [sign] please");
    EXPECT_FALSE(parse_subtask_line("no prefix"));
}

TEST(Subtask, MessagesAreSystemThenUserWithImage) {
    const auto messages = render_subtask_messages({"vqa", "what colour?", BBox{0, 0, 4, 4}}, {"image/png", "xyz"});
    ASSERT_EQ(messages.size(), 2u);
    EXPECT_EQ(messages[0].role, Role::System);
    EXPECT_EQ(messages[0].text, kSubagentSystemPrompt);
    EXPECT_FALSE(messages[0].image);
    EXPECT_EQ(messages[1].role, Role::User);
    EXPECT_EQ(messages[1].text, "[subtask: vqa] what colour?");
    ASSERT_TRUE(messages[1].image);
    EXPECT_EQ(messages[1].image->bytes, "xyz");
}
