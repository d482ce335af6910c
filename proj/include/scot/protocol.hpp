#pragma once

// Message grammar of a self-calling turn: segmentation into think / tool-call /
// answer / plain spans, tool-call validation, region enlargement and the
// fixed subtask prompt sent to a subagent.
//
// Canonical tool-call block (bit-exact):
//
//   <tool_call>
//   {"task_type": "ocr", "prompt": "read the sign", "bbox": [10, 10, 50, 40]}
//   </tool_call>
//
// The parser also accepts the block inline and bare (unquoted) object keys.

#include <cctype>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "scot/chat.hpp"
#include "scot/error.hpp"
#include "scot/geometry.hpp"

namespace scot {

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";
inline constexpr std::string_view kCallOpen = "<tool_call>";
inline constexpr std::string_view kCallClose = "</tool_call>";

inline constexpr std::string_view kSubagentSystemPrompt =
    "You are a helpful assistant serving as a subagent. Given a cropped image and a question, "
    "answer the question and return the result. If further information is needed, encourage "
    "the user to make another call to the tool.";

inline constexpr double kDefaultEnlargeAlpha = 0.05;

/// One self-calling invocation: subtask category, instruction and region.
struct ToolCall {
    std::string task_type;
    std::string prompt;
    std::optional<BBox> bbox;

    friend bool operator==(const ToolCall&, const ToolCall&) = default;
};

enum class ValidationMode {
    Constrained,  ///< all three arguments required and non-empty
    Relaxed,      ///< empty strings allowed; missing bbox means the whole canvas
};

enum class SegmentKind { Think, Call, Answer, Plain };

enum class ParseIssue {
    None,
    MalformedCall,    ///< tool-call block whose body is not a valid call object
    UnclosedTag,      ///< opening tag without a matching closing tag
    StrayClosingTag,  ///< closing tag without an opening tag
};

constexpr std::string_view to_string(SegmentKind kind) noexcept {
    switch (kind) {
    case SegmentKind::Think: return "think";
    case SegmentKind::Call: return "call";
    case SegmentKind::Answer: return "answer";
    case SegmentKind::Plain: return "plain";
    }
    return "plain";
}

constexpr std::string_view to_string(ParseIssue issue) noexcept {
    switch (issue) {
    case ParseIssue::None: return "none";
    case ParseIssue::MalformedCall: return "malformed_call";
    case ParseIssue::UnclosedTag: return "unclosed_tag";
    case ParseIssue::StrayClosingTag: return "stray_closing_tag";
    }
    return "none";
}

/// A contiguous piece of a model turn. `raw` is the exact source text at
/// `offset`; `text` is the tag body (or `raw` itself for plain segments).
struct Segment {
    SegmentKind kind = SegmentKind::Plain;
    std::size_t offset = 0;
    std::string raw;
    std::string text;
    std::optional<ToolCall> call;
    ParseIssue issue = ParseIssue::None;
    std::string note;

    friend bool operator==(const Segment&, const Segment&) = default;
};

namespace detail {

inline bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
inline bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

/// Quotes bare object keys (`{task_type: ...}`) so the body parses as JSON.
inline std::string quote_bare_keys(std::string_view body) {
    std::string out;
    out.reserve(body.size() + 16);
    bool in_string = false;
    char last_structural = '\0';
    for (std::size_t i = 0; i < body.size(); ++i) {
        const char c = body[i];
        if (in_string) {
            out.push_back(c);
            if (c == '\\' && i + 1 < body.size()) {
                out.push_back(body[++i]);
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
            out.push_back(c);
            continue;
        }
        if (is_ident_start(c) && (last_structural == '{' || last_structural == ',')) {
            std::size_t j = i;
            while (j < body.size() && is_ident_char(body[j])) ++j;
            std::size_t k = j;
            while (k < body.size() && is_space(body[k])) ++k;
            if (k < body.size() && body[k] == ':') {
                out.push_back('"');
                out.append(body.substr(i, j - i));
                out.push_back('"');
                i = j - 1;
                last_structural = '\0';
                continue;
            }
        }
        if (!is_space(c)) last_structural = c;
        out.push_back(c);
    }
    return out;
}

struct CallParse {
    std::optional<ToolCall> call;
    std::string error;
};

inline CallParse parse_call_body(std::string_view body) {
    using nlohmann::json;
    const json obj = json::parse(quote_bare_keys(body), nullptr, /*allow_exceptions=*/false);
    if (obj.is_discarded()) return {std::nullopt, "tool-call body is not a structured object"};
    if (!obj.is_object()) return {std::nullopt, "tool-call body must be an object"};

    ToolCall call;
    for (const auto& [key, value] : obj.items()) {
        if (key == "task_type" || key == "prompt") {
            if (!value.is_string()) return {std::nullopt, "'" + key + "' must be a string"};
            (key == "task_type" ? call.task_type : call.prompt) = value.get<std::string>();
        } else if (key == "bbox") {
            if (value.is_null() || (value.is_array() && value.empty())) continue;
            if (!value.is_array() || value.size() != 4) {
                return {std::nullopt, "'bbox' must be a list of four integers"};
            }
            int coords[4];
            for (std::size_t i = 0; i < 4; ++i) {
                const json& v = value[i];
                if (!v.is_number_integer()) return {std::nullopt, "'bbox' must be a list of four integers"};
                const auto wide = v.get<std::int64_t>();
                if (wide < INT32_MIN || wide > INT32_MAX) return {std::nullopt, "'bbox' coordinate out of range"};
                coords[i] = static_cast<int>(wide);
            }
            call.bbox = BBox{coords[0], coords[1], coords[2], coords[3]};
        } else {
            return {std::nullopt, "unknown key '" + key + "'"};
        }
    }
    if (!obj.contains("task_type")) return {std::nullopt, "missing key 'task_type'"};
    if (!obj.contains("prompt")) return {std::nullopt, "missing key 'prompt'"};
    return {std::move(call), {}};
}

inline std::string json_quote(std::string_view s) {
    return nlohmann::json(std::string(s)).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

inline bool is_blank(std::string_view s) {
    for (char c : s) {
        if (!is_space(c)) return false;
    }
    return true;
}

}  // namespace detail

/// Splits a model turn into ordered segments that cover the input exactly.
/// Never throws: malformed blocks come back as Plain segments with an issue
/// attached so that format scoring can penalize them.
inline std::vector<Segment> parse_turn(std::string_view text) {
    struct TagInfo {
        std::string_view open;
        std::string_view close;
        SegmentKind kind;
    };
    static constexpr TagInfo kTags[] = {
        {kThinkOpen, kThinkClose, SegmentKind::Think},
        {kAnswerOpen, kAnswerClose, SegmentKind::Answer},
        {kCallOpen, kCallClose, SegmentKind::Call},
    };

    std::vector<Segment> out;
    auto push_plain = [&](std::size_t begin, std::size_t end, ParseIssue issue = ParseIssue::None,
                          std::string note = {}) {
        if (end <= begin) return;
        Segment s;
        s.kind = SegmentKind::Plain;
        s.offset = begin;
        s.raw = std::string(text.substr(begin, end - begin));
        s.text = s.raw;
        s.issue = issue;
        s.note = std::move(note);
        out.push_back(std::move(s));
    };

    std::size_t plain_start = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t lt = text.find('<', pos);
        if (lt == std::string_view::npos) break;
        const std::string_view rest = text.substr(lt);

        const TagInfo* opened = nullptr;
        const TagInfo* stray = nullptr;
        for (const auto& tag : kTags) {
            if (rest.starts_with(tag.open)) opened = &tag;
            if (rest.starts_with(tag.close)) stray = &tag;
        }
        if (opened == nullptr && stray == nullptr) {
            pos = lt + 1;
            continue;
        }

        push_plain(plain_start, lt);
        if (stray != nullptr) {
            push_plain(lt, lt + stray->close.size(), ParseIssue::StrayClosingTag,
                       "closing " + std::string(stray->close) + " without opening tag");
            pos = lt + stray->close.size();
            plain_start = pos;
            continue;
        }

        const std::size_t body_begin = lt + opened->open.size();
        const std::size_t close = text.find(opened->close, body_begin);
        if (close == std::string_view::npos) {
            push_plain(lt, text.size(), ParseIssue::UnclosedTag,
                       std::string(opened->open) + " is never closed");
            pos = plain_start = text.size();
            break;
        }
        const std::size_t end = close + opened->close.size();
        const std::string_view body = text.substr(body_begin, close - body_begin);

        Segment seg;
        seg.kind = opened->kind;
        seg.offset = lt;
        seg.raw = std::string(text.substr(lt, end - lt));
        seg.text = std::string(body);
        if (opened->kind == SegmentKind::Call) {
            auto parsed = detail::parse_call_body(body);
            if (parsed.call) {
                seg.call = std::move(parsed.call);
            } else {
                seg.kind = SegmentKind::Plain;
                seg.text = seg.raw;
                seg.issue = ParseIssue::MalformedCall;
                seg.note = std::move(parsed.error);
            }
        }
        out.push_back(std::move(seg));
        pos = plain_start = end;
    }
    push_plain(plain_start, text.size());
    return out;
}

/// Canonical block for a call; parse_turn of the result yields the same call.
inline std::string render_call(const ToolCall& call) {
    std::string out;
    out.append(kCallOpen);
    out.append("\n{\"task_type\": ");
    out.append(detail::json_quote(call.task_type));
    out.append(", \"prompt\": ");
    out.append(detail::json_quote(call.prompt));
    if (call.bbox) {
        const auto& b = *call.bbox;
        out.append(", \"bbox\": [" + std::to_string(b.x1) + ", " + std::to_string(b.y1) + ", " +
                   std::to_string(b.x2) + ", " + std::to_string(b.y2) + "]");
    }
    out.append("}\n");
    out.append(kCallClose);
    return out;
}

enum class Violation {
    EmptyTaskType,
    EmptyPrompt,
    MissingBBox,
    DegenerateBBox,
    BBoxOutsideCanvas,
};

constexpr std::string_view to_string(Violation v) noexcept {
    switch (v) {
    case Violation::EmptyTaskType: return "EmptyTaskType";
    case Violation::EmptyPrompt: return "EmptyPrompt";
    case Violation::MissingBBox: return "MissingBBox";
    case Violation::DegenerateBBox: return "DegenerateBBox";
    case Violation::BBoxOutsideCanvas: return "BBoxOutsideCanvas";
    }
    return "Unknown";
}

struct ValidationResult {
    /// Set only when `violations` is empty. The bbox is always present and
    /// clamped to the canvas.
    std::optional<ToolCall> call;
    std::vector<Violation> violations;

    bool ok() const noexcept { return violations.empty(); }
};

inline ValidationResult validate_call(const ToolCall& call, ValidationMode mode, const Canvas& canvas) {
    if (!canvas.valid()) throw Error(ErrorCode::InvalidArgument, "canvas must have positive size");

    ValidationResult result;
    const bool constrained = mode == ValidationMode::Constrained;
    if (constrained && detail::is_blank(call.task_type)) result.violations.push_back(Violation::EmptyTaskType);
    if (constrained && detail::is_blank(call.prompt)) result.violations.push_back(Violation::EmptyPrompt);

    std::optional<BBox> box;
    if (!call.bbox) {
        if (constrained) {
            result.violations.push_back(Violation::MissingBBox);
        } else {
            box = canvas_box(canvas);
        }
    } else if (call.bbox->x1 >= call.bbox->x2 || call.bbox->y1 >= call.bbox->y2) {
        result.violations.push_back(Violation::DegenerateBBox);
    } else {
        box = clamp_to(*call.bbox, canvas);
        if (!box) result.violations.push_back(Violation::BBoxOutsideCanvas);
    }

    if (result.violations.empty()) result.call = ToolCall{call.task_type, call.prompt, box};
    return result;
}

namespace detail {

/// Rounds half away from zero after snapping values within 1e-9 of the
/// half-integer grid onto it, so 9.4999999999 produced by 10 * 0.95 rounds
/// as 9.5 would.
inline int round_half_away(double v) {
    const double snapped = std::round(v * 2.0) / 2.0;
    if (std::abs(v - snapped) < 1e-9) v = snapped;
    return static_cast<int>(std::round(v));
}

}  // namespace detail

/// Interpolates each coordinate of the ground box toward the canvas box:
/// ground * (1 - alpha) + canvas * alpha, then rounds and clamps. The ground
/// box is clamped to the canvas first.
inline BBox enlarge_bbox(const BBox& ground, const Canvas& canvas, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
    if (!canvas.valid()) throw Error(ErrorCode::InvalidArgument, "canvas must have positive size");
    if (ground.x1 >= ground.x2 || ground.y1 >= ground.y2) {
        throw Error(ErrorCode::InvalidArgument, "ground box is degenerate");
    }
    const auto clamped = clamp_to(ground, canvas);
    if (!clamped) throw Error(ErrorCode::InvalidArgument, "ground box does not intersect the canvas");

    const BBox full = canvas_box(canvas);
    auto mix = [alpha](int g, int c) {
        return detail::round_half_away(std::lerp(static_cast<double>(g), static_cast<double>(c), alpha));
    };
    BBox out{mix(clamped->x1, full.x1), mix(clamped->y1, full.y1), mix(clamped->x2, full.x2),
             mix(clamped->y2, full.y2)};
    return *clamp_to(out, canvas);
}

inline std::string subtask_line(const ToolCall& call) {
    return "[subtask: " + call.task_type + "] " + call.prompt;
}

/// Inverse of subtask_line. Returns nullopt for text not in that shape.
inline std::optional<std::pair<std::string, std::string>> parse_subtask_line(std::string_view line) {
    constexpr std::string_view prefix = "[subtask: ";
    if (!line.starts_with(prefix)) return std::nullopt;
    const std::size_t close = line.find("] ", prefix.size());
    if (close == std::string_view::npos) return std::nullopt;
    return std::pair{std::string(line.substr(prefix.size(), close - prefix.size())),
                     std::string(line.substr(close + 2))};
}

/// The complete context of a subagent: the fixed system prompt and one user
/// message carrying the crop and the subtask line. Nothing else.
inline std::vector<ChatMessage> render_subtask_messages(const ToolCall& call, ImageAttachment crop) {
    std::vector<ChatMessage> messages;
    messages.push_back({Role::System, std::string(kSubagentSystemPrompt), std::nullopt});
    messages.push_back({Role::User, subtask_line(call), std::move(crop)});
    return messages;
}

}  // namespace scot
