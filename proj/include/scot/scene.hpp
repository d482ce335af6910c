#pragma once

// Deterministic synthetic scenes: a large canvas with a few small labeled
// regions. The oracle answers subtasks from crops under a fidelity rule
// (labels are readable only through small, fully containing crops) and
// judges final answers by exact match after normalization.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "scot/error.hpp"
#include "scot/geometry.hpp"
#include "scot/protocol.hpp"
#include "scot/random.hpp"

namespace scot {

enum class Color { Red, Green, Blue, Yellow, Black, White, Orange, Purple };
enum class RegionKind { Sign, Object, ChartCell };

inline constexpr std::array<std::string_view, 8> kColorNames = {"red",   "green", "blue",   "yellow",
                                                                 "black", "white", "orange", "purple"};
inline constexpr std::array<std::string_view, 3> kKindNames = {"sign", "object", "chart-cell"};

/// Label vocabulary. Labels are drawn with weight 1/rank^2, so the first
/// word is by far the most common.
inline constexpr std::array<std::string_view, 16> kLabelWords = {
    "exit", "open", "stop", "sale", "north", "cafe",  "gate",  "hotel",
    "bank", "park", "taxi", "zoo",  "lab",   "dock",  "mill",  "quay",
};

inline const std::array<double, kLabelWords.size()>& label_weights() {
    static const auto weights = [] {
        std::array<double, kLabelWords.size()> w{};
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = 1.0 / static_cast<double>((i + 1) * (i + 1));
        return w;
    }();
    return weights;
}

/// Probability that a generated label equals kLabelWords[rank].
inline double label_probability(std::size_t rank) {
    const auto& w = label_weights();
    double total = 0.0;
    for (double x : w) total += x;
    return w.at(rank) / total;
}

constexpr std::string_view to_string(Color c) noexcept { return kColorNames[static_cast<std::size_t>(c)]; }
constexpr std::string_view to_string(RegionKind k) noexcept { return kKindNames[static_cast<std::size_t>(k)]; }

struct Region {
    int id = 0;
    BBox bbox;
    std::string label_text;
    Color color = Color::Red;
    RegionKind kind = RegionKind::Sign;

    friend bool operator==(const Region&, const Region&) = default;
};

struct Scene {
    Canvas canvas;
    std::vector<Region> regions;
    std::uint64_t seed = 0;

    const Region* find(int id) const {
        for (const auto& r : regions) {
            if (r.id == id) return &r;
        }
        return nullptr;
    }

    friend bool operator==(const Scene&, const Scene&) = default;
};

struct Task {
    std::string id;
    std::shared_ptr<const Scene> scene;
    std::string question;
    int target_region = -1;
    std::string ground_truth;
};

struct SceneOptions {
    int min_side = 64;
    int max_side = 200;
    int max_attempts_per_region = 10000;
};

inline constexpr double kDefaultFidelity = 1.0 / 64.0;

/// Places `n_regions` non-overlapping regions by seeded rejection sampling.
/// Colour/kind pairs are assigned without replacement while unused pairs
/// remain, so most regions can be named unambiguously.
inline Scene generate_scene(std::uint64_t seed, Canvas canvas, int n_regions, const SceneOptions& options = {}) {
    if (!canvas.valid()) throw Error(ErrorCode::InvalidArgument, "canvas must have positive size");
    if (n_regions < 0) throw Error(ErrorCode::InvalidArgument, "n_regions must be non-negative");
    if (options.min_side < 16 || options.max_side < options.min_side) {
        throw Error(ErrorCode::InvalidArgument, "region sides must satisfy 16 <= min_side <= max_side");
    }

    Scene scene;
    scene.canvas = canvas;
    scene.seed = seed;
    if (n_regions == 0) return scene;
    if (options.min_side > canvas.width || options.min_side > canvas.height) {
        throw Error(ErrorCode::PlacementFailure, "canvas is smaller than the minimum region size");
    }

    Rng rng(derive_seed(seed, {0x5ce9e}));
    constexpr int kPairs = static_cast<int>(kColorNames.size() * kKindNames.size());
    std::vector<int> pairs(kPairs);
    for (int i = 0; i < kPairs; ++i) pairs[i] = i;
    for (int i = kPairs - 1; i > 0; --i) std::swap(pairs[i], pairs[rng.uniform_int(0, i)]);

    const auto& weights = label_weights();
    for (int id = 0; id < n_regions; ++id) {
        std::optional<BBox> placed;
        for (int attempt = 0; attempt < options.max_attempts_per_region && !placed; ++attempt) {
            const int w = static_cast<int>(rng.uniform_int(options.min_side, std::min(options.max_side, canvas.width)));
            const int h = static_cast<int>(rng.uniform_int(options.min_side, std::min(options.max_side, canvas.height)));
            const int x = static_cast<int>(rng.uniform_int(0, canvas.width - w));
            const int y = static_cast<int>(rng.uniform_int(0, canvas.height - h));
            const BBox candidate{x, y, x + w, y + h};
            const bool clear = std::none_of(scene.regions.begin(), scene.regions.end(),
                                            [&](const Region& r) { return r.bbox.intersects(candidate); });
            if (clear) placed = candidate;
        }
        if (!placed) {
            throw Error(ErrorCode::PlacementFailure,
                        "could not place region " + std::to_string(id) + " of " + std::to_string(n_regions));
        }
        const int pair = id < kPairs ? pairs[id] : static_cast<int>(rng.uniform_int(0, kPairs - 1));
        Region region;
        region.id = id;
        region.bbox = *placed;
        region.color = static_cast<Color>(pair / static_cast<int>(kKindNames.size()));
        region.kind = static_cast<RegionKind>(pair % static_cast<int>(kKindNames.size()));
        region.label_text = std::string(kLabelWords[rng.categorical(weights)]);
        scene.regions.push_back(std::move(region));
    }
    return scene;
}

namespace detail {

inline std::string lower_ascii(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

/// Words of `text` after lowercasing and splitting on anything that is not
/// alphanumeric or '-'.
inline std::vector<std::string> keywords(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u) || c == '-') {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

struct Mention {
    std::optional<Color> color;
    std::optional<RegionKind> kind;
};

inline Mention find_mention(std::string_view text) {
    Mention m;
    for (const auto& word : keywords(text)) {
        for (std::size_t i = 0; i < kColorNames.size(); ++i) {
            if (!m.color && word == kColorNames[i]) m.color = static_cast<Color>(i);
        }
        for (std::size_t i = 0; i < kKindNames.size(); ++i) {
            if (!m.kind && word == kKindNames[i]) m.kind = static_cast<RegionKind>(i);
        }
    }
    return m;
}

inline bool matches(const Region& r, const Mention& m) {
    return (!m.color || r.color == *m.color) && (!m.kind || r.kind == *m.kind);
}

}  // namespace detail

inline std::string question_for(const Region& region) {
    return "What does the " + std::string(to_string(region.color)) + " " + std::string(to_string(region.kind)) +
           " say?";
}

/// The region a question refers to, when it names exactly one region.
inline const Region* resolve_question(const Scene& scene, std::string_view question) {
    const auto mention = detail::find_mention(question);
    if (!mention.color || !mention.kind) return nullptr;
    const Region* found = nullptr;
    for (const auto& r : scene.regions) {
        if (detail::matches(r, mention)) {
            if (found != nullptr) return nullptr;
            found = &r;
        }
    }
    return found;
}

/// Ground truth as a function of scene and question alone.
inline std::optional<std::string> ground_truth_for(const Scene& scene, std::string_view question) {
    const Region* r = resolve_question(scene, question);
    if (r == nullptr) return std::nullopt;
    return r->label_text;
}

/// Regions readable through `crop`: fully inside it, and only if the crop is
/// no larger than `fidelity` of the canvas. Row-major order.
inline std::vector<const Region*> readable_regions(const Scene& scene, const BBox& crop, double fidelity) {
    std::vector<const Region*> out;
    const auto clamped = clamp_to(crop, scene.canvas);
    if (!clamped) return out;
    if (static_cast<double>(clamped->area()) > fidelity * static_cast<double>(scene.canvas.area())) return out;
    for (const auto& r : scene.regions) {
        if (clamped->contains(r.bbox)) out.push_back(&r);
    }
    std::sort(out.begin(), out.end(), [](const Region* a, const Region* b) {
        if (a->bbox.y1 != b->bbox.y1) return a->bbox.y1 < b->bbox.y1;
        if (a->bbox.x1 != b->bbox.x1) return a->bbox.x1 < b->bbox.x1;
        return a->id < b->id;
    });
    return out;
}

inline constexpr std::string_view kUnreadable = "unreadable";

/// Atomic subtask answered from a crop.
///   ocr      labels of readable regions, joined by "; "
///   caption  "<color> <kind>" of readable regions
///   vqa      labels of readable regions matching colours/kinds named in the
///            prompt (all readable regions when the prompt names none)
/// Anything that leaves no readable region yields "unreadable".
inline std::string answer_subtask(const Scene& scene, const BBox& crop, const ToolCall& call,
                                  double fidelity = kDefaultFidelity) {
    auto readable = readable_regions(scene, crop, fidelity);
    const std::string type = detail::lower_ascii(call.task_type);

    if (type == "vqa") {
        const auto mention = detail::find_mention(call.prompt);
        std::erase_if(readable, [&](const Region* r) { return !detail::matches(*r, mention); });
    } else if (type != "ocr" && type != "caption") {
        return "unsupported task type: " + call.task_type;
    }
    if (readable.empty()) return std::string(kUnreadable);

    std::string out;
    for (const Region* r : readable) {
        if (!out.empty()) out += "; ";
        if (type == "caption") {
            out += std::string(to_string(r->color)) + " " + std::string(to_string(r->kind));
        } else {
            out += r->label_text;
        }
    }
    return out;
}

/// Lowercase, trim, collapse whitespace, strip trailing punctuation.
inline std::string normalize_answer(std::string_view text) {
    std::string collapsed;
    bool pending_space = false;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !collapsed.empty();
            continue;
        }
        if (pending_space) collapsed.push_back(' ');
        pending_space = false;
        collapsed.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    constexpr std::string_view punct = ".!?,;:";
    while (!collapsed.empty() &&
           (punct.find(collapsed.back()) != std::string_view::npos || collapsed.back() == ' ')) {
        collapsed.pop_back();
    }
    return collapsed;
}

/// Exact-match judge.
inline bool judge(std::string_view answer_text, std::string_view ground_truth) {
    return normalize_answer(answer_text) == normalize_answer(ground_truth);
}

inline bool judge(std::string_view answer_text, const Task& task) { return judge(answer_text, task.ground_truth); }

/// Target solvable by calling a vqa subagent on its enlarged box with the
/// question as prompt.
inline bool is_solvable(const Scene& scene, const Region& target, double alpha = kDefaultEnlargeAlpha,
                        double fidelity = kDefaultFidelity) {
    const std::string question = question_for(target);
    const Region* resolved = resolve_question(scene, question);
    if (resolved == nullptr || resolved->id != target.id) return false;
    const BBox crop = enlarge_bbox(target.bbox, scene.canvas, alpha);
    return answer_subtask(scene, crop, ToolCall{"vqa", question, crop}, fidelity) == target.label_text;
}

inline Task make_task(std::shared_ptr<const Scene> scene, int region_id) {
    const Region* r = scene->find(region_id);
    if (r == nullptr) throw Error(ErrorCode::InvalidArgument, "no region with id " + std::to_string(region_id));
    Task task;
    task.id = "scene" + std::to_string(scene->seed) + "-r" + std::to_string(region_id);
    task.question = question_for(*r);
    task.target_region = region_id;
    task.ground_truth = r->label_text;
    task.scene = std::move(scene);
    return task;
}

/// Picks one solvable target per scene. Returns nullopt when the scene has
/// none.
inline std::optional<Task> pick_task(std::shared_ptr<const Scene> scene, std::uint64_t seed,
                                     double alpha = kDefaultEnlargeAlpha, double fidelity = kDefaultFidelity) {
    std::vector<int> eligible;
    for (const auto& r : scene->regions) {
        if (is_solvable(*scene, r, alpha, fidelity)) eligible.push_back(r.id);
    }
    if (eligible.empty()) return std::nullopt;
    Rng rng(derive_seed(seed, {0x7a5c}));
    const auto pick = eligible[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(eligible.size()) - 1))];
    return make_task(std::move(scene), pick);
}

/// `count` scenes, one solvable task each. Scene i uses seed derived from
/// (seed, i); scenes without a solvable target are skipped and replaced.
inline std::vector<Task> make_corpus(std::uint64_t seed, int count, Canvas canvas, int n_regions,
                                     const SceneOptions& options = {}) {
    std::vector<Task> tasks;
    for (std::uint64_t i = 0; static_cast<int>(tasks.size()) < count; ++i) {
        if (i > static_cast<std::uint64_t>(count) * 100 + 100) {
            throw Error(ErrorCode::PlacementFailure, "could not build enough solvable tasks");
        }
        const std::uint64_t scene_seed = derive_seed(seed, {i}) >> 16;
        auto scene = std::make_shared<const Scene>(generate_scene(scene_seed, canvas, n_regions, options));
        if (auto task = pick_task(scene, scene_seed)) tasks.push_back(std::move(*task));
    }
    return tasks;
}

// ---------------------------------------------------------------------------
// Scene files
//
//   {"schema": "scot.scene", "version": 1,
//    "scene": {"seed": 7, "canvas": [4096, 4096],
//              "regions": [{"id": 0, "bbox": [x1, y1, x2, y2], "label": "exit",
//                           "color": "red", "kind": "sign"}, ...]},
//    "tasks": [{"id": "...", "question": "...", "target_region": 0, "ground_truth": "exit"}],
//    "config": {...}}

inline constexpr int kSceneSchemaVersion = 1;

inline nlohmann::json bbox_to_json(const BBox& b) { return nlohmann::json::array({b.x1, b.y1, b.x2, b.y2}); }

inline BBox bbox_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 4) throw Error(ErrorCode::ParseError, "bbox must be a 4-element array");
    return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

inline nlohmann::json scene_to_json(const Scene& scene) {
    nlohmann::json regions = nlohmann::json::array();
    for (const auto& r : scene.regions) {
        regions.push_back({{"id", r.id},
                           {"bbox", bbox_to_json(r.bbox)},
                           {"label", r.label_text},
                           {"color", std::string(to_string(r.color))},
                           {"kind", std::string(to_string(r.kind))}});
    }
    return {{"seed", scene.seed},
            {"canvas", nlohmann::json::array({scene.canvas.width, scene.canvas.height})},
            {"regions", std::move(regions)}};
}

inline Scene scene_from_json(const nlohmann::json& j) {
    auto lookup = [](const auto& names, const std::string& value, const char* what) {
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (names[i] == value) return i;
        }
        throw Error(ErrorCode::ParseError, std::string("unknown ") + what + " '" + value + "'");
    };
    try {
        Scene scene;
        scene.seed = j.at("seed").get<std::uint64_t>();
        scene.canvas = {j.at("canvas").at(0).get<int>(), j.at("canvas").at(1).get<int>()};
        for (const auto& r : j.at("regions")) {
            Region region;
            region.id = r.at("id").get<int>();
            region.bbox = bbox_from_json(r.at("bbox"));
            region.label_text = r.at("label").get<std::string>();
            region.color = static_cast<Color>(lookup(kColorNames, r.at("color").get<std::string>(), "color"));
            region.kind = static_cast<RegionKind>(lookup(kKindNames, r.at("kind").get<std::string>(), "kind"));
            scene.regions.push_back(std::move(region));
        }
        return scene;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("scene: ") + e.what());
    }
}

struct SceneFile {
    std::shared_ptr<const Scene> scene;
    std::vector<Task> tasks;
    nlohmann::json config;
};

inline std::string write_scene_file(const Scene& scene, const std::vector<Task>& tasks,
                                    const nlohmann::json& config = nullptr) {
    nlohmann::json task_list = nlohmann::json::array();
    for (const auto& t : tasks) {
        task_list.push_back({{"id", t.id},
                             {"question", t.question},
                             {"target_region", t.target_region},
                             {"ground_truth", t.ground_truth}});
    }
    nlohmann::json doc = {{"schema", "scot.scene"},
                          {"version", kSceneSchemaVersion},
                          {"scene", scene_to_json(scene)},
                          {"tasks", std::move(task_list)}};
    if (!config.is_null()) doc["config"] = config;
    return doc.dump(2) + "\n";
}

inline SceneFile read_scene_file(std::string_view text) {
    const auto doc = nlohmann::json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw Error(ErrorCode::ParseError, "scene file is not a JSON object");
    if (doc.value("schema", std::string{}) != "scot.scene") throw Error(ErrorCode::ParseError, "not a scene file");
    const int version = doc.value("version", -1);
    if (version != kSceneSchemaVersion) throw VersionError(kSceneSchemaVersion, version);

    SceneFile file;
    auto scene = std::make_shared<const Scene>(scene_from_json(doc.at("scene")));
    try {
        for (const auto& t : doc.value("tasks", nlohmann::json::array())) {
            Task task;
            task.id = t.at("id").get<std::string>();
            task.question = t.at("question").get<std::string>();
            task.target_region = t.at("target_region").get<int>();
            task.ground_truth = t.at("ground_truth").get<std::string>();
            task.scene = scene;
            file.tasks.push_back(std::move(task));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("tasks: ") + e.what());
    }
    file.scene = std::move(scene);
    file.config = doc.value("config", nlohmann::json());
    return file;
}

inline SceneFile load_scene_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return read_scene_file(ss.str());
}

}  // namespace scot
