#pragma once

// Trajectory store: an append-only file of record lines, each a trajectory
// with its reward breakdown and the configuration that produced it.

#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scot/error.hpp"
#include "scot/reward.hpp"
#include "scot/trajectory.hpp"

namespace scot {

inline std::string store_record(const Trajectory& t, const std::optional<RewardBreakdown>& reward,
                                const nlohmann::json& config) {
    nlohmann::json record = {{"schema", "scot.trajectory"},
                             {"version", kTrajectorySchemaVersion},
                             {"trajectory", trajectory_to_json(t)}};
    if (reward) record["reward"] = reward_to_json(*reward);
    if (!config.is_null()) record["config"] = config;
    return dump_record(record);
}

struct StoredRecord {
    Trajectory trajectory;
    std::optional<RewardBreakdown> reward;
    nlohmann::json config;
    std::size_t offset = 0;  ///< byte offset of the line in the file
};

inline StoredRecord parse_stored_record(std::string_view line, std::size_t offset) {
    StoredRecord out;
    out.offset = offset;
    out.trajectory = deserialize_trajectory(line, offset);
    const auto record = parse_record(line, offset);
    try {
        if (record.contains("reward")) out.reward = reward_from_json(record.at("reward"));
    } catch (const std::exception& e) {
        throw ParseError(offset, std::string("reward: ") + e.what());
    }
    if (record.contains("config")) out.config = record.at("config");
    return out;
}

/// Every record in the file. Blank lines are skipped; anything else that
/// does not parse fails with its absolute byte offset.
inline std::vector<StoredRecord> read_store(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open store '" + path + "'");
    std::vector<StoredRecord> out;
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
        const std::size_t next = offset + line.size() + 1;
        if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(parse_stored_record(line, offset));
        offset = next;
    }
    return out;
}

/// Appends whole lines; safe to share between threads.
class StoreWriter {
public:
    explicit StoreWriter(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::app) {
        if (!out_) throw Error(ErrorCode::IoError, "cannot open store '" + path + "' for writing");
    }

    void append(const std::string& line) {
        std::lock_guard lock(mu_);
        out_ << line << '\n';
        out_.flush();
        if (!out_) throw Error(ErrorCode::IoError, "write to '" + path_ + "' failed");
    }

private:
    std::string path_;
    std::ofstream out_;
    std::mutex mu_;
};

/// Human-readable transcript. Observation spans are tagged as masked.
inline std::string render_transcript(const Trajectory& t, const RewardBreakdown* reward = nullptr) {
    std::ostringstream os;
    os << "trajectory " << t.id << "\n";
    os << "task " << t.task.id << ": " << t.task.question << "\n";
    for (const auto& s : t.spans) {
        os << (s.masked() ? "[observation turn " : "[main turn ") << s.turn_index;
        if (s.token_count) os << ", " << *s.token_count << " tokens";
        os << (s.masked() ? ", MASKED]\n" : "]\n");
        std::istringstream lines(s.text);
        std::string line;
        while (std::getline(lines, line)) os << "    " << line << "\n";
    }
    os << "calls: " << t.calls.size() << "\n";
    for (std::size_t i = 0; i < t.calls.size(); ++i) {
        const auto& c = t.calls[i];
        os << "  #" << i << " " << to_string(c.status)
           << (c.executed_before_answer() ? " (before answer)" : " (not executed before answer)") << " turn "
           << c.turn_index << ": " << c.call.task_type << " \"" << c.call.prompt << "\"";
        if (c.call.bbox) os << " bbox " << *c.call.bbox;
        if (c.crop) os << " crop " << *c.crop;
        for (auto v : c.violations) os << " !" << to_string(v);
        os << "\n";
        if (c.observation) os << "      -> " << *c.observation << "\n";
    }
    os << "final answer: " << (t.final_answer ? *t.final_answer : std::string("(none)")) << "\n";
    os << "termination: " << to_string(t.termination);
    if (!t.metadata.error.empty()) os << " (" << t.metadata.error << ")";
    os << "\n";
    if (reward != nullptr) {
        os << "reward: acc " << reward->r_acc << " + format " << reward->r_format << " + tool "
           << (reward->bonus_paid() ? reward->r_tool : 0.0) << " (acc>0 " << reward->ind_acc_pos << ", call before answer "
           << reward->ind_tool_before_ans << (reward->ordering_enforced ? "" : ", ordering not enforced") << ") = total "
           << reward->total << "\n";
        for (auto v : reward->format_violations) os << "  format: " << to_string(v) << "\n";
    }
    return os.str();
}

}  // namespace scot
