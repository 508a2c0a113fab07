#pragma once

#include "mammo/error.hpp"
#include "mammo/patchio.hpp"
#include "mammo/scoring.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

namespace mammo {

class StudyError : public Error {
public:
    enum class Kind {
        BadRequest,
        NotFound,
        OutOfOrder,  ///< item_id is not the one at the cursor
        Completed,   ///< rating after the session finished
        NotReady,    ///< report requested before completion
        Integrity,   ///< event log is inconsistent
    };

    StudyError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

enum class SessionStatus { Active, Complete };

struct StudyItem {
    std::string item_id; ///< opaque, position-derived
    Truth truth = Truth::Real;
    std::string path;
    friend bool operator==(const StudyItem&, const StudyItem&) = default;
};

/// Outcome of one rating request, remembered per idempotency key.
struct RatingAck {
    std::string item_id;
    ConfidenceLevel level = ConfidenceLevel::ExtremelyReal;
    std::size_t cursor = 0;
    bool complete = false;
    friend bool operator==(const RatingAck&, const RatingAck&) = default;
};

struct StudySession {
    std::string session_id;
    std::string observer_id;
    std::size_t n_per_class = 0;
    std::uint64_t seed = 0;
    std::vector<StudyItem> items;
    std::size_t cursor = 0;
    std::int64_t created_at_ms = 0;
    SessionStatus status = SessionStatus::Active;
    std::vector<Rating> ratings;
    std::map<std::string, RatingAck> acks; ///< by idempotency key

    friend bool operator==(const StudySession&, const StudySession&) = default;
};

enum class EventType { SessionCreated, RatingRecorded, SessionCompleted };

std::string_view event_token(EventType type);
std::optional<EventType> parse_event_type(std::string_view token);

struct EventRecord {
    std::uint64_t seq = 0;
    EventType type = EventType::SessionCreated;
    std::int64_t ts_ms = 0;
    nlohmann::json payload;
};

/// One JSON object per line:
/// {"seq":N,"type":"...","ts_ms":N,"ts":"ISO-8601","payload":{...}}
std::string encode_event(const EventRecord& event);
/// Throws ParseError on malformed text.
EventRecord decode_event(std::string_view line);

/// "2026-01-02T03:04:05.678Z"
std::string iso_utc(std::int64_t ms_since_epoch);

/// Everything the service knows, rebuilt purely from events.
struct StudyState {
    std::map<std::string, StudySession> sessions;
    std::uint64_t last_seq = 0;

    /// Validates and applies one event. Throws StudyError(Integrity) on a
    /// sequence gap or an event inconsistent with the current state.
    void apply(const EventRecord& event);

    friend bool operator==(const StudyState&, const StudyState&) = default;
};

struct ReplayResult {
    StudyState state;
    std::size_t valid_bytes = 0; ///< length of the prefix that was applied
    std::vector<std::string> warnings;
};

/// Rebuilds state from log bytes. A malformed final record is dropped with
/// a warning; malformed records followed by valid ones and sequence gaps
/// throw StudyError(Integrity).
ReplayResult replay_log(std::string_view bytes);

/// Append-only line log. An empty path keeps records in memory only.
class EventLog {
public:
    /// Replays an existing file, truncating a corrupt tail.
    explicit EventLog(std::filesystem::path path);
    ~EventLog();
    EventLog(const EventLog&) = delete;
    EventLog& operator=(const EventLog&) = delete;

    const ReplayResult& recovered() const noexcept { return recovered_; }

    /// Writes and syncs the record before returning. Throws IoError.
    void append(const EventRecord& event);

    /// Log contents as written so far.
    std::string contents() const;

private:
    std::filesystem::path path_;
    int fd_ = -1;
    std::string memory_;
    ReplayResult recovered_;
};

using Clock = std::function<std::int64_t()>;

/// Milliseconds since the Unix epoch from the system clock.
std::int64_t system_clock_ms();

struct ImagePayload {
    int width = 0;
    int height = 0;
    std::string pixels_base64; ///< 8-bit greyscale, row-major
};

struct NextItem {
    bool complete = false;
    std::string item_id;
    std::size_t index = 0;
    std::size_t total = 0;
    ImagePayload image;
};

std::string base64_encode(std::span<const std::uint8_t> bytes);
ImagePayload image_payload(const Patch& patch);

class StudyService {
public:
    /// Patch paths in the manifest are resolved against `image_root`.
    StudyService(Manifest manifest, std::filesystem::path image_root, std::filesystem::path log_path,
                 Clock clock = system_clock_ms);

    /// Warnings produced while recovering the log.
    const std::vector<std::string>& recovery_warnings() const noexcept { return warnings_; }

    /// Returns the new session id ("s0001", ...). Throws ConfigError when the
    /// manifest is short; nothing is logged then.
    std::string create_study(const std::string& observer_id, std::size_t n_per_class, std::uint64_t seed);

    NextItem next_item(const std::string& session_id) const;

    RatingAck record_rating(const std::string& session_id, const std::string& item_id, ConfidenceLevel level,
                            const std::string& idempotency_key);

    /// Throws StudyError(NotReady) until the session is complete.
    RocReport compute_report(const std::string& session_id) const;

    StudySession session(const std::string& session_id) const;
    StudyState snapshot() const;
    std::string log_contents() const;

private:
    void commit(EventType type, nlohmann::json payload);
    const StudySession& find(const std::string& session_id) const;

    Manifest manifest_;
    std::filesystem::path image_root_;
    Clock clock_;
    mutable std::shared_mutex mutex_;
    EventLog log_;
    StudyState state_;
    std::vector<std::string> warnings_;
};

// --- JSON bodies shared by the HTTP layer and tests ---

nlohmann::json next_item_json(const NextItem& next);
nlohmann::json rating_ack_json(const RatingAck& ack);
nlohmann::json report_json(const StudySession& session, const RocReport& report);

} // namespace mammo
