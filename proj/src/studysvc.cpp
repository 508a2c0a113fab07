#include "mammo/studysvc.hpp"

#include <fmt/format.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fcntl.h>
#include <unistd.h>

namespace mammo {

using nlohmann::json;
using Kind = StudyError::Kind;

std::string_view event_token(EventType type)
{
    switch (type) {
    case EventType::SessionCreated:
        return "SessionCreated";
    case EventType::RatingRecorded:
        return "RatingRecorded";
    case EventType::SessionCompleted:
        return "SessionCompleted";
    }
    return "?";
}

std::optional<EventType> parse_event_type(std::string_view token)
{
    for (EventType t : {EventType::SessionCreated, EventType::RatingRecorded, EventType::SessionCompleted})
        if (event_token(t) == token)
            return t;
    return std::nullopt;
}

std::string iso_utc(std::int64_t ms_since_epoch)
{
    using namespace std::chrono;
    const sys_time<milliseconds> tp{milliseconds{ms_since_epoch}};
    const sys_days day = floor<days>(tp);
    const year_month_day ymd{day};
    const hh_mm_ss hms{tp - day};
    return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z", static_cast<int>(ymd.year()),
                       static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), hms.hours().count(),
                       hms.minutes().count(), hms.seconds().count(), hms.subseconds().count());
}

std::int64_t system_clock_ms()
{
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

std::string encode_event(const EventRecord& event)
{
    json j;
    j["seq"] = event.seq;
    j["type"] = event_token(event.type);
    j["ts_ms"] = event.ts_ms;
    j["ts"] = iso_utc(event.ts_ms);
    j["payload"] = event.payload;
    return j.dump();
}

EventRecord decode_event(std::string_view line)
{
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed event: ") + e.what(), e.byte);
    }
    EventRecord ev;
    try {
        ev.seq = j.at("seq").get<std::uint64_t>();
        const auto type = parse_event_type(j.at("type").get<std::string>());
        if (!type)
            throw ParseError("unknown event type", 0);
        ev.type = *type;
        ev.ts_ms = j.at("ts_ms").get<std::int64_t>();
        ev.payload = j.at("payload");
        if (!ev.payload.is_object())
            throw ParseError("event payload is not an object", 0);
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed event: ") + e.what(), 0);
    }
    return ev;
}

// --- state ---

namespace {

StudySession& existing(StudyState& state, const std::string& id)
{
    auto it = state.sessions.find(id);
    if (it == state.sessions.end())
        throw StudyError(Kind::Integrity, "event refers to unknown session " + id);
    return it->second;
}

void apply_created(StudyState& state, const EventRecord& ev)
{
    const json& p = ev.payload;
    StudySession s;
    s.session_id = p.at("session_id").get<std::string>();
    if (state.sessions.count(s.session_id))
        throw StudyError(Kind::Integrity, "session created twice: " + s.session_id);
    s.observer_id = p.at("observer_id").get<std::string>();
    s.n_per_class = p.at("n_per_class").get<std::size_t>();
    s.seed = p.at("seed").get<std::uint64_t>();
    s.created_at_ms = ev.ts_ms;
    for (const json& it : p.at("items")) {
        const auto truth = parse_truth(it.at("truth").get<std::string>());
        if (!truth)
            throw StudyError(Kind::Integrity, "bad truth in session " + s.session_id);
        s.items.push_back({it.at("item_id").get<std::string>(), *truth, it.at("path").get<std::string>()});
    }
    if (s.items.empty())
        throw StudyError(Kind::Integrity, "session without items: " + s.session_id);
    state.sessions.emplace(s.session_id, std::move(s));
}

void apply_rating(StudyState& state, const EventRecord& ev)
{
    const json& p = ev.payload;
    StudySession& s = existing(state, p.at("session_id").get<std::string>());
    const auto item_id = p.at("item_id").get<std::string>();
    const auto key = p.at("idempotency_key").get<std::string>();
    const auto level = parse_level(p.at("level").get<std::string>());
    if (!level)
        throw StudyError(Kind::Integrity, "bad level in rating event");
    if (s.status != SessionStatus::Active || s.cursor >= s.items.size())
        throw StudyError(Kind::Integrity, "rating on finished session " + s.session_id);
    if (s.items[s.cursor].item_id != item_id)
        throw StudyError(Kind::Integrity, "rating out of order in session " + s.session_id);
    if (s.acks.count(key))
        throw StudyError(Kind::Integrity, "idempotency key applied twice: " + key);
    s.ratings.push_back({item_id, s.items[s.cursor].truth, *level, s.observer_id, ev.ts_ms});
    ++s.cursor;
    s.acks[key] = {item_id, *level, s.cursor, s.cursor == s.items.size()};
}

void apply_completed(StudyState& state, const EventRecord& ev)
{
    StudySession& s = existing(state, ev.payload.at("session_id").get<std::string>());
    if (s.status != SessionStatus::Active || s.cursor != s.items.size())
        throw StudyError(Kind::Integrity, "premature completion of " + s.session_id);
    s.status = SessionStatus::Complete;
}

} // namespace

void StudyState::apply(const EventRecord& event)
{
    if (event.seq != last_seq + 1)
        throw StudyError(Kind::Integrity, fmt::format("sequence gap: expected {}, found {}", last_seq + 1, event.seq));
    try {
        switch (event.type) {
        case EventType::SessionCreated:
            apply_created(*this, event);
            break;
        case EventType::RatingRecorded:
            apply_rating(*this, event);
            break;
        case EventType::SessionCompleted:
            apply_completed(*this, event);
            break;
        }
    } catch (const json::exception& e) {
        throw StudyError(Kind::Integrity, fmt::format("event {} has a bad payload: {}", event.seq, e.what()));
    }
    last_seq = event.seq;
}

ReplayResult replay_log(std::string_view bytes)
{
    ReplayResult r;
    const auto blank = [](std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; };
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const std::size_t nl = bytes.find('\n', pos);
        if (nl == std::string_view::npos) {
            if (!blank(bytes.substr(pos)))
                r.warnings.push_back(fmt::format("dropped unterminated record at byte {}", pos));
            break;
        }
        const std::string_view line = bytes.substr(pos, nl - pos);
        if (blank(line)) {
            pos = nl + 1;
            r.valid_bytes = pos;
            continue;
        }
        EventRecord ev;
        try {
            ev = decode_event(line);
        } catch (const ParseError& e) {
            if (!blank(bytes.substr(nl + 1)))
                throw StudyError(Kind::Integrity, fmt::format("corrupt record at byte {}: {}", pos, e.what()));
            r.warnings.push_back(fmt::format("dropped corrupt final record at byte {}", pos));
            break;
        }
        r.state.apply(ev);
        pos = nl + 1;
        r.valid_bytes = pos;
    }
    return r;
}

// --- log ---

EventLog::EventLog(std::filesystem::path path) : path_(std::move(path))
{
    if (path_.empty())
        return;
    std::error_code ec;
    if (std::filesystem::exists(path_, ec)) {
        const std::string bytes = read_text_file(path_.string());
        recovered_ = replay_log(bytes);
        memory_ = bytes.substr(0, recovered_.valid_bytes);
        if (recovered_.valid_bytes < bytes.size())
            std::filesystem::resize_file(path_, recovered_.valid_bytes, ec);
        if (ec)
            throw IoError("cannot truncate " + path_.string() + ": " + ec.message());
    } else if (path_.has_parent_path()) {
        std::filesystem::create_directories(path_.parent_path(), ec);
    }
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0)
        throw IoError("cannot open event log " + path_.string() + ": " + std::strerror(errno));
}

EventLog::~EventLog()
{
    if (fd_ >= 0)
        ::close(fd_);
}

void EventLog::append(const EventRecord& event)
{
    const std::string line = encode_event(event) + "\n";
    if (fd_ >= 0) {
        std::size_t done = 0;
        while (done < line.size()) {
            const ssize_t n = ::write(fd_, line.data() + done, line.size() - done);
            if (n < 0 && errno == EINTR)
                continue;
            if (n <= 0) {
                const std::string reason = std::strerror(errno);
                // Drop any partial record so the file stays a valid log.
                [[maybe_unused]] const int rc = ::ftruncate(fd_, static_cast<off_t>(memory_.size()));
                throw IoError("event log append failed: " + reason);
            }
            done += static_cast<std::size_t>(n);
        }
        if (::fsync(fd_) != 0)
            throw IoError(std::string("event log sync failed: ") + std::strerror(errno));
    }
    memory_ += line;
}

std::string EventLog::contents() const
{
    return memory_;
}

// --- images ---

std::string base64_encode(std::span<const std::uint8_t> bytes)
{
    static constexpr char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += table[v >> 18];
        out += table[(v >> 12) & 63];
        out += table[(v >> 6) & 63];
        out += table[v & 63];
    }
    if (const std::size_t rest = bytes.size() - i; rest > 0) {
        const std::uint32_t v = (bytes[i] << 16) | (rest == 2 ? bytes[i + 1] << 8 : 0);
        out += table[v >> 18];
        out += table[(v >> 12) & 63];
        out += rest == 2 ? table[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

ImagePayload image_payload(const Patch& patch)
{
    std::vector<std::uint8_t> px(patch.pixels().size());
    for (std::size_t i = 0; i < px.size(); ++i)
        px[i] = static_cast<std::uint8_t>(std::lround(patch.pixels()[i] * 255.0));
    return {patch.width(), patch.height(), base64_encode(px)};
}

// --- service ---

StudyService::StudyService(Manifest manifest, std::filesystem::path image_root, std::filesystem::path log_path,
                           Clock clock)
    : manifest_(std::move(manifest)), image_root_(std::move(image_root)), clock_(std::move(clock)),
      log_(std::move(log_path)), state_(log_.recovered().state), warnings_(log_.recovered().warnings)
{
    // A crash between the last rating and its completion record leaves a
    // fully rated but active session; finish it now.
    std::vector<std::string> pending;
    for (const auto& [id, s] : state_.sessions)
        if (s.status == SessionStatus::Active && s.cursor == s.items.size())
            pending.push_back(id);
    for (const auto& id : pending) {
        warnings_.push_back("completing session " + id + " after recovery");
        commit(EventType::SessionCompleted, {{"session_id", id}});
    }
}

void StudyService::commit(EventType type, json payload)
{
    EventRecord ev{state_.last_seq + 1, type, clock_(), std::move(payload)};
    log_.append(ev);
    state_.apply(ev);
}

const StudySession& StudyService::find(const std::string& session_id) const
{
    auto it = state_.sessions.find(session_id);
    if (it == state_.sessions.end())
        throw StudyError(Kind::NotFound, "unknown session " + session_id);
    return it->second;
}

std::string StudyService::create_study(const std::string& observer_id, std::size_t n_per_class, std::uint64_t seed)
{
    if (observer_id.empty())
        throw StudyError(Kind::BadRequest, "observer_id is required");
    if (n_per_class == 0)
        throw StudyError(Kind::BadRequest, "n_per_class must be positive");
    Rng rng(seed);
    const auto picked = sample_balanced(manifest_, n_per_class, rng);

    std::unique_lock lock(mutex_);
    const std::string id = fmt::format("s{:04}", state_.sessions.size() + 1);
    json items = json::array();
    for (std::size_t i = 0; i < picked.size(); ++i)
        items.push_back({{"item_id", fmt::format("i{:03}", i + 1)},
                         {"truth", truth_token(*truth_of(picked[i].label))},
                         {"path", picked[i].path}});
    commit(EventType::SessionCreated, {{"session_id", id},
                                       {"observer_id", observer_id},
                                       {"n_per_class", n_per_class},
                                       {"seed", seed},
                                       {"items", std::move(items)}});
    return id;
}

NextItem StudyService::next_item(const std::string& session_id) const
{
    NextItem next;
    std::string path;
    {
        std::shared_lock lock(mutex_);
        const StudySession& s = find(session_id);
        next.total = s.items.size();
        next.index = s.cursor;
        if (s.status == SessionStatus::Complete) {
            next.complete = true;
            return next;
        }
        next.item_id = s.items[s.cursor].item_id;
        path = s.items[s.cursor].path;
    }
    const std::filesystem::path full = image_root_ / path; // absolute paths replace the root
    next.image = image_payload(read_pgm(read_file(full.string())));
    return next;
}

RatingAck StudyService::record_rating(const std::string& session_id, const std::string& item_id,
                                      ConfidenceLevel level, const std::string& idempotency_key)
{
    if (idempotency_key.empty())
        throw StudyError(Kind::BadRequest, "idempotency_key is required");
    std::unique_lock lock(mutex_);
    const StudySession& s = find(session_id);
    if (auto it = s.acks.find(idempotency_key); it != s.acks.end()) {
        if (it->second.item_id != item_id || it->second.level != level)
            throw StudyError(Kind::BadRequest, "idempotency key reused for a different rating");
        return it->second;
    }
    if (s.status == SessionStatus::Complete)
        throw StudyError(Kind::Completed, "session " + session_id + " is complete");
    if (s.items[s.cursor].item_id != item_id)
        throw StudyError(Kind::OutOfOrder, fmt::format("expected item {}, got {}", s.items[s.cursor].item_id, item_id));

    commit(EventType::RatingRecorded, {{"session_id", session_id},
                                       {"item_id", item_id},
                                       {"level", level_token(level)},
                                       {"idempotency_key", idempotency_key}});
    const StudySession& after = find(session_id);
    if (after.cursor == after.items.size())
        commit(EventType::SessionCompleted, {{"session_id", session_id}});
    return find(session_id).acks.at(idempotency_key);
}

RocReport StudyService::compute_report(const std::string& session_id) const
{
    std::shared_lock lock(mutex_);
    const StudySession& s = find(session_id);
    if (s.status != SessionStatus::Complete)
        throw StudyError(Kind::NotReady, fmt::format("session {} has {} of {} ratings", session_id, s.cursor,
                                                     s.items.size()));
    return make_report(s.ratings);
}

StudySession StudyService::session(const std::string& session_id) const
{
    std::shared_lock lock(mutex_);
    return find(session_id);
}

StudyState StudyService::snapshot() const
{
    std::shared_lock lock(mutex_);
    return state_;
}

std::string StudyService::log_contents() const
{
    std::shared_lock lock(mutex_);
    return log_.contents();
}

// --- JSON ---

json next_item_json(const NextItem& next)
{
    if (next.complete)
        return {{"complete", true}, {"total", next.total}};
    return {{"complete", false},
            {"item_id", next.item_id},
            {"index", next.index},
            {"total", next.total},
            {"image",
             {{"width", next.image.width}, {"height", next.image.height}, {"pixels_base64", next.image.pixels_base64}}}};
}

json rating_ack_json(const RatingAck& ack)
{
    return {{"cursor", ack.cursor}, {"complete", ack.complete}};
}

json report_json(const StudySession& session, const RocReport& report)
{
    json points = json::array();
    for (const auto& p : report.points)
        points.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}});
    json counts = json::object();
    for (ConfidenceLevel l : kConfidenceLevels)
        counts[std::string(level_token(l))] = report.level_counts[level_index(l)];
    json ratings = json::array();
    for (const auto& r : session.ratings)
        ratings.push_back({{"item_id", r.item_id},
                           {"truth", truth_token(r.truth)},
                           {"level", level_token(r.level)},
                           {"ts", iso_utc(r.timestamp_ms)}});
    return {{"session_id", session.session_id},
            {"observer_id", session.observer_id},
            {"accuracy", report.accuracy},
            {"auc", report.auc},
            {"n_real", report.n_real},
            {"n_fake", report.n_fake},
            {"points", std::move(points)},
            {"level_counts", std::move(counts)},
            {"ratings", std::move(ratings)}};
}

} // namespace mammo
