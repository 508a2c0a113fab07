#pragma once

#include "mammo/studysvc.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace mammo {

/// HTTP status used for each StudyError kind.
int http_status(StudyError::Kind kind);

/// JSON-over-HTTP front end for a StudyService.
///
///   POST /studies                 {observer_id, n_per_class, seed} -> 201 {session_id}
///   GET  /studies/{id}/next       -> {complete:false, item_id, index, total, image} | {complete:true, total}
///   POST /studies/{id}/ratings    {item_id, level, idempotency_key} -> {cursor, complete}
///   GET  /studies/{id}/report     -> report, 403 until the session is complete
///   GET  /healthz                 -> {status:"ok"}
///
/// Errors are {"error": message} with 400, 403, 404, 409 or 500.
class StudyServer {
public:
    /// Files under `static_dir`, when given, are served from "/".
    explicit StudyServer(StudyService& service, std::optional<std::filesystem::path> static_dir = std::nullopt);
    ~StudyServer();
    StudyServer(const StudyServer&) = delete;
    StudyServer& operator=(const StudyServer&) = delete;

    /// Port 0 picks a free port. Returns the bound port; throws IoError.
    int bind(const std::string& host, int port);
    /// Serves until stop(). Requires a successful bind().
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace mammo
