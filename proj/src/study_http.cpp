#include "mammo/study_http.hpp"

#include <httplib.h>

#include <fmt/format.h>

namespace mammo {

using nlohmann::json;

int http_status(StudyError::Kind kind)
{
    switch (kind) {
    case StudyError::Kind::BadRequest:
        return 400;
    case StudyError::Kind::NotFound:
        return 404;
    case StudyError::Kind::OutOfOrder:
    case StudyError::Kind::Completed:
        return 409;
    case StudyError::Kind::NotReady:
        return 403;
    case StudyError::Kind::Integrity:
        return 500;
    }
    return 500;
}

namespace {

void reply(httplib::Response& res, int status, const json& body)
{
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

template <typename F>
void guarded(httplib::Response& res, F&& body)
{
    try {
        body();
    } catch (const StudyError& e) {
        reply(res, http_status(e.kind()), {{"error", e.what()}});
    } catch (const json::exception& e) {
        reply(res, 400, {{"error", std::string("bad request body: ") + e.what()}});
    } catch (const ConfigError& e) {
        reply(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
        reply(res, 500, {{"error", e.what()}});
    }
}

json parse_body(const httplib::Request& req)
{
    json body = json::parse(req.body);
    if (!body.is_object())
        throw StudyError(StudyError::Kind::BadRequest, "request body must be a JSON object");
    return body;
}

ConfidenceLevel level_field(const json& v)
{
    std::optional<ConfidenceLevel> level;
    if (v.is_number_integer())
        level = parse_level(std::to_string(v.get<long long>()));
    else if (v.is_string())
        level = parse_level(v.get<std::string>());
    if (!level)
        throw StudyError(StudyError::Kind::BadRequest, "level must be a level name or 1..6");
    return *level;
}

} // namespace

struct StudyServer::Impl {
    StudyService& service;
    httplib::Server server;
    bool bound = false;

    explicit Impl(StudyService& s) : service(s) {}
};

StudyServer::StudyServer(StudyService& service, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>(service))
{
    auto& srv = impl_->server;
    StudyService& svc = service;

    // No SO_REUSEPORT: a second instance on the same port must fail to bind.
    srv.set_socket_options([](socket_t sock) {
        int yes = 1;
        ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });

    srv.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { reply(res, 200, {{"status", "ok"}}); });

    srv.Post("/studies", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const json body = parse_body(req);
            const auto id = svc.create_study(body.at("observer_id").get<std::string>(),
                                             body.at("n_per_class").get<std::size_t>(),
                                             body.value("seed", std::uint64_t{0}));
            reply(res, 201, {{"session_id", id}});
        });
    });

    srv.Get(R"(/studies/([^/]+)/next)", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { reply(res, 200, next_item_json(svc.next_item(req.matches[1]))); });
    });

    srv.Post(R"(/studies/([^/]+)/ratings)", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const json body = parse_body(req);
            std::string key = body.value("idempotency_key", std::string{});
            if (key.empty())
                key = req.get_header_value("Idempotency-Key");
            const auto ack = svc.record_rating(req.matches[1], body.at("item_id").get<std::string>(),
                                               level_field(body.at("level")), key);
            reply(res, 200, rating_ack_json(ack));
        });
    });

    srv.Get(R"(/studies/([^/]+)/report)", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string id = req.matches[1];
            const RocReport report = svc.compute_report(id);
            reply(res, 200, report_json(svc.session(id), report));
        });
    });

    if (static_dir && !srv.set_mount_point("/", static_dir->string()))
        throw IoError("static directory not found: " + static_dir->string());
}

StudyServer::~StudyServer()
{
    stop();
}

int StudyServer::bind(const std::string& host, int port)
{
    int bound = port;
    if (port == 0)
        bound = impl_->server.bind_to_any_port(host);
    else if (!impl_->server.bind_to_port(host, port))
        bound = -1;
    if (bound < 0)
        throw IoError(fmt::format("cannot listen on {}:{}", host, port));
    impl_->bound = true;
    return bound;
}

void StudyServer::listen()
{
    if (!impl_->bound)
        throw IoError("server is not bound");
    impl_->server.listen_after_bind();
}

void StudyServer::stop()
{
    impl_->server.stop();
}

} // namespace mammo
