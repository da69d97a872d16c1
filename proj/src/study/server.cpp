#include "serpeval/server.hpp"
#include "serpeval/http.hpp"

namespace serpeval::study {

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
}

json parse_body(const httplib::Request& req) {
    auto body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) throw ValidationError("request body must be a JSON object");
    return body;
}

std::string string_field(const json& body, const char* name) {
    auto it = body.find(name);
    if (it == body.end() || !it->is_string()) throw ValidationError(std::string("field '") + name + "' must be a string");
    return it->get<std::string>();
}

JudgmentInput judgment_input(const json& body) {
    JudgmentInput in;
    in.pooled_id = string_field(body, "pooled_id");
    if (auto it = body.find("binary"); it != body.end() && !it->is_null()) {
        if (*it == "relevant") {
            in.relevant = true;
        } else if (*it == "not-relevant") {
            in.relevant = false;
        } else {
            throw ValidationError("binary must be \"relevant\" or \"not-relevant\"");
        }
    }
    if (auto it = body.find("graded"); it != body.end() && !it->is_null()) {
        if (!it->is_number_integer()) throw ValidationError("graded must be an integer from 0 to 4");
        auto g = it->get<std::int64_t>();
        if (g < 0 || g > 4) throw ValidationError("graded must be an integer from 0 to 4");
        in.graded = static_cast<int>(g);
    }
    if (auto it = body.find("skipped"); it != body.end() && !it->is_null()) {
        if (!it->is_boolean()) throw ValidationError("skipped must be a boolean");
        in.skipped = it->get<bool>();
    }
    return in;
}

// Runs a handler and maps harness errors onto status codes.
template <typename F>
httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const AuthError& e) {
            send_error(res, 401, e.what());
        } catch (const NotFoundError& e) {
            send_error(res, 404, e.what());
        } catch (const ConflictError& e) {
            send_error(res, 409, e.what());
        } catch (const ValidationError& e) {
            send_error(res, 400, e.what());
        } catch (const std::exception&) {
            send_error(res, 500, "internal error");
        }
    };
}

}  // namespace

StudyServer::StudyServer(StudyService& service, ServerOptions options)
    : service_(service), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
    server_->set_payload_max_length(options_.max_body_bytes);
    routes();
}

StudyServer::~StudyServer() { stop(); }

void StudyServer::routes() {
    auto& s = *server_;
    auto admin = [this](const httplib::Request& req) {
        const std::string prefix = "Bearer ";
        auto header = req.get_header_value("Authorization");
        bool ok = !options_.admin_token_hash.empty() && header.starts_with(prefix) &&
                  constant_time_equal(sha256_hex(header.substr(prefix.size())), options_.admin_token_hash);
        if (!ok) throw AuthError("admin authorization required");
    };

    s.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
        auto body = parse_body(req);
        auto code = body.find("access_code");
        if (code == body.end() || !code->is_string()) throw AuthError("invalid code");
        send_json(res, 201, {{"session_id", service_.open_session(code->get<std::string>())}});
    }));
    s.Post(R"(/sessions/([0-9a-f]+)/contact)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        service_.set_contact(req.matches[1], string_field(parse_body(req), "contact"));
        res.status = 204;
    }));
    s.Get(R"(/sessions/([0-9a-f]+)/task)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        std::string session = req.matches[1];
        auto task = service_.next_task(session);
        if (!task) {
            res.status = 204;
            return;
        }
        send_json(res, 200, service_.task_payload(session, *task));
    }));
    s.Post(R"(/sessions/([0-9a-f]+)/judgments)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        auto ack = service_.record_judgment(req.matches[1], judgment_input(parse_body(req)));
        send_json(res, 200, service_.ack_payload(ack));
    }));
    s.Get(R"(/snapshots/([0-9a-f]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        auto obj = service_.snapshot(req.matches[1].str());
        if (!obj) throw NotFoundError("unknown snapshot");
        // Stored pages must not run scripts or pull third-party resources.
        res.set_header("Content-Security-Policy",
                       "sandbox; default-src 'none'; img-src data:; style-src 'unsafe-inline'; form-action 'none'");
        res.set_header("X-Content-Type-Options", "nosniff");
        res.set_header("Referrer-Policy", "no-referrer");
        res.set_header("Cache-Control", "private, max-age=3600");
        res.status = 200;
        res.set_content(obj->content, obj->content_type);
    }));

    s.Get(R"(/runs/([A-Za-z0-9._-]+)/progress)", guarded([this, admin](const httplib::Request& req, httplib::Response& res) {
        admin(req);
        if (req.matches[1] != service_.run().run_id) throw NotFoundError("unknown run");
        send_json(res, 200, service_.progress());
    }));
    s.Get("/verdicts/items", guarded([this, admin](const httplib::Request& req, httplib::Response& res) {
        admin(req);
        send_json(res, 200, {{"items", service_.nav_items_payload()}});
    }));
    s.Post("/verdicts", guarded([this, admin](const httplib::Request& req, httplib::Response& res) {
        admin(req);
        auto body = parse_body(req);
        auto correct = body.find("correct");
        if (correct == body.end() || !correct->is_boolean()) throw ValidationError("correct must be a boolean");
        service_.record_verdict(string_field(body, "item_id"), correct->get<bool>(), string_field(body, "assessor"));
        send_json(res, 201, {{"recorded", true}});
    }));
    s.Get("/vouchers/pending", guarded([this, admin](const httplib::Request& req, httplib::Response& res) {
        admin(req);
        json out = json::array();
        for (const auto& v : service_.pending_vouchers()) {
            out.push_back({{"session_id", v.session_id},
                           {"task_id", v.task_id},
                           {"issued_at", v.issued_at},
                           {"contact", v.contact.empty() ? json(nullptr) : json(v.contact)}});
        }
        send_json(res, 200, {{"vouchers", out}});
    }));
    s.Post("/vouchers/ack", guarded([this, admin](const httplib::Request& req, httplib::Response& res) {
        admin(req);
        auto body = parse_body(req);
        service_.acknowledge_voucher(string_field(body, "session_id"), string_field(body, "task_id"));
        res.status = 204;
    }));
}

int StudyServer::bind(const std::string& host, int port) {
    if (port == 0) {
        auto bound = server_->bind_to_any_port(host);
        if (bound < 0) throw Error("cannot listen on " + host);
        return bound;
    }
    if (!server_->bind_to_port(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
    return port;
}

void StudyServer::listen() { server_->listen_after_bind(); }

void StudyServer::start() {
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

void StudyServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace serpeval::study
