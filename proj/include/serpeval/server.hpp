#pragma once

// HTTP front end of the study service.
//
//   POST /sessions                    {access_code} -> 201 {session_id}
//   POST /sessions/{id}/contact       {contact} -> 204
//   GET  /sessions/{id}/task          task payload, or 204 when none remain
//   POST /sessions/{id}/judgments     {pooled_id, binary?, graded?, skipped} -> ack
//   GET  /snapshots/{snapshot_id}     stored bytes, sandboxed
//
// Admin routes require "Authorization: Bearer <token>":
//   GET  /runs/{id}/progress
//   GET  /verdicts/items              anonymized navigational first results
//   POST /verdicts                    {item_id, correct, assessor}
//   GET  /vouchers/pending
//   POST /vouchers/ack                {session_id, task_id}
//
// Errors are {"error": message} with 400 (validation), 401 (auth),
// 404 (unknown), 409 (state conflict).

#include "serpeval/study.hpp"

#include <memory>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace serpeval::study {

struct ServerOptions {
    std::string admin_token_hash;  // sha256 hex; empty disables admin routes
    std::size_t max_body_bytes = 64 * 1024;
};

class StudyServer {
public:
    StudyServer(StudyService& service, ServerOptions options);
    ~StudyServer();
    StudyServer(const StudyServer&) = delete;
    StudyServer& operator=(const StudyServer&) = delete;

    // Binds (port 0 picks a free port) and returns the bound port.
    int bind(const std::string& host, int port);
    void listen();  // blocks until stop()
    void start();   // listen on a background thread
    void stop();

private:
    void routes();

    StudyService& service_;
    ServerOptions options_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

}  // namespace serpeval::study
