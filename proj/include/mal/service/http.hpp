#pragma once

#include <httplib.h>

#include <cstdlib>
#include <string>

#include "mal/service/session.hpp"

namespace mal {

// Port and data directory may be overridden from the environment.
inline int port_from_env(int fallback) {
    if (const char* p = std::getenv("MAL_PORT")) {
        try {
            const int v = std::stoi(p);
            if (v > 0 && v < 65536) return v;
        } catch (const std::exception&) {
        }
        throw ConfigError("MAL_PORT", std::string("not a valid port: ") + p);
    }
    return fallback;
}

inline std::string data_dir_from_env(const std::string& fallback) {
    const char* d = std::getenv("MAL_DATA_DIR");
    return d ? std::string(d) : fallback;
}

template <typename T>
void mount_routes(httplib::Server& server, SessionService<T>& service) {
    auto send = [](httplib::Response& res, const Reply& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    auto parse = [](const httplib::Request& req, json& out) {
        if (req.body.empty()) {
            out = json::object();
            return true;
        }
        out = json::parse(req.body, nullptr, false);
        return !out.is_discarded() && out.is_object();
    };

    server.Post("/sessions", [&service, send, parse](const httplib::Request& req, httplib::Response& res) {
        json body;
        if (!parse(req, body)) return send(res, error_reply(400, "bad_request", "body must be a JSON object"));
        send(res, service.create(body));
    });
    server.Get(R"(/sessions/([^/]+)/query)", [&service, send](const httplib::Request& req, httplib::Response& res) {
        send(res, service.query(req.matches[1]));
    });
    server.Post(R"(/sessions/([^/]+)/label)",
                [&service, send, parse](const httplib::Request& req, httplib::Response& res) {
                    json body;
                    if (!parse(req, body))
                        return send(res, error_reply(400, "bad_request", "body must be a JSON object"));
                    send(res, service.label(req.matches[1], body));
                });
    server.Get(R"(/sessions/([^/]+)/predictions)",
               [&service, send](const httplib::Request& req, httplib::Response& res) {
                   send(res, service.predictions(req.matches[1]));
               });
    server.Delete(R"(/sessions/([^/]+))", [&service, send](const httplib::Request& req, httplib::Response& res) {
        send(res, service.remove(req.matches[1]));
    });
}

}  // namespace mal
