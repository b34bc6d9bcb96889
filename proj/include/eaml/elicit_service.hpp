#pragma once

// Questionnaire service: per-expert sessions over a fixed rule set, served
// one card at a time in a seeded random order, with an append-only JSONL
// store that is replayed on restart.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "eaml/elicitation.hpp"
#include "eaml/error.hpp"
#include "eaml/rules.hpp"
#include "eaml/serialization.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that clashes with it.
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 128 // a panel of experts may connect at once
#endif
#include <httplib.h>

namespace eaml {

/// Request-level failure carrying the HTTP status it maps to.
class ServiceError : public Error {
public:
    ServiceError(int status, const std::string& what) : Error(what), status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

struct Session {
    std::string session_id;
    std::string expert_id;
    std::vector<std::string> order; // rule ids
    std::size_t cursor = 0;
    std::string started_at;
    std::vector<std::int64_t> elapsed_ms; // one per answered position
    std::vector<int> ratings;

    bool done() const { return cursor == order.size(); }
};

struct SessionSummary {
    std::string session_id;
    std::string expert_id;
    std::size_t cursor = 0;
    std::size_t total = 0;
    bool resumed = false;
};

struct NextRule {
    std::size_t cursor = 0;
    std::size_t total = 0;
    std::optional<RuleCard> card; // empty once the session is done
};

struct SubmitAck {
    std::size_t cursor = 0;
    std::size_t total = 0;
    bool duplicate = false;
};

/// Seeded Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = i;
    }
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

class ElicitService {
public:
    using Clock = std::function<std::string()>;

    /// `store_path` may be empty for an in-memory service.
    ElicitService(std::vector<RuleCard> cards, std::string store_path, Clock clock = utc_timestamp)
        : cards_(std::move(cards)), store_path_(std::move(store_path)), clock_(std::move(clock)) {
        if (cards_.empty()) {
            throw DataError("the questionnaire needs at least one rule");
        }
        for (std::size_t k = 0; k < cards_.size(); ++k) {
            if (!index_.emplace(cards_[k].rule_id, k).second) {
                throw DataError("rule '" + cards_[k].rule_id + "' appears twice in the rule set");
            }
        }
        if (!store_path_.empty()) {
            replay();
        }
    }

    std::size_t n_rules() const { return cards_.size(); }

    SessionSummary start_session(const std::string& expert_id, std::optional<std::uint64_t> seed = std::nullopt) {
        if (expert_id.empty()) {
            throw ServiceError(400, "expert_id must not be empty");
        }
        std::lock_guard lock(mutex_);
        if (auto it = by_expert_.find(expert_id); it != by_expert_.end()) {
            auto s = summary(sessions_.at(it->second));
            s.resumed = true;
            return s;
        }
        const std::uint64_t used = seed ? *seed : std::random_device{}();
        Session s;
        s.session_id = "s" + std::to_string(sessions_.size() + 1);
        s.expert_id = expert_id;
        for (std::size_t k : seeded_permutation(cards_.size(), used)) {
            s.order.push_back(cards_[k].rule_id);
        }
        s.started_at = clock_();
        Json line{{"type", "session"}, {"session_id", s.session_id}, {"expert_id", s.expert_id},
                  {"started_at", s.started_at}, {"order", s.order}};
        append(line);
        add_session(std::move(s));
        return summary(sessions_.at(by_expert_.at(expert_id)));
    }

    SessionSummary session(const std::string& session_id) const {
        std::lock_guard lock(mutex_);
        return summary(find(session_id));
    }

    NextRule next_rule(const std::string& session_id) const {
        std::lock_guard lock(mutex_);
        const auto& s = find(session_id);
        NextRule out;
        out.cursor = s.cursor;
        out.total = s.order.size();
        if (!s.done()) {
            out.card = cards_[index_.at(s.order[s.cursor])];
        }
        return out;
    }

    SubmitAck submit(const std::string& session_id, const std::string& rule_id, int rating, std::int64_t elapsed_ms) {
        std::lock_guard lock(mutex_);
        auto& s = find(session_id);
        if (s.cursor > 0 && s.order[s.cursor - 1] == rule_id && s.ratings.back() == rating) {
            return {s.cursor, s.order.size(), true};
        }
        if (rating < kMinRating || rating > kMaxRating) {
            throw ServiceError(400, "rating " + std::to_string(rating) + " is outside 1..5");
        }
        if (elapsed_ms < 0) {
            throw ServiceError(400, "elapsed_ms must be nonnegative");
        }
        if (s.done()) {
            throw ServiceError(409, "session " + session_id + " is already complete");
        }
        if (s.order[s.cursor] != rule_id) {
            throw ServiceError(409, "expected rule '" + s.order[s.cursor] + "', got '" + rule_id + "'");
        }
        Json line{{"type", "assessment"}, {"session_id", s.session_id}, {"expert_id", s.expert_id},
                  {"position", s.cursor}, {"rule_id", rule_id}, {"rating", rating},
                  {"elapsed_ms", elapsed_ms}, {"timestamp", clock_()}};
        append(line);
        apply_answer(s, line);
        return {s.cursor, s.order.size(), false};
    }

    /// All answers ordered by expert, then position in that expert's order.
    std::vector<ExpertAssessment> export_assessments() const {
        std::lock_guard lock(mutex_);
        std::vector<ExpertAssessment> out;
        for (const auto& [expert, idx] : by_expert_) {
            const auto& s = sessions_[idx];
            for (std::size_t k = 0; k < s.cursor; ++k) {
                out.push_back({s.expert_id, s.order[k], s.ratings[k], s.elapsed_ms[k], timestamps_.at(idx)[k]});
            }
        }
        return out;
    }

private:
    std::vector<RuleCard> cards_;
    std::unordered_map<std::string, std::size_t> index_;
    std::string store_path_;
    Clock clock_;
    mutable std::mutex mutex_;
    std::vector<Session> sessions_;
    std::vector<std::vector<std::string>> timestamps_;
    std::map<std::string, std::size_t> by_expert_; // ordered for export
    std::unordered_map<std::string, std::size_t> by_id_;

    static SessionSummary summary(const Session& s) {
        return {s.session_id, s.expert_id, s.cursor, s.order.size(), false};
    }

    Session& find(const std::string& id) {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) {
            throw ServiceError(404, "unknown session '" + id + "'");
        }
        return sessions_[it->second];
    }

    const Session& find(const std::string& id) const { return const_cast<ElicitService*>(this)->find(id); }

    void add_session(Session s) {
        by_expert_[s.expert_id] = sessions_.size();
        by_id_[s.session_id] = sessions_.size();
        sessions_.push_back(std::move(s));
        timestamps_.emplace_back();
    }

    void apply_answer(Session& s, const Json& line) {
        s.ratings.push_back(line.at("rating").get<int>());
        s.elapsed_ms.push_back(line.at("elapsed_ms").get<std::int64_t>());
        timestamps_[by_id_.at(s.session_id)].push_back(line.value("timestamp", std::string()));
        ++s.cursor;
    }

    // One write per record so a crash leaves at most a torn final line.
    void append(const Json& line) {
        if (store_path_.empty()) {
            return;
        }
        std::ofstream out(store_path_, std::ios::app | std::ios::binary);
        const std::string text = line.dump() + "\n";
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.flush();
        if (!out) {
            throw DataError("cannot append to store '" + store_path_ + "'");
        }
    }

    void replay() {
        std::ifstream in(store_path_, std::ios::binary);
        if (!in) {
            return;
        }
        const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::size_t start = 0;
        std::size_t lineno = 0;
        while (start < content.size()) {
            const std::size_t end = content.find('\n', start);
            if (end == std::string::npos) {
                break; // torn tail from an interrupted write
            }
            ++lineno;
            const std::string text = content.substr(start, end - start);
            start = end + 1;
            if (detail::trim(text).empty()) {
                continue;
            }
            replay_line(detail::parse_json(text, store_path_ + " line " + std::to_string(lineno)), lineno);
        }
    }

    void replay_line(const Json& j, std::size_t lineno) {
        const std::string where = store_path_ + " line " + std::to_string(lineno);
        const auto type = detail::get_field<std::string>(j, "type", where);
        if (type == "session") {
            Session s;
            s.session_id = detail::get_field<std::string>(j, "session_id", where);
            s.expert_id = detail::get_field<std::string>(j, "expert_id", where);
            s.started_at = j.value("started_at", std::string());
            s.order = j.at("order").get<std::vector<std::string>>();
            auto sorted = s.order;
            std::sort(sorted.begin(), sorted.end());
            std::vector<std::string> known;
            for (const auto& c : cards_) {
                known.push_back(c.rule_id);
            }
            std::sort(known.begin(), known.end());
            if (sorted != known) {
                throw DataError(where + ": session order is not a permutation of the loaded rules");
            }
            if (by_id_.count(s.session_id) || by_expert_.count(s.expert_id)) {
                throw DataError(where + ": duplicate session");
            }
            add_session(std::move(s));
        } else if (type == "assessment") {
            auto it = by_id_.find(detail::get_field<std::string>(j, "session_id", where));
            if (it == by_id_.end()) {
                throw DataError(where + ": assessment for an unknown session");
            }
            auto& s = sessions_[it->second];
            if (s.done() || j.at("position").get<std::size_t>() != s.cursor ||
                j.at("rule_id").get<std::string>() != s.order[s.cursor]) {
                throw DataError(where + ": assessment out of order");
            }
            apply_answer(s, j);
        } else {
            throw DataError(where + ": unknown record type '" + type + "'");
        }
    }
};

// ---------------------------------------------------------------------------
// HTTP binding

namespace detail {

inline void send_json(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const ServiceError& e) {
        send_json(res, e.status(), Json{{"error", e.what()}});
    } catch (const std::exception& e) {
        send_json(res, 400, Json{{"error", e.what()}});
    }
}

inline Json summary_json(const SessionSummary& s) {
    return Json{{"session_id", s.session_id}, {"expert_id", s.expert_id}, {"cursor", s.cursor},
                {"total", s.total}, {"resumed", s.resumed}};
}

inline Json request_body(const httplib::Request& req) {
    try {
        auto j = Json::parse(req.body);
        if (!j.is_object()) {
            throw ServiceError(400, "request body must be a JSON object");
        }
        return j;
    } catch (const Json::exception& e) {
        throw ServiceError(400, std::string("malformed JSON body: ") + e.what());
    }
}

} // namespace detail

/// Registers the REST routes; `static_dir`, when non-empty, is mounted at /.
inline void install_routes(httplib::Server& server, ElicitService& service, const std::string& static_dir = "") {
    using detail::guarded;
    using detail::send_json;

    server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, Json{{"status", "ok"}});
    });

    server.Post("/sessions", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const Json body = detail::request_body(req);
            if (!body.contains("expert_id") || !body["expert_id"].is_string()) {
                throw ServiceError(400, "expert_id is required");
            }
            std::optional<std::uint64_t> seed;
            if (body.contains("seed") && !body["seed"].is_null()) {
                seed = body["seed"].get<std::uint64_t>();
            }
            const auto s = service.start_session(body["expert_id"].get<std::string>(), seed);
            send_json(res, s.resumed ? 200 : 201, detail::summary_json(s));
        });
    });

    server.Get(R"(/sessions/([^/]+)/next)", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string id = req.matches[1];
            const auto next = service.next_rule(id);
            Json body{{"session_id", id}, {"cursor", next.cursor}, {"total", next.total},
                      {"done", !next.card.has_value()}};
            if (next.card) {
                body["card"] = card_to_json(*next.card);
            }
            send_json(res, 200, body);
        });
    });

    server.Post(R"(/sessions/([^/]+)/assessments)", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string id = req.matches[1];
            const Json body = detail::request_body(req);
            if (!body.contains("rule_id") || !body["rule_id"].is_string() || !body.contains("rating") ||
                !body["rating"].is_number_integer()) {
                throw ServiceError(400, "rule_id (string) and rating (integer) are required");
            }
            const std::int64_t elapsed = body.value("elapsed_ms", std::int64_t{0});
            const auto ack = service.submit(id, body["rule_id"].get<std::string>(), body["rating"].get<int>(), elapsed);
            send_json(res, 200, Json{{"ok", true}, {"cursor", ack.cursor}, {"total", ack.total},
                                     {"done", ack.cursor == ack.total}, {"duplicate", ack.duplicate}});
        });
    });

    server.Get("/export", [&service](const httplib::Request&, httplib::Response& res) {
        Json records = Json::array();
        for (const auto& a : service.export_assessments()) {
            records.push_back(assessment_to_json(a));
        }
        send_json(res, 200, Json{{"records", records}});
    });

    if (!static_dir.empty() && !server.set_mount_point("/", static_dir)) {
        throw UsageError("static directory '" + static_dir + "' does not exist");
    }
}

} // namespace eaml
