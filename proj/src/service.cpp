#include <httplib.h>

#include <condition_variable>
#include <csignal>
#include <deque>
#include <thread>

#include "json_util.hpp"
#include "log.hpp"
#include "sigmus/pipeline.hpp"

namespace sigmus {

namespace {

volatile std::sig_atomic_t gSignalled = 0;

extern "C" void on_signal(int) { gSignalled = 1; }

struct SourceState {
    const SourceConfig* config = nullptr;
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<ParseResult> queue;
    std::optional<Timestamp> lastPoll;
    std::optional<Timestamp> lastSuccess;
    std::string lastError;
    std::size_t reports = 0;
};

class Service {
public:
    Service(Pipeline& p, std::atomic<bool>* external) : pipeline_(p), external_(external) {
        for (const auto& s : p.config().sources) {
            auto st = std::make_unique<SourceState>();
            st->config = &s;
            states_.push_back(std::move(st));
        }
    }

    bool stopping() const { return gSignalled || stop_.load() || (external_ && external_->load()); }

    // Sleeps in short slices so a signal is noticed promptly.
    void nap(std::chrono::milliseconds total) {
        const auto until = std::chrono::steady_clock::now() + total;
        while (!stopping() && std::chrono::steady_clock::now() < until) {
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
    }

    void fetch_loop(SourceState& st) {
        const auto& cfg = *st.config;
        const std::size_t capacity = pipeline_.config().service.queueCapacity;
        Timestamp next = detail::now_seconds();
        while (!stopping()) {
            const Timestamp now = detail::now_seconds();
            if (now < next) {
                nap(std::min<std::chrono::milliseconds>(next - now, std::chrono::milliseconds(1000)));
                continue;
            }
            ParseResult batch;
            try {
                auto fetcher = make_fetcher(cfg);
                std::optional<ArticleTexts> articles;
                if (cfg.articlesLocation) {
                    SourceConfig tmp = cfg;
                    tmp.inputLocation = *cfg.articlesLocation;
                    articles.emplace();
                    for (const auto& f : make_fetcher(tmp)->fetch(tmp, now)) articles->merge(parse_articles(f.bytes));
                }
                for (auto& file : fetcher->fetch(cfg, now)) {
                    auto part = parse_source(file.bytes, cfg, pipeline_.warehouse(), file.baseDir,
                                             articles ? &*articles : nullptr);
                    if (part.skipped) {
                        detail::log_warn(cfg.sourceName + "/" + file.name + ": skipped " + std::to_string(part.skipped));
                    }
                    std::unique_lock lock(st.mutex);
                    st.cv.wait(lock, [&] { return st.queue.size() < capacity || stopping(); });
                    if (stopping()) break;
                    st.queue.push_back(std::move(part));
                    st.cv.notify_all();
                }
                std::lock_guard lock(st.mutex);
                st.lastPoll = now;
                st.lastError.clear();
            } catch (const std::exception& e) {
                std::lock_guard lock(st.mutex);
                st.lastPoll = now;
                st.lastError = e.what();
                detail::log_warn("poll of " + cfg.sourceName + " failed: " + e.what());
            }
            next = schedule_next(pipeline_.config().sources, cfg.sourceName, now, detail::now_seconds());
        }
        st.cv.notify_all();
    }

    // Ingests batches of one source in arrival order; drains after stop.
    void ingest_loop(SourceState& st) {
        for (;;) {
            ParseResult batch;
            {
                std::unique_lock lock(st.mutex);
                st.cv.wait_for(lock, std::chrono::milliseconds(200), [&] { return !st.queue.empty() || stopping(); });
                if (st.queue.empty()) {
                    if (stopping() && fetchersDone_.load()) return;
                    continue;
                }
                batch = std::move(st.queue.front());
                st.queue.pop_front();
                st.cv.notify_all();
            }
            const std::size_t ok = pipeline_.ingest_batch(batch, *st.config);
            std::lock_guard lock(st.mutex);
            st.reports += ok;
            st.lastSuccess = detail::now_seconds();
        }
    }

    std::string health() {
        nlohmann::json sources = nlohmann::json::object();
        for (auto& st : states_) {
            std::lock_guard lock(st->mutex);
            sources[st->config->sourceName] = {
                {"lastSuccess", st->lastSuccess ? nlohmann::json(format_timestamp(*st->lastSuccess)) : nlohmann::json()},
                {"lastPoll", st->lastPoll ? nlohmann::json(format_timestamp(*st->lastPoll)) : nlohmann::json()},
                {"lastError", st->lastError},
                {"queueDepth", st->queue.size()},
                {"reportsIngested", st->reports}};
        }
        return detail::dump_json({{"status", stopping() ? "stopping" : "ok"}, {"sources", sources}});
    }

    int run() {
        const auto& svc = pipeline_.config().service;
        httplib::Server server;
        std::thread http;
        if (svc.healthPort != 0) {
            server.Get("/health", [&](const httplib::Request&, httplib::Response& res) {
                res.set_content(health(), "application/json");
            });
            int port = svc.healthPort;
            if (port < 0) {
                port = server.bind_to_any_port(svc.healthHost);
            } else if (!server.bind_to_port(svc.healthHost, port)) {
                port = -1;
            }
            if (port < 0) {
                detail::log_warn("cannot bind health endpoint on " + svc.healthHost);
                return 1;
            }
            detail::log_info("health endpoint listening on " + svc.healthHost + ":" + std::to_string(port));
            http = std::thread([&] { server.listen_after_bind(); });
        }

        std::vector<std::thread> fetchers, workers;
        for (auto& st : states_) {
            fetchers.emplace_back([this, s = st.get()] { fetch_loop(*s); });
            workers.emplace_back([this, s = st.get()] { ingest_loop(*s); });
        }
        detail::log_info("serving " + std::to_string(states_.size()) + " sources");
        while (!stopping()) std::this_thread::sleep_for(std::chrono::milliseconds(50));

        detail::log_info("shutting down");
        for (auto& st : states_) st->cv.notify_all();
        for (auto& t : fetchers) t.join();
        fetchersDone_ = true;
        for (auto& t : workers) t.join();
        int code = 0;
        try {
            pipeline_.save_state();
        } catch (const std::exception& e) {
            detail::log_warn(std::string("saving state failed: ") + e.what());
            code = 1;
        }
        if (http.joinable()) {
            server.stop();
            http.join();
        }
        return code;
    }

private:
    Pipeline& pipeline_;
    std::atomic<bool>* external_;
    std::atomic<bool> stop_{false};
    std::atomic<bool> fetchersDone_{false};
    std::vector<std::unique_ptr<SourceState>> states_;
};

}  // namespace

int run_service(Pipeline& pipeline, std::atomic<bool>* stop) {
    gSignalled = 0;
    struct sigaction sa {};
    sa.sa_handler = on_signal;
    sigemptyset(&sa.sa_mask);
    struct sigaction oldTerm {}, oldInt {};
    sigaction(SIGTERM, &sa, &oldTerm);
    sigaction(SIGINT, &sa, &oldInt);
    Service service(pipeline, stop);
    const int code = service.run();
    sigaction(SIGTERM, &oldTerm, nullptr);
    sigaction(SIGINT, &oldInt, nullptr);
    return code;
}

}  // namespace sigmus
