#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <openssl/evp.h>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include "json_util.hpp"
#include "sigmus/inference.hpp"

namespace sigmus {

namespace {

std::string base64(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string env_or_empty(const char* name) {
    const char* v = std::getenv(name);
    return v ? v : "";
}

}  // namespace

std::optional<HttpBackendConfig> HttpBackendConfig::from_env() {
    HttpBackendConfig c;
    c.endpoint = env_or_empty("SIGMUS_LLM_ENDPOINT");
    c.model = env_or_empty("SIGMUS_LLM_MODEL");
    c.apiKey = env_or_empty("SIGMUS_LLM_API_KEY");
    if (c.endpoint.empty() || c.model.empty()) return std::nullopt;
    return c;
}

HttpChatBackend::HttpChatBackend(HttpBackendConfig config) : config_(std::move(config)) {
    static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(config_.endpoint, m, url)) throw InferenceError("bad inference endpoint " + config_.endpoint);
    scheme_host_ = m[1];
    path_ = m[2].matched ? std::string(m[2]) : "/v1/chat/completions";
}

nlohmann::json HttpChatBackend::request_body(const BackendRequest& req, const std::string& prompt) const {
    using nlohmann::json;
    json content = prompt;
    if (req.task == Task::ImageCaption && config_.blobRoot) {
        const std::string rel = req.promptContext.value("imagePath", "");
        std::ifstream in(*config_.blobRoot / rel, std::ios::binary);
        if (in) {
            std::ostringstream ss;
            ss << in.rdbuf();
            const std::string mediaType = req.promptContext.value("mediaType", "image/png");
            content = json::array({{{"type", "text"}, {"text", prompt}},
                                   {{"type", "image_url"},
                                    {"image_url", {{"url", "data:" + mediaType + ";base64," + base64(ss.str())}}}}});
        }
    }
    return {{"model", config_.model},
            {"temperature", 0},
            {"messages", json::array({{{"role", "system"},
                                       {"content", "Answer with exactly one fenced JSON object as instructed."}},
                                      {{"role", "user"}, {"content", content}}})}};
}

std::string HttpChatBackend::complete(const BackendRequest& req, const std::string& prompt) {
    const std::string body = detail::dump_json(request_body(req, prompt));
    httplib::Client client(scheme_host_);
    const auto secs = static_cast<time_t>(config_.timeout.count());
    client.set_connection_timeout(secs, 0);
    client.set_read_timeout(secs, 0);
    client.set_write_timeout(secs, 0);
    httplib::Headers headers;
    if (!config_.apiKey.empty()) headers.emplace("Authorization", "Bearer " + config_.apiKey);

    std::string last;
    auto delay = config_.backoff;
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
        auto res = client.Post(path_, headers, body, "application/json");
        if (!res) {
            last = "connection failed: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) throw InferenceError("inference endpoint returned HTTP " + std::to_string(res->status));
        auto j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded()) throw OutputParseError("endpoint response is not JSON");
        try {
            const auto& content = j.at("choices").at(0).at("message").at("content");
            if (!content.is_string()) throw OutputParseError("message content is not a string");
            return content.get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw OutputParseError("endpoint response lacks choices[0].message.content");
        }
    }
    throw BackendUnavailable("inference endpoint unreachable after " + std::to_string(config_.retries + 1) +
                             " attempts: " + last);
}

}  // namespace sigmus
