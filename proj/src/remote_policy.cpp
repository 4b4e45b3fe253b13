#include "laiml/remote_policy.hpp"

#include <cmath>
#include <cstdlib>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "laiml/log.hpp"
#include "laiml/text_io.hpp"

namespace laiml::policy {
namespace {

class SlotGuard {
public:
    explicit SlotGuard(std::counting_semaphore<>& slots) : slots_(slots) { slots_.acquire(); }
    ~SlotGuard() { slots_.release(); }
    SlotGuard(const SlotGuard&) = delete;
    SlotGuard& operator=(const SlotGuard&) = delete;

private:
    std::counting_semaphore<>& slots_;
};

}  // namespace

nlohmann::json RemoteEndpointConfig::to_json() const {
    nlohmann::json doc = {{"base_url", base_url},
                          {"model", model},
                          {"token_env", token_env},
                          {"timeout_seconds", timeout_seconds},
                          {"retries", retries},
                          {"reparse_attempts", reparse_attempts},
                          {"temperature", temperature},
                          {"max_in_flight", max_in_flight},
                          {"backoff_initial_seconds", backoff_initial_seconds},
                          {"weight_max", weight_max}};
    doc["vote_temperature"] = vote_temperature ? nlohmann::json(*vote_temperature) : nlohmann::json(nullptr);
    return doc;
}

RemoteEndpointConfig RemoteEndpointConfig::from_json(const nlohmann::json& doc) {
    RemoteEndpointConfig c;
    c.base_url = doc.value("base_url", c.base_url);
    c.model = doc.value("model", c.model);
    c.token_env = doc.value("token_env", c.token_env);
    c.timeout_seconds = doc.value("timeout_seconds", c.timeout_seconds);
    c.retries = doc.value("retries", c.retries);
    c.reparse_attempts = doc.value("reparse_attempts", c.reparse_attempts);
    c.temperature = doc.value("temperature", c.temperature);
    if (doc.contains("vote_temperature") && doc["vote_temperature"].is_number()) {
        c.vote_temperature = doc["vote_temperature"].get<double>();
    }
    c.max_in_flight = doc.value("max_in_flight", c.max_in_flight);
    c.backoff_initial_seconds = doc.value("backoff_initial_seconds", c.backoff_initial_seconds);
    c.weight_max = doc.value("weight_max", c.weight_max);
    return c;
}

HttpChatTransport::HttpChatTransport(RemoteEndpointConfig config) : config_(std::move(config)) {
    const auto scheme_end = config_.base_url.find("://");
    if (scheme_end == std::string::npos) {
        throw TransportError("endpoint URL needs a scheme: '" + config_.base_url + "'", false);
    }
    const auto path_start = config_.base_url.find('/', scheme_end + 3);
    origin_ = config_.base_url.substr(0, path_start);
    path_ = path_start == std::string::npos ? std::string() : config_.base_url.substr(path_start);
    while (!path_.empty() && path_.back() == '/') {
        path_.pop_back();
    }
    path_ += "/chat/completions";
}

std::string HttpChatTransport::send(const nlohmann::json& body) const {
    httplib::Client client(origin_);
    const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
    const auto seconds = static_cast<time_t>(config_.timeout_seconds);
    const auto micros = static_cast<time_t>((timeout.count() - static_cast<double>(seconds)) * 1e6);
    client.set_connection_timeout(seconds, micros);
    client.set_read_timeout(seconds, micros);
    client.set_write_timeout(seconds, micros);

    httplib::Headers headers;
    if (const char* token = std::getenv(config_.token_env.c_str()); token && *token) {
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    const auto result = client.Post(path_, headers, body.dump(), "application/json");
    if (!result) {
        throw TransportError("request to " + origin_ + path_ + " failed: " + httplib::to_string(result.error()), true);
    }
    if (result->status == 200) {
        return result->body;
    }
    const auto preview = result->body.size() > 256 ? result->body.substr(0, 256) + "..." : result->body;
    const bool retryable = result->status == 429 || result->status >= 500;
    throw TransportError("endpoint returned status " + std::to_string(result->status) + ": " + preview, retryable);
}

nlohmann::json build_chat_request(const std::string& model, const std::string& system_prompt,
                                  const std::string& user_prompt, double temperature) {
    nlohmann::json body;
    body["model"] = model;
    body["temperature"] = temperature;
    body["messages"] = nlohmann::json::array({
        {{"role", "system"}, {"content", system_prompt}},
        {{"role", "user"}, {"content", user_prompt}},
    });
    return body;
}

std::string extract_reply_text(const std::string& response_body) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(response_body);
    } catch (const nlohmann::json::exception& ex) {
        throw TransportError(std::string("response is not JSON: ") + ex.what(), false);
    }
    if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) {
        throw TransportError("response has no choices", false);
    }
    const auto& message = doc["choices"][0].value("message", nlohmann::json::object());
    if (!message.contains("content") || !message["content"].is_string()) {
        throw TransportError("response message has no text content", false);
    }
    return message["content"].get<std::string>();
}

RemotePolicy::RemotePolicy(RemoteEndpointConfig config, std::shared_ptr<const ChatTransport> transport,
                           Sleeper sleeper)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      sleeper_(std::move(sleeper)),
      in_flight_(std::make_unique<std::counting_semaphore<>>(
          static_cast<std::ptrdiff_t>(std::max<std::size_t>(config_.max_in_flight, 1)))) {
    if (!transport_) {
        throw TransportError("remote policy needs a transport", false);
    }
    if (!sleeper_) {
        sleeper_ = [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); };
    }
}

std::string RemotePolicy::id() const { return "remote(" + config_.model + ")"; }

std::string RemotePolicy::complete(const std::string& user_prompt, double temperature, std::size_t& retries) const {
    const auto body = build_chat_request(config_.model, system_prompt(), user_prompt, temperature);
    for (std::size_t attempt = 0;; ++attempt) {
        try {
            std::string raw;
            {
                SlotGuard slot(*in_flight_);
                raw = transport_->send(body);
            }
            return extract_reply_text(raw);
        } catch (const TransportError& ex) {
            if (!ex.retryable() || attempt >= config_.retries) {
                throw;
            }
            ++retries;
            const double delay = config_.backoff_initial_seconds * std::pow(2.0, static_cast<double>(attempt));
            log::warn(std::string("transport error, retrying: ") + ex.what());
            sleeper_(std::chrono::duration<double>(delay));
        }
    }
}

PolicyResponse RemotePolicy::request_weights(const std::string& user_prompt, double temperature,
                                             std::span<const FeatureSpec> features, const WeightSet& fallback_weights,
                                             const std::string& fallback_guidance) const {
    std::size_t retries = 0;
    std::string last_error;
    for (std::size_t attempt = 0; attempt <= config_.reparse_attempts; ++attempt) {
        const auto reply = complete(user_prompt, temperature, retries);
        auto parsed = parse_response(reply, features, config_.weight_max);
        if (parsed.ok()) {
            auto response = std::move(*parsed.response);
            response.transport_retries = retries;
            for (const auto& notice : response.notices) {
                log::warn(notice);
            }
            return response;
        }
        last_error = parsed.error;
        log::warn("malformed policy reply (attempt " + std::to_string(attempt + 1) + "): " + parsed.error);
    }
    PolicyResponse fallback;
    fallback.weights = fallback_weights;
    fallback.guidance = fallback_guidance;
    fallback.fell_back = true;
    fallback.transport_retries = retries;
    fallback.notices.push_back("malformed reply, kept previous weights: " + last_error);
    log::warn(fallback.notices.back());
    return fallback;
}

PolicyResponse RemotePolicy::propose(const PolicyRequest& request) const {
    return request_weights(render_calibration_prompt(request), config_.temperature, request.features,
                           request.state.weights, request.state.guidance);
}

PolicyResponse RemotePolicy::predict(const PredictionRequest& request) const {
    const double temperature = config_.vote_temperature.value_or(config_.temperature);
    return request_weights(render_prediction_prompt(request), temperature, request.features,
                           WeightSet::uniform(request.table.size()), "No usable policy reply; cold-start weights.");
}

}  // namespace laiml::policy
