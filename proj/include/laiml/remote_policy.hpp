#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "laiml/policy.hpp"

namespace laiml::policy {

struct RemoteEndpointConfig {
    std::string base_url;  // e.g. http://localhost:11434/v1; "/chat/completions" is appended
    std::string model;
    std::string token_env = "LAIML_POLICY_TOKEN";
    double timeout_seconds = 60.0;
    std::size_t retries = 3;           // extra transport attempts after the first
    std::size_t reparse_attempts = 1;  // extra requests after a malformed reply
    double temperature = 0.0;
    std::optional<double> vote_temperature;  // used for prediction runs when set
    std::size_t max_in_flight = 4;
    double backoff_initial_seconds = 1.0;
    double weight_max = 10.0;

    nlohmann::json to_json() const;  // never includes the token itself
    static RemoteEndpointConfig from_json(const nlohmann::json& doc);
};

class TransportError : public std::runtime_error {
public:
    TransportError(const std::string& what, bool retryable) : std::runtime_error(what), retryable_(retryable) {}
    bool retryable() const { return retryable_; }

private:
    bool retryable_;
};

// Sends one chat-completion request body and returns the raw response body.
class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    virtual std::string send(const nlohmann::json& body) const = 0;
};

class HttpChatTransport final : public ChatTransport {
public:
    explicit HttpChatTransport(RemoteEndpointConfig config);
    std::string send(const nlohmann::json& body) const override;

private:
    RemoteEndpointConfig config_;
    std::string origin_;
    std::string path_;
};

nlohmann::json build_chat_request(const std::string& model, const std::string& system_prompt,
                                  const std::string& user_prompt, double temperature);

// choices[0].message.content; throws TransportError (not retryable) when absent.
std::string extract_reply_text(const std::string& response_body);

class RemotePolicy final : public Policy {
public:
    using Sleeper = std::function<void(std::chrono::duration<double>)>;

    RemotePolicy(RemoteEndpointConfig config, std::shared_ptr<const ChatTransport> transport,
                 Sleeper sleeper = nullptr);

    PolicyResponse propose(const PolicyRequest& request) const override;
    PolicyResponse predict(const PredictionRequest& request) const override;
    std::string id() const override;

private:
    // Sends with retry/backoff; returns reply text and the retries used.
    std::string complete(const std::string& user_prompt, double temperature, std::size_t& retries) const;
    PolicyResponse request_weights(const std::string& user_prompt, double temperature,
                                   std::span<const FeatureSpec> features, const WeightSet& fallback_weights,
                                   const std::string& fallback_guidance) const;

    RemoteEndpointConfig config_;
    std::shared_ptr<const ChatTransport> transport_;
    Sleeper sleeper_;
    std::unique_ptr<std::counting_semaphore<>> in_flight_;
};

}  // namespace laiml::policy
