#pragma once

// Chat-completions wire client: sends the rendered exchanges to a hosted
// model with logprobs requested, retries transient failures with exponential
// backoff, and caches raw response bodies by request content hash so reruns
// are deterministic and free.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "twoturn/backend.hpp"
#include "twoturn/numeric.hpp"
#include "twoturn/paradigm.hpp"

namespace twoturn {

struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The endpoint answered but the response cannot support the paradigm
// (typically logprobs missing); the message names the absent field.
struct CapabilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct WireConfig {
    std::string base_url;  // falls back to TWOTURN_API_BASE
    std::string api_key;   // falls back to TWOTURN_API_KEY
    std::string model;
    std::string path = "/v1/chat/completions";
    std::string cache_dir;  // empty disables the cache
    int max_retries = 5;
    int base_backoff_ms = 250;
    int timeout_seconds = 120;

    void fill_from_env() {
        if (base_url.empty())
            if (const char* v = std::getenv("TWOTURN_API_BASE")) base_url = v;
        if (api_key.empty())
            if (const char* v = std::getenv("TWOTURN_API_KEY")) api_key = v;
        if (model.empty())
            if (const char* v = std::getenv("TWOTURN_MODEL")) model = v;
    }
};

struct WireResponse {
    std::string body;  // raw response bytes, byte-identical on cache hits
    std::string text;
    std::vector<PositionLogprobs> logprobs;
    bool from_cache = false;
};

namespace detail {

inline nlohmann::ordered_json request_payload(const WireConfig& cfg, const ChatExchange& ex) {
    nlohmann::ordered_json msgs = nlohmann::ordered_json::array();
    for (const auto& m : ex.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    return nlohmann::ordered_json{{"model", cfg.model},
                                  {"messages", msgs},
                                  {"temperature", ex.sampling_temperature},
                                  {"logprobs", true},
                                  {"top_logprobs", ex.logprob_request}};
}

// 128-bit content hash from two independently seeded FNV-1a passes.
inline std::string cache_key(const std::string& payload) {
    uint64_t h1 = fnv1a64(payload, 0xcbf29ce484222325ULL);
    uint64_t h2 = fnv1a64(payload, 0x9e3779b97f4a7c15ULL);
    return strfmt("%016llx%016llx", static_cast<unsigned long long>(h1),
                  static_cast<unsigned long long>(h2));
}

inline std::optional<std::string> cache_read(const std::string& dir, const std::string& key) {
    if (dir.empty()) return std::nullopt;
    std::filesystem::path p = std::filesystem::path(dir) / (key + ".json");
    std::ifstream in(p, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Write-to-temp then rename keeps concurrent writers from exposing partial
// files; last writer wins with identical content.
inline void cache_write(const std::string& dir, const std::string& key, const std::string& body) {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    std::filesystem::path final_path = std::filesystem::path(dir) / (key + ".json");
    std::filesystem::path tmp_path =
        final_path.string() + strfmt(".tmp.%llu",
                                     static_cast<unsigned long long>(
                                         std::hash<std::thread::id>{}(std::this_thread::get_id())));
    {
        std::ofstream out(tmp_path, std::ios::binary);
        out << body;
    }
    std::filesystem::rename(tmp_path, final_path);
}

inline WireResponse parse_wire_body(const std::string& body) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw TransportError(std::string("response is not valid JSON: ") + e.what());
    }
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
        throw CapabilityError("response missing field: choices");
    const auto& choice = j["choices"][0];
    if (!choice.contains("message") || !choice["message"].contains("content"))
        throw CapabilityError("response missing field: choices[0].message.content");

    WireResponse res;
    res.body = body;
    res.text = choice["message"]["content"].get<std::string>();
    if (!choice.contains("logprobs") || choice["logprobs"].is_null())
        throw CapabilityError(
            "response missing field: choices[0].logprobs (endpoint must support logprobs)");
    const auto& lp = choice["logprobs"];
    if (!lp.contains("content") || !lp["content"].is_array())
        throw CapabilityError("response missing field: choices[0].logprobs.content");
    for (const auto& pos : lp["content"]) {
        PositionLogprobs p;
        p.token = pos.at("token").get<std::string>();
        if (!pos.contains("top_logprobs") || !pos["top_logprobs"].is_array())
            throw CapabilityError(
                "response missing field: choices[0].logprobs.content[].top_logprobs");
        for (const auto& t : pos["top_logprobs"])
            p.top.push_back({t.at("token").get<std::string>(), t.at("logprob").get<double>()});
        res.logprobs.push_back(std::move(p));
    }
    return res;
}

}  // namespace detail

class WireClient {
  public:
    explicit WireClient(WireConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.fill_from_env();
        if (cfg_.base_url.empty())
            throw std::invalid_argument("wire backend needs a base URL (TWOTURN_API_BASE)");
        if (cfg_.model.empty())
            throw std::invalid_argument("wire backend needs a model id (TWOTURN_MODEL)");
    }

    const WireConfig& config() const { return cfg_; }

    WireResponse complete(const ChatExchange& exchange) const {
        std::string payload = detail::request_payload(cfg_, exchange).dump();
        std::string key = detail::cache_key(payload);
        if (auto cached = detail::cache_read(cfg_.cache_dir, key)) {
            WireResponse res = detail::parse_wire_body(*cached);
            res.from_cache = true;
            return res;
        }

        std::string body = post_with_retries(payload);
        WireResponse res = detail::parse_wire_body(body);  // validate before caching
        detail::cache_write(cfg_.cache_dir, key, body);
        return res;
    }

  private:
    std::string post_with_retries(const std::string& payload) const {
        httplib::Client cli(cfg_.base_url);
        cli.set_connection_timeout(cfg_.timeout_seconds, 0);
        cli.set_read_timeout(cfg_.timeout_seconds, 0);
        httplib::Headers headers;
        if (!cfg_.api_key.empty())
            headers.emplace("Authorization", "Bearer " + cfg_.api_key);

        std::string last_error;
        for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
            if (attempt > 0) {
                int delay = cfg_.base_backoff_ms * (1 << (attempt - 1));
                std::this_thread::sleep_for(std::chrono::milliseconds(delay));
            }
            auto result = cli.Post(cfg_.path, headers, payload, "application/json");
            if (!result) {
                last_error = strfmt("transport failure (%s)", httplib::to_string(result.error()));
                continue;
            }
            if (result->status == 429 || result->status >= 500) {
                last_error = strfmt("HTTP %d", result->status);
                continue;
            }
            if (result->status != 200)
                throw TransportError(strfmt("HTTP %d from %s: %s", result->status,
                                            cfg_.path.c_str(), result->body.c_str()));
            return result->body;
        }
        throw TransportError(strfmt("exhausted %d retries, last error: %s", cfg_.max_retries,
                                    last_error.c_str()));
    }

    WireConfig cfg_;
};

// Character offset of the answer label in a completion, using the same scan
// as parse_answer; npos when no marker parses.
inline size_t answer_char_offset(const std::string& text, Turn turn) {
    const std::string marker = turn == Turn::first ? "my answer is" : "my final answer is";
    std::string lower(text);
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    size_t pos = lower.find(marker);
    while (pos != std::string::npos) {
        size_t i = pos + marker.size();
        while (i < text.size() &&
               (text[i] == ' ' || text[i] == '\t' || text[i] == '\n' || text[i] == ':'))
            ++i;
        if (i < text.size() &&
            !(i + 1 < text.size() && std::isalnum(static_cast<unsigned char>(text[i + 1]))))
            return i;
        pos = lower.find(marker, pos + 1);
    }
    return std::string::npos;
}

// Backend adapter: renders each turn as a chat exchange (the fabricated
// turn-1 answer replaces the model's real completion in the history) and
// extracts option logits at the answered position.
class WireBackend : public Backend {
  public:
    explicit WireBackend(WireConfig cfg) : client_(std::move(cfg)) {}

    std::string id() const override { return "wire(" + client_.config().model + ")"; }

    TurnOutcome first_turn(const Question& question, const std::string& prompt,
                           std::mt19937_64&) override {
        ChatExchange ex;
        ex.messages = {{"user", prompt}};
        return run_turn(question, ex, Turn::first);
    }

    TurnOutcome second_turn(const Question& question, const Condition&,
                            const SecondTurnContext& ctx, std::mt19937_64&) override {
        ChatExchange ex;
        ex.messages = {{"user", ctx.turn1_prompt},
                       {"assistant", ctx.fabricated_message},
                       {"user", ctx.user_message}};
        return run_turn(question, ex, Turn::final);
    }

  private:
    TurnOutcome run_turn(const Question& question, const ChatExchange& ex, Turn turn) {
        TurnOutcome out;
        WireResponse res;
        try {
            res = client_.complete(ex);
        } catch (const std::exception& e) {
            out.ok = false;
            out.error = e.what();
            return out;
        }
        out.text = res.text;
        size_t k = question.options.size();
        std::vector<std::string> labels;
        for (size_t i = 0; i < k; ++i) labels.push_back(option_label(i, k));
        size_t offset = answer_char_offset(res.text, turn);
        if (offset == std::string::npos) {
            out.ok = false;
            out.error = "no answer marker in completion";
            return out;
        }
        try {
            out.logits = extract_option_logits(res.logprobs, labels, offset);
            out.ok = true;
        } catch (const std::exception& e) {
            out.ok = false;
            out.error = e.what();
        }
        return out;
    }

    WireClient client_;
};

}  // namespace twoturn
