#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentlab/envs.hpp"
#include "latentlab/harness.hpp"

namespace latentlab {

enum class Framing { Online, Weather };
enum class StateMode { Note, NoNote };
enum class History { Retained, Free };

struct ProtocolSpec {
    Framing framing = Framing::Online;
    StateMode state = StateMode::Note;
    History history = History::Retained;

    std::string fixture_name() const;  // e.g. "online_note"
    std::string label(int y) const;    // weather: 1 -> "sunny", 0 -> "rainy"
};

ProtocolSpec protocol_from_names(const std::string& framing, const std::string& state, const std::string& history);

const std::string& fixture_text(const std::string& name);
std::vector<std::string> fixture_names();
std::string sha256_hex(const std::string& data);

struct Message {
    std::string role;
    std::string content;
};

enum class TurnKind { Prediction, Feedback };

struct RenderedPrompt {
    std::string system;
    std::string prediction_turn_type;  // "prediction" or "forecast"
    std::string truth_field;           // "true_label" or "actual_weather"
};

RenderedPrompt render_prompt(const ProtocolSpec& spec);

// Per-turn user messages, pretty-printed one field per line like the prompt listings.
std::string prediction_message(const ProtocolSpec& spec, const std::vector<int>& advice,
                               const std::optional<std::string>& note);
std::string feedback_message(const ProtocolSpec& spec, const std::vector<int>& advice, int truth,
                             const std::optional<std::string>& note);

struct PredictorReply {
    std::string text;
    int attempts = 1;
};

class Predictor {
public:
    virtual ~Predictor() = default;
    virtual std::string name() const = 0;
    virtual PredictorReply respond(const ProtocolSpec& spec, const std::vector<Message>& messages, TurnKind kind) = 0;
    virtual bool remote() const { return false; }
};

// Always answers 1 (or "sunny"); notes are a fixed string.
class AlwaysOnePredictor : public Predictor {
public:
    std::string name() const override { return "always-1"; }
    PredictorReply respond(const ProtocolSpec& spec, const std::vector<Message>& messages, TurnKind kind) override;
};

// Reference MW learner driven only by what the messages reveal. In note mode the
// weights travel inside the note; in no-note mode they are replayed from history.
class MwWrapperPredictor : public Predictor {
public:
    explicit MwWrapperPredictor(std::uint64_t instance_seed, int n = 4);
    std::string name() const override { return "mw-wrapper"; }
    PredictorReply respond(const ProtocolSpec& spec, const std::vector<Message>& messages, TurnKind kind) override;

private:
    int n_;
    Rng rng_;
    double eta_;
};

// Keeps a per-expert correct count in its note; predicts with the current leader.
class CounterNotePredictor : public Predictor {
public:
    std::string name() const override { return "counter-note"; }
    PredictorReply respond(const ProtocolSpec& spec, const std::vector<Message>& messages, TurnKind kind) override;
};

struct RemoteEndpointConfig {
    std::string base_url = "http://127.0.0.1:8000";
    std::string path = "/v1/chat/completions";
    std::string model = "model";
    double temperature = 0.0;
    std::optional<double> top_p;
    int max_retries = 3;
    double timeout_s = 60.0;
    int backoff_ms = 250;
    std::string api_key_env = "LATENT_LAB_API_KEY";

    void validate() const;
};

class RemotePredictor : public Predictor {
public:
    explicit RemotePredictor(RemoteEndpointConfig cfg);
    std::string name() const override { return "remote:" + cfg_.model; }
    PredictorReply respond(const ProtocolSpec& spec, const std::vector<Message>& messages, TurnKind kind) override;
    bool remote() const override { return true; }

private:
    RemoteEndpointConfig cfg_;
};

// "always-1", "mw-wrapper", "counter-note" or "remote" (settings from `remote`).
std::unique_ptr<Predictor> make_predictor(const std::string& name, std::uint64_t instance_seed,
                                          const nlohmann::json& remote);
RemoteEndpointConfig endpoint_from_json(const nlohmann::json& j);

// Issues one chat-completions request with retries. Returns the assistant text
// and the number of attempts used; throws TransportError after the last retry.
PredictorReply remote_predict(const RemoteEndpointConfig& endpoint, const std::vector<Message>& messages);

// First balanced {...} block that parses as a JSON object.
std::optional<nlohmann::json> first_json_object(const std::string& text);
std::optional<int> parse_prediction(const ProtocolSpec& spec, const std::string& text);
std::optional<std::string> parse_note(const std::string& text);
int word_count(const std::string& s);

struct TurnRecord {
    int round = 0;  // 1-based
    std::string kind;  // "prediction" or "feedback"
    std::vector<int> advice;
    int truth = 0;
    std::optional<int> prediction;
    std::string raw;
    nlohmann::json parsed;
    bool parse_failure = false;
    std::string fallback;  // which fallback was used, if any
    std::optional<std::string> note;
    int note_words = 0;
    bool note_too_long = false;
    int attempts = 1;
    int message_count = 0;  // messages sent on this call
    double elapsed_ms = 0.0;  // only recorded for remote predictors
};

struct EpisodeResult {
    std::vector<TurnRecord> turns;
    std::vector<int> predictions;
    RegretTrace regret;
    bool failed = false;
    std::string failure;
};

EpisodeResult run_protocol_episode(const ProtocolSpec& spec, Predictor& predictor, const ExpertStream& stream);

nlohmann::ordered_json turn_to_json(const TurnRecord& t);
std::string turn_to_jsonl(const TurnRecord& t);
std::string episode_to_jsonl(const EpisodeResult& e);

}  // namespace latentlab
