#include "latentlab/protocol.hpp"

#include <chrono>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include <httplib.h>

namespace latentlab {

namespace detail {
const std::map<std::string, std::string>& fixture_texts();
}

using nlohmann::json;
using ojson = nlohmann::ordered_json;

static const char* kExperts[] = {"Expert_A", "Expert_B", "Expert_C", "Expert_D"};
static constexpr int kNoteWordLimit = 500;

std::string ProtocolSpec::fixture_name() const {
    return std::string(framing == Framing::Online ? "online" : "weather") + (state == StateMode::Note ? "_note" : "_no_note");
}

std::string ProtocolSpec::label(int y) const {
    if (y != 0 && y != 1) throw RangeError("label must be 0 or 1");
    if (framing == Framing::Weather) return y ? "sunny" : "rainy";
    return std::to_string(y);
}

ProtocolSpec protocol_from_names(const std::string& framing, const std::string& state, const std::string& history) {
    ProtocolSpec s;
    if (framing == "online")
        s.framing = Framing::Online;
    else if (framing == "weather")
        s.framing = Framing::Weather;
    else
        throw ConfigError("unknown framing: " + framing);
    if (state == "note")
        s.state = StateMode::Note;
    else if (state == "no_note" || state == "no-note")
        s.state = StateMode::NoNote;
    else
        throw ConfigError("unknown state scheme: " + state);
    if (history == "retained")
        s.history = History::Retained;
    else if (history == "free")
        s.history = History::Free;
    else
        throw ConfigError("unknown history mode: " + history);
    return s;
}

const std::string& fixture_text(const std::string& name) {
    const auto& m = detail::fixture_texts();
    auto it = m.find(name);
    if (it == m.end()) throw ConfigError("no prompt fixture named " + name);
    return it->second;
}

std::vector<std::string> fixture_names() {
    std::vector<std::string> out;
    for (const auto& [k, v] : detail::fixture_texts()) out.push_back(k);
    return out;
}

std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

RenderedPrompt render_prompt(const ProtocolSpec& spec) {
    RenderedPrompt r;
    r.system = fixture_text(spec.fixture_name());
    bool weather = spec.framing == Framing::Weather;
    r.prediction_turn_type = weather ? "forecast" : "prediction";
    r.truth_field = weather ? "actual_weather" : "true_label";
    return r;
}

static void put_label(const ProtocolSpec& spec, ojson& j, const char* key, int y) {
    if (spec.framing == Framing::Weather)
        j[key] = spec.label(y);
    else
        j[key] = y;
}

static void put_advice(const ProtocolSpec& spec, ojson& j, const std::vector<int>& advice) {
    if (advice.size() != 4) throw ShapeError("the protocols use exactly four experts");
    for (int i = 0; i < 4; ++i) put_label(spec, j, kExperts[i], advice[i]);
}

std::string prediction_message(const ProtocolSpec& spec, const std::vector<int>& advice,
                               const std::optional<std::string>& note) {
    ojson j;
    j["turn_type"] = render_prompt(spec).prediction_turn_type;
    if (spec.state == StateMode::Note) j["note"] = note.value_or("");
    put_advice(spec, j, advice);
    return j.dump(0);
}

std::string feedback_message(const ProtocolSpec& spec, const std::vector<int>& advice, int truth,
                             const std::optional<std::string>& note) {
    ojson j;
    j["turn_type"] = "feedback";
    if (spec.state == StateMode::Note) {
        j["note"] = note.value_or("");
        put_advice(spec, j, advice);
    }
    put_label(spec, j, render_prompt(spec).truth_field.c_str(), truth);
    return j.dump(0);
}

// ---------------------------------------------------------------- parsing

std::optional<json> first_json_object(const std::string& text) {
    for (size_t start = text.find('{'); start != std::string::npos; start = text.find('{', start + 1)) {
        int depth = 0;
        bool in_str = false, esc = false;
        for (size_t i = start; i < text.size(); ++i) {
            char ch = text[i];
            if (in_str) {
                if (esc)
                    esc = false;
                else if (ch == '\\')
                    esc = true;
                else if (ch == '"')
                    in_str = false;
                continue;
            }
            if (ch == '"')
                in_str = true;
            else if (ch == '{')
                ++depth;
            else if (ch == '}' && --depth == 0) {
                json j = json::parse(text.begin() + start, text.begin() + i + 1, nullptr, false);
                if (!j.is_discarded() && j.is_object()) return j;
                break;
            }
        }
    }
    return std::nullopt;
}

static std::optional<int> label_value(const ProtocolSpec& spec, const json& v) {
    if (spec.framing == Framing::Weather) {
        if (v.is_string()) {
            if (v == "sunny") return 1;
            if (v == "rainy") return 0;
        }
        return std::nullopt;
    }
    if (v.is_number_integer()) {
        auto x = v.get<long long>();
        if (x == 0 || x == 1) return static_cast<int>(x);
    }
    if (v.is_string() && (v == "0" || v == "1")) return v == "1" ? 1 : 0;
    return std::nullopt;
}

std::optional<int> parse_prediction(const ProtocolSpec& spec, const std::string& text) {
    auto j = first_json_object(text);
    if (!j || !j->contains("prediction")) return std::nullopt;
    return label_value(spec, j->at("prediction"));
}

std::optional<std::string> parse_note(const std::string& text) {
    auto j = first_json_object(text);
    if (!j || !j->contains("note") || !j->at("note").is_string()) return std::nullopt;
    return j->at("note").get<std::string>();
}

int word_count(const std::string& s) {
    std::istringstream in(s);
    std::string w;
    int n = 0;
    while (in >> w) ++n;
    return n;
}

// ---------------------------------------------------------------- scripted predictors

namespace {
// What a scripted predictor can see: the user messages it was sent, decoded.
struct Seen {
    std::vector<int> advice;   // from the current message, if present
    std::optional<int> truth;  // feedback only
    std::string note;
};

Seen read_message(const ProtocolSpec& spec, const std::string& content) {
    Seen s;
    json j = json::parse(content, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return s;
    bool has_all = true;
    for (const char* k : kExperts) has_all &= j.contains(k);
    if (has_all)
        for (const char* k : kExperts) s.advice.push_back(label_value(spec, j.at(k)).value_or(0));
    std::string tf = render_prompt(spec).truth_field;
    if (j.contains(tf)) s.truth = label_value(spec, j.at(tf));
    if (j.contains("note") && j.at("note").is_string()) s.note = j.at("note").get<std::string>();
    return s;
}

const Message& last_user(const std::vector<Message>& messages) {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it)
        if (it->role == "user") return *it;
    throw StateError("no user message to respond to");
}

// (advice, truth) pairs recoverable from a no-note history: each feedback
// message pairs with the prediction message before it.
std::vector<std::pair<std::vector<int>, int>> replay(const ProtocolSpec& spec, const std::vector<Message>& messages) {
    std::vector<std::pair<std::vector<int>, int>> out;
    std::vector<int> pending;
    for (const auto& m : messages) {
        if (m.role != "user") continue;
        Seen s = read_message(spec, m.content);
        if (s.truth && !pending.empty()) {
            out.push_back({pending, *s.truth});
            pending.clear();
        } else if (!s.advice.empty()) {
            pending = s.advice;
        }
    }
    return out;
}

std::string answer_prediction(const ProtocolSpec& spec, int y) {
    ojson j;
    put_label(spec, j, "prediction", y);
    return j.dump();
}

std::string answer_note(const std::string& note) { return ojson{{"note", note}}.dump(); }
}  // namespace

PredictorReply AlwaysOnePredictor::respond(const ProtocolSpec& spec, const std::vector<Message>&, TurnKind kind) {
    if (kind == TurnKind::Prediction) return {answer_prediction(spec, 1), 1};
    return {answer_note("always predict " + spec.label(1)), 1};
}

MwWrapperPredictor::MwWrapperPredictor(std::uint64_t instance_seed, int n)
    : n_(n), rng_(strategy_rng(instance_seed, "MW")) {
    // consume the eta draw exactly as the reference learner does
    BaselineLearner tmp(Strategy::MW, n, rng_);
    eta_ = tmp.eta();
}

PredictorReply MwWrapperPredictor::respond(const ProtocolSpec& spec, const std::vector<Message>& messages,
                                           TurnKind kind) {
    Seen cur = read_message(spec, last_user(messages).content);
    BaselineLearner mw(n_, eta_);
    if (spec.state == StateMode::Note) {
        json w = json::parse(cur.note, nullptr, false);
        if (!w.is_discarded() && w.is_object() && w.contains("w") && w["w"].is_array() &&
            static_cast<int>(w["w"].size()) == n_)
            mw.set_weights(w["w"].get<std::vector<double>>());
    } else {
        for (const auto& [adv, y] : replay(spec, messages)) mw.update(adv, y);
    }
    if (kind == TurnKind::Prediction) return {answer_prediction(spec, mw.predict(cur.advice, rng_)), 1};
    mw.update(cur.advice, cur.truth.value_or(0));
    return {answer_note(json{{"w", mw.weights()}}.dump()), 1};
}

PredictorReply CounterNotePredictor::respond(const ProtocolSpec& spec, const std::vector<Message>& messages,
                                             TurnKind kind) {
    Seen cur = read_message(spec, last_user(messages).content);
    std::vector<int> correct(4, 0);
    if (spec.state == StateMode::Note) {
        std::istringstream in(cur.note);
        std::string tok;
        // note format: "A:3 B:1 C:0 D:2"
        while (in >> tok)
            if (tok.size() > 2 && tok[1] == ':' && tok[0] >= 'A' && tok[0] <= 'D')
                correct[tok[0] - 'A'] = std::atoi(tok.c_str() + 2);
    } else {
        for (const auto& [adv, y] : replay(spec, messages))
            for (int i = 0; i < 4; ++i) correct[i] += adv[i] == y;
    }
    if (kind == TurnKind::Prediction) {
        int lead = 0;
        for (int i = 1; i < 4; ++i)
            if (correct[i] > correct[lead]) lead = i;
        return {answer_prediction(spec, cur.advice.empty() ? 1 : cur.advice[lead]), 1};
    }
    if (cur.truth && cur.advice.size() == 4)
        for (int i = 0; i < 4; ++i) correct[i] += cur.advice[i] == *cur.truth;
    std::string note;
    for (int i = 0; i < 4; ++i) note += std::string(i ? " " : "") + static_cast<char>('A' + i) + ":" + std::to_string(correct[i]);
    return {answer_note(note), 1};
}

// ---------------------------------------------------------------- remote client

void RemoteEndpointConfig::validate() const {
    if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0)
        throw ConfigError("remote base_url must start with http:// or https://");
    if (path.empty() || path[0] != '/') throw ConfigError("remote path must start with /");
    if (model.empty()) throw ConfigError("remote model must be set");
    if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
    if (top_p && !(*top_p > 0.0 && *top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
    if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
    if (!(timeout_s > 0.0)) throw ConfigError("timeout_s must be > 0");
    if (backoff_ms < 0) throw ConfigError("backoff_ms must be >= 0");
    if (api_key_env.empty()) throw ConfigError("api_key_env must name an environment variable");
}

RemoteEndpointConfig endpoint_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("remote endpoint settings must be an object");
    static const std::set<std::string> keys = {"base_url",    "path",      "model",      "temperature", "top_p",
                                               "max_retries", "timeout_s", "backoff_ms", "api_key_env"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "api_key") throw ConfigError("credentials are read from the environment, not the config");
        if (!keys.count(it.key())) throw ConfigError("unknown remote key: " + it.key());
    }
    RemoteEndpointConfig c;
    try {
        c.base_url = j.value("base_url", c.base_url);
        c.path = j.value("path", c.path);
        c.model = j.value("model", c.model);
        c.temperature = j.value("temperature", c.temperature);
        if (j.contains("top_p") && !j["top_p"].is_null()) c.top_p = j["top_p"].get<double>();
        c.max_retries = j.value("max_retries", c.max_retries);
        c.timeout_s = j.value("timeout_s", c.timeout_s);
        c.backoff_ms = j.value("backoff_ms", c.backoff_ms);
        c.api_key_env = j.value("api_key_env", c.api_key_env);
    } catch (const json::exception&) {
        throw ConfigError("remote endpoint settings have a wrongly typed field");
    }
    c.validate();
    return c;
}

PredictorReply remote_predict(const RemoteEndpointConfig& ep, const std::vector<Message>& messages) {
    ep.validate();
    const char* key = std::getenv(ep.api_key_env.c_str());
    if (!key) throw ConfigError("environment variable " + ep.api_key_env + " is not set");

    json body;
    body["model"] = ep.model;
    body["messages"] = json::array();
    for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    body["temperature"] = ep.temperature;
    if (ep.top_p) body["top_p"] = *ep.top_p;
    const std::string payload = body.dump();

    httplib::Client cli(ep.base_url);
    auto secs = static_cast<time_t>(ep.timeout_s);
    auto usecs = static_cast<time_t>((ep.timeout_s - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (*key) headers.emplace("Authorization", std::string("Bearer ") + key);

    std::string last_error;
    for (int attempt = 1; attempt <= ep.max_retries + 1; ++attempt) {
        if (attempt > 1)
            std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long>(ep.backoff_ms) << (attempt - 2)));
        auto res = cli.Post(ep.path, headers, payload, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status < 200 || res->status >= 300)
            throw TransportError("endpoint returned HTTP " + std::to_string(res->status));
        PredictorReply r;
        r.attempts = attempt;
        json j = json::parse(res->body, nullptr, false);
        if (!j.is_discarded() && j.is_object() && j.contains("choices") && j["choices"].is_array() &&
            !j["choices"].empty()) {
            const json& c0 = j["choices"][0];
            if (c0.contains("message") && c0["message"].contains("content") && c0["message"]["content"].is_string()) {
                r.text = c0["message"]["content"].get<std::string>();
                return r;
            }
        }
        r.text = res->body;
        return r;
    }
    throw TransportError("endpoint unreachable after " + std::to_string(ep.max_retries + 1) + " attempts (" +
                         last_error + ")");
}

RemotePredictor::RemotePredictor(RemoteEndpointConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

PredictorReply RemotePredictor::respond(const ProtocolSpec&, const std::vector<Message>& messages, TurnKind) {
    return remote_predict(cfg_, messages);
}

std::unique_ptr<Predictor> make_predictor(const std::string& name, std::uint64_t instance_seed, const json& remote) {
    if (name == "always-1") return std::make_unique<AlwaysOnePredictor>();
    if (name == "mw-wrapper") return std::make_unique<MwWrapperPredictor>(instance_seed);
    if (name == "counter-note") return std::make_unique<CounterNotePredictor>();
    if (name == "remote") return std::make_unique<RemotePredictor>(endpoint_from_json(remote));
    throw ConfigError("unknown predictor: " + name);
}

// ---------------------------------------------------------------- episodes

static int majority_tie_one(const std::vector<int>& adv) {
    int ones = 0;
    for (int a : adv) ones += a == 1;
    return 2 * ones >= static_cast<int>(adv.size()) ? 1 : 0;
}

EpisodeResult run_protocol_episode(const ProtocolSpec& spec, Predictor& predictor, const ExpertStream& stream) {
    if (stream.n != 4) throw ConfigError("the protocols use exactly four experts");
    const RenderedPrompt rp = render_prompt(spec);
    const bool note_mode = spec.state == StateMode::Note;
    const bool retained = spec.history == History::Retained;

    EpisodeResult out;
    std::vector<Message> history{{"system", rp.system}};
    std::string note;
    std::optional<int> prev;

    auto call = [&](TurnRecord& rec, const std::string& user_msg, TurnKind kind) -> bool {
        std::vector<Message> msgs;
        if (retained) {
            history.push_back({"user", user_msg});
            msgs = history;
        } else {
            msgs = {{"system", rp.system}, {"user", user_msg}};
        }
        rec.message_count = static_cast<int>(msgs.size());
        auto t0 = std::chrono::steady_clock::now();
        try {
            PredictorReply r = predictor.respond(spec, msgs, kind);
            rec.raw = r.text;
            rec.attempts = r.attempts;
        } catch (const TransportError& e) {
            out.failed = true;
            out.failure = e.what();
            return false;
        }
        if (predictor.remote())
            rec.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (retained) history.push_back({"assistant", rec.raw});
        auto obj = first_json_object(rec.raw);
        rec.parsed = obj ? *obj : json(nullptr);
        return true;
    };

    for (int t = 0; t < stream.T && !out.failed; ++t) {
        const auto& adv = stream.advice[t];
        const int y = stream.labels[t];

        TurnRecord pr;
        pr.round = t + 1;
        pr.kind = "prediction";
        pr.advice = adv;
        pr.truth = y;
        if (note_mode) pr.note = note;
        if (!call(pr, prediction_message(spec, adv, note_mode ? std::optional<std::string>(note) : std::nullopt),
                  TurnKind::Prediction))
            break;
        std::optional<int> p = parse_prediction(spec, pr.raw);
        if (!p) {
            pr.parse_failure = true;
            if (prev) {
                p = prev;
                pr.fallback = "previous_prediction";
            } else {
                p = majority_tie_one(adv);
                pr.fallback = "majority_vote";
            }
        }
        pr.prediction = p;
        prev = p;
        out.predictions.push_back(*p);
        out.turns.push_back(pr);

        TurnRecord fb;
        fb.round = t + 1;
        fb.kind = "feedback";
        fb.advice = adv;
        fb.truth = y;
        std::string fmsg = feedback_message(spec, adv, y, note_mode ? std::optional<std::string>(note) : std::nullopt);
        if (note_mode) {
            if (!call(fb, fmsg, TurnKind::Feedback)) break;
            if (auto n = parse_note(fb.raw)) {
                note = *n;
            } else {
                fb.parse_failure = true;
                fb.fallback = "keep_previous_note";
            }
            fb.note = note;
            fb.note_words = word_count(note);
            fb.note_too_long = fb.note_words > kNoteWordLimit;
        } else {
            // no reply expected; retained history keeps the outcome for later rounds
            if (retained) history.push_back({"user", fmsg});
            fb.attempts = 0;
            fb.message_count = 0;
        }
        out.turns.push_back(fb);
    }

    ExpertStream done = stream;
    done.T = static_cast<int>(out.predictions.size());
    done.labels.resize(out.predictions.size());
    done.advice.resize(out.predictions.size());
    out.regret = regret(out.predictions, done);
    return out;
}

ojson turn_to_json(const TurnRecord& t) {
    ojson j;
    j["round"] = t.round;
    j["kind"] = t.kind;
    j["advice"] = t.advice;
    j["truth"] = t.truth;
    j["prediction"] = t.prediction ? ojson(*t.prediction) : ojson(nullptr);
    j["raw"] = t.raw;
    j["parsed"] = ojson::parse(t.parsed.dump());
    j["parse_failure"] = t.parse_failure;
    j["fallback"] = t.fallback;
    j["note"] = t.note ? ojson(*t.note) : ojson(nullptr);
    j["note_words"] = t.note_words;
    j["note_too_long"] = t.note_too_long;
    j["attempts"] = t.attempts;
    j["message_count"] = t.message_count;
    j["elapsed_ms"] = t.elapsed_ms;
    return j;
}

std::string turn_to_jsonl(const TurnRecord& t) { return turn_to_json(t).dump() + "\n"; }

std::string episode_to_jsonl(const EpisodeResult& e) {
    std::string s;
    for (const auto& t : e.turns) s += turn_to_jsonl(t);
    return s;
}

}  // namespace latentlab
