#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "sigmus/ontology.hpp"

namespace sigmus {

enum class Task { ActorEventParse, ImageCaption, CrossModalLink, IncidentMerge, ActorMerge };

std::string_view to_string(Task task);
std::optional<Task> parse_task(std::string_view text);

// promptContext fields per task (all strings unless noted):
//   actorEventParse  text; optional observedAt, place
//   imageCaption     imagePath (warehouse-relative blob path); optional mediaType, observer, observedAt, place
//   crossModalLink   report {id, kind, observedAt, place, summary}; candidates [{id, label, ...}]
//   incidentMerge    incident {label, description}; sourceText; candidates [{id, label, altLabels, description, sourceText}]
//   actorMerge       actor {name, code}; context; candidates [{id, name, altNames}]
struct BackendRequest {
    Task task = Task::ActorEventParse;
    nlohmann::json promptContext = nlohmann::json::object();
    std::size_t maxCandidates = 50;
};

// Missing mandatory fields, as violation strings.
std::vector<std::string> validate(const BackendRequest& req);

struct ParsedActor {
    std::string name;
    std::optional<std::string> cameoActorCode;

    bool operator==(const ParsedActor&) const = default;
};

struct ParsedEvent {
    std::string cameoEventCode;
    std::string actor1Name;
    std::string actor2Name;  // empty when the event has one participant

    bool operator==(const ParsedEvent&) const = default;
};

struct IncidentCandidate {
    std::string label;
    std::string description;

    bool operator==(const IncidentCandidate&) const = default;
};

struct ParsedActorsEvents {
    std::vector<ParsedActor> actors;
    std::vector<ParsedEvent> events;
    std::optional<std::string> capCategory;
    std::optional<IncidentCandidate> incidentCandidate;

    bool operator==(const ParsedActorsEvents&) const = default;
};

struct CaptionResult {
    std::string caption;
    bool noteworthy = false;
    std::vector<std::string> tags;

    bool operator==(const CaptionResult&) const = default;
};

struct LinkDecision {
    std::vector<EntityId> linkedIncidentIds;
    std::string rationale;

    bool operator==(const LinkDecision&) const = default;
};

// Used for both incidentMerge and actorMerge; actorMerge never sets partOf.
struct MergeDecision {
    std::optional<EntityId> sameAs;
    std::optional<EntityId> partOf;
    std::string rationale;

    bool operator==(const MergeDecision&) const = default;
};

using TaskResult = std::variant<ParsedActorsEvents, CaptionResult, LinkDecision, MergeDecision>;

class InferenceError : public Error {
public:
    using Error::Error;
};
class BackendUnavailable : public InferenceError {
public:
    using InferenceError::InferenceError;
};
class OutputParseError : public InferenceError {
public:
    using InferenceError::InferenceError;
};
class CandidateViolation : public InferenceError {
public:
    using InferenceError::InferenceError;
};
class InvalidRequest : public InferenceError {
public:
    using InferenceError::InferenceError;
};

// A model endpoint. `complete` returns the raw model answer, which must hold
// one fenced JSON object; it throws BackendUnavailable when unreachable.
class InferenceBackend {
public:
    virtual ~InferenceBackend() = default;
    virtual std::string name() const = 0;
    virtual std::string complete(const BackendRequest& req, const std::string& prompt) = 0;
};

// ---------------------------------------------------------------------------
// Prompts

// Templates contain {{name}} placeholders resolved against promptContext
// (strings verbatim, everything else as indented JSON) plus {{schema}}.
class PromptSet {
public:
    static const PromptSet& embedded();
    // Files named <task>.txt in `dir` override the embedded templates.
    static PromptSet load(const std::filesystem::path& dir);

    const std::string& template_for(Task task) const;
    std::string render(const BackendRequest& req) const;

private:
    std::map<Task, std::string> templates_;
};

// JSON shape the answer must follow, shown to the model verbatim.
std::string_view response_schema(Task task);

// ---------------------------------------------------------------------------
// Structured-output discipline

// Extracts the first ```json (or bare ```) fenced block and parses it as an
// object. Throws OutputParseError otherwise.
nlohmann::json extract_fenced_json(std::string_view text);

// Decodes and validates an answer against the task schema and the offered
// candidates. Throws OutputParseError or CandidateViolation.
TaskResult decode_result(const BackendRequest& req, const nlohmann::json& answer);

// Serializes a result in the response schema (what a well-behaved model sends).
nlohmann::json encode_result(const TaskResult& result);

struct RunOptions {
    int retries = 2;  // extra attempts after a malformed answer
    const PromptSet* prompts = nullptr;
};

TaskResult run(InferenceBackend& backend, const BackendRequest& req, const RunOptions& options = {});

template <class T>
T run_as(InferenceBackend& backend, const BackendRequest& req, const RunOptions& options = {}) {
    return std::get<T>(run(backend, req, options));
}

// ---------------------------------------------------------------------------
// Deterministic stub

class StubRuleError : public InferenceError {
public:
    using InferenceError::InferenceError;
};

struct StubEffect {
    enum class Kind { Actor, Event, Cap, Incident, Caption, Link, Same, PartOf };
    Kind kind;
    std::string arg1;  // name, code, category, label, caption, token or target
    std::string arg2;  // actor CAMEO code or incident description

    bool operator==(const StubEffect&) const = default;
};

// A keyword matches when every '+'-separated term occurs in the haystack,
// case-insensitively.
struct StubRule {
    std::string keyword;
    std::vector<StubEffect> effects;
    std::size_t line = 0;

    bool matches(std::string_view haystack) const;
};

struct StubRules {
    std::vector<StubRule> rules;  // file order; a repeated keyword replaces the earlier rule in place
};

// `keyword<TAB>effect[;effect...]`, '#' comments. Throws StubRuleError naming the line.
StubRules stub_rules_parse(std::string_view text);
StubRules stub_rules_load(const std::filesystem::path& path);

// Rule-table stand-in for the hosted models:
//   actorEventParse  rules matched against the text
//   imageCaption     rules matched against the image's ".tags" sidecar
//   crossModalLink   rules matched against the report summary; link tokens
//                    select candidates whose label or description contains them
//   incident/actorMerge  rules matched against the new label/name; same/partof
//                    targets name a candidate label (or alternate label)
class StubBackend : public InferenceBackend {
public:
    explicit StubBackend(StubRules rules, std::optional<std::filesystem::path> blobRoot = std::nullopt);

    std::string name() const override { return "stub"; }
    std::string complete(const BackendRequest& req, const std::string& prompt) override;

    TaskResult answer(const BackendRequest& req) const;

private:
    StubRules rules_;
    std::optional<std::filesystem::path> blobRoot_;
};

// ---------------------------------------------------------------------------
// HTTP chat-completion client

struct HttpBackendConfig {
    std::string endpoint;  // full URL of the chat-completions resource
    std::string model;
    std::string apiKey;
    std::optional<std::filesystem::path> blobRoot;  // images are sent inline
    int retries = 2;
    std::chrono::milliseconds backoff{500};  // doubled per retry
    std::chrono::seconds timeout{120};

    // SIGMUS_LLM_ENDPOINT, SIGMUS_LLM_MODEL, SIGMUS_LLM_API_KEY.
    static std::optional<HttpBackendConfig> from_env();
};

class HttpChatBackend : public InferenceBackend {
public:
    explicit HttpChatBackend(HttpBackendConfig config);

    std::string name() const override { return "http:" + config_.model; }
    std::string complete(const BackendRequest& req, const std::string& prompt) override;

    // The request body sent for `prompt`; exposed for tests.
    nlohmann::json request_body(const BackendRequest& req, const std::string& prompt) const;

private:
    HttpBackendConfig config_;
    std::string scheme_host_;
    std::string path_;
};

}  // namespace sigmus
