#include "sigmus/inference.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json_util.hpp"

namespace sigmus {

namespace detail {
// Generated from data/prompts at build time, indexed by Task.
extern const char* const kEmbeddedPrompts[5];
}  // namespace detail

namespace {

using nlohmann::json;

constexpr Task kAllTasks[] = {Task::ActorEventParse, Task::ImageCaption, Task::CrossModalLink, Task::IncidentMerge,
                              Task::ActorMerge};

bool has_string(const json& obj, const char* key) {
    return obj.is_object() && obj.contains(key) && obj.at(key).is_string();
}

bool has_nonempty_string(const json& obj, const char* key) {
    return has_string(obj, key) && !obj.at(key).get_ref<const std::string&>().empty();
}

[[noreturn]] void bad_output(const std::string& what) { throw OutputParseError(what); }

const json& field(const json& obj, const char* key) {
    if (!obj.is_object() || !obj.contains(key)) bad_output(std::string("missing field \"") + key + "\"");
    return obj.at(key);
}

std::string string_field(const json& obj, const char* key, bool allowEmpty = false) {
    const json& v = field(obj, key);
    if (!v.is_string()) bad_output(std::string("field \"") + key + "\" must be a string");
    std::string s = trim(v.get<std::string>());
    if (s.empty() && !allowEmpty) bad_output(std::string("field \"") + key + "\" must be non-empty");
    return s;
}

std::optional<std::string> optional_string(const json& obj, const char* key) {
    if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
    if (!obj.at(key).is_string()) bad_output(std::string("field \"") + key + "\" must be a string or null");
    std::string s = trim(obj.at(key).get<std::string>());
    if (s.empty()) return std::nullopt;
    return s;
}

const json& array_field(const json& obj, const char* key) {
    const json& v = field(obj, key);
    if (!v.is_array()) bad_output(std::string("field \"") + key + "\" must be an array");
    return v;
}

std::set<std::string> offered_ids(const BackendRequest& req) {
    std::set<std::string> ids;
    const auto& c = req.promptContext.value("candidates", json::array());
    for (const auto& cand : c) {
        if (has_string(cand, "id")) ids.insert(cand.at("id").get<std::string>());
    }
    return ids;
}

std::optional<EntityId> candidate_ref(const json& answer, const char* key, const std::set<std::string>& offered) {
    auto id = optional_string(answer, key);
    if (!id) return std::nullopt;
    if (!offered.count(*id)) throw CandidateViolation(std::string(key) + " references unoffered id " + *id);
    return EntityId(*id);
}

}  // namespace

std::string_view to_string(Task task) {
    switch (task) {
        case Task::ActorEventParse: return "actorEventParse";
        case Task::ImageCaption: return "imageCaption";
        case Task::CrossModalLink: return "crossModalLink";
        case Task::IncidentMerge: return "incidentMerge";
        case Task::ActorMerge: return "actorMerge";
    }
    return "actorEventParse";
}

std::optional<Task> parse_task(std::string_view text) {
    for (Task t : kAllTasks) {
        if (to_string(t) == text) return t;
    }
    return std::nullopt;
}

std::vector<std::string> validate(const BackendRequest& req) {
    std::vector<std::string> v;
    const json& c = req.promptContext;
    if (!c.is_object()) return {"promptContext must be an object"};
    auto need = [&](const json& obj, const char* key, const std::string& where) {
        if (!has_nonempty_string(obj, key)) v.push_back(where + key + " missing");
    };
    auto need_candidates = [&](const char* idKey) {
        if (!c.contains("candidates") || !c.at("candidates").is_array()) {
            v.push_back("candidates missing");
            return;
        }
        const auto& cands = c.at("candidates");
        if (cands.size() > req.maxCandidates) v.push_back("more candidates than maxCandidates");
        std::set<std::string> seen;
        for (const auto& cand : cands) {
            if (!has_nonempty_string(cand, idKey)) {
                v.push_back("candidate without id");
            } else if (!seen.insert(cand.at(idKey).get<std::string>()).second) {
                v.push_back("duplicate candidate id " + cand.at(idKey).get<std::string>());
            }
        }
    };
    switch (req.task) {
        case Task::ActorEventParse: need(c, "text", ""); break;
        case Task::ImageCaption: need(c, "imagePath", ""); break;
        case Task::CrossModalLink:
            if (!c.contains("report") || !c.at("report").is_object()) {
                v.push_back("report missing");
            } else {
                need(c.at("report"), "id", "report.");
                need(c.at("report"), "summary", "report.");
            }
            need_candidates("id");
            break;
        case Task::IncidentMerge:
            if (!c.contains("incident") || !c.at("incident").is_object()) {
                v.push_back("incident missing");
            } else {
                need(c.at("incident"), "label", "incident.");
            }
            if (!has_string(c, "sourceText")) v.push_back("sourceText missing");
            need_candidates("id");
            break;
        case Task::ActorMerge:
            if (!c.contains("actor") || !c.at("actor").is_object()) {
                v.push_back("actor missing");
            } else {
                need(c.at("actor"), "name", "actor.");
            }
            need_candidates("id");
            break;
    }
    return v;
}

// ---------------------------------------------------------------------------
// Prompts

const PromptSet& PromptSet::embedded() {
    static const PromptSet set = [] {
        PromptSet s;
        for (Task t : kAllTasks) s.templates_[t] = detail::kEmbeddedPrompts[static_cast<int>(t)];
        return s;
    }();
    return set;
}

PromptSet PromptSet::load(const std::filesystem::path& dir) {
    PromptSet s = embedded();
    for (Task t : kAllTasks) {
        const auto file = dir / (std::string(to_string(t)) + ".txt");
        std::ifstream in(file, std::ios::binary);
        if (!in) continue;
        std::ostringstream ss;
        ss << in.rdbuf();
        s.templates_[t] = ss.str();
    }
    return s;
}

const std::string& PromptSet::template_for(Task task) const { return templates_.at(task); }

std::string PromptSet::render(const BackendRequest& req) const {
    const std::string& tpl = template_for(req.task);
    std::string out;
    std::size_t pos = 0;
    while (true) {
        const std::size_t open = tpl.find("{{", pos);
        if (open == std::string::npos) break;
        const std::size_t close = tpl.find("}}", open + 2);
        if (close == std::string::npos) break;
        out.append(tpl, pos, open - pos);
        const std::string key = tpl.substr(open + 2, close - open - 2);
        if (key == "schema") {
            out += response_schema(req.task);
        } else if (req.promptContext.contains(key)) {
            const json& v = req.promptContext.at(key);
            out += v.is_string() ? v.get<std::string>() : detail::dump_json(v, 2);
        } else {
            out += "(unknown)";
        }
        pos = close + 2;
    }
    out.append(tpl, pos, std::string::npos);
    return out;
}

std::string_view response_schema(Task task) {
    switch (task) {
        case Task::ActorEventParse:
            return R"({"actors": [{"name": "string", "cameoActorCode": "string or null"}],
 "events": [{"cameoEventCode": "string", "actor1": "actor name", "actor2": "actor name or null"}],
 "capCategory": "string or null",
 "incident": {"label": "string", "description": "string"} or null})";
        case Task::ImageCaption:
            return R"({"caption": "string", "noteworthy": true or false, "tags": ["string"]})";
        case Task::CrossModalLink:
            return R"({"linkedIncidentIds": ["candidate id"], "rationale": "string"})";
        case Task::IncidentMerge:
            return R"({"sameAs": "candidate id or null", "partOf": "candidate id or null", "rationale": "string"})";
        case Task::ActorMerge:
            return R"({"sameAs": "candidate id or null", "rationale": "string"})";
    }
    return "{}";
}

// ---------------------------------------------------------------------------
// Decoding

json extract_fenced_json(std::string_view text) {
    const std::size_t open = text.find("```");
    if (open == std::string_view::npos) bad_output("answer has no fenced JSON block");
    std::size_t body = text.find('\n', open);
    if (body == std::string_view::npos) bad_output("unterminated fence");
    const std::string info = trim(text.substr(open + 3, body - open - 3));
    if (!info.empty() && to_lower_ascii(info) != "json") bad_output("fenced block is not JSON");
    ++body;
    const std::size_t close = text.find("```", body);
    if (close == std::string_view::npos) bad_output("unterminated fence");
    json j = json::parse(text.substr(body, close - body), nullptr, false);
    if (j.is_discarded()) bad_output("fenced block is not valid JSON");
    if (!j.is_object()) bad_output("fenced JSON must be an object");
    return j;
}

TaskResult decode_result(const BackendRequest& req, const json& a) {
    if (!a.is_object()) bad_output("answer must be an object");
    switch (req.task) {
        case Task::ActorEventParse: {
            ParsedActorsEvents r;
            std::set<std::string> names;
            for (const auto& actor : array_field(a, "actors")) {
                ParsedActor p{string_field(actor, "name"), optional_string(actor, "cameoActorCode")};
                if (names.insert(p.name).second) r.actors.push_back(std::move(p));
            }
            for (const auto& ev : array_field(a, "events")) {
                ParsedEvent e{string_field(ev, "cameoEventCode"), optional_string(ev, "actor1").value_or(""),
                              optional_string(ev, "actor2").value_or("")};
                if (!CameoCodebook::active()->lookup(e.cameoEventCode)) {
                    bad_output("unknown CAMEO event code " + e.cameoEventCode);
                }
                for (const auto* n : {&e.actor1Name, &e.actor2Name}) {
                    if (!n->empty() && !names.count(*n)) bad_output("event names unlisted actor " + *n);
                }
                r.events.push_back(std::move(e));
            }
            r.capCategory = optional_string(a, "capCategory");
            if (r.capCategory && !is_cap_category(*r.capCategory)) bad_output("unknown CAP category " + *r.capCategory);
            if (a.contains("incident") && !a.at("incident").is_null()) {
                const json& inc = a.at("incident");
                r.incidentCandidate = IncidentCandidate{string_field(inc, "label"),
                                                        has_string(inc, "description")
                                                            ? trim(inc.at("description").get<std::string>())
                                                            : std::string()};
            }
            return r;
        }
        case Task::ImageCaption: {
            CaptionResult r;
            r.caption = string_field(a, "caption");
            const json& nw = field(a, "noteworthy");
            if (!nw.is_boolean()) bad_output("noteworthy must be a boolean");
            r.noteworthy = nw.get<bool>();
            for (const auto& t : array_field(a, "tags")) {
                if (!t.is_string()) bad_output("tags must be strings");
                std::string tag = trim(t.get<std::string>());
                if (!tag.empty()) r.tags.push_back(std::move(tag));
            }
            return r;
        }
        case Task::CrossModalLink: {
            const auto offered = offered_ids(req);
            LinkDecision r;
            std::set<std::string> seen;
            for (const auto& id : array_field(a, "linkedIncidentIds")) {
                if (!id.is_string()) bad_output("linkedIncidentIds must be strings");
                const std::string s = id.get<std::string>();
                if (!offered.count(s)) throw CandidateViolation("link references unoffered id " + s);
                if (seen.insert(s).second) r.linkedIncidentIds.emplace_back(s);
            }
            r.rationale = has_string(a, "rationale") ? a.at("rationale").get<std::string>() : std::string();
            return r;
        }
        case Task::IncidentMerge:
        case Task::ActorMerge: {
            const auto offered = offered_ids(req);
            MergeDecision r;
            r.sameAs = candidate_ref(a, "sameAs", offered);
            r.partOf = candidate_ref(a, "partOf", offered);
            if (req.task == Task::ActorMerge && r.partOf) bad_output("actorMerge does not accept partOf");
            if (r.sameAs && r.partOf && *r.sameAs == *r.partOf) bad_output("sameAs and partOf name the same incident");
            r.rationale = has_string(a, "rationale") ? a.at("rationale").get<std::string>() : std::string();
            return r;
        }
    }
    bad_output("unknown task");
}

json encode_result(const TaskResult& result) {
    struct V {
        json operator()(const ParsedActorsEvents& r) const {
            json actors = json::array();
            for (const auto& a : r.actors) {
                actors.push_back({{"name", a.name}, {"cameoActorCode", a.cameoActorCode ? json(*a.cameoActorCode) : json()}});
            }
            json events = json::array();
            for (const auto& e : r.events) {
                events.push_back({{"cameoEventCode", e.cameoEventCode},
                                  {"actor1", e.actor1Name.empty() ? json() : json(e.actor1Name)},
                                  {"actor2", e.actor2Name.empty() ? json() : json(e.actor2Name)}});
            }
            json inc;
            if (r.incidentCandidate) inc = {{"label", r.incidentCandidate->label}, {"description", r.incidentCandidate->description}};
            return {{"actors", actors},
                    {"events", events},
                    {"capCategory", r.capCategory ? json(*r.capCategory) : json()},
                    {"incident", inc}};
        }
        json operator()(const CaptionResult& r) const {
            return {{"caption", r.caption}, {"noteworthy", r.noteworthy}, {"tags", r.tags}};
        }
        json operator()(const LinkDecision& r) const {
            json ids = json::array();
            for (const auto& id : r.linkedIncidentIds) ids.push_back(id.str());
            return {{"linkedIncidentIds", ids}, {"rationale", r.rationale}};
        }
        json operator()(const MergeDecision& r) const {
            return {{"sameAs", r.sameAs ? json(r.sameAs->str()) : json()},
                    {"partOf", r.partOf ? json(r.partOf->str()) : json()},
                    {"rationale", r.rationale}};
        }
    };
    return std::visit(V{}, result);
}

TaskResult run(InferenceBackend& backend, const BackendRequest& req, const RunOptions& options) {
    if (auto v = validate(req); !v.empty()) {
        std::string msg = std::string(to_string(req.task)) + " request invalid:";
        for (const auto& s : v) msg += " " + s + ";";
        throw InvalidRequest(msg);
    }
    const auto& cands = req.promptContext.value("candidates", json::array());
    if (req.task == Task::CrossModalLink && cands.empty()) return LinkDecision{{}, "no candidate incidents"};
    if ((req.task == Task::IncidentMerge || req.task == Task::ActorMerge) && cands.empty()) {
        return MergeDecision{std::nullopt, std::nullopt, "no candidates"};
    }

    const PromptSet& prompts = options.prompts ? *options.prompts : PromptSet::embedded();
    const std::string prompt = prompts.render(req);
    std::string last_error;
    bool violation = false;
    for (int attempt = 0; attempt <= options.retries; ++attempt) {
        try {
            return decode_result(req, extract_fenced_json(backend.complete(req, prompt)));
        } catch (const CandidateViolation& e) {
            last_error = e.what();
            violation = true;
        } catch (const OutputParseError& e) {
            last_error = e.what();
            violation = false;
        } catch (const nlohmann::json::exception& e) {
            last_error = e.what();
            violation = false;
        }
    }
    const std::string msg = backend.name() + " " + std::string(to_string(req.task)) + " failed after " +
                            std::to_string(options.retries + 1) + " attempts: " + last_error;
    if (violation) throw CandidateViolation(msg);
    throw OutputParseError(msg);
}

// ---------------------------------------------------------------------------
// Stub rules

bool StubRule::matches(std::string_view haystack) const {
    for (const auto& term : split(keyword, '+')) {
        const std::string t = trim(term);
        if (t.empty() || !contains_ci(haystack, t)) return false;
    }
    return true;
}

StubRules stub_rules_parse(std::string_view text) {
    StubRules out;
    std::size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        std::string line = raw;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || trim(line).front() == '#') continue;
        auto fail = [&](const std::string& what) -> StubRuleError {
            return StubRuleError("stub rules line " + std::to_string(line_no) + ": " + what);
        };
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) throw fail("expected keyword<TAB>effects");
        StubRule rule;
        rule.keyword = to_lower_ascii(trim(line.substr(0, tab)));
        rule.line = line_no;
        if (rule.keyword.empty()) throw fail("empty keyword");
        for (const auto& part : split(line.substr(tab + 1), ';')) {
            const std::string eff = trim(part);
            if (eff.empty()) continue;
            const std::size_t colon = eff.find(':');
            if (colon == std::string::npos) throw fail("effect without kind: " + eff);
            const std::string kind = to_lower_ascii(eff.substr(0, colon));
            const std::string arg = trim(eff.substr(colon + 1));
            if (arg.empty()) throw fail("effect without argument: " + eff);
            StubEffect e{};
            const std::size_t bar = arg.find('|');
            const std::string a1 = trim(arg.substr(0, bar));
            const std::string a2 = bar == std::string::npos ? std::string() : trim(arg.substr(bar + 1));
            if (kind == "actor") {
                e = {StubEffect::Kind::Actor, a1, a2};
            } else if (kind == "event") {
                e = {StubEffect::Kind::Event, arg, {}};
            } else if (kind == "cap") {
                if (!is_cap_category(arg)) throw fail("unknown CAP category " + arg);
                e = {StubEffect::Kind::Cap, arg, {}};
            } else if (kind == "incident") {
                e = {StubEffect::Kind::Incident, a1, a2};
            } else if (kind == "caption") {
                e = {StubEffect::Kind::Caption, arg, {}};
            } else if (kind == "link") {
                e = {StubEffect::Kind::Link, arg, {}};
            } else if (kind == "same") {
                e = {StubEffect::Kind::Same, arg, {}};
            } else if (kind == "partof") {
                e = {StubEffect::Kind::PartOf, arg, {}};
            } else {
                throw fail("unknown effect kind " + kind);
            }
            if (e.arg1.empty()) throw fail("effect without argument: " + eff);
            rule.effects.push_back(std::move(e));
        }
        if (rule.effects.empty()) throw fail("rule without effects");
        auto dup = std::find_if(out.rules.begin(), out.rules.end(),
                                [&](const StubRule& r) { return r.keyword == rule.keyword; });
        if (dup != out.rules.end()) {
            *dup = std::move(rule);
        } else {
            out.rules.push_back(std::move(rule));
        }
    }
    return out;
}

StubRules stub_rules_load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StubRuleError("cannot open stub rules " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return stub_rules_parse(ss.str());
}

// ---------------------------------------------------------------------------
// Stub backend

StubBackend::StubBackend(StubRules rules, std::optional<std::filesystem::path> blobRoot)
    : rules_(std::move(rules)), blobRoot_(std::move(blobRoot)) {}

std::string StubBackend::complete(const BackendRequest& req, const std::string&) {
    return "```json\n" + detail::dump_json(encode_result(answer(req)), 2) + "\n```\n";
}

TaskResult StubBackend::answer(const BackendRequest& req) const {
    const json& c = req.promptContext;
    auto matching = [&](std::string_view haystack, StubEffect::Kind kind) {
        std::vector<const StubEffect*> out;
        for (const auto& r : rules_.rules) {
            if (!r.matches(haystack)) continue;
            for (const auto& e : r.effects) {
                if (e.kind == kind) out.push_back(&e);
            }
        }
        return out;
    };

    switch (req.task) {
        case Task::ActorEventParse: {
            const std::string text = c.value("text", "");
            ParsedActorsEvents r;
            for (const auto* e : matching(text, StubEffect::Kind::Actor)) {
                const bool dup = std::any_of(r.actors.begin(), r.actors.end(),
                                             [&](const ParsedActor& a) { return a.name == e->arg1; });
                if (!dup) r.actors.push_back({e->arg1, e->arg2.empty() ? std::nullopt : std::optional(e->arg2)});
            }
            for (const auto* e : matching(text, StubEffect::Kind::Event)) {
                ParsedEvent ev{e->arg1, r.actors.size() > 0 ? r.actors[0].name : "",
                               r.actors.size() > 1 ? r.actors[1].name : ""};
                if (std::find(r.events.begin(), r.events.end(), ev) == r.events.end()) r.events.push_back(ev);
            }
            if (auto caps = matching(text, StubEffect::Kind::Cap); !caps.empty()) r.capCategory = caps.back()->arg1;
            if (auto inc = matching(text, StubEffect::Kind::Incident); !inc.empty()) {
                r.incidentCandidate = IncidentCandidate{inc.front()->arg1, inc.front()->arg2};
            }
            return r;
        }
        case Task::ImageCaption: {
            CaptionResult r;
            std::string raw;
            if (blobRoot_) {
                std::ifstream in(*blobRoot_ / (c.value("imagePath", "") + ".tags"), std::ios::binary);
                std::ostringstream ss;
                ss << in.rdbuf();
                raw = ss.str();
            }
            for (char& ch : raw) {
                if (ch == ',' || ch == '\n' || ch == '\r' || ch == ';') ch = '\t';
            }
            for (const auto& t : split(raw, '\t')) {
                std::string tag = to_lower_ascii(trim(t));
                if (!tag.empty() && std::find(r.tags.begin(), r.tags.end(), tag) == r.tags.end()) r.tags.push_back(tag);
            }
            std::string joined;
            for (const auto& t : r.tags) joined += " " + t;
            std::vector<std::string> captions;
            for (const auto* e : matching(joined, StubEffect::Kind::Caption)) captions.push_back(e->arg1);
            for (const auto& rule : rules_.rules) {
                if (rule.matches(joined)) r.noteworthy = true;
            }
            if (captions.empty()) {
                r.caption = "Camera view with no notable activity.";
            } else {
                for (std::size_t i = 0; i < captions.size(); ++i) r.caption += (i ? " " : "") + captions[i];
            }
            return r;
        }
        case Task::CrossModalLink: {
            const std::string summary = c.at("report").value("summary", "");
            std::vector<std::string> tokens;
            for (const auto* e : matching(summary, StubEffect::Kind::Link)) tokens.push_back(e->arg1);
            LinkDecision r;
            for (const auto& cand : c.at("candidates")) {
                std::string text = cand.value("label", "") + " " + cand.value("description", "");
                if (cand.contains("altLabels") && cand.at("altLabels").is_array()) {
                    for (const auto& alt : cand.at("altLabels")) {
                        if (alt.is_string()) text += " " + alt.get<std::string>();
                    }
                }
                const bool hit = std::any_of(tokens.begin(), tokens.end(),
                                             [&](const std::string& t) { return contains_ci(text, t); });
                if (hit) r.linkedIncidentIds.emplace_back(cand.at("id").get<std::string>());
            }
            r.rationale = tokens.empty() ? "no link rule matched the report"
                                         : "report matches link rule tokens";
            return r;
        }
        case Task::IncidentMerge:
        case Task::ActorMerge: {
            const bool incident = req.task == Task::IncidentMerge;
            const std::string subject = incident ? c.at("incident").value("label", "") : c.at("actor").value("name", "");
            auto find = [&](const std::string& target) -> std::optional<EntityId> {
                for (const auto& cand : c.at("candidates")) {
                    std::vector<std::string> names{cand.value(incident ? "label" : "name", "")};
                    const char* altKey = incident ? "altLabels" : "altNames";
                    if (cand.contains(altKey) && cand.at(altKey).is_array()) {
                        for (const auto& alt : cand.at(altKey)) {
                            if (alt.is_string()) names.push_back(alt.get<std::string>());
                        }
                    }
                    for (const auto& n : names) {
                        if (to_lower_ascii(trim(n)) == to_lower_ascii(target)) return EntityId(cand.at("id").get<std::string>());
                    }
                }
                return std::nullopt;
            };
            MergeDecision r;
            for (const auto* e : matching(subject, StubEffect::Kind::Same)) {
                if (!r.sameAs) r.sameAs = find(e->arg1);
            }
            if (incident) {
                for (const auto* e : matching(subject, StubEffect::Kind::PartOf)) {
                    if (!r.partOf) r.partOf = find(e->arg1);
                }
            }
            if (r.sameAs && r.partOf && *r.sameAs == *r.partOf) r.partOf.reset();
            r.rationale = r.sameAs || r.partOf ? "stub rule matched" : "no stub rule matched";
            return r;
        }
    }
    throw InferenceError("unknown task");
}

}  // namespace sigmus
