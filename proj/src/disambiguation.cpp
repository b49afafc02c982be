#include "sigmus/disambiguation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace sigmus {

namespace {

// Code points of a UTF-8 string; stray bytes decode to themselves offset
// into a private range so they still compare consistently.
std::vector<char32_t> code_points(std::string_view s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size();) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
        bool ok = len > 0 && i + len <= s.size();
        for (std::size_t k = 1; ok && k < len; ++k) ok = (static_cast<unsigned char>(s[i + k]) >> 6) == 0x2;
        if (!ok) {
            out.push_back(0xF0000 + c);
            ++i;
            continue;
        }
        char32_t cp = len == 1 ? c : len == 2 ? (c & 0x1F) : len == 3 ? (c & 0x0F) : (c & 0x07);
        for (std::size_t k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
        out.push_back(cp);
        i += len;
    }
    return out;
}

bool is_prefix(std::string_view shorter, std::string_view longer) {
    return shorter.size() <= longer.size() && longer.compare(0, shorter.size(), shorter) == 0;
}

std::vector<std::string> list_property(const Node& n, std::string_view key) {
    auto it = n.properties.find(key);
    if (it == n.properties.end()) return {};
    if (const auto* l = std::get_if<std::vector<std::string>>(&it->second)) return *l;
    return {};
}

std::string string_property(const Node& n, std::string_view key) {
    auto it = n.properties.find(key);
    if (it == n.properties.end()) return {};
    if (const auto* s = std::get_if<std::string>(&it->second)) return *s;
    return {};
}

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    write_u32(out, static_cast<std::uint32_t>(v));
    write_u32(out, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw VectorIndexError("truncated vector index");
    return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& in) {
    const std::uint64_t lo = read_u32(in);
    return lo | (static_cast<std::uint64_t>(read_u32(in)) << 32);
}

std::string read_bytes(std::istream& in, std::size_t n) {
    if (n > (1u << 28)) throw VectorIndexError("implausible string length in vector index");
    std::string s(n, '\0');
    if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw VectorIndexError("truncated vector index");
    return s;
}

}  // namespace

double char_edit_distance(std::string_view a, std::string_view b) {
    const auto x = code_points(a);
    const auto y = code_points(b);
    if (x.empty() && y.empty()) return 0.0;
    std::vector<std::size_t> prev(y.size() + 1), cur(y.size() + 1);
    for (std::size_t j = 0; j <= y.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= x.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= y.size(); ++j) {
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1)});
        }
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[y.size()]) / static_cast<double>(std::max(x.size(), y.size()));
}

double token_substitution_cost(std::string_view a, std::string_view b, const NameDistanceParams& params) {
    if (a == b) return 0.0;
    const double lev = char_edit_distance(a, b);
    const std::size_t la = code_points(a).size();
    const std::size_t lb = code_points(b).size();
    if (la >= params.minPrefixLen && lb >= params.minPrefixLen && (is_prefix(a, b) || is_prefix(b, a))) {
        return std::min(params.prefixSubstitutionCost, lev);
    }
    return lev;
}

double name_distance(std::string_view a, std::string_view b, const NameDistanceParams& params) {
    const auto ta = tokenize_words(a);
    const auto tb = tokenize_words(b);
    if (ta.empty() && tb.empty()) return 0.0;
    if (ta.empty() || tb.empty()) return 1.0;
    const double ins = params.insertDeleteCost;
    std::vector<double> prev(tb.size() + 1), cur(tb.size() + 1);
    for (std::size_t j = 0; j <= tb.size(); ++j) prev[j] = static_cast<double>(j) * ins;
    for (std::size_t i = 1; i <= ta.size(); ++i) {
        cur[0] = static_cast<double>(i) * ins;
        for (std::size_t j = 1; j <= tb.size(); ++j) {
            cur[j] = std::min({prev[j] + ins, cur[j - 1] + ins,
                               prev[j - 1] + token_substitution_cost(ta[i - 1], tb[j - 1], params)});
        }
        std::swap(prev, cur);
    }
    const double d = prev[tb.size()] / static_cast<double>(std::max(ta.size(), tb.size()));
    return std::clamp(d, 0.0, 1.0);
}

std::string normalize_name(std::string_view name) {
    std::string out;
    for (const auto& t : tokenize_words(name)) {
        if (!out.empty()) out.push_back(' ');
        out += t;
    }
    return out;
}

ActorRecord actor_from_node(const Node& node) {
    ActorRecord a;
    a.id = node.id;
    a.name = string_property(node, vocab::kLabel);
    if (auto code = string_property(node, vocab::kCameoActor); !code.empty()) a.cameoActorCode = code;
    a.altNames = list_property(node, vocab::kAltLabel);
    return a;
}

std::vector<std::pair<ActorRecord, double>> topk_actors(const GraphStore& graph, std::string_view name, std::size_t k,
                                                        const NameDistanceParams& params, kernels::Exec exec) {
    std::vector<ActorRecord> actors;
    for (const auto& n : graph.nodes_of_class("Actor")) actors.push_back(actor_from_node(n));
    const auto scores = kernels::map_scores(
        actors.size(),
        [&](std::size_t i) {
            double best = name_distance(name, actors[i].name, params);
            for (const auto& alt : actors[i].altNames) best = std::min(best, name_distance(name, alt, params));
            return best;
        },
        exec);
    std::vector<std::string> keys;
    keys.reserve(actors.size());
    for (const auto& a : actors) keys.push_back(a.id.str());
    std::vector<std::pair<ActorRecord, double>> out;
    for (std::size_t i : kernels::select_topk(scores, keys, k, true, exec)) out.emplace_back(actors[i], scores[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Embeddings

EmbeddingVector embed(std::string_view text, std::size_t dims) {
    EmbeddingVector v(dims, 0.0f);
    if (dims == 0) return v;
    std::vector<double> counts(dims, 0.0);
    for (const auto& t : tokenize_words(text)) counts[fnv1a64(t) % dims] += 1.0;
    double norm = 0.0;
    for (double c : counts) norm += c * c;
    if (norm == 0.0) return v;
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < dims; ++i) v[i] = static_cast<float>(counts[i] / norm);
    return v;
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.size() != b.size()) throw VectorIndexError("cosine of vectors with different dims");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

VectorIndex::VectorIndex(std::size_t dims, EmbedFn embedder) : dims_(dims), embedder_(std::move(embedder)) {
    if (dims_ == 0) throw VectorIndexError("vector index needs at least one dimension");
}

EmbeddingVector VectorIndex::embed_text(std::string_view text) const {
    return embedder_ ? embedder_(text) : embed(text, dims_);
}

void VectorIndex::upsert(const EntityId& id, std::string_view sourceText) {
    upsert(VectorIndexEntry{id, embed_text(sourceText), std::string(sourceText)});
}

void VectorIndex::upsert(VectorIndexEntry entry) {
    if (entry.incidentId.empty()) throw VectorIndexError("vector index entry without id");
    if (entry.vector.size() != dims_) throw VectorIndexError("embedding has wrong dimension");
    auto it = rows_.find(entry.incidentId);
    std::size_t row;
    if (it == rows_.end()) {
        row = ids_.size();
        ids_.push_back(entry.incidentId);
        keys_.push_back(entry.incidentId.str());
        texts_.emplace_back();
        matrix_.resize(matrix_.size() + dims_);
        rows_.emplace(entry.incidentId, row);
    } else {
        row = it->second;
    }
    texts_[row] = std::move(entry.sourceText);
    std::copy(entry.vector.begin(), entry.vector.end(), matrix_.begin() + static_cast<std::ptrdiff_t>(row * dims_));
}

bool VectorIndex::remove(const EntityId& id) {
    auto it = rows_.find(id);
    if (it == rows_.end()) return false;
    const std::size_t row = it->second;
    const std::size_t last = ids_.size() - 1;
    rows_.erase(it);
    if (row != last) {
        ids_[row] = ids_[last];
        keys_[row] = keys_[last];
        texts_[row] = std::move(texts_[last]);
        std::copy_n(matrix_.begin() + static_cast<std::ptrdiff_t>(last * dims_), dims_,
                    matrix_.begin() + static_cast<std::ptrdiff_t>(row * dims_));
        rows_[ids_[row]] = row;
    }
    ids_.pop_back();
    keys_.pop_back();
    texts_.pop_back();
    matrix_.resize(last * dims_);
    return true;
}

std::optional<VectorIndexEntry> VectorIndex::get(const EntityId& id) const {
    auto it = rows_.find(id);
    if (it == rows_.end()) return std::nullopt;
    const auto begin = matrix_.begin() + static_cast<std::ptrdiff_t>(it->second * dims_);
    return VectorIndexEntry{id, EmbeddingVector(begin, begin + static_cast<std::ptrdiff_t>(dims_)), texts_[it->second]};
}

std::vector<VectorIndexEntry> VectorIndex::entries() const {
    std::vector<VectorIndexEntry> out;
    for (const auto& [id, row] : rows_) out.push_back(*get(id));
    return out;
}

std::vector<std::pair<EntityId, double>> VectorIndex::topk(const EmbeddingVector& query, std::size_t k,
                                                           kernels::Exec exec) const {
    if (query.size() != dims_) throw VectorIndexError("query has wrong dimension");
    const auto scores = kernels::dot_rows(query, matrix_, dims_, exec);
    std::vector<std::pair<EntityId, double>> out;
    for (std::size_t i : kernels::select_topk(scores, keys_, k, false, exec)) out.emplace_back(ids_[i], scores[i]);
    return out;
}

void VectorIndex::save(const std::filesystem::path& path) const {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw VectorIndexError("cannot write " + tmp.string());
        out.write("SGVI", 4);
        write_u32(out, 1);
        write_u32(out, static_cast<std::uint32_t>(dims_));
        write_u64(out, ids_.size());
        for (const auto& [id, row] : rows_) {
            write_u32(out, static_cast<std::uint32_t>(id.str().size()));
            out.write(id.str().data(), static_cast<std::streamsize>(id.str().size()));
            for (std::size_t d = 0; d < dims_; ++d) {
                std::uint32_t bits;
                std::memcpy(&bits, &matrix_[row * dims_ + d], 4);
                write_u32(out, bits);
            }
            write_u32(out, static_cast<std::uint32_t>(texts_[row].size()));
            out.write(texts_[row].data(), static_cast<std::streamsize>(texts_[row].size()));
        }
        if (!out) throw VectorIndexError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

VectorIndex VectorIndex::load(const std::filesystem::path& path, EmbedFn embedder) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw VectorIndexError("cannot open " + path.string());
    if (read_bytes(in, 4) != "SGVI") throw VectorIndexError("not a vector index file");
    if (read_u32(in) != 1) throw VectorIndexError("unsupported vector index version");
    const std::uint32_t dims = read_u32(in);
    if (dims == 0 || dims > (1u << 20)) throw VectorIndexError("implausible vector index dims");
    const std::uint64_t count = read_u64(in);
    VectorIndex index(dims, std::move(embedder));
    for (std::uint64_t i = 0; i < count; ++i) {
        VectorIndexEntry e;
        e.incidentId = EntityId(read_bytes(in, read_u32(in)));
        e.vector.resize(dims);
        for (std::uint32_t d = 0; d < dims; ++d) {
            const std::uint32_t bits = read_u32(in);
            std::memcpy(&e.vector[d], &bits, 4);
        }
        e.sourceText = read_bytes(in, read_u32(in));
        index.upsert(std::move(e));
    }
    return index;
}

std::vector<std::pair<EntityId, double>> topk_incidents(const VectorIndex& index, std::string_view queryText,
                                                        std::size_t k, kernels::Exec exec) {
    return index.topk(index.embed_text(queryText), k, exec);
}

std::string incident_index_text(const Incident& incident, std::string_view sourceText) {
    return incident.label + " " + incident.description + " " + truncate_utf8(sourceText, 1000);
}

// ---------------------------------------------------------------------------
// Resolution

Resolver::Resolver(GraphStore& graph, VectorIndex& index, ResolveOptions options)
    : graph_(graph), index_(index), options_(std::move(options)) {}

std::optional<EntityId> Resolver::exact_actor(const std::string& normalized) const {
    for (const auto& n : graph_.nodes_of_class("Actor")) {
        const ActorRecord a = actor_from_node(n);
        if (normalize_name(a.name) == normalized) return a.id;
        for (const auto& alt : a.altNames) {
            if (normalize_name(alt) == normalized) return a.id;
        }
    }
    return std::nullopt;
}

std::optional<EntityId> Resolver::exact_incident(const Incident& candidate) const {
    if (auto n = graph_.get_node(candidate.id); n && n->classLabel == "Incident") return candidate.id;
    const std::string normalized = normalize_name(candidate.label);
    for (const auto& n : graph_.nodes_of_class("Incident")) {
        if (normalize_name(string_property(n, vocab::kLabel)) == normalized) return n.id;
        for (const auto& alt : list_property(n, vocab::kAltLabel)) {
            if (normalize_name(alt) == normalized) return n.id;
        }
    }
    return std::nullopt;
}

void Resolver::attach_sources(const EntityId& incident, const std::vector<EntityId>& reports) {
    for (const auto& r : reports) {
        if (graph_.contains(r)) graph_.upsert_edge(Edge{incident, r, std::string(vocab::kHasSource), {}});
    }
}

void Resolver::flag(const EntityId& id, const std::string& reason) {
    graph_.set_property(id, vocab::kNeedsReview, true);
    graph_.set_property(id, vocab::kRationale, reason);
}

EntityId Resolver::resolve_actor(const ActorRecord& candidate, InferenceBackend* backend, std::string_view context) {
    if (auto v = validate(candidate); !v.empty()) throw ValidationError(std::move(v));
    std::lock_guard lock(actorMutex_);
    if (auto n = graph_.get_node(candidate.id); n && n->classLabel == "Actor") return candidate.id;
    if (auto existing = exact_actor(normalize_name(candidate.name))) return *existing;

    const auto top = topk_actors(graph_, candidate.name, options_.k, options_.distance);
    std::optional<MergeDecision> decision;
    std::string failure;
    if (!top.empty()) {
        nlohmann::json cands = nlohmann::json::array();
        for (const auto& [a, d] : top) cands.push_back({{"id", a.id.str()}, {"name", a.name}, {"altNames", a.altNames}});
        BackendRequest req{Task::ActorMerge,
                           {{"actor", {{"name", candidate.name}, {"code", candidate.cameoActorCode.value_or("")}}},
                            {"context", std::string(context)},
                            {"candidates", cands}},
                           options_.k};
        if (!backend) {
            failure = "no inference backend for actor adjudication";
        } else {
            try {
                decision = run_as<MergeDecision>(*backend, req, options_.run);
            } catch (const InferenceError& e) {
                failure = e.what();
            }
        }
    }
    graph_.insert_entity(candidate);
    if (decision && decision->sameAs) {
        graph_.merge_nodes(*decision->sameAs, candidate.id, vocab::kAltLabel);
        return *decision->sameAs;
    }
    if (!failure.empty()) flag(candidate.id, failure);
    return candidate.id;
}

IncidentResolution Resolver::resolve_incident(const Incident& candidate, std::string_view sourceText,
                                              InferenceBackend* backend) {
    if (auto v = validate(candidate); !v.empty()) throw ValidationError(std::move(v));
    std::lock_guard lock(incidentMutex_);
    IncidentResolution res;
    const std::string text = incident_index_text(candidate, sourceText);

    if (auto existing = exact_incident(candidate)) {
        attach_sources(*existing, candidate.sourceReportIds);
        if (!index_.contains(*existing)) index_.upsert(*existing, text);
        res.id = *existing;
        res.merged = *existing != candidate.id;
        if (auto parents = graph_.out_edges(*existing, vocab::kIsPartOf); !parents.empty()) res.partOf = parents.front().to;
        return res;
    }

    nlohmann::json cands = nlohmann::json::array();
    for (const auto& [id, score] : topk_incidents(index_, text, options_.k)) {
        auto node = graph_.get_node(id);
        if (!node || node->classLabel != "Incident") continue;  // stale index entry
        cands.push_back({{"id", id.str()},
                         {"label", string_property(*node, vocab::kLabel)},
                         {"altLabels", list_property(*node, vocab::kAltLabel)},
                         {"description", string_property(*node, vocab::kComment)},
                         {"sourceText", index_.get(id)->sourceText}});
    }
    std::optional<MergeDecision> decision;
    std::string failure;
    if (!cands.empty()) {
        BackendRequest req{Task::IncidentMerge,
                           {{"incident", {{"label", candidate.label}, {"description", candidate.description}}},
                            {"sourceText", truncate_utf8(sourceText, 1000)},
                            {"candidates", cands}},
                           options_.k};
        if (!backend) {
            failure = "no inference backend for incident adjudication";
        } else {
            try {
                decision = run_as<MergeDecision>(*backend, req, options_.run);
            } catch (const InferenceError& e) {
                failure = e.what();
            }
        }
    }

    graph_.insert_entity(candidate);
    res.id = candidate.id;
    if (decision && decision->sameAs) {
        graph_.merge_nodes(*decision->sameAs, candidate.id, vocab::kAltLabel);
        res.id = *decision->sameAs;
        res.merged = true;
    } else {
        index_.upsert(candidate.id, text);
    }
    if (decision && decision->partOf) {
        const EntityId& target = *decision->partOf;
        if (target == res.id || graph_.reaches(target, res.id, vocab::kIsPartOf)) {
            failure = "rejected isPartOf " + target.str() + ": would create a cycle";
        } else {
            graph_.upsert_edge(
                Edge{res.id, target, std::string(vocab::kIsPartOf), {{std::string(vocab::kRationale), decision->rationale}}});
            res.partOf = target;
        }
    }
    if (!failure.empty()) {
        flag(res.id, failure);
        res.flagged = true;
    }
    return res;
}

bool has_part_of_cycle(const GraphStore& graph) {
    enum class Mark { None, Active, Done };
    std::map<EntityId, Mark> mark;
    std::map<EntityId, std::vector<EntityId>> adj;
    for (const auto& e : graph.edges()) {
        if (e.predicate == vocab::kIsPartOf) adj[e.from].push_back(e.to);
    }
    for (const auto& [start, unused] : adj) {
        if (mark[start] != Mark::None) continue;
        std::vector<std::pair<EntityId, std::size_t>> stack{{start, 0}};
        mark[start] = Mark::Active;
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            const auto& out = adj[node];
            if (next == out.size()) {
                mark[node] = Mark::Done;
                stack.pop_back();
                continue;
            }
            const EntityId child = out[next++];
            if (mark[child] == Mark::Active) return true;
            if (mark[child] == Mark::None) {
                mark[child] = Mark::Active;
                stack.emplace_back(child, 0);
            }
        }
    }
    return false;
}

}  // namespace sigmus
