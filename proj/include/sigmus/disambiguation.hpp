#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sigmus/graph_store.hpp"
#include "sigmus/inference.hpp"
#include "sigmus/kernels.hpp"

namespace sigmus {

struct NameDistanceParams {
    double prefixSubstitutionCost = 0.2;
    double insertDeleteCost = 0.4;
    std::size_t minPrefixLen = 3;
};

// Levenshtein distance over code points divided by the longer length.
double char_edit_distance(std::string_view a, std::string_view b);

// Cost of substituting token a by token b.
double token_substitution_cost(std::string_view a, std::string_view b, const NameDistanceParams& params = {});

// Token-level edit distance normalized by the longer token count.
double name_distance(std::string_view a, std::string_view b, const NameDistanceParams& params = {});

// Tokens joined by single spaces; the key used for exact-name shortcuts.
std::string normalize_name(std::string_view name);

ActorRecord actor_from_node(const Node& node);

std::vector<std::pair<ActorRecord, double>> topk_actors(const GraphStore& graph, std::string_view name, std::size_t k,
                                                        const NameDistanceParams& params = {},
                                                        kernels::Exec exec = kernels::Exec::Auto);

// ---------------------------------------------------------------------------
// Embeddings

inline constexpr std::size_t kDefaultEmbeddingDims = 256;

using EmbeddingVector = std::vector<float>;
using EmbedFn = std::function<EmbeddingVector(std::string_view)>;

// Hashed bag of words: FNV-1a 64 of each token modulo dims, counts, L2
// normalization. Empty text gives the zero vector.
EmbeddingVector embed(std::string_view text, std::size_t dims = kDefaultEmbeddingDims);

double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

struct VectorIndexEntry {
    EntityId incidentId;
    EmbeddingVector vector;
    std::string sourceText;
};

class VectorIndexError : public Error {
public:
    using Error::Error;
};

// Exact cosine index with one entry per incident id.
class VectorIndex {
public:
    explicit VectorIndex(std::size_t dims = kDefaultEmbeddingDims, EmbedFn embedder = {});

    std::size_t dims() const noexcept { return dims_; }
    std::size_t size() const noexcept { return ids_.size(); }
    bool contains(const EntityId& id) const { return rows_.count(id) > 0; }

    void upsert(const EntityId& id, std::string_view sourceText);
    void upsert(VectorIndexEntry entry);
    bool remove(const EntityId& id);
    std::optional<VectorIndexEntry> get(const EntityId& id) const;
    std::vector<VectorIndexEntry> entries() const;

    EmbeddingVector embed_text(std::string_view text) const;
    std::vector<std::pair<EntityId, double>> topk(const EmbeddingVector& query, std::size_t k,
                                                  kernels::Exec exec = kernels::Exec::Auto) const;

    // Binary layout: "SGVI" u32 version u32 dims u64 count, then per entry
    // u32 idLen, id, dims x f32, u32 textLen, text (little-endian).
    void save(const std::filesystem::path& path) const;
    static VectorIndex load(const std::filesystem::path& path, EmbedFn embedder = {});

private:
    std::size_t dims_;
    EmbedFn embedder_;
    std::vector<EntityId> ids_;
    std::vector<std::string> keys_;  // ids_ as strings for tie-breaking
    std::vector<std::string> texts_;
    std::vector<float> matrix_;
    std::map<EntityId, std::size_t> rows_;
};

std::vector<std::pair<EntityId, double>> topk_incidents(const VectorIndex& index, std::string_view queryText,
                                                        std::size_t k, kernels::Exec exec = kernels::Exec::Auto);

// label + " " + description + " " + the first 1,000 bytes of the source text.
std::string incident_index_text(const Incident& incident, std::string_view sourceText);

// ---------------------------------------------------------------------------
// Resolution

struct ResolveOptions {
    std::size_t k = 5;
    NameDistanceParams distance;
    RunOptions run;
};

struct IncidentResolution {
    EntityId id;
    std::optional<EntityId> partOf;
    bool merged = false;
    bool flagged = false;  // needsReview was set
};

// Reads, adjudicates and writes under one lock per entity class so that
// concurrent resolves of the same candidate cannot both insert.
class Resolver {
public:
    Resolver(GraphStore& graph, VectorIndex& index, ResolveOptions options = {});

    EntityId resolve_actor(const ActorRecord& candidate, InferenceBackend* backend, std::string_view context = {});
    IncidentResolution resolve_incident(const Incident& candidate, std::string_view sourceText,
                                        InferenceBackend* backend);

    const ResolveOptions& options() const noexcept { return options_; }

private:
    std::optional<EntityId> exact_actor(const std::string& normalized) const;
    std::optional<EntityId> exact_incident(const Incident& candidate) const;
    void attach_sources(const EntityId& incident, const std::vector<EntityId>& reports);
    void flag(const EntityId& id, const std::string& reason);

    GraphStore& graph_;
    VectorIndex& index_;
    ResolveOptions options_;
    std::mutex actorMutex_;
    std::mutex incidentMutex_;
};

// True when the isPartOf edges of the graph contain a cycle.
bool has_part_of_cycle(const GraphStore& graph);

}  // namespace sigmus
