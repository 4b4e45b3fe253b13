#include "laiml/knowledge_base.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <set>

#include "laiml/text_io.hpp"

namespace laiml::kb {
namespace {

// Ordering shared by every ranking: higher similarity first, then lower id.
bool ranks_before(double sim_a, std::size_t id_a, double sim_b, std::size_t id_b) {
    if (sim_a != sim_b) {
        return sim_a > sim_b;
    }
    return id_a < id_b;
}

double mean_of(const std::array<double, kGroupCount>& sims) {
    double sum = 0.0;
    for (const double s : sims) {
        sum += s;
    }
    return sum / static_cast<double>(kGroupCount);
}

std::array<std::vector<double>, kGroupCount> query_vectors(const KnowledgeBase& store,
                                                           const cacs::PatientFeatureTable& table) {
    if (table.size() != store.schema().size()) {
        throw RetrievalError("query table has " + std::to_string(table.size()) + " features, store schema has " +
                             std::to_string(store.schema().size()));
    }
    std::array<std::vector<double>, kGroupCount> queries;
    for (std::size_t g = 0; g < kGroupCount; ++g) {
        queries[g] = embed_group(table, store.schema().groups()[g], store.embedder());
    }
    return queries;
}

nlohmann::json entry_to_json(const DkbEntry& e) {
    nlohmann::json doc;
    doc["entry_id"] = e.entry_id;
    doc["sample_id"] = e.sample_id;
    doc["vectors"] = e.vectors;
    doc["table"] = cacs::to_json(e.table);
    doc["weights"] = calibration::to_json(e.weights);
    doc["guidance"] = e.guidance;
    doc["teacher_prob"] = e.teacher_prob;
    doc["infer_prob"] = e.infer_prob;
    doc["label"] = e.label ? nlohmann::json(static_cast<int>(*e.label)) : nlohmann::json(nullptr);
    doc["converged"] = e.converged;
    doc["iterations"] = e.iterations;
    return doc;
}

DkbEntry entry_from_json(const nlohmann::json& doc) {
    DkbEntry e;
    e.entry_id = doc.at("entry_id").get<std::size_t>();
    e.sample_id = doc.at("sample_id").get<std::string>();
    const auto& vectors = doc.at("vectors");
    if (!vectors.is_array() || vectors.size() != kGroupCount) {
        throw StoreFormatError("entry " + std::to_string(e.entry_id) + " does not hold one vector per group");
    }
    for (std::size_t g = 0; g < kGroupCount; ++g) {
        e.vectors[g] = vectors[g].get<std::vector<double>>();
    }
    e.table = cacs::table_from_json(doc.at("table"));
    e.weights = calibration::weights_from_json(doc.at("weights"));
    e.guidance = doc.at("guidance").get<std::string>();
    e.teacher_prob = doc.at("teacher_prob").get<double>();
    e.infer_prob = doc.at("infer_prob").get<double>();
    if (doc.at("label").is_number_integer()) {
        e.label = doc["label"].get<int>() == 1 ? Label::unhealthy : Label::healthy;
    }
    e.converged = doc.at("converged").get<bool>();
    e.iterations = doc.at("iterations").get<std::size_t>();
    return e;
}

}  // namespace

// ---- embedding -------------------------------------------------------------

Standardization Standardization::from_matrix(const FeatureShapMatrix& matrix) {
    const std::size_t n = matrix.schema.size();
    Standardization stats;
    stats.mean.assign(n, 0.0);
    stats.stddev.assign(n, 0.0);
    if (matrix.rows.empty()) {
        return stats;
    }
    const auto count = static_cast<double>(matrix.rows.size());
    for (std::size_t j = 0; j < n; ++j) {
        double sum = 0.0;
        for (const auto& row : matrix.rows) {
            sum += row.values[j];
        }
        const double mean = sum / count;
        double sq = 0.0;
        for (const auto& row : matrix.rows) {
            const double d = row.values[j] - mean;
            sq += d * d;
        }
        stats.mean[j] = mean;
        stats.stddev[j] = std::sqrt(sq / count);
    }
    return stats;
}

nlohmann::json Standardization::to_json() const { return {{"mean", mean}, {"stddev", stddev}}; }

Standardization Standardization::from_json(const nlohmann::json& doc) {
    Standardization stats;
    stats.mean = doc.at("mean").get<std::vector<double>>();
    stats.stddev = doc.at("stddev").get<std::vector<double>>();
    if (stats.mean.size() != stats.stddev.size()) {
        throw StoreFormatError("standardization mean/stddev lengths differ");
    }
    return stats;
}

std::vector<double> StandardizedValueEmbedder::embed(const cacs::PatientFeatureTable& table,
                                                     std::span<const std::size_t> group) const {
    std::vector<double> out;
    out.reserve(group.size());
    for (const auto index : group) {
        if (index >= table.size() || index >= stats_.mean.size()) {
            throw KbError("unknown feature index " + std::to_string(index));
        }
        const double sd = stats_.stddev[index];
        out.push_back(sd > 0.0 ? (table.entries[index].raw_value - stats_.mean[index]) / sd : 0.0);
    }
    return out;
}

std::vector<double> embed_group(const cacs::PatientFeatureTable& table, std::span<const std::size_t> group,
                                const Embedder& embedder) {
    return embedder.embed(table, group);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw KbError("cosine similarity of vectors with different dimensions");
    }
    double dot = 0.0;
    double norm_a = 0.0;
    double norm_b = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        norm_a += a[i] * a[i];
        norm_b += b[i] * b[i];
    }
    if (norm_a == 0.0 && norm_b == 0.0) {
        return 1.0;
    }
    if (norm_a == 0.0 || norm_b == 0.0) {
        return 0.0;
    }
    // sqrt of the rounded square is exact, so identical vectors give exactly 1.
    return std::clamp(dot / std::sqrt(norm_a * norm_b), -1.0, 1.0);
}

// ---- store -----------------------------------------------------------------

nlohmann::json RetrievalConfig::to_json() const {
    return {{"k", k}, {"threshold", threshold}, {"allow_global_fallback", allow_global_fallback}};
}

std::string_view to_string(Tier tier) {
    switch (tier) {
        case Tier::intersection:
            return "intersection";
        case Tier::majority:
            return "majority";
        case Tier::global:
            return "global";
    }
    return "unknown";
}

KnowledgeBase::KnowledgeBase(FeatureSchema schema, std::shared_ptr<const Embedder> embedder, RetrievalConfig defaults)
    : schema_(std::move(schema)),
      embedder_(std::move(embedder)),
      defaults_(defaults),
      entries_(std::make_shared<const std::vector<DkbEntry>>()) {
    if (!embedder_) {
        throw KbError("knowledge base needs an embedder");
    }
}

std::shared_ptr<const std::vector<DkbEntry>> KnowledgeBase::snapshot() const {
    std::lock_guard lock(*write_mutex_);
    return entries_;
}

std::size_t KnowledgeBase::append(DkbEntry entry) {
    std::lock_guard lock(*write_mutex_);
    auto next = std::make_shared<std::vector<DkbEntry>>(*entries_);
    entry.entry_id = next->size();
    next->push_back(std::move(entry));
    entries_ = std::move(next);
    return entries_->size() - 1;
}

std::size_t KnowledgeBase::save(const calibration::DistillationOutcome& outcome, bool allow_unconverged) {
    if (!outcome.converged && !allow_unconverged) {
        throw KbError("refusing to store unconverged outcome for sample '" + outcome.sample_id + "'");
    }
    if (outcome.state.table.size() != schema_.size()) {
        throw KbError("outcome table does not match the store schema");
    }
    DkbEntry entry;
    entry.sample_id = outcome.sample_id;
    for (std::size_t g = 0; g < kGroupCount; ++g) {
        entry.vectors[g] = embed_group(outcome.state.table, schema_.groups()[g], *embedder_);
    }
    entry.table = outcome.state.table;
    entry.weights = outcome.state.weights;
    entry.guidance = outcome.state.guidance;
    entry.teacher_prob = outcome.teacher_prob;
    entry.infer_prob = outcome.state.infer_prob;
    entry.label = outcome.label;
    entry.converged = outcome.converged;
    entry.iterations = outcome.iterations;

    return append(std::move(entry));
}

std::string KnowledgeBase::serialize() const {
    const auto entries = snapshot();
    nlohmann::json payload;
    payload["header"] = {{"schema_hash", schema_.hash()},
                         {"schema", schema_.to_json()},
                         {"embedder", {{"id", embedder_->id()}, {"params", embedder_->params()}}},
                         {"k", defaults_.k},
                         {"threshold", defaults_.threshold},
                         {"allow_global_fallback", defaults_.allow_global_fallback}};
    payload["entries"] = nlohmann::json::array();
    for (const auto& e : *entries) {
        payload["entries"].push_back(entry_to_json(e));
    }
    const auto body = payload.dump(1);
    return std::string(kStoreMagic) + "/" + std::to_string(kStoreVersion) + " crc32=" + io::hex32(io::crc32(body)) +
           " length=" + std::to_string(body.size()) + "\n" + body;
}

void KnowledgeBase::persist(const std::filesystem::path& path) const { io::write_file(path, serialize()); }

KnowledgeBase KnowledgeBase::deserialize(std::string_view bytes, std::shared_ptr<const Embedder> embedder) {
    const auto newline = bytes.find('\n');
    if (newline == std::string_view::npos || !bytes.starts_with(kStoreMagic)) {
        throw StoreFormatError("not a knowledge base store");
    }
    const auto header_line = bytes.substr(0, newline);
    const auto body = bytes.substr(newline + 1);

    const auto fields = io::split(header_line, ' ');
    if (fields.size() != 3) {
        throw StoreFormatError("malformed store header line");
    }
    const auto expected_version = std::string(kStoreMagic) + "/" + std::to_string(kStoreVersion);
    if (fields[0] != expected_version) {
        throw StoreFormatError("unsupported store version '" + fields[0] + "' (expected " + expected_version + ")");
    }
    if (!fields[1].starts_with("crc32=") || !fields[2].starts_with("length=")) {
        throw StoreFormatError("malformed store header line");
    }
    if (fields[2].substr(7) != std::to_string(body.size())) {
        throw StoreFormatError("store payload length mismatch (truncated or corrupted)");
    }
    if (fields[1].substr(6) != io::hex32(io::crc32(body))) {
        throw StoreFormatError("store checksum mismatch (corrupted payload)");
    }

    try {
        const auto payload = nlohmann::json::parse(body);
        const auto& header = payload.at("header");
        auto schema = FeatureSchema::from_json(header.at("schema"));
        if (schema.hash() != header.at("schema_hash").get<std::string>()) {
            throw StoreFormatError("store schema hash does not match its schema");
        }
        const auto embedder_id = header.at("embedder").at("id").get<std::string>();
        if (embedder) {
            if (embedder->id() != embedder_id) {
                throw StoreFormatError("store was built with embedder '" + embedder_id + "', got '" + embedder->id() +
                                       "'");
            }
        } else if (embedder_id == StandardizedValueEmbedder::kId) {
            embedder = std::make_shared<StandardizedValueEmbedder>(
                Standardization::from_json(header.at("embedder").at("params")));
        } else {
            throw StoreFormatError("store needs embedder '" + embedder_id + "' to be supplied");
        }
        RetrievalConfig defaults;
        defaults.k = header.at("k").get<std::size_t>();
        defaults.threshold = header.at("threshold").get<double>();
        defaults.allow_global_fallback = header.value("allow_global_fallback", true);

        KnowledgeBase store(std::move(schema), std::move(embedder), defaults);
        auto entries = std::make_shared<std::vector<DkbEntry>>();
        for (const auto& raw : payload.at("entries")) {
            auto entry = entry_from_json(raw);
            if (entry.entry_id != entries->size()) {
                throw StoreFormatError("store entry ids are not sequential");
            }
            if (entry.table.size() != store.schema_.size()) {
                throw StoreFormatError("store entry " + std::to_string(entry.entry_id) + " has " +
                                       std::to_string(entry.table.size()) + " features, schema has " +
                                       std::to_string(store.schema_.size()));
            }
            for (std::size_t g = 0; g < kGroupCount; ++g) {
                const auto expected = store.embedder_->dimension(store.schema_.groups()[g].size());
                if (entry.vectors[g].size() != expected) {
                    throw StoreFormatError("store entry " + std::to_string(entry.entry_id) + " group " +
                                           std::to_string(g) + " vector has dimension " +
                                           std::to_string(entry.vectors[g].size()) + ", embedder produces " +
                                           std::to_string(expected));
                }
            }
            entries->push_back(std::move(entry));
        }
        store.entries_ = std::move(entries);
        return store;
    } catch (const nlohmann::json::exception& ex) {
        throw StoreFormatError(std::string("store payload is malformed: ") + ex.what());
    } catch (const IngestError& ex) {
        throw StoreFormatError(std::string("store schema is invalid: ") + ex.what());
    }
}

KnowledgeBase KnowledgeBase::open(const std::filesystem::path& path, std::shared_ptr<const Embedder> embedder) {
    std::string bytes;
    try {
        bytes = io::read_file(path);
    } catch (const std::runtime_error& ex) {
        throw KbError(ex.what());
    }
    try {
        return deserialize(bytes, std::move(embedder));
    } catch (const StoreFormatError& ex) {
        throw StoreFormatError(path.string() + ": " + ex.what());
    }
}

// ---- retrieval -------------------------------------------------------------

RetrievalResult fgmr_retrieve(const KnowledgeBase& store, const cacs::PatientFeatureTable& table,
                              const RetrievalConfig& config) {
    const auto entries = store.snapshot();
    if (entries->empty()) {
        throw RetrievalError("retrieval against an empty knowledge base");
    }
    const auto queries = query_vectors(store, table);
    const std::size_t n = entries->size();

    // sims[g][i]: similarity of entry i to the query in group g.
    std::array<std::vector<double>, kGroupCount> sims;
    for (std::size_t g = 0; g < kGroupCount; ++g) {
        sims[g].resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            sims[g][i] = cosine_similarity(queries[g], (*entries)[i].vectors[g]);
        }
    }

    RetrievalResult result;
    std::vector<std::uint8_t> votes(n, 0);
    for (std::size_t g = 0; g < kGroupCount; ++g) {
        // Bounded heap whose top is the worst kept hit.
        auto worse_on_top = [](const Hit& a, const Hit& b) {
            return ranks_before(a.similarity, a.entry_id, b.similarity, b.entry_id);
        };
        std::priority_queue<Hit, std::vector<Hit>, decltype(worse_on_top)> heap(worse_on_top);
        for (std::size_t i = 0; i < n && config.k > 0; ++i) {
            const double s = sims[g][i];
            if (s < config.threshold) {
                continue;
            }
            if (heap.size() < config.k) {
                heap.push({i, s});
            } else if (ranks_before(s, i, heap.top().similarity, heap.top().entry_id)) {
                heap.pop();
                heap.push({i, s});
            }
        }
        auto& hits = result.groups[g];
        hits.resize(heap.size());
        for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
            *it = heap.top();
            heap.pop();
        }
        for (const auto& hit : hits) {
            ++votes[hit.entry_id];
        }
    }

    auto select = [&](std::size_t min_votes) {
        std::vector<SelectedCase> chosen;
        for (std::size_t i = 0; i < n; ++i) {
            if (votes[i] >= min_votes) {
                SelectedCase c{i, {sims[0][i], sims[1][i], sims[2][i]}, 0.0};
                c.mean_similarity = mean_of(c.group_similarity);
                chosen.push_back(c);
            }
        }
        std::sort(chosen.begin(), chosen.end(), [](const SelectedCase& a, const SelectedCase& b) {
            return ranks_before(a.mean_similarity, a.entry_id, b.mean_similarity, b.entry_id);
        });
        return chosen;
    };

    result.selected = select(kGroupCount);
    result.tier = Tier::intersection;
    if (!result.selected.empty()) {
        return result;
    }
    result.selected = select(2);
    result.tier = Tier::majority;
    if (!result.selected.empty()) {
        return result;
    }
    result.tier = Tier::global;
    if (!config.allow_global_fallback) {
        return result;
    }
    std::vector<SelectedCase> all;
    all.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        SelectedCase c{i, {sims[0][i], sims[1][i], sims[2][i]}, 0.0};
        c.mean_similarity = mean_of(c.group_similarity);
        all.push_back(c);
    }
    const auto keep = std::min(config.k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                      [](const SelectedCase& a, const SelectedCase& b) {
                          return ranks_before(a.mean_similarity, a.entry_id, b.mean_similarity, b.entry_id);
                      });
    all.resize(keep);
    result.selected = std::move(all);
    return result;
}

RetrievalResult brute_force_retrieve(const KnowledgeBase& store, const cacs::PatientFeatureTable& table,
                                     const RetrievalConfig& config) {
    const auto entries = store.snapshot();
    if (entries->empty()) {
        throw RetrievalError("retrieval against an empty knowledge base");
    }
    const auto queries = query_vectors(store, table);

    std::map<std::size_t, std::array<double, kGroupCount>> all_sims;
    for (const auto& e : *entries) {
        auto& s = all_sims[e.entry_id];
        for (std::size_t g = 0; g < kGroupCount; ++g) {
            s[g] = cosine_similarity(queries[g], e.vectors[g]);
        }
    }

    RetrievalResult result;
    std::array<std::set<std::size_t>, kGroupCount> members;
    for (std::size_t g = 0; g < kGroupCount; ++g) {
        std::vector<Hit> ranked;
        for (const auto& [id, s] : all_sims) {
            ranked.push_back({id, s[g]});
        }
        std::sort(ranked.begin(), ranked.end(), [](const Hit& a, const Hit& b) {
            return ranks_before(a.similarity, a.entry_id, b.similarity, b.entry_id);
        });
        for (const auto& hit : ranked) {
            if (result.groups[g].size() == config.k) {
                break;
            }
            if (hit.similarity >= config.threshold) {
                result.groups[g].push_back(hit);
                members[g].insert(hit.entry_id);
            }
        }
    }

    auto as_cases = [&](const std::set<std::size_t>& ids) {
        std::vector<SelectedCase> out;
        for (const auto id : ids) {
            const auto& s = all_sims.at(id);
            out.push_back({id, s, mean_of(s)});
        }
        std::sort(out.begin(), out.end(), [](const SelectedCase& a, const SelectedCase& b) {
            return ranks_before(a.mean_similarity, a.entry_id, b.mean_similarity, b.entry_id);
        });
        return out;
    };

    std::set<std::size_t> both01;
    std::set_intersection(members[0].begin(), members[0].end(), members[1].begin(), members[1].end(),
                          std::inserter(both01, both01.end()));
    std::set<std::size_t> all_three;
    std::set_intersection(both01.begin(), both01.end(), members[2].begin(), members[2].end(),
                          std::inserter(all_three, all_three.end()));
    if (!all_three.empty()) {
        result.tier = Tier::intersection;
        result.selected = as_cases(all_three);
        return result;
    }

    std::set<std::size_t> at_least_two;
    for (std::size_t a = 0; a < kGroupCount; ++a) {
        for (std::size_t b = a + 1; b < kGroupCount; ++b) {
            std::set_intersection(members[a].begin(), members[a].end(), members[b].begin(), members[b].end(),
                                  std::inserter(at_least_two, at_least_two.end()));
        }
    }
    if (!at_least_two.empty()) {
        result.tier = Tier::majority;
        result.selected = as_cases(at_least_two);
        return result;
    }

    result.tier = Tier::global;
    if (!config.allow_global_fallback) {
        return result;
    }
    std::set<std::size_t> everyone;
    for (const auto& [id, s] : all_sims) {
        everyone.insert(id);
    }
    auto ranked = as_cases(everyone);
    if (ranked.size() > config.k) {
        ranked.resize(config.k);
    }
    result.selected = std::move(ranked);
    return result;
}

nlohmann::json to_json(const RetrievalResult& result) {
    nlohmann::json doc;
    doc["tier"] = std::string(to_string(result.tier));
    doc["groups"] = nlohmann::json::array();
    for (const auto& hits : result.groups) {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& h : hits) {
            list.push_back({{"entry_id", h.entry_id}, {"similarity", h.similarity}});
        }
        doc["groups"].push_back(std::move(list));
    }
    doc["selected"] = nlohmann::json::array();
    for (const auto& c : result.selected) {
        doc["selected"].push_back(
            {{"entry_id", c.entry_id}, {"group_similarity", c.group_similarity}, {"mean_similarity", c.mean_similarity}});
    }
    return doc;
}

}  // namespace laiml::kb
