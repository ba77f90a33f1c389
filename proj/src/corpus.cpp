#include "dfat/corpus.hpp"

#include "dfat/errors.hpp"
#include "dfat/io.hpp"

#include <cstdlib>
#include <set>
#include <sstream>

#ifndef DFAT_DATA_DIR
#define DFAT_DATA_DIR "data"
#endif

namespace dfat::knowledge {

namespace {

bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto lower = [](char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; };
        if (lower(a[i]) != lower(b[i])) return false;
    }
    return true;
}

}  // namespace

std::string_view to_string(CorpusId id) {
    switch (id) {
        case CorpusId::d1_entities_75: return "D1_entities_75";
        case CorpusId::d2_diseases_14: return "D2_diseases_14";
        case CorpusId::custom: return "custom";
    }
    return "custom";
}

CorpusId parse_corpus_id(std::string_view s) {
    if (iequals(s, "D1_entities_75") || iequals(s, "d1")) return CorpusId::d1_entities_75;
    if (iequals(s, "D2_diseases_14") || iequals(s, "d2")) return CorpusId::d2_diseases_14;
    if (iequals(s, "custom")) return CorpusId::custom;
    throw ConfigError("unknown corpus id `" + std::string(s) + "`");
}

std::optional<std::size_t> expected_size(CorpusId id) {
    switch (id) {
        case CorpusId::d1_entities_75: return 75;
        case CorpusId::d2_diseases_14: return 14;
        case CorpusId::custom: return std::nullopt;
    }
    return std::nullopt;
}

std::vector<std::string> CategoryCorpus::names() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.name);
    return out;
}

const CorpusEntry* CategoryCorpus::find(std::string_view name) const {
    for (const auto& e : entries) {
        if (e.name == name) return &e;
    }
    for (const auto& e : entries) {
        if (iequals(e.name, name)) return &e;
    }
    return nullptr;
}

CategoryCorpus CategoryCorpus::select(const std::vector<std::string>& wanted) const {
    CategoryCorpus out;
    out.id = CorpusId::custom;
    for (const auto& n : wanted) {
        const CorpusEntry* e = find(n);
        if (e == nullptr) throw ConfigError("category `" + n + "` not present in corpus " + std::string(to_string(id)));
        out.entries.push_back({n, e->description});
    }
    out.validate();
    return out;
}

void CategoryCorpus::validate() const {
    std::set<std::string> seen;
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto& e = entries[k];
        if (e.name.empty()) throw DataError("corpus entry " + std::to_string(k) + " has an empty name");
        if (e.description.empty()) throw DataError("corpus entry `" + e.name + "` has an empty description");
        if (!seen.insert(e.name).second) throw DataError("duplicate corpus category `" + e.name + "`");
    }
    if (auto n = expected_size(id); n && *n != entries.size()) {
        throw DataError("corpus " + std::string(to_string(id)) + " must have " + std::to_string(*n) + " entries, found " +
                        std::to_string(entries.size()));
    }
}

CategoryCorpus parse_corpus(const std::string& text, CorpusId id, const std::string& origin) {
    CategoryCorpus corpus;
    corpus.id = id;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (io::trim(line).empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(origin + ":" + std::to_string(lineno) + ": expected `name<TAB>description`");
        }
        CorpusEntry e{io::trim(line.substr(0, tab)), io::trim(line.substr(tab + 1))};
        if (e.description.empty()) {
            throw DataError(origin + ":" + std::to_string(lineno) + ": empty description for `" + e.name + "`");
        }
        corpus.entries.push_back(std::move(e));
    }
    corpus.validate();
    return corpus;
}

CategoryCorpus load_corpus(const std::filesystem::path& path, CorpusId id) {
    return parse_corpus(io::read_text(path), id, path.string());
}

std::string serialize_corpus(const CategoryCorpus& corpus) {
    std::ostringstream os;
    for (const auto& e : corpus.entries) os << e.name << '\t' << e.description << '\n';
    return os.str();
}

std::filesystem::path shipped_corpus_path(CorpusId id) {
    std::filesystem::path root = DFAT_DATA_DIR;
    if (const char* env = std::getenv("DFAT_SHIPPED_DATA")) root = env;
    switch (id) {
        case CorpusId::d1_entities_75: return root / "corpora" / "d1_entities_75.tsv";
        case CorpusId::d2_diseases_14: return root / "corpora" / "d2_diseases_14.tsv";
        case CorpusId::custom: break;
    }
    throw ConfigError("custom corpora are not shipped; pass a corpus file path");
}

CategoryCorpus load_shipped_corpus(CorpusId id) { return load_corpus(shipped_corpus_path(id), id); }

}  // namespace dfat::knowledge
