#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dfat::knowledge {

enum class CorpusId { d1_entities_75, d2_diseases_14, custom };

std::string_view to_string(CorpusId id);
CorpusId parse_corpus_id(std::string_view s);
// Entry count a corpus id promises, if any.
std::optional<std::size_t> expected_size(CorpusId id);

struct CorpusEntry {
    std::string name;
    std::string description;
};

// Ordered category descriptions; entry j is category j everywhere downstream.
struct CategoryCorpus {
    CorpusId id = CorpusId::custom;
    std::vector<CorpusEntry> entries;

    std::size_t size() const { return entries.size(); }
    std::vector<std::string> names() const;
    // Exact match first, then ASCII case-insensitive.
    const CorpusEntry* find(std::string_view name) const;
    // Custom corpus holding the named categories in the given order.
    CategoryCorpus select(const std::vector<std::string>& names) const;
    void validate() const;
};

// Parses `name<TAB>description` lines (UTF-8). Validates names, descriptions
// and, for the appendix ids, the exact entry count.
CategoryCorpus parse_corpus(const std::string& text, CorpusId id, const std::string& origin = "<string>");
CategoryCorpus load_corpus(const std::filesystem::path& path, CorpusId id);
std::string serialize_corpus(const CategoryCorpus& corpus);

// Location of the corpora bundled with the project (data/corpora).
std::filesystem::path shipped_corpus_path(CorpusId id);
CategoryCorpus load_shipped_corpus(CorpusId id);

}  // namespace dfat::knowledge
