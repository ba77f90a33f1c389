#include "dfat/tokenizer.hpp"

#include "dfat/errors.hpp"
#include "dfat/io.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace dfat::model {

Vocabulary::Vocabulary() {
    add("<pad>");
    add("<unk>");
}

void Vocabulary::add(const std::string& w) {
    index_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(w);
}

std::vector<std::string> Vocabulary::split_words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
            cur.push_back(static_cast<char>(c));
        } else if (c >= 'A' && c <= 'Z') {
            cur.push_back(static_cast<char>(c - 'A' + 'a'));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, std::size_t max_size) {
    std::map<std::string, std::size_t> freq;
    for (const auto& t : texts) {
        for (auto& w : split_words(t)) ++freq[w];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    for (const auto& [w, _] : ranked) {
        if (max_size != 0 && v.words_.size() >= max_size) break;
        v.add(w);
    }
    return v;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) ids.push_back(id(w));
    return ids;
}

int Vocabulary::id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ostringstream os;
    for (const auto& w : words_) os << w << '\n';
    io::write_text(path, os.str());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::istringstream in(io::read_text(path));
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) words.push_back(line);
    }
    if (words.size() < 2 || words[0] != "<pad>" || words[1] != "<unk>") {
        throw DataError("vocabulary file lacks reserved entries: " + path.string());
    }
    Vocabulary v;
    for (std::size_t k = 2; k < words.size(); ++k) {
        if (v.index_.count(words[k]) != 0) throw DataError("duplicate vocabulary word `" + words[k] + "` in " + path.string());
        v.add(words[k]);
    }
    return v;
}

}  // namespace dfat::model
