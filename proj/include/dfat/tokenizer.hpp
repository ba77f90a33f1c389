#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dfat::model {

// Word-level vocabulary. Text is lower-cased and split on anything that is
// not an ASCII letter or digit; unknown words map to kUnk.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    Vocabulary();

    // Ids are assigned by descending frequency, ties broken lexicographically.
    // max_size (including the two reserved ids) of 0 means unbounded.
    static Vocabulary build(const std::vector<std::string>& texts, std::size_t max_size = 0);

    static std::vector<std::string> split_words(std::string_view text);

    std::vector<int> encode(std::string_view text) const;
    int id(const std::string& word) const;
    const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
    int size() const { return static_cast<int>(words_.size()); }

    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

private:
    void add(const std::string& w);
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace dfat::model
