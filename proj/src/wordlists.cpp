#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "maskdiff/errors.hpp"
#include "maskdiff/taskgen.hpp"

namespace maskdiff {

bool Wordlists::has(std::string_view category) const {
    return std::find(categories.begin(), categories.end(), category) != categories.end();
}

const std::vector<std::string>& Wordlists::at(std::string_view category) const {
    for (size_t i = 0; i < categories.size(); i++)
        if (categories[i] == category) return words[i];
    throw DataError("unknown word category: " + std::string(category));
}

static bool numeric_word(const std::string& w) {
    return !w.empty() && std::all_of(w.begin(), w.end(), [](char c) { return c >= '0' && c <= '9'; });
}

Wordlists load_wordlists(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) throw DataError("cannot open word list file: " + path);
    Wordlists wl;
    std::unordered_map<std::string, size_t> cat_index;
    std::unordered_set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        lineno++;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        size_t tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
            throw DataError(path + ":" + std::to_string(lineno) + ": expected category<TAB>word");
        std::string cat = line.substr(0, tab);
        std::string word = line.substr(tab + 1);
        if (word.find('\t') != std::string::npos || word.find(' ') != std::string::npos)
            throw DataError(path + ":" + std::to_string(lineno) + ": word contains whitespace");
        if (numeric_word(word))
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": numeric words are reserved for the number tasks");
        if (!seen.insert(word).second)
            throw DataError(path + ":" + std::to_string(lineno) + ": duplicate word '" + word +
                            "' (categories must be disjoint)");
        auto [it, fresh] = cat_index.try_emplace(cat, wl.categories.size());
        if (fresh) {
            wl.categories.push_back(cat);
            wl.words.emplace_back();
        }
        wl.words[it->second].push_back(word);
    }
    if (wl.categories.empty()) throw DataError("word list file is empty: " + path);
    return wl;
}

std::string default_wordlists_path() {
    if (const char* dir = std::getenv("MASKDIFF_DATA_DIR"))
        return std::string(dir) + "/wordlists.tsv";
    return std::string(MASKDIFF_SOURCE_DIR) + "/data/wordlists.tsv";
}

}  // namespace maskdiff
