#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace dce::analysis {

enum class TokenMode { whitespace };

const char* to_string(TokenMode mode);
TokenMode token_mode_from_string(const std::string& s);

/// Indicator phrases per attribute family. Phrases are lowercase and matched
/// case-insensitively at word boundaries.
struct AttributeLexicon {
    std::map<std::string, std::vector<std::string>> attributes;

    static AttributeLexicon defaults();
    static AttributeLexicon load(const std::filesystem::path& path);
};

/// whitespace mode: number of maximal non-whitespace runs.
int token_count(const std::string& text, TokenMode mode);

/// Arithmetic mean of token_count. Throws std::invalid_argument on an empty list.
double average_token_length(const std::vector<std::string>& captions, TokenMode mode);

/// attribute -> true iff any of its phrases occurs as a case-insensitive
/// substring bounded by non-alphanumeric characters (or text edges).
std::map<std::string, bool> attribute_occurrence(const std::string& caption,
                                                 const AttributeLexicon& lexicon);

/// attribute -> fraction of captions whose occurrence flag is true.
std::map<std::string, double> attribute_rates(const std::vector<std::string>& captions,
                                              const AttributeLexicon& lexicon);

/// Lowercases, strips punctuation at word edges, drops stopwords, counts,
/// sorts by count descending then lexicographic.
std::vector<std::pair<std::string, int>> word_frequencies(
    const std::vector<std::string>& captions, const std::set<std::string>& stopwords);

const std::set<std::string>& default_stopwords();

struct CorpusReport {
    std::size_t caption_count = 0;
    TokenMode token_mode = TokenMode::whitespace;
    double average_token_length = 0.0;
    std::map<std::string, double> attribute_rates;
    std::vector<std::pair<std::string, int>> word_frequencies;
};

CorpusReport analyze_corpus(const std::vector<std::string>& captions,
                            const AttributeLexicon& lexicon, TokenMode mode,
                            const std::set<std::string>& stopwords);

/// Writes stats.csv (metric,value), attributes.csv (attribute,rate) and
/// words.csv (word,count) into out_dir.
void write_report_csv(const CorpusReport& report, const std::filesystem::path& out_dir);

}  // namespace dce::analysis
