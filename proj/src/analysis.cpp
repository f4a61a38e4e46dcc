#include "dce/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace dce::analysis {

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

bool phrase_occurs(const std::string& haystack_lower, const std::string& phrase_lower) {
    if (phrase_lower.empty()) return false;
    std::size_t pos = 0;
    while ((pos = haystack_lower.find(phrase_lower, pos)) != std::string::npos) {
        bool left_ok = pos == 0 || !is_word_char(haystack_lower[pos - 1]);
        std::size_t end = pos + phrase_lower.size();
        bool right_ok = end == haystack_lower.size() || !is_word_char(haystack_lower[end]);
        if (left_ok && right_ok) return true;
        ++pos;
    }
    return false;
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

std::string fmt4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

}  // namespace

const char* to_string(TokenMode mode) {
    switch (mode) {
        case TokenMode::whitespace: return "whitespace";
    }
    return "whitespace";
}

TokenMode token_mode_from_string(const std::string& s) {
    if (s == "whitespace") return TokenMode::whitespace;
    throw std::invalid_argument("unknown token mode: " + s);
}

AttributeLexicon AttributeLexicon::defaults() {
    AttributeLexicon lex;
    lex.attributes = {
        {"spatial_relation",
         {"left of", "right of", "above", "below", "next to", "in front of", "behind", "beside",
          "near"}},
        {"hoi",
         {"holding", "riding", "walking", "carrying", "wearing", "sitting on", "standing on",
          "eating", "playing", "using", "feeding", "leading"}},
        {"fine_grained", {"species", "breed", "subclass", "variety", "brand", "model of"}},
        {"ocr", {"the text", "reads", "written", "says", "lettering", "inscription"}},
        {"emotion",
         {"happy", "sad", "angry", "surprised", "fearful", "disgusted", "neutral", "smiling",
          "excited", "calm", "joyful", "cheerful"}},
        {"location",
         {"top left", "top right", "bottom left", "bottom right", "center of the image",
          "top of the image", "bottom of the image", "left side", "right side"}},
    };
    return lex;
}

AttributeLexicon AttributeLexicon::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("lexicon file not readable: " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("lexicon file " + path.string() + ": " + e.what());
    }
    auto attrs = doc.find("attributes");
    if (attrs == doc.end() || !attrs->is_object()) {
        throw std::runtime_error("lexicon file " + path.string() +
                                 ": missing \"attributes\" object");
    }
    AttributeLexicon lex;
    for (const auto& [name, phrases] : attrs->items()) {
        if (!phrases.is_array()) {
            throw std::runtime_error("lexicon file " + path.string() + ": attribute \"" + name +
                                     "\" must list phrases");
        }
        std::vector<std::string> list;
        for (const auto& p : phrases) {
            if (!p.is_string() || p.get<std::string>().empty()) {
                throw std::runtime_error("lexicon file " + path.string() + ": attribute \"" +
                                         name + "\" has an empty or non-string phrase");
            }
            std::string phrase = p.get<std::string>();
            if (phrase != lowercase(phrase)) {
                throw std::runtime_error("lexicon file " + path.string() + ": phrase \"" + phrase +
                                         "\" must be lowercase");
            }
            list.push_back(std::move(phrase));
        }
        lex.attributes[name] = std::move(list);
    }
    return lex;
}

int token_count(const std::string& text, TokenMode mode) {
    (void)mode;  // whitespace is the only shipped mode
    int count = 0;
    bool in_token = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            in_token = false;
        } else if (!in_token) {
            in_token = true;
            ++count;
        }
    }
    return count;
}

double average_token_length(const std::vector<std::string>& captions, TokenMode mode) {
    if (captions.empty()) throw std::invalid_argument("average_token_length: empty caption list");
    long long total = 0;
    for (const auto& c : captions) total += token_count(c, mode);
    return static_cast<double>(total) / static_cast<double>(captions.size());
}

std::map<std::string, bool> attribute_occurrence(const std::string& caption,
                                                 const AttributeLexicon& lexicon) {
    const std::string lower = lowercase(caption);
    std::map<std::string, bool> out;
    for (const auto& [name, phrases] : lexicon.attributes) {
        bool hit = false;
        for (const auto& phrase : phrases) {
            if (phrase_occurs(lower, phrase)) {
                hit = true;
                break;
            }
        }
        out[name] = hit;
    }
    return out;
}

std::map<std::string, double> attribute_rates(const std::vector<std::string>& captions,
                                              const AttributeLexicon& lexicon) {
    std::map<std::string, int> hits;
    for (const auto& [name, phrases] : lexicon.attributes) hits[name] = 0;
    for (const auto& caption : captions) {
        for (const auto& [name, flag] : attribute_occurrence(caption, lexicon)) {
            if (flag) ++hits[name];
        }
    }
    std::map<std::string, double> out;
    for (const auto& [name, count] : hits) {
        out[name] = captions.empty() ? 0.0
                                     : static_cast<double>(count) /
                                           static_cast<double>(captions.size());
    }
    return out;
}

std::vector<std::pair<std::string, int>> word_frequencies(
    const std::vector<std::string>& captions, const std::set<std::string>& stopwords) {
    std::map<std::string, int> counts;
    for (const auto& caption : captions) {
        std::size_t i = 0;
        while (i < caption.size()) {
            while (i < caption.size() && std::isspace(static_cast<unsigned char>(caption[i]))) ++i;
            std::size_t start = i;
            while (i < caption.size() && !std::isspace(static_cast<unsigned char>(caption[i]))) ++i;
            if (start == i) continue;
            std::size_t lo = start;
            std::size_t hi = i;
            while (lo < hi && std::ispunct(static_cast<unsigned char>(caption[lo]))) ++lo;
            while (hi > lo && std::ispunct(static_cast<unsigned char>(caption[hi - 1]))) --hi;
            if (lo == hi) continue;
            std::string word = lowercase(caption.substr(lo, hi - lo));
            if (stopwords.count(word)) continue;
            ++counts[word];
        }
    }
    std::vector<std::pair<std::string, int>> out(counts.begin(), counts.end());
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return out;
}

const std::set<std::string>& default_stopwords() {
    static const std::set<std::string> words = {
        "a",    "an",   "and",  "are", "as",   "at",   "be",   "by",   "for", "from",
        "has",  "have", "in",   "is",  "it",   "its",  "of",   "on",   "or",  "that",
        "the",  "this", "to",   "was", "were", "with", "there", "which", "while",
    };
    return words;
}

CorpusReport analyze_corpus(const std::vector<std::string>& captions,
                            const AttributeLexicon& lexicon, TokenMode mode,
                            const std::set<std::string>& stopwords) {
    CorpusReport report;
    report.caption_count = captions.size();
    report.token_mode = mode;
    report.average_token_length = average_token_length(captions, mode);
    report.attribute_rates = attribute_rates(captions, lexicon);
    report.word_frequencies = word_frequencies(captions, stopwords);
    return report;
}

void write_report_csv(const CorpusReport& report, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);

    auto stats = open_csv(out_dir / "stats.csv");
    stats << "metric,value\n";
    stats << "caption_count," << report.caption_count << "\n";
    stats << "average_token_length," << fmt4(report.average_token_length) << "\n";
    stats << "token_mode," << to_string(report.token_mode) << "\n";

    auto attrs = open_csv(out_dir / "attributes.csv");
    attrs << "attribute,rate\n";
    for (const auto& [name, rate] : report.attribute_rates) {
        attrs << csv_escape(name) << "," << fmt4(rate) << "\n";
    }

    auto words = open_csv(out_dir / "words.csv");
    words << "word,count\n";
    for (const auto& [word, count] : report.word_frequencies) {
        words << csv_escape(word) << "," << count << "\n";
    }
}

}  // namespace dce::analysis
