#pragma once

#include <array>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mapre {

// Reserved token ids occupy 0..7 in this fixed order.
enum ReservedToken : std::size_t {
    kCls = 0,
    kSep = 1,
    kHeadMarker = 2,
    kTailMarker = 3,
    kBlank = 4,
    kMask = 5,
    kPad = 6,
    kUnk = 7,
};

inline constexpr std::size_t kNumReserved = 8;

inline constexpr std::array<const char*, kNumReserved> kReservedTokens = {
    "[CLS]", "[SEP]", "[head]", "[tail]", "[BLANK]", "[MASK]", "[PAD]", "[UNK]",
};

class Vocabulary {
public:
    Vocabulary() {
        for (const char* t : kReservedTokens) add(t);
    }

    std::size_t add(const std::string& token) {
        if (token.empty() || token.find('\n') != std::string::npos) {
            throw std::invalid_argument("vocabulary: token must be non-empty and single-line");
        }
        auto it = ids_.find(token);
        if (it != ids_.end()) return it->second;
        const std::size_t id = tokens_.size();
        tokens_.push_back(token);
        ids_.emplace(token, id);
        return id;
    }

    // Unknown tokens map to [UNK].
    std::size_t id(const std::string& token) const {
        auto it = ids_.find(token);
        return it == ids_.end() ? static_cast<std::size_t>(kUnk) : it->second;
    }

    bool contains(const std::string& token) const { return ids_.count(token) > 0; }

    const std::string& token(std::size_t id) const {
        if (id >= tokens_.size()) throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
        return tokens_[id];
    }

    std::size_t size() const { return tokens_.size(); }

    // Plain text, one token per line; the line number is the id.
    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("vocabulary: cannot open " + path + " for writing");
        for (const std::string& t : tokens_) out << t << '\n';
        if (!out) throw std::runtime_error("vocabulary: write failed for " + path);
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("vocabulary: cannot open " + path);
        Vocabulary v;
        v.tokens_.clear();
        v.ids_.clear();
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            v.tokens_.push_back(line);
            v.ids_.emplace(line, v.tokens_.size() - 1);
        }
        for (std::size_t i = 0; i < kNumReserved; ++i) {
            if (i >= v.tokens_.size() || v.tokens_[i] != kReservedTokens[i]) {
                throw std::runtime_error("vocabulary: " + path + " does not start with the reserved tokens");
            }
        }
        return v;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> ids_;
};

}  // namespace mapre
