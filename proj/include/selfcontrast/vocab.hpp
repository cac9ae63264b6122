#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace selfcontrast {

/// Fixed character vocabulary. Reserved tokens occupy indices 0..2; user
/// symbols follow in construction order. Tokenization never emits reserved
/// ids, and detokenization rejects them.
class Vocab {
public:
    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kPad = 2;
    static constexpr int kReserved = 3;
    static constexpr int kMaxSize = 64;

    explicit Vocab(std::string_view symbols) {
        if (kReserved + static_cast<int>(symbols.size()) > kMaxSize)
            throw std::invalid_argument("vocab too large (max 64 tokens)");
        char_to_id_.assign(256, -1);
        for (char c : symbols) {
            auto uc = static_cast<unsigned char>(c);
            if (char_to_id_[uc] != -1)
                throw std::invalid_argument(std::string("duplicate vocab symbol '") + c + "'");
            char_to_id_[uc] = kReserved + static_cast<int>(symbols_.size());
            symbols_.push_back(c);
        }
    }

    /// Letters a-o plus digits 0-9 (V = 28). Letters cover the refusal
    /// target "no"; digits serve the sum-mod-10 task.
    static const Vocab& toy() {
        static const Vocab v("abcdefghijklmno0123456789");
        return v;
    }

    int size() const { return kReserved + static_cast<int>(symbols_.size()); }

    bool contains(char c) const { return char_to_id_[static_cast<unsigned char>(c)] != -1; }

    int id_of(char c) const {
        const int id = char_to_id_[static_cast<unsigned char>(c)];
        if (id == -1)
            throw std::invalid_argument(std::string("character not in vocabulary: '") + c + "'");
        return id;
    }

    char char_of(int id) const {
        if (id < kReserved || id >= size())
            throw std::invalid_argument("token id " + std::to_string(id) +
                                        " is reserved or out of range");
        return symbols_[static_cast<size_t>(id - kReserved)];
    }

    const std::string& symbols() const { return symbols_; }

    std::vector<int> tokenize(std::string_view text) const {
        std::vector<int> ids;
        ids.reserve(text.size());
        for (char c : text) ids.push_back(id_of(c));
        return ids;
    }

    std::string detokenize(const std::vector<int>& ids) const {
        std::string out;
        out.reserve(ids.size());
        for (int id : ids) out.push_back(char_of(id));
        return out;
    }

private:
    std::string symbols_;
    std::vector<int> char_to_id_;
};

}  // namespace selfcontrast
