#pragma once

#include <vector>

namespace hadpo {

using Token = int;

// Statement-level decoding constraints. A statement starts with one of the
// kind heads and then fills that kind's fixed-arity slots. Free tokens may be
// emitted in any slot; a statement containing one does not parse.
struct SlotGrammar {
    struct Kind {
        Token head = 0;
        std::vector<std::vector<Token>> slots;
    };
    std::vector<Kind> kinds;
    std::vector<Token> free_tokens;

    std::size_t max_statement_length() const {
        std::size_t m = 1;
        for (const auto& k : kinds) m = std::max(m, 1 + k.slots.size());
        return m;
    }
};

}  // namespace hadpo
