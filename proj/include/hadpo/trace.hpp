#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <vector>

namespace hadpo {

/// Per-step training series plus optional fluency checkpoints.
struct DiagnosticsTrace {
    struct FluencyRow {
        std::int64_t step = 0;
        std::array<double, 4> ngram{};  // 1- to 4-gram
    };

    std::vector<double> loss;
    std::vector<double> margin;
    std::vector<double> grad_norm;
    std::vector<FluencyRow> fluency;

    std::size_t size() const { return loss.size(); }

    void push(double l, double m, double g) {
        loss.push_back(l);
        margin.push_back(m);
        grad_norm.push_back(g);
    }

    bool operator==(const DiagnosticsTrace& o) const {
        auto same_rows = [&] {
            if (fluency.size() != o.fluency.size()) return false;
            for (std::size_t i = 0; i < fluency.size(); ++i)
                if (fluency[i].step != o.fluency[i].step || fluency[i].ngram != o.fluency[i].ngram) return false;
            return true;
        };
        return loss == o.loss && margin == o.margin && grad_norm == o.grad_norm && same_rows();
    }
};

// step,loss,margin,grad_norm with 17 significant digits.
void write_trace_csv(std::ostream& out, const DiagnosticsTrace& trace);
/// Inverse of write_trace_csv; throws InputError on a malformed table.
DiagnosticsTrace read_trace_csv(std::istream& in);

}  // namespace hadpo
